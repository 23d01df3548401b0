#pragma once

#include "oscgmrf/error.hpp"

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace oscgmrf {

enum class NoiseKind { white, matern, oscillating };
enum class OperatorVariant { L1, L2, L3 };

inline std::string_view to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::white: return "white";
        case NoiseKind::matern: return "matern";
        case NoiseKind::oscillating: return "oscillating";
    }
    return "?";
}

inline std::string_view to_string(OperatorVariant v) {
    switch (v) {
        case OperatorVariant::L1: return "L1";
        case OperatorVariant::L2: return "L2";
        case OperatorVariant::L3: return "L3";
    }
    return "?";
}

inline std::optional<NoiseKind> parse_noise_kind(std::string_view s) {
    if (s == "white") return NoiseKind::white;
    if (s == "matern") return NoiseKind::matern;
    if (s == "oscillating") return NoiseKind::oscillating;
    return std::nullopt;
}

inline std::optional<OperatorVariant> parse_operator_variant(std::string_view s) {
    if (s == "L1") return OperatorVariant::L1;
    if (s == "L2") return OperatorVariant::L2;
    if (s == "L3") return OperatorVariant::L3;
    return std::nullopt;
}

// Driving noise of one row of the system. `kappa_n` is ignored for white
// noise and `omega` is used only by the oscillating kind.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::white;
    double kappa_n = 1.0;
    double omega = 0.0;

    void validate(std::string_view label = "noise") const {
        if (kind != NoiseKind::white && !(kappa_n > 0.0 && std::isfinite(kappa_n))) {
            throw InvalidInput(std::string(label) + ": kappa_n must be positive");
        }
        if (kind == NoiseKind::oscillating && !(omega >= 0.0 && omega < 1.0)) {
            throw InvalidInput(std::string(label) + ": omega must lie in [0, 1)");
        }
    }
};

// Coefficients of the bivariate lower-triangular operator matrix.
//   L1: [ b11 (h11 - Lap)   0               ]
//       [ b21               b22 (h22 - Lap) ]
//   L2: as L1 with the (2,1) entry b21 (h21 - Lap)
//   L3: as L1 with the (2,2) entry b22
struct OperatorSpec {
    OperatorVariant variant = OperatorVariant::L1;
    double b11 = 1.0;
    double b21 = 0.0;
    double b22 = 1.0;
    double h11 = 1.0;
    double h22 = 1.0;
    double h21 = 1.0;

    void validate() const {
        auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
        if (!positive(b11)) throw InvalidInput("operator: b11 must be positive");
        if (!positive(b22)) throw InvalidInput("operator: b22 must be positive");
        if (!std::isfinite(b21)) throw InvalidInput("operator: b21 must be finite");
        if (!positive(h11)) throw InvalidInput("operator: h11 must be positive");
        if (variant != OperatorVariant::L3 && !positive(h22)) {
            throw InvalidInput("operator: h22 must be positive");
        }
        if (variant == OperatorVariant::L2 && !positive(h21)) {
            throw InvalidInput("operator: h21 must be positive");
        }
    }
};

/// Full hyperparameter set of the bivariate model.
///
/// With `lock1` set and a Matern first noise, the noise scale is tied to the
/// operator, kappa_n1^2 = h11; the stored noise1.kappa_n is then ignored.
/// `lock2` does the same for row two (kappa_n2^2 = h22).
struct ModelSpec {
    OperatorSpec op;
    NoiseSpec noise1;
    NoiseSpec noise2;
    bool lock1 = true;
    bool lock2 = false;

    [[nodiscard]] bool row1_locked() const { return lock1 && noise1.kind == NoiseKind::matern; }
    [[nodiscard]] bool row2_locked() const {
        return lock2 && noise2.kind == NoiseKind::matern && op.variant != OperatorVariant::L3;
    }

    // Squared noise scale actually used for row 1 or 2.
    [[nodiscard]] double noise_kappa_sq(int row) const {
        if (row == 1) return row1_locked() ? op.h11 : noise1.kappa_n * noise1.kappa_n;
        return row2_locked() ? op.h22 : noise2.kappa_n * noise2.kappa_n;
    }

    // Copy with locked kappas written back, for reporting.
    [[nodiscard]] ModelSpec resolved() const {
        ModelSpec m = *this;
        if (row1_locked()) m.noise1.kappa_n = std::sqrt(op.h11);
        if (row2_locked()) m.noise2.kappa_n = std::sqrt(op.h22);
        return m;
    }

    void validate() const {
        op.validate();
        NoiseSpec n1 = noise1;
        NoiseSpec n2 = noise2;
        if (row1_locked()) n1.kappa_n = 1.0;
        if (row2_locked()) n2.kappa_n = 1.0;
        n1.validate("noise1");
        n2.validate("noise2");
    }

    [[nodiscard]] std::string describe() const {
        std::ostringstream os;
        os << "operator=" << to_string(op.variant) << " b11=" << op.b11 << " b21=" << op.b21
           << " b22=" << op.b22 << " h11=" << op.h11 << " h22=" << op.h22;
        if (op.variant == OperatorVariant::L2) os << " h21=" << op.h21;
        os << " noise1=" << to_string(noise1.kind);
        if (noise1.kind != NoiseKind::white) os << " kappa_n1^2=" << noise_kappa_sq(1);
        if (noise1.kind == NoiseKind::oscillating) os << " omega1=" << noise1.omega;
        os << " noise2=" << to_string(noise2.kind);
        if (noise2.kind != NoiseKind::white) os << " kappa_n2^2=" << noise_kappa_sq(2);
        if (noise2.kind == NoiseKind::oscillating) os << " omega2=" << noise2.omega;
        return os.str();
    }
};

// One entry of a triangular operator matrix: b (h - Lap) for alpha = 2,
// plain b for alpha = 0.
struct OperatorTerm {
    double b = 0.0;
    double h = 0.0;
    int alpha = 2;
};

struct NoiseTerm {
    NoiseKind kind = NoiseKind::white;
    double kappa_sq = 1.0;
    double omega = 0.0;
};

/// p-variate lower-triangular system. rows[i] holds the terms for columns
/// 0..i; an empty optional is a structural zero. The diagonal must be set.
struct TriangularSystem {
    std::vector<std::vector<std::optional<OperatorTerm>>> rows;
    std::vector<NoiseTerm> noise;

    [[nodiscard]] std::size_t fields() const { return rows.size(); }

    void validate() const {
        if (rows.empty() || rows.size() != noise.size()) {
            throw InvalidInput("system: need one noise term per row");
        }
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != i + 1) throw InvalidInput("system: row " + std::to_string(i) + " has wrong length");
            if (!rows[i][i]) throw InvalidInput("system: diagonal term " + std::to_string(i) + " missing");
            for (const auto& t : rows[i]) {
                if (t && t->alpha != 0 && t->alpha != 2) {
                    throw InvalidInput("system: only alpha 0 and 2 are supported");
                }
            }
        }
    }
};

inline TriangularSystem to_system(const ModelSpec& m) {
    const auto& op = m.op;
    TriangularSystem s;
    s.rows.resize(2);
    s.rows[0] = {OperatorTerm{op.b11, op.h11, 2}};
    OperatorTerm k21 = op.variant == OperatorVariant::L2 ? OperatorTerm{op.b21, op.h21, 2}
                                                         : OperatorTerm{op.b21, 0.0, 0};
    OperatorTerm k22 = op.variant == OperatorVariant::L3 ? OperatorTerm{op.b22, 0.0, 0}
                                                         : OperatorTerm{op.b22, op.h22, 2};
    s.rows[1] = {k21, k22};
    s.noise = {NoiseTerm{m.noise1.kind, m.noise_kappa_sq(1), m.noise1.omega},
               NoiseTerm{m.noise2.kind, m.noise_kappa_sq(2), m.noise2.omega}};
    return s;
}

enum class FieldClass { non_oscillating, oscillating, possibly_oscillating };

inline std::string_view to_string(FieldClass c) {
    switch (c) {
        case FieldClass::non_oscillating: return "non-oscillating";
        case FieldClass::oscillating: return "oscillating";
        case FieldClass::possibly_oscillating: return "possibly-oscillating";
    }
    return "?";
}

/// Tags each field of a triangular system. A field driven directly by an
/// oscillating noise is oscillating. A field that depends, through nonzero
/// off-diagonal coefficients, on a row with oscillating noise might inherit
/// the oscillation. Every other field is non-oscillating.
inline std::vector<FieldClass> classify_fields(const TriangularSystem& s) {
    const std::size_t p = s.fields();
    std::vector<bool> reaches(p, false);
    std::vector<FieldClass> out(p, FieldClass::non_oscillating);
    for (std::size_t i = 0; i < p; ++i) {
        bool own = s.noise[i].kind == NoiseKind::oscillating;
        bool inherited = false;
        for (std::size_t j = 0; j < i; ++j) {
            const auto& t = s.rows[i][j];
            if (t && t->b != 0.0 && reaches[j]) inherited = true;
        }
        reaches[i] = own || inherited;
        if (own) {
            out[i] = FieldClass::oscillating;
        } else if (inherited) {
            out[i] = FieldClass::possibly_oscillating;
        }
    }
    return out;
}

inline std::vector<FieldClass> classify_fields(const ModelSpec& m) { return classify_fields(to_system(m)); }

} // namespace oscgmrf
