#pragma once

#include "oscgmrf/cholesky.hpp"
#include "oscgmrf/error.hpp"
#include "oscgmrf/fem.hpp"
#include "oscgmrf/model.hpp"
#include "oscgmrf/types.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace oscgmrf {

/// Zero-mean Gaussian field over `fields` stacked blocks of `n` mesh
/// weights each (field 1 block first). Q is symmetric positive definite.
struct Gmrf {
    SparseMatrix Q;
    Eigen::Index n = 0;
    std::size_t fields = 1;

    [[nodiscard]] Eigen::Index dimension() const { return Q.rows(); }
};

namespace detail {

inline SparseMatrix symmetrized(const SparseMatrix& q) {
    SparseMatrix t = q.transpose();
    SparseMatrix s = 0.5 * (q + t);
    s.makeCompressed();
    return s;
}

// kappa_sq^2 C + 2 cos(pi omega) kappa_sq G + G C^{-1} G
inline SparseMatrix oscillating_precision(const FemMatrices& fem, double kappa_sq, double omega) {
    const Vector cinv = fem.inverse_mass_diagonal();
    SparseMatrix cinv_g = cinv.asDiagonal() * fem.stiffness;
    SparseMatrix gcg = fem.stiffness * cinv_g;
    SparseMatrix q = (kappa_sq * kappa_sq) * fem.mass +
                     (2.0 * std::cos(std::numbers::pi * omega) * kappa_sq) * fem.stiffness + gcg;
    return symmetrized(q);
}

inline SparseMatrix noise_precision(const FemMatrices& fem, const NoiseTerm& t) {
    switch (t.kind) {
        case NoiseKind::white: {
            SparseMatrix c = fem.mass;
            c.makeCompressed();
            return c;
        }
        case NoiseKind::matern: {
            const Vector cinv = fem.inverse_mass_diagonal();
            SparseMatrix k = t.kappa_sq * fem.mass + fem.stiffness;
            SparseMatrix cinv_k = cinv.asDiagonal() * k;
            SparseMatrix q = k * cinv_k;
            return symmetrized(q);
        }
        case NoiseKind::oscillating: return oscillating_precision(fem, t.kappa_sq, t.omega);
    }
    throw InvalidInput("noise_precision: unknown noise kind");
}

} // namespace detail

/// Precision of the noise weights of one row: C for white noise,
/// (k^2 C + G) C^{-1} (k^2 C + G) for Matern noise and
/// k^4 C + 2 cos(pi omega) k^2 G + G C^{-1} G for oscillating noise.
inline SparseMatrix noise_precision(const FemMatrices& fem, const NoiseSpec& spec) {
    spec.validate();
    return detail::noise_precision(fem, NoiseTerm{spec.kind, spec.kappa_n * spec.kappa_n, spec.omega});
}

// b (h C + G) for alpha = 2, b C for alpha = 0.
inline SparseMatrix operator_block(const FemMatrices& fem, double b, double h, int alpha) {
    SparseMatrix out;
    if (alpha == 2) {
        out = b * (h * fem.mass + fem.stiffness);
    } else if (alpha == 0) {
        out = b * fem.mass;
    } else {
        throw InvalidInput("operator_block: alpha must be 0 or 2, got " + std::to_string(alpha));
    }
    out.makeCompressed();
    return out;
}

/// Block operator matrix K of a triangular system, (p n) x (p n).
inline SparseMatrix system_operator(const FemMatrices& fem, const TriangularSystem& s) {
    s.validate();
    const auto n = static_cast<int>(fem.size());
    const auto p = static_cast<int>(s.fields());
    // Union of the patterns of C and G; every block shares it so that the
    // assembled pattern does not depend on which coefficients are zero.
    SparseMatrix pattern = fem.mass + fem.stiffness;
    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(pattern.nonZeros()) * static_cast<std::size_t>(p * (p + 1) / 2));
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j <= i; ++j) {
            const auto& term = s.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (!term) continue;
            SparseMatrix block = operator_block(fem, term->b, term->h, term->alpha);
            SparseMatrix padded = block + 0.0 * pattern;
            for (int k = 0; k < padded.outerSize(); ++k)
                for (SparseMatrix::InnerIterator it(padded, k); it; ++it)
                    trip.emplace_back(i * n + it.row(), j * n + it.col(), it.value());
        }
    }
    SparseMatrix K(p * n, p * n);
    K.setFromTriplets(trip.begin(), trip.end());
    K.makeCompressed();
    return K;
}

inline SparseMatrix system_noise_precision(const FemMatrices& fem, const TriangularSystem& s) {
    const auto n = static_cast<int>(fem.size());
    std::vector<Triplet> trip;
    for (std::size_t i = 0; i < s.fields(); ++i) {
        SparseMatrix qe = detail::noise_precision(fem, s.noise[i]);
        const int off = static_cast<int>(i) * n;
        for (int k = 0; k < qe.outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(qe, k); it; ++it)
                trip.emplace_back(off + it.row(), off + it.col(), it.value());
    }
    const int dim = static_cast<int>(s.fields()) * n;
    SparseMatrix q(dim, dim);
    q.setFromTriplets(trip.begin(), trip.end());
    q.makeCompressed();
    return q;
}

/// Joint precision (C~^{-1} K)^T Q_eps (C~^{-1} K) of the weights of a
/// triangular system, symmetrized. When `verify_spd` is set a sparse
/// Cholesky factorization is attempted and failure raises NotSpd.
inline Gmrf system_precision(const FemMatrices& fem, const TriangularSystem& s, bool verify_spd = true,
                             const std::string& label = "") {
    const auto p = static_cast<Eigen::Index>(s.fields());
    SparseMatrix K = system_operator(fem, s);
    Vector cinv = fem.inverse_mass_diagonal().replicate(p, 1);
    SparseMatrix M = cinv.asDiagonal() * K;
    SparseMatrix qe = system_noise_precision(fem, s);
    SparseMatrix qm = qe * M;
    SparseMatrix Mt = M.transpose();
    SparseMatrix q = Mt * qm;

    Gmrf g{detail::symmetrized(q), fem.size(), s.fields()};
    if (verify_spd) {
        SparseCholesky chol;
        if (!chol.try_factorize(g.Q)) {
            throw NotSpd("system precision is not positive definite" + (label.empty() ? "" : " for " + label));
        }
    }
    return g;
}

inline Gmrf system_precision(const FemMatrices& fem, const ModelSpec& model, bool verify_spd = true) {
    model.validate();
    return system_precision(fem, to_system(model), verify_spd, model.describe());
}

/// G + z C for a shift z > 0 or complex z off the negative real axis.
/// G e = 0 for the constant vector e, so e is the generalized eigenvector
/// for the eigenvalue z, and tiny shifts make the matrix numerically
/// singular along e only. For those the factorization is of the bordered
/// matrix [G + z C, w; w^T, -1] with w = sqrt(gamma) C e, whose leading
/// block acts as G + z C + w w^T: the constant-mode eigenvalue moves to
/// z + gamma |C| and nothing else changes. Real shifts that are not small
/// use a plain sparse Cholesky factorization.
template <typename Scalar>
class ShiftedStiffness {
public:
    using Sparse = Eigen::SparseMatrix<Scalar>;
    using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    ShiftedStiffness(const FemMatrices& fem, Scalar z) : n_(fem.size()), z_(z) {
        const Vector& c = fem.mass_diagonal;
        const double mass = c.sum();
        // Lifts the constant mode to z + trace(G) / |C|.
        const double gamma = fem.stiffness.diagonal().sum() / (mass * mass);
        lifted_ = z + Scalar(gamma * mass);
        if constexpr (std::is_same_v<Scalar, double>) {
            if (z >= kDirectShift * gamma * mass) {
                direct_.emplace();
                direct_->factorize(SparseMatrix(fem.stiffness + z * fem.mass));
                return;
            }
        }
        std::vector<Eigen::Triplet<Scalar>> trip;
        trip.reserve(static_cast<std::size_t>(fem.stiffness.nonZeros() + 3 * n_ + 1));
        for (int k = 0; k < fem.stiffness.outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(fem.stiffness, k); it; ++it)
                trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), Scalar(it.value()));
        const double sg = std::sqrt(gamma);
        for (Eigen::Index i = 0; i < n_; ++i) {
            const int ii = static_cast<int>(i);
            trip.emplace_back(ii, ii, z * c[i]);
            trip.emplace_back(ii, static_cast<int>(n_), Scalar(sg * c[i]));
            trip.emplace_back(static_cast<int>(n_), ii, Scalar(sg * c[i]));
        }
        trip.emplace_back(static_cast<int>(n_), static_cast<int>(n_), Scalar(-1.0));
        Sparse m(n_ + 1, n_ + 1);
        m.setFromTriplets(trip.begin(), trip.end());
        m.makeCompressed();
        lu_.analyzePattern(m);
        lu_.factorize(m);
        if (lu_.info() != Eigen::Success) throw NotSpd("shifted stiffness matrix is singular");
    }

    /// (G + z C)^{-1} r for right-hand sides with e^T r = 0 in every column.
    /// The result is C-orthogonal to e.
    [[nodiscard]] Dense solve(const Dense& r) const {
        if constexpr (std::is_same_v<Scalar, double>) {
            if (direct_) return direct_->solve(r);
        }
        Dense rhs = Dense::Zero(n_ + 1, r.cols());
        rhs.topRows(n_) = r;
        Dense y = lu_.solve(rhs);
        return y.topRows(n_);
    }

    /// log |det(G + z C)|.
    [[nodiscard]] double log_abs_determinant() const {
        using std::abs;
        if constexpr (std::is_same_v<Scalar, double>) {
            if (direct_) return direct_->log_determinant();
        }
        return std::real(lu_.logAbsDeterminant()) + std::log(abs(z_)) - std::log(abs(lifted_));
    }

private:
    // Shifts above this fraction of the mean eigenvalue scale go to Cholesky.
    static constexpr double kDirectShift = 1e-3;

    Eigen::Index n_;
    Scalar z_;
    Scalar lifted_;
    std::optional<SparseCholesky> direct_;
    Eigen::SparseLU<Sparse> lu_;
};

/// log |Q| of a triangular system without factorizing the joint matrix:
/// log |Q| = 2 sum_i (log |det K_ii| - log |C|) + sum_i log |Q_eps,i|, with
/// log |Q_eps| = 2 log |det(G + z C)| - log |C| for z = k^2 (Matern) or
/// z = k^2 exp(i pi omega) (oscillating). Each term comes from a sparse
/// factorization of an n x n problem, see ShiftedStiffness. Throws NotSpd if
/// one of them fails.
inline double system_log_determinant(const FemMatrices& fem, const TriangularSystem& s) {
    s.validate();
    const double n = static_cast<double>(fem.size());
    const double log_det_c = fem.mass_diagonal.array().log().sum();
    double total = 0.0;
    for (std::size_t i = 0; i < s.fields(); ++i) {
        const auto& d = *s.rows[i][i];
        double log_det_k = n * std::log(std::abs(d.b));
        log_det_k += d.alpha == 2 ? ShiftedStiffness<double>(fem, d.h).log_abs_determinant() : log_det_c;
        total += 2.0 * (log_det_k - log_det_c);

        const auto& nt = s.noise[i];
        switch (nt.kind) {
            case NoiseKind::white: total += log_det_c; break;
            case NoiseKind::matern:
                total += 2.0 * ShiftedStiffness<double>(fem, nt.kappa_sq).log_abs_determinant() - log_det_c;
                break;
            case NoiseKind::oscillating: {
                const Complex z = std::polar(nt.kappa_sq, std::numbers::pi * nt.omega);
                total += 2.0 * ShiftedStiffness<Complex>(fem, z).log_abs_determinant() - log_det_c;
                break;
            }
        }
    }
    return total;
}

} // namespace oscgmrf
