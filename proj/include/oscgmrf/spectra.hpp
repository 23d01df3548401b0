#pragma once

#include "oscgmrf/cholesky.hpp"
#include "oscgmrf/error.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/model.hpp"
#include "oscgmrf/precision.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace oscgmrf {


inline constexpr double kTwoPiSquared = 4.0 * std::numbers::pi * std::numbers::pi;

/// Matern correlation 2^{1-nu} / Gamma(nu) (kappa h)^nu K_nu(kappa h).
inline double matern_correlation(double h, double nu, double kappa) {
    if (!(nu > 0.0) || !(kappa > 0.0)) throw InvalidInput("matern_correlation: nu and kappa must be positive");
    const double x = kappa * std::abs(h);
    if (x == 0.0) return 1.0;
    return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(x, nu) * std::cyl_bessel_k(nu, x);
}

// Distance at which the Matern correlation is near 0.13.
inline double matern_range(double nu, double kappa) { return std::sqrt(8.0 * nu) / kappa; }

// Spectral density of the oscillating field in two dimensions; omega = 0
// gives the Matern (alpha = 2) spectrum.
inline double univariate_spectrum(double k_norm, double kappa, double omega) {
    if (!(kappa > 0.0)) throw InvalidInput("univariate_spectrum: kappa must be positive");
    const double k2 = k_norm * k_norm;
    const double kap2 = kappa * kappa;
    return 1.0 / (kTwoPiSquared * (kap2 * kap2 + 2.0 * std::cos(std::numbers::pi * omega) * kap2 * k2 + k2 * k2));
}

inline double univariate_spectrum(Point k, double kappa, double omega) {
    return univariate_spectrum(std::hypot(k.x, k.y), kappa, omega);
}

inline double noise_spectrum(double k_norm, const NoiseTerm& t) {
    switch (t.kind) {
        case NoiseKind::white: return 1.0 / kTwoPiSquared;
        case NoiseKind::matern: {
            const double d = t.kappa_sq + k_norm * k_norm;
            return 1.0 / (kTwoPiSquared * d * d);
        }
        case NoiseKind::oscillating: {
            const double k2 = k_norm * k_norm;
            return 1.0 / (kTwoPiSquared * (t.kappa_sq * t.kappa_sq +
                                           2.0 * std::cos(std::numbers::pi * t.omega) * t.kappa_sq * k2 + k2 * k2));
        }
    }
    return 0.0;
}

// Fourier symbol of b (h - Lap)^{alpha/2}: b (h + |k|^2) or b.
inline Complex operator_symbol(const OperatorTerm& t, double k_norm) {
    return t.alpha == 2 ? Complex(t.b * (t.h + k_norm * k_norm), 0.0) : Complex(t.b, 0.0);
}

struct SpectrumPoint {
    Point k;
    double S11 = 0.0;
    double S22 = 0.0;
    double S21 = 0.0;
};

struct FullSpectrumPoint {
    Point k;
    double S11 = 0.0;
    double S22 = 0.0;
    Complex S12;
    Complex S21;
};

/// Power and cross spectra of the triangular L1 system:
///   S11 = Se1 / (b11^2 (h11 + |k|^2)^2)
///   S21 = -b21 Se1 / (b22 (h22 + |k|^2) b11^2 (h11 + |k|^2)^2)
///   S22 = (b21^2 Se1 + b11^2 (h11 + |k|^2)^2 Se2) / (b11^2 (h11+|k|^2)^2 b22^2 (h22+|k|^2)^2)
inline SpectrumPoint triangular_system_spectra(Point k, const ModelSpec& model) {
    if (model.op.variant != OperatorVariant::L1) {
        throw InvalidInput("triangular_system_spectra: only the L1 operator matrix is supported");
    }
    const auto sys = to_system(model);
    const double kn = std::hypot(k.x, k.y);
    const double k2 = kn * kn;
    const double se1 = noise_spectrum(kn, sys.noise[0]);
    const double se2 = noise_spectrum(kn, sys.noise[1]);
    const auto& op = model.op;
    const double a11 = op.b11 * op.b11 * (op.h11 + k2) * (op.h11 + k2);
    const double a22 = op.b22 * op.b22 * (op.h22 + k2) * (op.h22 + k2);
    SpectrumPoint out;
    out.k = k;
    out.S11 = se1 / a11;
    out.S21 = -op.b21 * se1 / (op.b22 * (op.h22 + k2) * a11);
    out.S22 = (op.b21 * op.b21 * se1 + a11 * se2) / (a11 * a22);
    return out;
}

/// Spectra of the general 2 x 2 system H x = eps with independent noises,
/// S_x = H^{-1} S_eps H^{-H}. The cross terms are written as
///   S21 = -(H21 conj(H22) Se1 + H11 conj(H12) Se2) / |det H|^2
/// and S12 = conj(S21), which stays finite when H12 or H21 vanish.
inline FullSpectrumPoint full_system_spectra(Point k, Complex H11, Complex H12, Complex H21, Complex H22, double se1,
                                             double se2) {
    const Complex det = H11 * H22 - H12 * H21;
    const double d2 = std::norm(det);
    if (!(d2 > 0.0)) {
        throw PoleError("full_system_spectra: singular operator symbol at k = (" + std::to_string(k.x) + ", " +
                        std::to_string(k.y) + ")");
    }
    FullSpectrumPoint out;
    out.k = k;
    out.S11 = (se1 * std::norm(H22) + se2 * std::norm(H12)) / d2;
    out.S22 = (se1 * std::norm(H21) + se2 * std::norm(H11)) / d2;
    out.S21 = -(H21 * std::conj(H22) * se1 + H11 * std::conj(H12) * se2) / d2;
    out.S12 = -(H22 * std::conj(H21) * se1 + H12 * std::conj(H11) * se2) / d2;
    return out;
}

/// Binned correlation curves around one reference vertex.
///
/// rho12 is the correlation between field 1 at distance d and field 2 at
/// the reference vertex. `counts` holds the number of vertices per bin.
struct CorrelationCurve {
    std::vector<double> distances;
    std::vector<double> rho11;
    std::vector<double> rho12;
    std::vector<double> rho22;
    std::vector<std::size_t> counts;
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t size() const { return distances.size(); }
};

struct CorrelationOptions {
    double max_distance = 0.0;  // 0: no limit
    double bin_width = 0.0;     // 0: typical mesh edge length
    std::size_t min_bin_count = 3;
    bool crop_to_core = true;
};

/// Correlation functions of the first two fields of `gmrf` seen from
/// `reference_vertex`, computed from exact sparse solves against Q.
inline CorrelationCurve lattice_correlations(const Gmrf& gmrf, const Mesh& mesh, std::size_t reference_vertex,
                                             const CorrelationOptions& opt = {}) {
    if (gmrf.fields < 2) throw InvalidInput("lattice_correlations: need a field with at least two components");
    if (static_cast<std::size_t>(gmrf.n) != mesh.num_vertices()) {
        throw InvalidInput("lattice_correlations: mesh does not match the field");
    }
    if (reference_vertex >= mesh.num_vertices()) throw InvalidInput("lattice_correlations: reference vertex out of range");

    SparseCholesky chol;
    if (!chol.try_factorize(gmrf.Q)) throw NotSpd("lattice_correlations: precision is not positive definite");

    const Eigen::Index n = gmrf.n;
    const auto r = static_cast<Eigen::Index>(reference_vertex);
    Vector e = Vector::Zero(gmrf.dimension());
    e[r] = 1.0;
    const Vector col1 = chol.solve(e);
    e[r] = 0.0;
    e[n + r] = 1.0;
    const Vector col2 = chol.solve(e);
    const Vector var = chol.inverse_diagonal();

    CorrelationCurve curve;
    const Point ref = mesh.vertex(reference_vertex);
    if (mesh.is_boundary(reference_vertex)) {
        curve.warnings.push_back("reference vertex lies in the padding or on the hull; boundary effects expected");
    }
    const auto& core = mesh.core();
    const auto& bounds = mesh.bounds();
    const double margin = std::min({core.xmin - bounds.xmin, core.ymin - bounds.ymin, bounds.xmax - core.xmax,
                                    bounds.ymax - core.ymax});
    if (!(margin > 0.0)) curve.warnings.push_back("mesh has no padding; boundary effects expected");

    const double width = opt.bin_width > 0.0 ? opt.bin_width : mesh.typical_edge_length();
    struct Bin {
        double d = 0.0, r11 = 0.0, r12 = 0.0, r22 = 0.0;
        std::size_t count = 0;
    };
    std::map<long, Bin> bins;
    const double s1 = std::sqrt(var[r]);
    const double s2 = std::sqrt(var[n + r]);
    for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
        if (v == reference_vertex) continue;
        if (opt.crop_to_core && mesh.is_boundary(v)) continue;
        const double d = distance(mesh.vertex(v), ref);
        if (opt.max_distance > 0.0 && d > opt.max_distance) continue;
        const long b = std::max(1L, std::lround(d / width));
        const auto vi = static_cast<Eigen::Index>(v);
        auto& bin = bins[b];
        bin.d += d;
        bin.r11 += col1[vi] / (std::sqrt(var[vi]) * s1);
        bin.r12 += col2[vi] / (std::sqrt(var[vi]) * s2);
        bin.r22 += col2[n + vi] / (std::sqrt(var[n + vi]) * s2);
        ++bin.count;
    }

    curve.distances.push_back(0.0);
    curve.rho11.push_back(1.0);
    curve.rho12.push_back(col2[r] / (s1 * s2));
    curve.rho22.push_back(1.0);
    curve.counts.push_back(1);
    for (const auto& [b, bin] : bins) {
        if (bin.count < opt.min_bin_count) continue;
        const double c = static_cast<double>(bin.count);
        curve.distances.push_back(bin.d / c);
        curve.rho11.push_back(bin.r11 / c);
        curve.rho12.push_back(bin.r12 / c);
        curve.rho22.push_back(bin.r22 / c);
        curve.counts.push_back(bin.count);
    }
    return curve;
}

} // namespace oscgmrf
