#pragma once

#include "oscgmrf/cholesky.hpp"
#include "oscgmrf/error.hpp"
#include "oscgmrf/fem.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/model.hpp"
#include "oscgmrf/observations.hpp"
#include "oscgmrf/precision.hpp"
#include "oscgmrf/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace oscgmrf {

enum class Param { b11, b21, b22, h11, h21, h22, kappa_n1, kappa_n2, omega1, omega2 };

inline constexpr Param kAllParams[] = {Param::b11,      Param::b21,      Param::b22,    Param::h11,   Param::h21,
                                       Param::h22,      Param::kappa_n1, Param::kappa_n2, Param::omega1, Param::omega2};

inline std::string_view param_name(Param p) {
    switch (p) {
        case Param::b11: return "b11";
        case Param::b21: return "b21";
        case Param::b22: return "b22";
        case Param::h11: return "h11";
        case Param::h21: return "h21";
        case Param::h22: return "h22";
        case Param::kappa_n1: return "kappa_n1";
        case Param::kappa_n2: return "kappa_n2";
        case Param::omega1: return "omega1";
        case Param::omega2: return "omega2";
    }
    return "?";
}

inline std::optional<Param> parse_param(std::string_view s) {
    for (auto p : kAllParams)
        if (param_name(p) == s) return p;
    return std::nullopt;
}

inline double get_param(const ModelSpec& m, Param p) {
    switch (p) {
        case Param::b11: return m.op.b11;
        case Param::b21: return m.op.b21;
        case Param::b22: return m.op.b22;
        case Param::h11: return m.op.h11;
        case Param::h21: return m.op.h21;
        case Param::h22: return m.op.h22;
        case Param::kappa_n1: return m.noise1.kappa_n;
        case Param::kappa_n2: return m.noise2.kappa_n;
        case Param::omega1: return m.noise1.omega;
        case Param::omega2: return m.noise2.omega;
    }
    return 0.0;
}

inline void set_param(ModelSpec& m, Param p, double v) {
    switch (p) {
        case Param::b11: m.op.b11 = v; break;
        case Param::b21: m.op.b21 = v; break;
        case Param::b22: m.op.b22 = v; break;
        case Param::h11: m.op.h11 = v; break;
        case Param::h21: m.op.h21 = v; break;
        case Param::h22: m.op.h22 = v; break;
        case Param::kappa_n1: m.noise1.kappa_n = v; break;
        case Param::kappa_n2: m.noise2.kappa_n = v; break;
        case Param::omega1: m.noise1.omega = v; break;
        case Param::omega2: m.noise2.omega = v; break;
    }
}

/// Parameters that enter the model and are estimated, in report order.
/// Locked noise scales, unused operator coefficients and the noise
/// parameters of white rows are left out.
inline std::vector<Param> free_parameters(const ModelSpec& m) {
    std::vector<Param> out{Param::b11, Param::b21, Param::b22, Param::h11};
    if (m.op.variant == OperatorVariant::L2) out.push_back(Param::h21);
    if (m.op.variant != OperatorVariant::L3) out.push_back(Param::h22);
    if (m.noise1.kind != NoiseKind::white && !m.row1_locked()) out.push_back(Param::kappa_n1);
    if (m.noise2.kind != NoiseKind::white && !m.row2_locked()) out.push_back(Param::kappa_n2);
    if (m.noise1.kind == NoiseKind::oscillating) out.push_back(Param::omega1);
    if (m.noise2.kind == NoiseKind::oscillating) out.push_back(Param::omega2);
    return out;
}

enum class Transform { log, identity, logit };

inline Transform transform_of(Param p) {
    if (p == Param::b21) return Transform::identity;
    if (p == Param::omega1 || p == Param::omega2) return Transform::logit;
    return Transform::log;
}

inline double to_unconstrained(Transform t, double x) {
    switch (t) {
        case Transform::log: return std::log(x);
        case Transform::identity: return x;
        case Transform::logit: {
            const double c = std::clamp(x, 1e-10, 1.0 - 1e-10);
            return std::log(c / (1.0 - c));
        }
    }
    return x;
}

inline double from_unconstrained(Transform t, double u) {
    switch (t) {
        case Transform::log: return std::exp(u);
        case Transform::identity: return u;
        case Transform::logit: return 1.0 / (1.0 + std::exp(-u));
    }
    return u;
}

// d theta / d u at u.
inline double transform_jacobian(Transform t, double u) {
    switch (t) {
        case Transform::log: return std::exp(u);
        case Transform::identity: return 1.0;
        case Transform::logit: {
            const double w = 1.0 / (1.0 + std::exp(-u));
            return w * (1.0 - w);
        }
    }
    return 1.0;
}

inline Vector to_unconstrained(const ModelSpec& m, const std::vector<Param>& params) {
    Vector u(static_cast<Eigen::Index>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        u[static_cast<Eigen::Index>(i)] = to_unconstrained(transform_of(params[i]), get_param(m, params[i]));
    return u;
}

inline ModelSpec from_unconstrained(const ModelSpec& base, const std::vector<Param>& params, const Vector& u) {
    ModelSpec m = base;
    for (std::size_t i = 0; i < params.size(); ++i)
        set_param(m, params[i], from_unconstrained(transform_of(params[i]), u[static_cast<Eigen::Index>(i)]));
    return m;
}

struct Prior {
    enum class Family { lognormal, normal, beta };
    Family family = Family::lognormal;
    double a = 0.0;  // mu, or the first beta shape
    double b = 1.0;  // sigma^2, or the second beta shape

    static Prior lognormal(double mu, double sigma2) { return {Family::lognormal, mu, sigma2}; }
    static Prior normal(double mu, double sigma2) { return {Family::normal, mu, sigma2}; }
    static Prior beta(double alpha, double beta) { return {Family::beta, alpha, beta}; }

    void validate() const {
        if (!(b > 0.0)) throw InvalidInput("prior: variance / shape must be positive");
        if (family == Family::beta && !(a > 0.0)) throw InvalidInput("prior: beta shapes must be positive");
    }

    [[nodiscard]] double log_density(double x) const {
        constexpr double inf = std::numeric_limits<double>::infinity();
        switch (family) {
            case Family::lognormal: {
                if (!(x > 0.0)) return -inf;
                const double z = std::log(x) - a;
                return -std::log(x) - 0.5 * std::log(2.0 * std::numbers::pi * b) - z * z / (2.0 * b);
            }
            case Family::normal: {
                const double z = x - a;
                return -0.5 * std::log(2.0 * std::numbers::pi * b) - z * z / (2.0 * b);
            }
            case Family::beta: {
                if (!(x > 0.0 && x < 1.0)) {
                    // The density at the closed end points is finite only for unit shapes.
                    if ((x == 0.0 && a == 1.0) || (x == 1.0 && b == 1.0)) return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
                    return -inf;
                }
                return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) + std::lgamma(a + b) - std::lgamma(a) -
                       std::lgamma(b);
            }
        }
        return -inf;
    }
};

/// Per-parameter priors. Defaults: log-normal(0, 100) for the positive
/// parameters, normal(0, 100) for b21 and Beta(1, 1) for omega.
struct PriorSpec {
    std::map<Param, Prior> priors;

    PriorSpec() {
        for (auto p : kAllParams) {
            switch (transform_of(p)) {
                case Transform::log: priors[p] = Prior::lognormal(0.0, 100.0); break;
                case Transform::identity: priors[p] = Prior::normal(0.0, 100.0); break;
                case Transform::logit: priors[p] = Prior::beta(1.0, 1.0); break;
            }
        }
    }

    [[nodiscard]] const Prior& prior(Param p) const { return priors.at(p); }
    void set(Param p, Prior pr) {
        pr.validate();
        priors[p] = pr;
    }
};

inline double log_prior(const ModelSpec& m, const PriorSpec& priors) {
    double lp = 0.0;
    for (auto p : free_parameters(m)) lp += priors.prior(p).log_density(get_param(m, p));
    return lp;
}

/// Terms of the log posterior of the hyperparameters,
///   log pi(theta) + 1/2 log|Q| - 1/2 log|Q_c| + 1/2 mu_c^T Q_c mu_c,
/// up to a constant that does not depend on theta.
struct PosteriorTerms {
    double log_prior = 0.0;
    double log_det_q = 0.0;
    double log_det_qc = 0.0;
    double quadratic = 0.0;  // mu_c^T Q_c mu_c
    double data_fit = 0.0;   // y^T Q_n y - quadratic
    double value = -std::numeric_limits<double>::infinity();
    // value - y^T Q_n y / 2; differs from value by a constant in theta and
    // is what the optimizer works with.
    double centered = -std::numeric_limits<double>::infinity();
    bool ok = false;
    std::string message;

    [[nodiscard]] double log_likelihood() const { return value - log_prior; }
};

/// How the data terms of the posterior are computed. The canonical form
/// factorizes the conditional precision Q + A^T Q_n A; the observation-space
/// form works with the t x t covariance A Q^{-1} A^T + Q_n^{-1} of the data
/// and never forms Q, which keeps its accuracy when Q is badly conditioned.
/// `automatic` picks the observation-space form when t^2 <= dim Q.
enum class PosteriorForm { automatic, canonical, observation_space };

namespace detail {

// W with A Q^{-1} A^T = W^T W, from factorizations of the diagonal operator
// blocks and the noise precisions. Throws NotSpd if one of them fails.
// A Q^{-1} A^T = W^T W + P^T (F F^T)^{-1} P. Every operator and noise block
// maps the constant vector e to a multiple of C e (G e = 0), so each field's
// constant mode is handled in closed form: P holds the C e components of
// the rows of A (one row per field) and F is the p x p upper triangular map
// from mode amplitudes back to those components, with the noise scale of
// each field folded in. W covers the rest, which is C-orthogonal to e. Tiny
// h or kappa values only make F small; the solves behind W stay well
// conditioned.
// B^T B = Pi R^T R Pi^T from a column-pivoted QR factorization of B with its
// rows sorted by decreasing size; the combination is backward stable row by
// row, so rows of very different scale keep their relative accuracy.
class GramFactor {
public:
    explicit GramFactor(const Matrix& B) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(B.rows()));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Vector size = B.cwiseAbs().rowwise().maxCoeff();
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return size[a] > size[b]; });
        Matrix sorted(B.rows(), B.cols());
        for (Eigen::Index i = 0; i < B.rows(); ++i) sorted.row(i) = B.row(order[static_cast<std::size_t>(i)]);
        const Eigen::ColPivHouseholderQR<Matrix> qr(sorted);
        R_ = qr.matrixQR().topRows(B.cols()).triangularView<Eigen::Upper>();
        perm_ = qr.colsPermutation();
    }

    // log |B^T B|
    [[nodiscard]] double log_determinant() const { return 2.0 * R_.diagonal().cwiseAbs().array().log().sum(); }

    // z with |z|^2 = b^T (B^T B)^{-1} b.
    [[nodiscard]] Vector whiten(const Vector& b) const {
        const Vector pb = perm_.transpose() * b;
        return R_.transpose().triangularView<Eigen::Lower>().solve(pb);
    }

private:
    Matrix R_;
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic> perm_;
};

struct ObservationFactor {
    Matrix W;
    Matrix P;
    Matrix F;
};

inline ObservationFactor observation_factor(const FemMatrices& fem, const TriangularSystem& s, const SparseMatrix& A) {
    const Eigen::Index n = fem.size();
    const Eigen::Index t = A.rows();
    const auto p = s.fields();
    const auto pi = static_cast<Eigen::Index>(p);
    const Vector& c = fem.mass_diagonal;
    const Vector c_sqrt = c.cwiseSqrt();
    const double mass = c.sum();
    const double e_norm = std::sqrt(mass);
    const Matrix At = Matrix(A.transpose());

    // Removes the e component in the C inner product.
    auto c_orthogonal = [&](auto&& y) { y -= Vector::Ones(n) * (c.transpose() * y / mass).eval(); };
    // K_ij e = mode(term) C e.
    auto mode = [](const OperatorTerm& term) { return term.alpha == 2 ? term.b * term.h : term.b; };

    ObservationFactor f;
    f.P.resize(pi, t);
    f.F = Matrix::Zero(pi, pi);

    // K^T X = A^T, block upper triangular with symmetric blocks, for the
    // C-orthogonal parts only.
    std::vector<Matrix> X(p);
    for (std::size_t i = p; i-- > 0;) {
        Matrix r = At.middleRows(static_cast<Eigen::Index>(i) * n, n);
        f.P.row(static_cast<Eigen::Index>(i)) = r.colwise().sum() / e_norm;
        r -= c * (r.colwise().sum() / mass);
        for (std::size_t j = i + 1; j < p; ++j) {
            const auto& term = s.rows[j][i];
            if (!term) continue;
            r -= operator_block(fem, term->b, term->h, term->alpha) * X[j];
            f.F(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mode(*term);
        }
        r -= c * (r.colwise().sum() / mass);
        const auto& d = *s.rows[i][i];
        f.F(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = mode(d);
        if (d.alpha == 2) {
            X[i] = ShiftedStiffness<double>(fem, d.h).solve(r) / d.b;
            c_orthogonal(X[i]);
        } else {
            X[i] = (d.b * c).cwiseInverse().asDiagonal() * r;
        }
    }

    std::vector<Matrix> w_blocks;
    for (std::size_t i = 0; i < p; ++i) {
        const auto& nt = s.noise[i];
        const Matrix Z = c.asDiagonal() * X[i];
        double noise_scale = 1.0;
        switch (nt.kind) {
            case NoiseKind::white: w_blocks.push_back(c_sqrt.asDiagonal() * X[i]); break;
            case NoiseKind::matern: {
                Matrix Y = ShiftedStiffness<double>(fem, nt.kappa_sq).solve(Z);
                c_orthogonal(Y);
                w_blocks.push_back(c_sqrt.asDiagonal() * Y);
                noise_scale = nt.kappa_sq;
                break;
            }
            case NoiseKind::oscillating: {
                // Q_eps = (G + z C)^H C^{-1} (G + z C) with z = k^2 exp(i pi omega),
                // so Z^T Q_eps^{-1} Z = |C^{1/2} (G + z C)^{-1} Z|^2.
                const Complex z = std::polar(nt.kappa_sq, std::numbers::pi * nt.omega);
                Eigen::MatrixXcd Y = ShiftedStiffness<Complex>(fem, z).solve(Z.cast<Complex>());
                Y -= Eigen::VectorXcd::Ones(n) * (c.cast<Complex>().transpose() * Y / mass).eval();
                w_blocks.push_back(c_sqrt.asDiagonal() * Y.real());
                w_blocks.push_back(c_sqrt.asDiagonal() * Y.imag());
                noise_scale = nt.kappa_sq;
                break;
            }
        }
        f.F.col(static_cast<Eigen::Index>(i)) *= noise_scale;
    }
    f.W.resize(static_cast<Eigen::Index>(w_blocks.size()) * n, t);
    for (std::size_t k = 0; k < w_blocks.size(); ++k) f.W.middleRows(static_cast<Eigen::Index>(k) * n, n) = w_blocks[k];
    return f;
}

} // namespace detail

/// Evaluates the log posterior for one data set at many parameter values.
/// Keeps the symbolic factorization of Q_c between calls, so an instance
/// must not be shared between threads; copy-construct one per thread via
/// clone() instead.
class PosteriorEvaluator {
public:
    PosteriorEvaluator(const FemMatrices& fem, const ObservationSet& obs, PriorSpec priors,
                       PosteriorForm form = PosteriorForm::automatic)
        : fem_(fem), priors_(std::move(priors)), obs_(obs), form_(form) {
        const Eigen::Index dim = 2 * fem.size();
        if (form_ == PosteriorForm::automatic) {
            form_ = obs.size() * obs.size() <= dim ? PosteriorForm::observation_space : PosteriorForm::canonical;
        }
        if (form_ == PosteriorForm::canonical) {
            at_qn_a_ = build_at_qn_a(obs, dim);
            shift_ = canonical_shift(obs, dim);
        }
        if (obs.size() > 0) y_qn_y_ = obs.y.dot(obs.noise_precision.cwiseProduct(obs.y));
    }

    [[nodiscard]] PosteriorEvaluator clone() const { return PosteriorEvaluator(fem_, obs_, priors_, form_); }

    [[nodiscard]] PosteriorForm form() const { return form_; }

    [[nodiscard]] PosteriorTerms evaluate(const ModelSpec& theta) {
        PosteriorTerms t;
        try {
            theta.validate();
        } catch (const InvalidInput& e) {
            t.message = e.what();
            return t;
        }
        t.log_prior = log_prior(theta, priors_);
        if (!std::isfinite(t.log_prior)) {
            t.message = "parameters outside the prior support";
            return t;
        }
        const auto sys = to_system(theta);
        try {
            t.log_det_q = system_log_determinant(fem_, sys);
        } catch (const NotSpd&) {
            t.message = "precision not positive definite at " + theta.describe();
            return t;
        }
        if (form_ == PosteriorForm::observation_space) return observation_space(t, sys, theta);
        const Gmrf g = system_precision(fem_, sys, false);
        SparseMatrix qc = g.Q + at_qn_a_;
        qc.makeCompressed();
        if (!chol_.try_factorize(qc)) {
            t.message = "conditional precision not positive definite at " + theta.describe();
            return t;
        }
        t.log_det_qc = chol_.log_determinant();
        const Vector mu = chol_.solve(shift_);
        // mu_c^T Q_c mu_c = y^T Q_n y - (r^T Q_n r + mu^T Q mu) with r = y - A mu;
        // the bracket is small and keeps its relative accuracy.
        t.data_fit = mu.dot(g.Q * mu);
        if (obs_.size() > 0) {
            const Vector r = obs_.y - obs_.A * mu;
            t.data_fit += r.dot(obs_.noise_precision.cwiseProduct(r));
        }
        t.quadratic = y_qn_y_ - t.data_fit;
        const double base = t.log_prior + 0.5 * t.log_det_q - 0.5 * t.log_det_qc;
        t.value = base + 0.5 * t.quadratic;
        t.centered = base - 0.5 * t.data_fit;
        t.ok = std::isfinite(t.value) && std::isfinite(t.centered);
        return t;
    }

    double operator()(const ModelSpec& theta) { return evaluate(theta).value; }

    [[nodiscard]] const PriorSpec& priors() const { return priors_; }

private:
    // Data terms from S = A Q^{-1} A^T + Q_n^{-1} = S0 + P^T (F F^T)^{-1} P
    // with S0 = W^T W + Q_n^{-1}; see detail::observation_factor. With
    // U = S0^{-1/2} P^T and H = F F^T + U^T U (both Gram factors of stacked
    // matrices), |S| = |S0| |H| / |F|^2 and
    // y^T S^{-1} y = |v|^2 - |H^{-1/2} U^T v|^2 for v = S0^{-1/2} y.
    // |Q_c| = |Q| |Q_n| |S| and mu_c^T Q_c mu_c = y^T Q_n y - y^T S^{-1} y.
    PosteriorTerms& observation_space(PosteriorTerms& t, const TriangularSystem& sys, const ModelSpec& theta) {
        const Eigen::Index m = obs_.size();
        double log_det_s = 0.0;
        t.data_fit = 0.0;
        if (m > 0) {
            detail::ObservationFactor f;
            try {
                f = detail::observation_factor(fem_, sys, obs_.A);
            } catch (const NotSpd&) {
                t.message = "precision not positive definite at " + theta.describe();
                return t;
            }
            const Eigen::Index k = f.F.rows();
            Matrix B0(f.W.rows() + m, m);
            B0.topRows(f.W.rows()) = f.W;
            B0.bottomRows(m) = obs_.noise_precision.cwiseSqrt().cwiseInverse().asDiagonal();
            const detail::GramFactor S0(B0);
            const Vector v = S0.whiten(obs_.y);
            Matrix U(m, k);
            for (Eigen::Index j = 0; j < k; ++j) U.col(j) = S0.whiten(f.P.row(j).transpose());

            Matrix B1(k + m, k);
            B1.topRows(k) = f.F.transpose();
            B1.bottomRows(m) = U;
            const detail::GramFactor H(B1);
            const Vector w = H.whiten(U.transpose() * v);

            log_det_s = S0.log_determinant() + H.log_determinant() - 2.0 * f.F.diagonal().cwiseAbs().array().log().sum();
            t.data_fit = v.squaredNorm() - w.squaredNorm();
        }
        t.log_det_qc = t.log_det_q + log_det_s + obs_.noise_precision.array().log().sum();
        t.quadratic = y_qn_y_ - t.data_fit;
        const double base = t.log_prior + 0.5 * t.log_det_q - 0.5 * t.log_det_qc;
        t.value = base + 0.5 * t.quadratic;
        t.centered = t.log_prior - 0.5 * log_det_s - 0.5 * obs_.noise_precision.array().log().sum() - 0.5 * t.data_fit;
        t.ok = std::isfinite(t.value) && std::isfinite(t.centered);
        return t;
    }

    static SparseMatrix build_at_qn_a(const ObservationSet& obs, Eigen::Index dim) {
        SparseMatrix zero(static_cast<int>(dim), static_cast<int>(dim));
        return conditional_precision(zero, obs);
    }

    FemMatrices fem_;
    PriorSpec priors_;
    ObservationSet obs_;
    SparseMatrix at_qn_a_;
    Vector shift_;
    PosteriorForm form_;
    double y_qn_y_ = 0.0;
    SparseCholesky chol_;
};

inline double log_posterior(const ModelSpec& theta, const FemMatrices& fem, const ObservationSet& obs,
                            const PriorSpec& priors, PosteriorForm form = PosteriorForm::automatic) {
    PosteriorEvaluator ev(fem, obs, priors, form);
    return ev(theta);
}

struct FitOptions {
    int max_iterations = 200;
    double gradient_tolerance = 1e-3;   // max |d logpost / du|
    double function_tolerance = 1e-10;  // relative change of logpost
    double gradient_step = 1e-5;        // relative central-difference step
    double hessian_step = 1e-3;         // absolute step in transformed space
    double max_step = 1.0;              // largest move per iteration in transformed space
    unsigned threads = 1;
};

struct FitResult {
    ModelSpec theta_hat;
    std::vector<Param> parameters;
    Vector estimates;
    Vector stderr_;  // natural scale, delta method
    Matrix covariance_unconstrained;
    double logpost_at_mode = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    bool hessian_ok = false;
    std::vector<double> trace;  // centered log posterior after each accepted step
    std::string message;

    [[nodiscard]] bool within(const ModelSpec& truth, double k_sd) const {
        for (std::size_t i = 0; i < parameters.size(); ++i) {
            const auto ix = static_cast<Eigen::Index>(i);
            if (!(std::abs(estimates[ix] - get_param(truth, parameters[i])) <= k_sd * stderr_[ix])) return false;
        }
        return true;
    }
};

namespace detail {

// Negative log posterior in transformed coordinates, evaluated serially or
// on a small pool of evaluators.
class Objective {
public:
    Objective(const FemMatrices& fem, const ObservationSet& obs, const PriorSpec& priors, ModelSpec base,
              std::vector<Param> params, unsigned threads)
        : base_(std::move(base)), params_(std::move(params)) {
        evaluators_.emplace_back(fem, obs, priors);
        for (unsigned i = 1; i < std::max(1u, threads); ++i) evaluators_.push_back(evaluators_.front().clone());
    }

    double operator()(const Vector& u) {
        ++evaluations_;
        return eval_with(0, u);
    }

    // f at every point, in order.
    std::vector<double> many(const std::vector<Vector>& pts) {
        std::vector<double> out(pts.size());
        const std::size_t workers = std::min(evaluators_.size(), pts.size());
        evaluations_ += static_cast<int>(pts.size());
        if (workers <= 1) {
            for (std::size_t i = 0; i < pts.size(); ++i) out[i] = eval_with(0, pts[i]);
            return out;
        }
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < pts.size(); i += workers) out[i] = eval_with(w, pts[i]);
            });
        }
        for (auto& t : pool) t.join();
        return out;
    }

    [[nodiscard]] ModelSpec model(const Vector& u) const { return from_unconstrained(base_, params_, u); }
    [[nodiscard]] int evaluations() const { return evaluations_; }

private:
    double eval_with(std::size_t w, const Vector& u) {
        if (!u.allFinite()) return std::numeric_limits<double>::infinity();
        const auto t = evaluators_[w].evaluate(model(u));
        return t.ok ? -t.centered : std::numeric_limits<double>::infinity();
    }

    ModelSpec base_;
    std::vector<Param> params_;
    std::vector<PosteriorEvaluator> evaluators_;
    int evaluations_ = 0;
};

inline double fd_step(double u, double rel) { return rel * std::max(1.0, std::abs(u)); }

inline Vector central_gradient(Objective& f, const Vector& u, double rel) {
    const Eigen::Index d = u.size();
    std::vector<Vector> pts;
    pts.reserve(static_cast<std::size_t>(2 * d));
    for (Eigen::Index i = 0; i < d; ++i) {
        const double h = fd_step(u[i], rel);
        Vector up = u, dn = u;
        up[i] += h;
        dn[i] -= h;
        pts.push_back(up);
        pts.push_back(dn);
    }
    const auto vals = f.many(pts);
    Vector g(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double h = fd_step(u[i], rel);
        g[i] = (vals[static_cast<std::size_t>(2 * i)] - vals[static_cast<std::size_t>(2 * i + 1)]) / (2.0 * h);
    }
    return g;
}

inline Matrix central_hessian(Objective& f, const Vector& u, double f0, double h) {
    const Eigen::Index d = u.size();
    std::vector<Vector> pts;
    for (Eigen::Index i = 0; i < d; ++i) {
        for (int s : {1, -1}) {
            Vector p = u;
            p[i] += s * h;
            pts.push_back(p);
        }
        for (Eigen::Index j = 0; j < i; ++j) {
            for (auto [si, sj] : {std::pair{1, 1}, std::pair{1, -1}, std::pair{-1, 1}, std::pair{-1, -1}}) {
                Vector p = u;
                p[i] += si * h;
                p[j] += sj * h;
                pts.push_back(p);
            }
        }
    }
    const auto v = f.many(pts);
    Matrix H(d, d);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
        const double fp = v[k++];
        const double fm = v[k++];
        H(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
        for (Eigen::Index j = 0; j < i; ++j) {
            const double fpp = v[k++], fpm = v[k++], fmp = v[k++], fmm = v[k++];
            H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
        }
    }
    return H;
}

} // namespace detail

/// Posterior mode of the free parameters of `init` by BFGS on the
/// transformed scale (log for positive parameters, logit for omega,
/// identity for b21) with central finite-difference gradients. Standard
/// deviations come from the inverse finite-difference Hessian at the mode,
/// mapped to the natural scale by the delta method.
inline FitResult fit_map(const FemMatrices& fem, const ObservationSet& obs, const PriorSpec& priors,
                         const ModelSpec& init, const FitOptions& opt = {}) {
    init.validate();
    FitResult res;
    res.parameters = free_parameters(init);
    detail::Objective f(fem, obs, priors, init, res.parameters, opt.threads);

    Vector u = to_unconstrained(init, res.parameters);
    const Eigen::Index d = u.size();
    double fu = f(u);
    if (!std::isfinite(fu)) {
        res.theta_hat = init;
        res.message = "log posterior is not finite at the initial point";
        return res;
    }
    Vector g = detail::central_gradient(f, u, opt.gradient_step);
    Matrix Hinv = Matrix::Identity(d, d);
    bool first = true;
    res.trace.push_back(-fu);

    for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
        if (g.cwiseAbs().maxCoeff() < opt.gradient_tolerance) {
            res.converged = true;
            res.message = "gradient tolerance reached";
            break;
        }
        Vector dir = -Hinv * g;
        if (!(g.dot(dir) < 0.0)) {
            Hinv.setIdentity();
            dir = -g;
        }
        const double len = dir.cwiseAbs().maxCoeff();
        if (len > opt.max_step) dir *= opt.max_step / len;

        const double slope = g.dot(dir);
        double alpha = 1.0;
        double f_new = std::numeric_limits<double>::infinity();
        Vector u_new;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            u_new = u + alpha * dir;
            f_new = f(u_new);
            if (std::isfinite(f_new) && f_new <= fu + 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            res.converged = g.cwiseAbs().maxCoeff() < 10.0 * opt.gradient_tolerance;
            res.message = "line search failed to make progress";
            break;
        }
        Vector g_new = detail::central_gradient(f, u_new, opt.gradient_step);
        Vector s = u_new - u;
        Vector y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12) {
            if (first) {
                Hinv = Matrix::Identity(d, d) * (sy / y.squaredNorm());
                first = false;
            }
            const double rho = 1.0 / sy;
            Matrix I = Matrix::Identity(d, d);
            Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
        }
        const double change = fu - f_new;
        u = u_new;
        fu = f_new;
        g = g_new;
        res.trace.push_back(-fu);
        if (change <= opt.function_tolerance * (1.0 + std::abs(fu)) &&
            g.cwiseAbs().maxCoeff() < 10.0 * opt.gradient_tolerance) {
            res.converged = true;
            res.message = "function tolerance reached";
            ++res.iterations;
            break;
        }
    }
    if (!res.converged && res.message.empty()) res.message = "maximum iterations reached";

    res.theta_hat = f.model(u);
    res.logpost_at_mode = PosteriorEvaluator(fem, obs, priors).evaluate(res.theta_hat).value;
    res.estimates.resize(d);
    res.stderr_ = Vector::Constant(d, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index i = 0; i < d; ++i) res.estimates[i] = get_param(res.theta_hat, res.parameters[static_cast<std::size_t>(i)]);

    const Matrix H = detail::central_hessian(f, u, fu, opt.hessian_step);
    Eigen::LLT<Matrix> llt(H);
    if (llt.info() == Eigen::Success && H.allFinite()) {
        res.covariance_unconstrained = llt.solve(Matrix::Identity(d, d));
        res.hessian_ok = true;
        for (Eigen::Index i = 0; i < d; ++i) {
            const double var = res.covariance_unconstrained(i, i);
            const double jac = transform_jacobian(transform_of(res.parameters[static_cast<std::size_t>(i)]), u[i]);
            res.stderr_[i] = std::abs(jac) * std::sqrt(var);
            if (!(var > 0.0) || !std::isfinite(res.stderr_[i])) res.hessian_ok = false;
        }
    }
    if (!res.hessian_ok) {
        res.converged = false;
        res.message += "; Hessian at the mode is not negative definite";
    }
    res.evaluations = f.evaluations();
    return res;
}

struct Prediction {
    double mean = 0.0;
    double sd = 0.0;
};

/// Conditional mean and standard deviation of the field at `targets` given
/// the observations, under parameters `theta`.
inline std::vector<Prediction> predict(const ModelSpec& theta, const Mesh& mesh, const FemMatrices& fem,
                                       const ObservationSet& obs, const std::vector<Site>& targets) {
    const Gmrf g = system_precision(fem, theta, false);
    SparseCholesky chol;
    if (!chol.try_factorize(conditional_precision(g.Q, obs))) {
        throw NotSpd("predict: conditional precision is not positive definite for " + theta.describe());
    }
    const Vector mu = chol.solve(canonical_shift(obs, g.dimension()));
    const SparseMatrix A = interpolation_matrix(mesh, targets, g.fields);
    const Vector mean = A * mu;
    std::vector<Prediction> out(targets.size());
    Vector row = Vector::Zero(g.dimension());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto r = static_cast<int>(i);
        row.setZero();
        for (int k = 0; k < A.outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(A, k); it; ++it)
                if (it.row() == r) row[it.col()] = it.value();
        out[i].mean = mean[r];
        out[i].sd = chol.whiten(row).norm();
    }
    return out;
}

inline void write_fit_csv(std::ostream& os, const FitResult& r) {
    os << "parameter,estimate,stderr\n" << std::setprecision(10);
    for (std::size_t i = 0; i < r.parameters.size(); ++i) {
        const auto ix = static_cast<Eigen::Index>(i);
        os << param_name(r.parameters[i]) << ',' << r.estimates[ix] << ',' << r.stderr_[ix] << '\n';
    }
}

inline void write_fit_report(std::ostream& os, const FitResult& r, const std::optional<ModelSpec>& truth = std::nullopt) {
    os << "posterior mode\n";
    os << "  converged:      " << (r.converged ? "yes" : "no") << " (" << r.message << ")\n";
    os << "  iterations:     " << r.iterations << "\n";
    os << "  evaluations:    " << r.evaluations << "\n";
    os << "  log posterior:  " << std::setprecision(12) << r.logpost_at_mode << "\n\n";
    os << std::left << std::setw(12) << "parameter";
    if (truth) os << std::setw(14) << "true value";
    os << std::setw(14) << "estimate" << std::setw(14) << "std. dev." << "\n";
    os << std::setprecision(6);
    for (std::size_t i = 0; i < r.parameters.size(); ++i) {
        const auto ix = static_cast<Eigen::Index>(i);
        os << std::setw(12) << param_name(r.parameters[i]);
        if (truth) os << std::setw(14) << get_param(*truth, r.parameters[i]);
        os << std::setw(14) << r.estimates[ix] << std::setw(14) << r.stderr_[ix] << "\n";
    }
}

} // namespace oscgmrf
