// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failed criteria.
#include "dense_oracle.hpp"
#include "precise_oracle.hpp"

#include "oscgmrf/cholesky.hpp"
#include "oscgmrf/fem.hpp"
#include "oscgmrf/inference.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/precision.hpp"
#include "oscgmrf/sampler.hpp"
#include "oscgmrf/simulate.hpp"
#include "oscgmrf/spectra.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

using namespace oscgmrf;
using oracle::Dense;

namespace {

// Tolerances.
constexpr int kSeeds = 10;
constexpr int kSeedsRequired = 9;
constexpr double kCoverageSd = 2.0;
constexpr double kCrossingLevel = -0.02;
constexpr double kPrecisionRelTol = 1e-10;
constexpr double kMaternIdentityTol = 1e-12;
constexpr double kSpectraRelTol = 1e-12;
constexpr int kSpectraPoints = 100;
constexpr std::size_t kDraws = 200000;
constexpr double kPosteriorAbsTol = 1e-6;
constexpr int kPosteriorThetas = 20;
constexpr double kSwapAbsTol = 1e-8;
constexpr int kSwapDatasets = 10;

// Desk-scale recovery setup: 21 x 21 core vertices on [0, 20]^2 plus two
// cells of padding, i.e. a 25 x 25 vertex mesh.
constexpr std::size_t kRecoveryCore = 21;
constexpr double kRecoveryExtent = 20.0;
constexpr double kRecoveryPadding = 2.0;
constexpr std::size_t kObsPerField = 300;
constexpr double kObsPrecision = 1e4;

ModelSpec reference_model() {
    ModelSpec m;
    m.op = {OperatorVariant::L1, 0.5, 0.25, 1.0, 0.25, 0.36, 1.0};
    m.noise1 = {NoiseKind::matern, 1.0, 0.0};
    m.noise2 = {NoiseKind::oscillating, 0.6, 0.95};
    return m;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome recovery(const ModelSpec& truth, const std::function<bool(const FitResult&)>& check) {
    const auto mesh = build_regular_mesh(kRecoveryCore, kRecoveryCore, Rect{0.0, 0.0, kRecoveryExtent, kRecoveryExtent},
                                         kRecoveryPadding);
    const auto fem = assemble(mesh);
    int good = 0;
    double slowest = 0.0;
    std::ostringstream per_seed;
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto sim = simulate_observations(mesh, fem, truth, kObsPerField, kObsPrecision, static_cast<std::uint64_t>(seed));
        const auto fit = fit_map(fem, sim.obs, PriorSpec{}, truth);
        slowest = std::max(slowest, elapsed(t0));
        const bool ok = fit.converged && check(fit);
        good += ok;
        per_seed << (ok ? '+' : '-');
    }
    std::ostringstream os;
    os << good << "/" << kSeeds << " seeds [" << per_seed.str() << "] (need " << kSeedsRequired << "), "
       << mesh.num_vertices() << " vertices, slowest fit " << std::fixed << std::setprecision(1) << slowest << " s";
    return {good >= kSeedsRequired, os.str()};
}

Outcome criterion1() {
    const ModelSpec truth = reference_model();
    return recovery(truth, [&](const FitResult& r) { return r.within(truth, kCoverageSd); });
}

Outcome criterion2() {
    ModelSpec truth = reference_model();
    truth.op.b21 = 0.0;
    truth.op.b22 = 0.3;
    return recovery(truth, [](const FitResult& r) {
        for (std::size_t i = 0; i < r.parameters.size(); ++i) {
            if (r.parameters[i] != Param::b21) continue;
            const auto ix = static_cast<Eigen::Index>(i);
            return std::abs(r.estimates[ix]) <= kCoverageSd * r.stderr_[ix];
        }
        return false;
    });
}

Outcome criterion3() {
    const auto mesh = build_regular_mesh(21, 21, Rect{0.0, 0.0, 20.0, 20.0}, 20.0);
    const auto fem = assemble(mesh);
    const auto ref = mesh.nearest_vertex(mesh.core().center());
    auto minimum = [](const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); };

    const auto a = lattice_correlations(system_precision(fem, reference_model()), mesh, ref);
    ModelSpec swapped = reference_model();
    swapped.noise1 = {NoiseKind::oscillating, 0.5, 0.95};
    swapped.noise2 = {NoiseKind::matern, 0.6, 0.0};
    swapped.lock1 = false;
    const auto b = lattice_correlations(system_precision(fem, swapped), mesh, ref);

    const bool first = minimum(a.rho11) >= 0.0 && minimum(a.rho22) < kCrossingLevel;
    const bool second = minimum(b.rho11) < kCrossingLevel && minimum(b.rho22) < kCrossingLevel;
    std::ostringstream os;
    os << std::setprecision(3) << "noise2 oscillating: min rho11 " << minimum(a.rho11) << ", min rho22 "
       << minimum(a.rho22) << "; noise1 oscillating: min rho11 " << minimum(b.rho11) << ", min rho22 "
       << minimum(b.rho22) << " (crossing below " << kCrossingLevel << ")";
    return {first && second && a.warnings.empty() && b.warnings.empty(), os.str()};
}

Outcome criterion4() {
    auto gen = derive_stream(2024, 0);
    std::uniform_real_distribution<double> pos(0.2, 2.0), sym(-1.0, 1.0), om(0.0, 0.99), kk(-3.0, 3.0);
    std::uniform_int_distribution<int> pick(0, 2);
    double worst_q = 0.0, worst_noise = 0.0, worst_matern = 0.0, worst_spec = 0.0;
    for (std::size_t side = 2; side <= 5; ++side) {
        const auto mesh = build_regular_mesh(side, side, Rect{0.0, 0.0, 1.0 + side, 2.0 + side});
        const auto fem = assemble(mesh);
        const auto o = oracle::fem(mesh);
        for (int i = 0; i < 25; ++i) {
            ModelSpec m;
            m.op = {static_cast<OperatorVariant>(pick(gen)), pos(gen), sym(gen), pos(gen), pos(gen), pos(gen), pos(gen)};
            m.noise1 = {static_cast<NoiseKind>(pick(gen)), pos(gen), om(gen)};
            m.noise2 = {static_cast<NoiseKind>(pick(gen)), pos(gen), om(gen)};
            m.lock1 = pick(gen) != 0;
            worst_q = std::max(worst_q, oracle::rel_frobenius(Dense(system_precision(fem, m).Q), oracle::system_precision(o, m)));
            const NoiseSpec ns = m.noise2;
            worst_noise = std::max(worst_noise, oracle::rel_frobenius(Dense(noise_precision(fem, ns)),
                                                                      oracle::noise_precision(o, ns.kind, ns.kappa_n * ns.kappa_n, ns.omega)));
            const double kappa = pos(gen);
            worst_matern = std::max(worst_matern, oracle::rel_frobenius(Dense(noise_precision(fem, {NoiseKind::oscillating, kappa, 0.0})),
                                                                        Dense(noise_precision(fem, {NoiseKind::matern, kappa, 0.0}))));
        }
    }
    auto rel = [](double a, double b) { return a == b ? 0.0 : std::abs(a - b) / std::max(std::abs(a), std::abs(b)); };
    const ModelSpec m = reference_model();
    const auto s = to_system(m);
    for (int i = 0; i < kSpectraPoints; ++i) {
        const Point k{kk(gen), kk(gen)};
        const double kn = std::hypot(k.x, k.y);
        const auto tri = triangular_system_spectra(k, m);
        const auto full = full_system_spectra(k, operator_symbol(*s.rows[0][0], kn), Complex(0.0, 0.0),
                                              operator_symbol(*s.rows[1][0], kn), operator_symbol(*s.rows[1][1], kn),
                                              noise_spectrum(kn, s.noise[0]), noise_spectrum(kn, s.noise[1]));
        worst_spec = std::max({worst_spec, rel(tri.S11, full.S11), rel(tri.S22, full.S22), rel(tri.S21, full.S21.real()),
                               std::abs(full.S21.imag())});
    }
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << "system Q " << worst_q << ", noise Q " << worst_noise << " (tol "
       << kPrecisionRelTol << "); omega=0 vs Matern " << worst_matern << " (tol " << kMaternIdentityTol
       << "); triangular vs full spectra " << worst_spec << " (tol " << kSpectraRelTol << ")";
    return {worst_q <= kPrecisionRelTol && worst_noise <= kPrecisionRelTol && worst_matern <= kMaternIdentityTol &&
                worst_spec <= kSpectraRelTol,
            os.str()};
}

Outcome criterion5() {
    const auto mesh = build_regular_mesh(5, 5, Rect{0.0, 0.0, 4.0, 4.0});
    const auto g = system_precision(assemble(mesh), reference_model());
    const Dense S = Dense(g.Q).inverse();
    const auto batch = sample(g, kDraws, 77);
    const Eigen::RowVectorXd mean = batch.draws.colwise().mean();
    const Matrix centred = batch.draws.rowwise() - mean;
    const Dense emp = centred.transpose() * centred / static_cast<double>(kDraws - 1);
    const double dev = (emp - S).cwiseAbs().maxCoeff();
    const double tol = 5.0 * S.diagonal().maxCoeff() / std::sqrt(static_cast<double>(kDraws));
    std::ostringstream os;
    os << std::scientific << std::setprecision(3) << "max |cov - Q^-1| " << dev << " (tol " << tol << "), "
       << kDraws << " draws, dimension " << g.dimension();
    return {dev <= tol, os.str()};
}

// One parameter set drawn from the default priors.
ModelSpec draw_from_priors(SplitMix64& gen, const PriorSpec& priors) {
    ModelSpec m = reference_model();
    for (auto p : free_parameters(m)) {
        const auto& pr = priors.prior(p);
        double v = 0.0;
        switch (pr.family) {
            case Prior::Family::lognormal: v = std::exp(std::normal_distribution<double>(pr.a, std::sqrt(pr.b))(gen)); break;
            case Prior::Family::normal: v = std::normal_distribution<double>(pr.a, std::sqrt(pr.b))(gen); break;
            case Prior::Family::beta: {
                const double x = std::gamma_distribution<double>(pr.a, 1.0)(gen);
                const double y = std::gamma_distribution<double>(pr.b, 1.0)(gen);
                v = x / (x + y);
                break;
            }
        }
        set_param(m, p, v);
    }
    return m;
}

// Reference: the marginal density of the data evaluated in 300-digit
// arithmetic. Draws from the default priors span dozens of orders of
// magnitude, beyond what double-precision dense algebra can follow.
Outcome criterion6() {
    const auto mesh = build_regular_mesh(4, 4, Rect{0.0, 0.0, 3.0, 3.0});
    const auto fem = assemble(mesh);
    auto gen = derive_stream(606, 0);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Site> sites;
    for (int i = 0; i < 5; ++i) sites.push_back({static_cast<std::size_t>(1 + i % 2), {u(gen), u(gen)}, normal(gen)});
    const double prec = 25.0;
    const auto obs = make_observations(mesh, sites, {prec, prec});
    Dense A(5, 2 * static_cast<Eigen::Index>(mesh.num_vertices()));
    for (int r = 0; r < 5; ++r) {
        const auto& site = sites[static_cast<std::size_t>(r)];
        A.row(r) = oracle::interpolation_row(mesh, site.location, site.field, 2);
    }
    const Eigen::VectorXd qn = Eigen::VectorXd::Constant(5, prec);

    const PriorSpec priors;
    double worst = 0.0;
    int failed = 0;
    for (int i = 0; i < kPosteriorThetas; ++i) {
        const ModelSpec m = draw_from_priors(gen, priors);
        double diff = std::numeric_limits<double>::infinity();
        try {
            const double ref = oracle::precise_log_posterior(fem, m, A, qn, obs.y, log_prior(m, priors));
            diff = std::abs(log_posterior(m, fem, obs, priors) - ref);
        } catch (const std::exception&) {
        }
        if (!(diff <= kPosteriorAbsTol)) ++failed;
        worst = std::max(worst, diff);
    }
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << "max |log_posterior - oracle| " << worst << " over "
       << kPosteriorThetas << " draws from the default priors (tol " << kPosteriorAbsTol << ")";
    if (failed) os << ", " << failed << " draws outside tolerance";
    return {failed == 0, os.str()};
}

Outcome criterion7() {
    const auto mesh = build_regular_mesh(12, 12, Rect{0.0, 0.0, 11.0, 11.0}, 2.0);
    const auto fem = assemble(mesh);
    double worst = 0.0;
    for (int d = 1; d <= kSwapDatasets; ++d) {
        auto gen = derive_stream(700 + static_cast<std::uint64_t>(d), 0);
        std::uniform_real_distribution<double> u(0.1, 1.5);
        ModelSpec a = reference_model();
        a.lock1 = false;
        a.op.h11 = u(gen);
        a.noise1.kappa_n = std::sqrt(u(gen));
        const auto sim = simulate_observations(mesh, fem, a, 100, kObsPrecision, static_cast<std::uint64_t>(d));
        ModelSpec b = a;
        b.op.h11 = a.noise1.kappa_n * a.noise1.kappa_n;
        b.noise1.kappa_n = std::sqrt(a.op.h11);
        PosteriorEvaluator ev(fem, sim.obs, PriorSpec{});
        const auto ta = ev.evaluate(a);
        const auto tb = ev.evaluate(b);
        worst = std::max(worst, std::abs((ta.centered - ta.log_prior) - (tb.centered - tb.log_prior)));
    }
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << "max change of the data term under the swap " << worst << " over "
       << kSwapDatasets << " datasets (tol " << kSwapAbsTol << ")";
    return {worst < kSwapAbsTol, os.str()};
}

Outcome criterion8() {
    const auto mesh = build_regular_mesh(7, 7, Rect{0.0, 0.0, 6.0, 6.0}, 2.0);
    const auto fem = assemble(mesh);
    const auto c = static_cast<Eigen::Index>(mesh.nearest_vertex(mesh.core().center()));
    bool ok = true;
    std::ostringstream os;
    os << std::scientific << std::setprecision(2);
    for (double b21 : {0.25, 1.0, -0.25, -1.0}) {
        ModelSpec m = reference_model();
        m.op.b21 = b21;
        const auto g = system_precision(fem, m);
        const double cross = Dense(g.Q).inverse()(c, g.n + c);
        ok = ok && (b21 > 0.0 ? cross < 0.0 : cross > 0.0);
        os << "b21=" << std::defaultfloat << b21 << std::scientific << ": " << cross << "  ";
    }
    return {ok, os.str()};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"parameter recovery, correlated case", criterion1},
        {"independence detection (b21 = 0)", criterion2},
        {"oscillation classification", criterion3},
        {"precision formulas vs dense oracles", criterion4},
        {"sampler covariance", criterion5},
        {"log posterior vs dense oracle", criterion6},
        {"noise scale / h11 swap", criterion7},
        {"sign rule of the cross-covariance", criterion8},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        failed += !r.pass;
        std::cout << (r.pass ? "PASS" : "FAIL") << "  criterion " << i + 1 << ": " << criteria[i].first << " -- "
                  << r.detail << " [" << std::fixed << std::setprecision(1) << elapsed(t0) << " s]" << std::endl;
    }
    return failed;
}
