#pragma once

#include "oscgmrf/config.hpp"
#include "oscgmrf/error.hpp"
#include "oscgmrf/fem.hpp"
#include "oscgmrf/inference.hpp"
#include "oscgmrf/matrix_market.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/observations.hpp"
#include "oscgmrf/precision.hpp"
#include "oscgmrf/sampler.hpp"
#include "oscgmrf/simulate.hpp"
#include "oscgmrf/spectra.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <list>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace oscgmrf::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericFailure = 3, kIoError = 4 };

struct Options {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

/// Output files of one command, held in memory until commit(). Each file is
/// written to a temporary name in the target directory and renamed into
/// place, so a failed command leaves no partial files behind.
class OutputSet {
public:
    explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

    std::ostringstream& add(const std::string& name) {
        files_.emplace_back(name, std::ostringstream{});
        files_.back().second << std::setprecision(10);
        return files_.back().second;
    }

    std::vector<std::filesystem::path> commit() const {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
        std::vector<std::filesystem::path> temps;
        auto cleanup = [&] {
            for (const auto& t : temps) std::filesystem::remove(t, ec);
        };
        for (const auto& [name, body] : files_) {
            auto tmp = dir_ / ("." + name + ".tmp");
            std::ofstream os(tmp, std::ios::binary);
            os << body.str();
            os.close();
            temps.push_back(tmp);
            if (!os) {
                cleanup();
                throw IoError("cannot write " + tmp.string());
            }
        }
        std::vector<std::filesystem::path> written;
        std::size_t i = 0;
        for (const auto& [name, body] : files_) {
            auto target = dir_ / name;
            std::filesystem::rename(temps[i], target, ec);
            if (ec) {
                cleanup();
                throw IoError("cannot rename " + temps[i].string() + " to " + target.string() + ": " + ec.message());
            }
            written.push_back(target);
            ++i;
        }
        return written;
    }

private:
    std::filesystem::path dir_;
    std::list<std::pair<std::string, std::ostringstream>> files_;  // stable references
};

inline RunConfig load(const Options& opt) {
    RunConfig cfg = load_config(opt.config);
    if (opt.out) cfg.run.output = *opt.out;
    if (opt.seed) cfg.run.seed = *opt.seed;
    if (opt.threads) {
        if (*opt.threads < 1) throw ConfigError("--threads must be at least 1");
        cfg.run.threads = *opt.threads;
        cfg.fit.threads = *opt.threads;
    }
    return cfg;
}

inline Mesh mesh_of(const RunConfig& cfg) {
    return build_regular_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.extent, cfg.mesh.padding);
}

inline std::size_t reference_vertex(const RunConfig& cfg, const Mesh& mesh) {
    return mesh.nearest_vertex(cfg.corr.reference.value_or(mesh.core().center()));
}

inline void write_correlations(std::ostream& os, const CorrelationCurve& c) {
    os << "distance,rho11,rho12,rho22,count\n";
    for (std::size_t i = 0; i < c.size(); ++i) {
        os << c.distances[i] << ',' << c.rho11[i] << ',' << c.rho12[i] << ',' << c.rho22[i] << ',' << c.counts[i]
           << '\n';
    }
}

inline void write_predictions(std::ostream& os, const std::vector<Site>& targets, const std::vector<Prediction>& p) {
    os << "field_index,x,y,value,mean,sd\n";
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& t = targets[i];
        os << t.field << ',' << t.location.x << ',' << t.location.y << ',' << t.value << ',' << p[i].mean << ','
           << p[i].sd << '\n';
    }
}

inline int cmd_mesh(const RunConfig& cfg, std::ostream& log) {
    const Mesh mesh = mesh_of(cfg);
    OutputSet out(cfg.run.output);
    write_mesh(out.add("mesh.txt"), mesh);
    out.commit();
    log << "mesh: " << mesh.num_vertices() << " vertices, " << mesh.num_triangles() << " triangles, "
        << mesh.edges().size() << " edges\n";
    return kOk;
}

inline int cmd_build(const RunConfig& cfg, std::ostream& log) {
    const Mesh mesh = mesh_of(cfg);
    const FemMatrices fem = assemble(mesh);
    const Gmrf g = system_precision(fem, cfg.model);
    OutputSet out(cfg.run.output);
    write_matrix_market(out.add("Q.mtx"), g.Q, true);
    write_matrix_market(out.add("C.mtx"), fem.mass, true);
    write_matrix_market(out.add("G.mtx"), fem.stiffness, true);
    out.commit();
    log << "precision: " << g.Q.rows() << " x " << g.Q.cols() << ", " << g.Q.nonZeros() << " nonzeros\n";
    log << "model: " << cfg.model.describe() << "\n";
    return kOk;
}

inline int cmd_sample(const RunConfig& cfg, std::ostream& log) {
    const Mesh mesh = mesh_of(cfg);
    const FemMatrices fem = assemble(mesh);
    const Gmrf g = system_precision(fem, cfg.model);
    const SampleBatch batch = sample(g, cfg.run.draws, cfg.run.seed);
    const Eigen::Index n = g.n;

    OutputSet out(cfg.run.output);
    auto& draws = out.add("draws.csv");
    draws << "draw,vertex,field1,field2\n";
    for (Eigen::Index d = 0; d < batch.count(); ++d)
        for (Eigen::Index v = 0; v < n; ++v) draws << d << ',' << v << ',' << batch.draws(d, v) << ',' << batch.draws(d, n + v) << '\n';

    auto& fields = out.add("fields.csv");
    fields << "vertex,x,y,boundary,field1,field2\n";
    for (Eigen::Index v = 0; v < n; ++v) {
        const auto p = mesh.vertex(static_cast<std::size_t>(v));
        fields << v << ',' << p.x << ',' << p.y << ',' << (mesh.is_boundary(static_cast<std::size_t>(v)) ? 1 : 0) << ','
               << batch.draws(0, v) << ',' << batch.draws(0, n + v) << '\n';
    }

    const auto curve = lattice_correlations(g, mesh, reference_vertex(cfg, mesh), cfg.corr.options);
    write_correlations(out.add("correlations.csv"), curve);

    if (cfg.observations.simulate_per_field > 0) {
        const double prec = cfg.observations.noise_precision.front();
        const auto sim = simulate_observations(mesh, fem, cfg.model, cfg.observations.simulate_per_field, prec, cfg.run.seed);
        write_sites_csv(out.add("observations.csv"), sim.sites);
    }
    out.commit();
    for (const auto& w : curve.warnings) log << "warning: " << w << "\n";
    log << "sample: " << batch.count() << " draws of dimension " << g.dimension() << ", seed " << cfg.run.seed << "\n";
    return kOk;
}

inline int cmd_corr(const RunConfig& cfg, std::ostream& log) {
    const Mesh mesh = mesh_of(cfg);
    const FemMatrices fem = assemble(mesh);
    const Gmrf g = system_precision(fem, cfg.model);
    const auto ref = reference_vertex(cfg, mesh);
    const auto curve = lattice_correlations(g, mesh, ref, cfg.corr.options);
    OutputSet out(cfg.run.output);
    write_correlations(out.add("correlations.csv"), curve);
    out.commit();
    for (const auto& w : curve.warnings) log << "warning: " << w << "\n";
    const auto classes = classify_fields(cfg.model);
    log << "reference vertex " << ref << "; field 1 " << to_string(classes[0]) << ", field 2 " << to_string(classes[1])
        << "\n";
    return kOk;
}

inline int cmd_spectra(const RunConfig& cfg, std::ostream& log) {
    cfg.model.validate();
    const auto sys = to_system(cfg.model);
    OutputSet out(cfg.run.output);
    auto& os = out.add("spectra.csv");
    os << "k,S11,S21,S22,Se1,Se2\n";
    for (std::size_t i = 0; i < cfg.spectra.points; ++i) {
        const double k = cfg.spectra.k_max * static_cast<double>(i) / static_cast<double>(cfg.spectra.points - 1);
        const double se1 = noise_spectrum(k, sys.noise[0]);
        const double se2 = noise_spectrum(k, sys.noise[1]);
        const auto s = full_system_spectra(Point{k, 0.0}, operator_symbol(*sys.rows[0][0], k), Complex(0.0, 0.0),
                                           operator_symbol(*sys.rows[1][0], k), operator_symbol(*sys.rows[1][1], k),
                                           se1, se2);
        os << k << ',' << s.S11 << ',' << s.S21.real() << ',' << s.S22 << ',' << se1 << ',' << se2 << '\n';
    }
    out.commit();
    log << "spectra: " << cfg.spectra.points << " wavenumbers in [0, " << cfg.spectra.k_max << "]\n";
    return kOk;
}

inline std::vector<Site> observed_sites(const RunConfig& cfg, const Mesh& mesh, const FemMatrices& fem) {
    if (!cfg.observations.file.empty()) return read_sites_csv_file(cfg.observations.file.string());
    if (cfg.observations.simulate_per_field > 0) {
        return simulate_observations(mesh, fem, cfg.model, cfg.observations.simulate_per_field,
                                     cfg.observations.noise_precision.front(), cfg.run.seed)
            .sites;
    }
    throw ConfigError("config field observations.file: missing (or set observations.simulate_per_field)");
}

inline int cmd_fit(const RunConfig& cfg, std::ostream& log) {
    const Mesh mesh = mesh_of(cfg);
    const FemMatrices fem = assemble(mesh);
    const auto sites = observed_sites(cfg, mesh, fem);
    const auto obs = make_observations(mesh, sites, cfg.observations.noise_precision);
    const FitResult res = fit_map(fem, obs, cfg.priors, cfg.model, cfg.fit);

    OutputSet out(cfg.run.output);
    write_fit_report(out.add("fit_report.txt"), res);
    write_fit_csv(out.add("fit.csv"), res);
    if (!cfg.observations.targets.empty() && res.converged) {
        const auto targets = read_sites_csv_file(cfg.observations.targets.string());
        write_predictions(out.add("predictions.csv"), targets, predict(res.theta_hat, mesh, fem, obs, targets));
    }
    out.commit();
    write_fit_report(log, res);
    if (!res.converged) {
        log << "error: optimizer did not converge: " << res.message << "\n";
        return kNumericFailure;
    }
    return kOk;
}

inline int cmd_predict(const RunConfig& cfg, std::ostream& log) {
    if (cfg.observations.targets.empty()) throw ConfigError("config field observations.targets: missing");
    const Mesh mesh = mesh_of(cfg);
    const FemMatrices fem = assemble(mesh);
    const auto obs = make_observations(mesh, observed_sites(cfg, mesh, fem), cfg.observations.noise_precision);
    const auto targets = read_sites_csv_file(cfg.observations.targets.string());
    const auto pred = predict(cfg.model, mesh, fem, obs, targets);
    OutputSet out(cfg.run.output);
    write_predictions(out.add("predictions.csv"), targets, pred);
    out.commit();
    log << "predict: " << targets.size() << " targets from " << obs.size() << " observations\n";
    return kOk;
}

inline const std::vector<std::pair<std::string, std::function<int(const RunConfig&, std::ostream&)>>>& commands() {
    static const std::vector<std::pair<std::string, std::function<int(const RunConfig&, std::ostream&)>>> table{
        {"mesh", cmd_mesh},       {"build", cmd_build}, {"sample", cmd_sample},   {"corr", cmd_corr},
        {"spectra", cmd_spectra}, {"fit", cmd_fit},     {"predict", cmd_predict},
    };
    return table;
}

/// Runs one subcommand and maps failures onto exit codes:
/// 2 config or input parse error, 3 numerical failure, 4 file system error.
inline int run(const std::string& command, const Options& opt, std::ostream& log, std::ostream& err) {
    try {
        const RunConfig cfg = load(opt);
        for (const auto& [name, fn] : commands())
            if (name == command) return fn(cfg, log);
        err << "error: unknown command '" << command << "'\n";
        return kConfigError;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kIoError;
    } catch (const NotSpd& e) {
        err << "error: " << e.what() << "\n";
        return kNumericFailure;
    } catch (const PoleError& e) {
        err << "error: " << e.what() << "\n";
        return kNumericFailure;
    } catch (const Error& e) {
        // Remaining library errors come from bad inputs (sites outside the
        // mesh, invalid parameters).
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kIoError;
    }
}

} // namespace oscgmrf::cli
