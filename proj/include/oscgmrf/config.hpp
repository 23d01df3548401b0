#pragma once

#include "oscgmrf/error.hpp"
#include "oscgmrf/inference.hpp"
#include "oscgmrf/mesh.hpp"
#include "oscgmrf/model.hpp"
#include "oscgmrf/spectra.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oscgmrf {

struct MeshConfig {
    std::size_t nx = 0;
    std::size_t ny = 0;
    Rect extent;
    double padding = 0.0;
};

struct ObservationConfig {
    std::filesystem::path file;     // observed sites; empty when not given
    std::filesystem::path targets;  // prediction sites; empty when not given
    std::vector<double> noise_precision{1e4, 1e4};
    std::size_t simulate_per_field = 0;
};

struct RunSection {
    std::uint64_t seed = 1;
    std::size_t draws = 1;
    std::filesystem::path output = "out";
    unsigned threads = 1;
};

struct CorrConfig {
    std::optional<Point> reference;  // default: vertex nearest the core centre
    CorrelationOptions options;
};

struct SpectraConfig {
    double k_max = 2.0;
    std::size_t points = 101;
};

/// Everything one run needs. Relative paths are resolved against the
/// directory of the config file.
struct RunConfig {
    MeshConfig mesh;
    ModelSpec model;
    PriorSpec priors;
    ObservationConfig observations;
    RunSection run;
    CorrConfig corr;
    SpectraConfig spectra;
    FitOptions fit;
    std::filesystem::path base_dir;
};

namespace detail {

using Ptree = boost::property_tree::ptree;

class Section {
public:
    Section(const Ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

    [[nodiscard]] bool present() const { return tree_ != nullptr; }

    [[nodiscard]] std::optional<std::string> raw(const std::string& key) const {
        if (!tree_) return std::nullopt;
        auto v = tree_->get_optional<std::string>(key);
        if (!v) return std::nullopt;
        used_.insert(key);
        return *v;
    }

    [[nodiscard]] std::string field(const std::string& key) const { return name_ + "." + key; }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError("config field " + field(key) + ": " + what);
    }

    [[nodiscard]] std::vector<double> numbers(const std::string& key) const {
        auto s = raw(key);
        if (!s) return {};
        std::istringstream is(*s);
        std::vector<double> out;
        std::string tok;
        while (is >> tok) {
            try {
                std::size_t used = 0;
                out.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::logic_error&) {
                fail(key, "'" + tok + "' is not a number");
            }
        }
        if (out.empty()) fail(key, "empty value");
        return out;
    }

    [[nodiscard]] std::optional<double> number(const std::string& key) const {
        auto v = numbers(key);
        if (v.empty()) return std::nullopt;
        if (v.size() != 1) fail(key, "expected a single number");
        return v.front();
    }

    [[nodiscard]] double number_or(const std::string& key, double fallback) const {
        return number(key).value_or(fallback);
    }

    [[nodiscard]] std::optional<std::uint64_t> count(const std::string& key) const {
        auto s = raw(key);
        if (!s) return std::nullopt;
        try {
            std::size_t used = 0;
            if (s->find('-') != std::string::npos) throw std::invalid_argument("negative");
            const auto v = std::stoull(*s, &used);
            if (used != s->size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::logic_error&) {
            fail(key, "'" + *s + "' is not a non-negative integer");
        }
    }

    [[nodiscard]] std::optional<bool> flag(const std::string& key) const {
        auto s = raw(key);
        if (!s) return std::nullopt;
        if (*s == "true" || *s == "yes" || *s == "on" || *s == "1") return true;
        if (*s == "false" || *s == "no" || *s == "off" || *s == "0") return false;
        fail(key, "'" + *s + "' is not a boolean");
    }

    void check_unused() const {
        if (!tree_) return;
        for (const auto& [k, v] : *tree_) {
            if (!used_.count(k)) fail(k, "unknown key");
        }
    }

private:
    const Ptree* tree_;
    std::string name_;
    mutable std::set<std::string> used_;
};

inline Prior parse_prior(const Section& s, const std::string& key, const std::string& text) {
    std::istringstream is(text);
    std::string family;
    double a = 0.0, b = 0.0;
    if (!(is >> family >> a >> b)) s.fail(key, "expected '<lognormal|normal|beta> <a> <b>'");
    std::string rest;
    if (is >> rest) s.fail(key, "trailing text '" + rest + "'");
    Prior p;
    if (family == "lognormal") {
        p = Prior::lognormal(a, b);
    } else if (family == "normal") {
        p = Prior::normal(a, b);
    } else if (family == "beta") {
        p = Prior::beta(a, b);
    } else {
        s.fail(key, "unknown prior family '" + family + "'");
    }
    try {
        p.validate();
    } catch (const InvalidInput& e) {
        s.fail(key, e.what());
    }
    return p;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

} // namespace detail

/// Parses an INI-style config. Every field is validated here, before any
/// computation; the message of the ConfigError names the offending field.
inline RunConfig parse_config(std::istream& is, const std::string& name = "<config>",
                              const std::filesystem::path& base_dir = ".") {
    detail::Ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ParseError(name, e.line(), e.message());
    }

    static const std::set<std::string> known{"mesh", "model", "priors", "observations", "run", "corr", "spectra", "fit"};
    for (const auto& [k, v] : tree) {
        if (!known.count(k)) throw ConfigError("config section [" + k + "] is unknown");
        if (!v.data().empty()) throw ConfigError("config key '" + k + "' must be inside a section");
    }
    auto section = [&](const std::string& s) {
        auto child = tree.get_child_optional(s);
        return detail::Section(child ? &*child : nullptr, s);
    };

    RunConfig cfg;
    cfg.base_dir = base_dir;

    // [mesh]
    {
        auto s = section("mesh");
        if (!s.present()) throw ConfigError("config section [mesh] is missing");
        auto nx = s.count("nx");
        if (!nx) s.fail("nx", "missing");
        if (*nx < 2) s.fail("nx", "need at least 2 vertices per side");
        cfg.mesh.nx = *nx;
        cfg.mesh.ny = s.count("ny").value_or(*nx);
        if (cfg.mesh.ny < 2) s.fail("ny", "need at least 2 vertices per side");
        auto ext = s.numbers("extent");
        if (ext.empty()) s.fail("extent", "missing");
        if (ext.size() != 4) s.fail("extent", "expected 'xmin ymin xmax ymax'");
        cfg.mesh.extent = Rect{ext[0], ext[1], ext[2], ext[3]};
        if (!(cfg.mesh.extent.xmax > cfg.mesh.extent.xmin) || !(cfg.mesh.extent.ymax > cfg.mesh.extent.ymin)) {
            s.fail("extent", "must have xmax > xmin and ymax > ymin");
        }
        cfg.mesh.padding = s.number_or("padding", 0.0);
        if (!(cfg.mesh.padding >= 0.0)) s.fail("padding", "must be non-negative");
        s.check_unused();
    }

    // [model]
    {
        auto s = section("model");
        auto& m = cfg.model;
        if (auto v = s.raw("operator")) {
            auto p = parse_operator_variant(*v);
            if (!p) s.fail("operator", "expected L1, L2 or L3");
            m.op.variant = *p;
        }
        m.op.b11 = s.number_or("b11", m.op.b11);
        m.op.b21 = s.number_or("b21", m.op.b21);
        m.op.b22 = s.number_or("b22", m.op.b22);
        m.op.h11 = s.number_or("h11", m.op.h11);
        m.op.h21 = s.number_or("h21", m.op.h21);
        m.op.h22 = s.number_or("h22", m.op.h22);
        auto noise = [&](const std::string& key, NoiseSpec& n) {
            if (auto v = s.raw(key)) {
                auto k = parse_noise_kind(*v);
                if (!k) s.fail(key, "expected white, matern or oscillating");
                n.kind = *k;
            }
        };
        noise("noise1", m.noise1);
        noise("noise2", m.noise2);
        m.noise1.kappa_n = s.number_or("kappa_n1", m.noise1.kappa_n);
        m.noise2.kappa_n = s.number_or("kappa_n2", m.noise2.kappa_n);
        m.noise1.omega = s.number_or("omega1", m.noise1.omega);
        m.noise2.omega = s.number_or("omega2", m.noise2.omega);
        m.lock1 = s.flag("identifiability_lock").value_or(true);
        m.lock2 = s.flag("lock2").value_or(false);

        auto positive = [&](const char* key, double v) {
            if (!(v > 0.0) || !std::isfinite(v)) s.fail(key, "must be positive");
        };
        positive("b11", m.op.b11);
        positive("b22", m.op.b22);
        positive("h11", m.op.h11);
        if (m.op.variant != OperatorVariant::L3) positive("h22", m.op.h22);
        if (m.op.variant == OperatorVariant::L2) positive("h21", m.op.h21);
        if (!std::isfinite(m.op.b21)) s.fail("b21", "must be finite");
        if (m.noise1.kind != NoiseKind::white && !m.row1_locked()) positive("kappa_n1", m.noise1.kappa_n);
        if (m.noise2.kind != NoiseKind::white && !m.row2_locked()) positive("kappa_n2", m.noise2.kappa_n);
        auto omega = [&](const char* key, const NoiseSpec& n) {
            if (n.kind == NoiseKind::oscillating && !(n.omega >= 0.0 && n.omega < 1.0)) s.fail(key, "must lie in [0, 1)");
        };
        omega("omega1", m.noise1);
        omega("omega2", m.noise2);
        try {
            m.validate();
        } catch (const InvalidInput& e) {
            throw ConfigError(std::string("config section [model]: ") + e.what());
        }
        s.check_unused();
    }

    // [priors]: <parameter> = <family> <a> <b>; "omega" sets both omegas.
    {
        auto s = section("priors");
        if (s.present()) {
            for (const auto& [key, v] : *tree.get_child_optional("priors")) {
                const auto text = *s.raw(key);
                if (key == "omega") {
                    const auto p = detail::parse_prior(s, key, text);
                    cfg.priors.set(Param::omega1, p);
                    cfg.priors.set(Param::omega2, p);
                    continue;
                }
                auto param = parse_param(key);
                if (!param) s.fail(key, "not a model parameter");
                cfg.priors.set(*param, detail::parse_prior(s, key, text));
            }
        }
    }

    // [observations]
    {
        auto s = section("observations");
        if (auto f = s.raw("file")) {
            cfg.observations.file = detail::resolve(base_dir, *f);
            if (!std::filesystem::exists(cfg.observations.file)) {
                s.fail("file", "'" + cfg.observations.file.string() + "' does not exist");
            }
        }
        if (auto f = s.raw("targets")) {
            cfg.observations.targets = detail::resolve(base_dir, *f);
            if (!std::filesystem::exists(cfg.observations.targets)) {
                s.fail("targets", "'" + cfg.observations.targets.string() + "' does not exist");
            }
        }
        auto prec = s.numbers("noise_precision");
        if (prec.size() == 1) prec.push_back(prec.front());
        if (!prec.empty()) {
            if (prec.size() != 2) s.fail("noise_precision", "expected one value or one per field");
            for (double p : prec)
                if (!(p > 0.0) || !std::isfinite(p)) s.fail("noise_precision", "must be positive");
            cfg.observations.noise_precision = prec;
        }
        cfg.observations.simulate_per_field = s.count("simulate_per_field").value_or(0);
        s.check_unused();
    }

    // [run]
    {
        auto s = section("run");
        cfg.run.seed = s.count("seed").value_or(cfg.run.seed);
        cfg.run.draws = s.count("draws").value_or(cfg.run.draws);
        if (cfg.run.draws < 1) s.fail("draws", "must be at least 1");
        if (auto o = s.raw("output")) cfg.run.output = detail::resolve(base_dir, *o);
        else cfg.run.output = detail::resolve(base_dir, "out");
        cfg.run.threads = static_cast<unsigned>(s.count("threads").value_or(1));
        if (cfg.run.threads < 1) s.fail("threads", "must be at least 1");
        s.check_unused();
    }

    // [corr]
    {
        auto s = section("corr");
        auto ref = s.numbers("reference");
        if (!ref.empty()) {
            if (ref.size() != 2) s.fail("reference", "expected 'x y'");
            cfg.corr.reference = Point{ref[0], ref[1]};
        }
        cfg.corr.options.max_distance = s.number_or("max_distance", 0.0);
        cfg.corr.options.bin_width = s.number_or("bin_width", 0.0);
        if (cfg.corr.options.max_distance < 0.0) s.fail("max_distance", "must be non-negative");
        if (cfg.corr.options.bin_width < 0.0) s.fail("bin_width", "must be non-negative");
        cfg.corr.options.min_bin_count = s.count("min_bin_count").value_or(3);
        cfg.corr.options.crop_to_core = s.flag("crop_to_core").value_or(true);
        s.check_unused();
    }

    // [spectra]
    {
        auto s = section("spectra");
        cfg.spectra.k_max = s.number_or("k_max", cfg.spectra.k_max);
        if (!(cfg.spectra.k_max > 0.0)) s.fail("k_max", "must be positive");
        cfg.spectra.points = s.count("points").value_or(cfg.spectra.points);
        if (cfg.spectra.points < 2) s.fail("points", "must be at least 2");
        s.check_unused();
    }

    // [fit]
    {
        auto s = section("fit");
        auto& f = cfg.fit;
        f.max_iterations = static_cast<int>(s.count("max_iterations").value_or(f.max_iterations));
        f.gradient_tolerance = s.number_or("gradient_tolerance", f.gradient_tolerance);
        f.function_tolerance = s.number_or("function_tolerance", f.function_tolerance);
        f.gradient_step = s.number_or("gradient_step", f.gradient_step);
        f.hessian_step = s.number_or("hessian_step", f.hessian_step);
        if (!(f.gradient_tolerance > 0.0)) s.fail("gradient_tolerance", "must be positive");
        if (!(f.gradient_step > 0.0)) s.fail("gradient_step", "must be positive");
        if (!(f.hessian_step > 0.0)) s.fail("hessian_step", "must be positive");
        s.check_unused();
    }
    cfg.fit.threads = cfg.run.threads;
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    return parse_config(in, path.string(), path.parent_path().empty() ? "." : path.parent_path());
}

} // namespace oscgmrf
