// Command-line front end: mesh, build, sample, corr, spectra, fit, predict.
#include "oscgmrf/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"Bivariate Gaussian random fields with oscillating covariances on triangle meshes"};
    app.require_subcommand(1);

    oscgmrf::cli::Options opt;
    std::string out;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    const std::pair<const char*, const char*> subcommands[] = {
        {"mesh", "write the padded mesh"},
        {"build", "write the joint precision matrix (Matrix Market)"},
        {"sample", "draw from the field; write draws and correlation curves"},
        {"corr", "write lattice correlation curves"},
        {"spectra", "write power and cross spectra"},
        {"fit", "posterior mode of the parameters"},
        {"predict", "conditional mean and sd at target sites"},
    };
    for (const auto& [name, help] : subcommands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory (overrides run.output)");
        sub->add_option("--seed", seed, "random seed (overrides run.seed)");
        sub->add_option("--threads", threads, "worker threads for posterior evaluations")->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : oscgmrf::cli::kConfigError;
    }

    auto* sub = app.get_subcommands().front();
    if (sub->count("--out")) opt.out = out;
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--threads")) opt.threads = threads;
    return oscgmrf::cli::run(sub->get_name(), opt, std::cout, std::cerr);
}
