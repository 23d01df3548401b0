#include "oscgmrf/cli.hpp"
#include "oscgmrf/config.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace oscgmrf;
namespace fs = std::filesystem;

namespace {

const char* kReferenceModelModel = R"(
[model]
operator = L1
b11 = 0.5
b21 = 0.25
b22 = 1
h11 = 0.25
h22 = 0.36
noise1 = matern
noise2 = oscillating
kappa_n2 = 0.6
omega2 = 0.95
)";

class Workdir : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("oscgmrf_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path write(const std::string& name, const std::string& body) const {
        std::ofstream(dir / name) << body;
        return dir / name;
    }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    int run(const std::string& cmd, const fs::path& config, std::string* err = nullptr) const {
        cli::Options opt;
        opt.config = config;
        std::ostringstream log, e;
        const int rc = cli::run(cmd, opt, log, e);
        if (err) *err = e.str();
        return rc;
    }

    fs::path dir;
};

std::vector<std::vector<double>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

} // namespace

TEST(Config, ParsesEverySection) {
    std::istringstream in(std::string(R"(
[mesh]
nx = 5
ny = 4
extent = 0 0 4 3
padding = 1
[priors]
b21 = normal 0 4
omega = beta 2 1
[observations]
noise_precision = 100 400
[run]
seed = 42
draws = 3
[corr]
reference = 2 1.5
bin_width = 0.5
[spectra]
k_max = 3
points = 7
[fit]
max_iterations = 12
)") + kReferenceModelModel);
    auto cfg = parse_config(in);
    EXPECT_EQ(cfg.mesh.nx, 5u);
    EXPECT_EQ(cfg.mesh.ny, 4u);
    EXPECT_EQ(cfg.mesh.extent.xmax, 4.0);
    EXPECT_EQ(cfg.model.op.b21, 0.25);
    EXPECT_EQ(cfg.model.noise2.kind, NoiseKind::oscillating);
    EXPECT_TRUE(cfg.model.row1_locked());
    EXPECT_EQ(cfg.priors.prior(Param::b21).b, 4.0);
    EXPECT_EQ(cfg.priors.prior(Param::omega1).a, 2.0);
    EXPECT_EQ(cfg.observations.noise_precision, (std::vector<double>{100.0, 400.0}));
    EXPECT_EQ(cfg.run.seed, 42u);
    EXPECT_EQ(cfg.run.draws, 3u);
    EXPECT_EQ(cfg.corr.reference->y, 1.5);
    EXPECT_EQ(cfg.spectra.points, 7u);
    EXPECT_EQ(cfg.fit.max_iterations, 12);
}

TEST(Config, ErrorsNameTheField) {
    auto message = [](const std::string& text) -> std::string {
        std::istringstream in(text);
        try {
            (void)parse_config(in);
        } catch (const ConfigError& e) {
            return e.what();
        }
        return "";
    };
    EXPECT_NE(message("[mesh]\nnx = 3\n").find("mesh.extent"), std::string::npos);
    EXPECT_NE(message("[mesh]\nextent = 0 0 1 1\n").find("mesh.nx"), std::string::npos);
    EXPECT_NE(message("[mesh]\nnx = 3\nextent = 0 0 1\n").find("mesh.extent"), std::string::npos);
    EXPECT_NE(message("[mesh]\nnx = 3\nextent = 0 0 1 1\n[model]\nb11 = -1\n").find("model.b11"), std::string::npos);
    EXPECT_NE(message("[mesh]\nnx = 3\nextent = 0 0 1 1\n[model]\nnoise2 = oscillating\nomega2 = 1\n").find("model.omega2"),
              std::string::npos);
    EXPECT_NE(message("[mesh]\nnx = 3\nextent = 0 0 1 1\n[model]\nbogus = 1\n").find("model.bogus"), std::string::npos);
    EXPECT_NE(message("[mesh]\nnx = 3\nextent = 0 0 1 1\n[priors]\nb11 = gamma 1 1\n").find("priors.b11"),
              std::string::npos);
    EXPECT_NE(message("[mesh]\nnx = 3\nextent = 0 0 1 1\n[observations]\nfile = /nonexistent/obs.csv\n")
                  .find("observations.file"),
              std::string::npos);
}

TEST_F(Workdir, MeshCommandWritesCounts) {
    auto cfg = write("unit.ini", "[mesh]\nnx = 3\nextent = 0 0 1 1\n[run]\noutput = out\n");
    ASSERT_EQ(run("mesh", cfg), 0);
    std::ifstream in(dir / "out" / "mesh.txt");
    auto m = read_mesh(in);
    EXPECT_EQ(m.num_vertices(), 9u);
    EXPECT_EQ(m.num_triangles(), 8u);
}

TEST_F(Workdir, PaddedMeshSatisfiesEuler) {
    auto cfg = write("big.ini", "[mesh]\nnx = 30\nextent = 0 0 100 100\npadding = 20\n");
    ASSERT_EQ(run("mesh", cfg), 0);
    std::ifstream in(dir / "out" / "mesh.txt");
    auto m = read_mesh(in);
    EXPECT_EQ(static_cast<long>(m.num_vertices()) - static_cast<long>(m.edges().size()) +
                  static_cast<long>(m.num_triangles()) + 1,
              2);
}

TEST_F(Workdir, SampleIsDeterministic) {
    auto cfg = write("t1.ini", std::string("[mesh]\nnx = 8\nextent = 0 0 7 7\npadding = 2\n[run]\nseed = 5\ndraws = 3\n"
                                           "[observations]\nsimulate_per_field = 20\n") +
                                   kReferenceModelModel);
    ASSERT_EQ(run("sample", cfg), 0);
    const std::vector<std::string> files{"draws.csv", "fields.csv", "correlations.csv", "observations.csv"};
    std::vector<std::string> first;
    for (const auto& f : files) first.push_back(slurp(dir / "out" / f));
    fs::remove_all(dir / "out");
    ASSERT_EQ(run("sample", cfg), 0);
    for (std::size_t i = 0; i < files.size(); ++i) EXPECT_EQ(slurp(dir / "out" / files[i]), first[i]) << files[i];
    EXPECT_FALSE(first[0].empty());
}

TEST_F(Workdir, UncoupledDrawsAreUncorrelated) {
    const std::size_t count = 2000;
    std::string text = std::string("[mesh]\nnx = 9\nextent = 0 0 8 8\npadding = 2\n[run]\ndraws = 2000\n") + kReferenceModelModel;
    text.replace(text.find("b21 = 0.25"), 10, "b21 = 0");
    auto cfg = write("b0.ini", text);
    ASSERT_EQ(run("sample", cfg), 0);
    auto rows = read_csv(dir / "out" / "draws.csv");
    const auto mesh = build_regular_mesh(9, 9, Rect{0.0, 0.0, 8.0, 8.0}, 2.0);
    const auto c = mesh.nearest_vertex(mesh.core().center());
    const std::size_t n = mesh.num_vertices();
    ASSERT_EQ(rows.size(), count * n);
    Eigen::VectorXd a(count), b(count);
    for (std::size_t d = 0; d < count; ++d) {
        a[static_cast<Eigen::Index>(d)] = rows[d * n + c][2];
        b[static_cast<Eigen::Index>(d)] = rows[d * n + c][3];
    }
    const double corr = ((a.array() - a.mean()) * (b.array() - b.mean())).sum() /
                        std::sqrt((a.array() - a.mean()).square().sum() * (b.array() - b.mean()).square().sum());
    EXPECT_LT(std::abs(corr), 3.0 / std::sqrt(double(count)));
}

TEST_F(Workdir, NonOscillatingCorrelationsStayNonnegative) {
    std::string text = std::string("[mesh]\nnx = 21\nextent = 0 0 20 20\npadding = 10\n") + kReferenceModelModel;
    text.replace(text.find("omega2 = 0.95"), 13, "omega2 = 0");
    auto cfg = write("w0.ini", text);
    ASSERT_EQ(run("corr", cfg), 0);
    for (const auto& row : read_csv(dir / "out" / "correlations.csv")) {
        EXPECT_GE(row[1], 0.0);
        EXPECT_GE(row[3], 0.0);
    }
}

TEST_F(Workdir, BuildAndSpectraOutputs) {
    auto cfg = write("b.ini", std::string("[mesh]\nnx = 4\nextent = 0 0 3 3\n[spectra]\npoints = 5\n") + kReferenceModelModel);
    ASSERT_EQ(run("build", cfg), 0);
    std::ifstream q(dir / "out" / "Q.mtx");
    auto Q = read_matrix_market(q);
    EXPECT_EQ(Q.rows(), 32);
    ASSERT_EQ(run("spectra", cfg), 0);
    auto rows = read_csv(dir / "out" / "spectra.csv");
    ASSERT_EQ(rows.size(), 5u);
    for (const auto& r : rows) EXPECT_LT(r[2], 0.0);  // b21 > 0
}

TEST_F(Workdir, MalformedObservationRowGivesLineNumber) {
    write("obs.csv", "field_index,x,y,value\n1,0.5,0.5,1.0\n2,0.1,oops,0.3\n");
    auto cfg = write("fit.ini", std::string("[mesh]\nnx = 4\nextent = 0 0 3 3\n[observations]\nfile = obs.csv\n") +
                                    kReferenceModelModel);
    std::string err;
    EXPECT_EQ(run("fit", cfg, &err), cli::kConfigError);
    EXPECT_NE(err.find("obs.csv:3"), std::string::npos) << err;
    EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST_F(Workdir, FitNonConvergenceHasItsOwnExitCode) {
    auto cfg = write("fit.ini", std::string("[mesh]\nnx = 8\nextent = 0 0 7 7\npadding = 2\n[observations]\n"
                                            "simulate_per_field = 40\n[fit]\nmax_iterations = 1\n") +
                                    kReferenceModelModel);
    std::string text = slurp(cfg);
    text.replace(text.find("b11 = 0.5"), 9, "b11 = 2.0");
    std::ofstream(cfg) << text;
    EXPECT_EQ(run("fit", cfg), cli::kNumericFailure);
    EXPECT_TRUE(fs::exists(dir / "out" / "fit.csv"));
    EXPECT_TRUE(fs::exists(dir / "out" / "fit_report.txt"));
}

TEST_F(Workdir, FailedPredictLeavesNoFiles) {
    write("obs.csv", "field_index,x,y,value\n1,0.5,0.5,1.0\n2,1.5,2.5,0.3\n");
    write("targets.csv", "field_index,x,y\n1,1,1\n1,9,9\n");
    auto cfg = write("p.ini", std::string("[mesh]\nnx = 4\nextent = 0 0 3 3\n[observations]\nfile = obs.csv\n"
                                          "targets = targets.csv\n") +
                                  kReferenceModelModel);
    EXPECT_EQ(run("predict", cfg), cli::kConfigError);
    EXPECT_FALSE(fs::exists(dir / "out"));

    write("targets.csv", "field_index,x,y\n1,1,1\n2,2.5,0.5\n");
    EXPECT_EQ(run("predict", cfg), 0);
    auto rows = read_csv(dir / "out" / "predictions.csv");
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& entry : fs::directory_iterator(dir / "out")) {
        EXPECT_EQ(entry.path().extension(), ".csv") << entry.path();
    }
}

TEST_F(Workdir, ExitCodesOfTheExecutable) {
    const std::string exe = OSCGMRF_CLI_PATH;
    auto cfg = write("ok.ini", "[mesh]\nnx = 3\nextent = 0 0 1 1\n");
    auto bad = write("bad.ini", "[mesh]\nnx = 3\n");
    auto call = [&](const std::string& args) {
        const int status = std::system((exe + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    EXPECT_EQ(call("mesh --config " + cfg.string() + " --out " + (dir / "o1").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "o1" / "mesh.txt"));
    EXPECT_EQ(call("mesh --config " + bad.string()), cli::kConfigError);
    EXPECT_EQ(call("mesh --config " + (dir / "missing.ini").string()), cli::kConfigError);
    EXPECT_EQ(call("nonsense"), cli::kConfigError);

    // An output directory that cannot be created is an IO error.
    write("blocker", "x");
    EXPECT_EQ(call("mesh --config " + cfg.string() + " --out " + (dir / "blocker" / "sub").string()), cli::kIoError);

    // Non-SPD is unreachable for valid parameters; an unfactorizable
    // precision comes from invalid observation noise instead, which is a
    // config error.
    auto neg = write("neg.ini", "[mesh]\nnx = 3\nextent = 0 0 1 1\n[observations]\nnoise_precision = -1\n");
    EXPECT_EQ(call("mesh --config " + neg.string()), cli::kConfigError);
}
