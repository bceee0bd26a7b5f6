#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "qtat/field_io.hpp"
#include "qtat/geometry.hpp"
#include "qtat/manifest.hpp"

using namespace qtat;
namespace fs = std::filesystem;

namespace {

const std::string kBin = QTAT_BINARY;
const std::string kConfigs = QTAT_CONFIG_DIR;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("qtat_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  /// Runs the CLI in the test directory; stdout+stderr land in `output`.
  int run(const std::string& args) {
    const std::string log = (dir_ / "log.txt").string();
    const std::string cmd = "cd '" + dir_.string() + "' && '" + kBin + "' " + args + " > '" + log + "' 2>&1";
    const int raw = std::system(cmd.c_str());
    output = io::slurp(log);
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string cfg(const std::string& name) const { return "'" + kConfigs + "/" + name + "'"; }
  void write(const std::string& name, const std::string& text) const { io::dump(path(name), text); }

  fs::path dir_;
  std::string output;
};

std::vector<std::vector<double>> read_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream cells(line);
    for (std::string c; std::getline(cells, c, ',');) row.push_back(std::stod(c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_F(Cli, UnknownSubcommandPrintsUsage) {
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_NE(output.find("Subcommands:"), std::string::npos) << output;
  EXPECT_NE(output.find("unknown subcommand 'frobnicate'"), std::string::npos);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, QrmWithoutTraceIsAConfigError) {
  EXPECT_EQ(run("qrm --op " + cfg("op_constant.cfg") + " --geometry " + cfg("geometry_ip2.cfg") + " --out f.qtat"), 2);
  EXPECT_NE(output.find("--trace"), std::string::npos) << output;
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  write("bad_op.cfg", "ndim = 1\nmu_one = 1\n");
  EXPECT_EQ(run("forward --op bad_op.cfg --f " + cfg("source_bump.cfg") + " --out u.qtat"), 2);
  EXPECT_NE(output.find("line 2"), std::string::npos) << output;
  EXPECT_NE(output.find("mu_one"), std::string::npos);
  write("gamma.cfg", "[op]\nndim = 1\n[qrm]\ngamma = -1\n");
  EXPECT_EQ(run("reconstruct --config gamma.cfg --trace t.qtat --out f.qtat"), 2);
  EXPECT_NE(output.find("line 4"), std::string::npos) << output;
  EXPECT_EQ(run("noise --in t.qtat --out n.qtat --delta 0.01"), 2);  // --seed is mandatory
}

TEST_F(Cli, DomainErrorsExitOne) {
  write("not_a_trace.qtat", "hello");
  EXPECT_EQ(run("noise --in not_a_trace.qtat --out n.qtat --delta 0.01 --seed 1"), 1);
  EXPECT_NE(output.find("magic"), std::string::npos) << output;
  // the failed run still leaves a manifest recording the failure
  auto j = nlohmann::json::parse(io::slurp(path("n.qtat.manifest.json")));
  EXPECT_EQ(j["exit_status"], 1);
  EXPECT_TRUE(j.contains("error"));
}

TEST_F(Cli, FiveStagePipelineMatchesReconstruct) {
  const std::string op = cfg("op_constant.cfg"), geo = cfg("geometry_ip2.cfg");
  ASSERT_EQ(run("forward --op " + op + " --f " + cfg("source_bump.cfg") + " --geometry " + geo +
                " --T 16 --trace trace.qtat --out wave.qtat"), 0) << output;
  ASSERT_EQ(run("transform --in trace.qtat --out ptrace.qtat --tail-report tail.csv"), 0) << output;
  ASSERT_EQ(run("recover-neumann --op " + op + " --geometry " + geo + " --trace ptrace.qtat --out full.qtat"), 0)
      << output;
  ASSERT_EQ(run("qrm --op " + op + " --geometry " + geo + " --trace full.qtat --out fhat.qtat --report qrm.csv"), 0)
      << output;
  ASSERT_EQ(run("export-csv fhat.qtat fhat.csv"), 0) << output;

  ASSERT_EQ(run("reconstruct --op " + op + " --geometry " + geo + " --trace trace.qtat --out once.qtat"), 0) << output;
  ASSERT_EQ(run("export-csv once.qtat once.csv"), 0) << output;
  EXPECT_EQ(io::slurp(path("fhat.qtat")), io::slurp(path("once.qtat")));
  EXPECT_EQ(io::slurp(path("fhat.csv")), io::slurp(path("once.csv")));

  // the sectioned config describes the same run
  ASSERT_EQ(run("reconstruct --config " + cfg("run_ip2.cfg") + " --trace trace.qtat --out cfg.qtat"), 0) << output;
  EXPECT_EQ(io::slurp(path("fhat.qtat")), io::slurp(path("cfg.qtat")));

  // and it reconstructs: truth sampled on the forward grid
  Field truth = sample(build_grid(Box{{0.0}, {1.0}}, {257}),
                       [](std::span<const double> x) { return box_bump(x, Box{{0.01}, {0.21}}); });
  write_file(path("truth.qtat"), truth);
  ASSERT_EQ(run("reconstruct --op " + op + " --geometry " + geo +
                " --trace trace.qtat --out e.qtat --truth truth.qtat --report rep.csv"), 0) << output;
  auto rep = read_csv(io::slurp(path("rep.csv")));
  ASSERT_EQ(rep.size(), 1u);
  ASSERT_EQ(rep[0].size(), 7u);
  EXPECT_LT(rep[0][6], 0.05);
  EXPECT_LE(rep[0][4], rep[0][5]);
}

TEST_F(Cli, ExportCsvRoundTripsLosslessly) {
  Field f(build_grid(Box{{0.0, -1.0}, {1.0, 1.0}}, {5, 7}));
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::sin(1.0 + static_cast<double>(i)) / 3.0 * 1e-7;
  write_file(path("f.qtat"), f);
  ASSERT_EQ(run("export-csv f.qtat f.csv"), 0) << output;
  auto rows = read_csv(io::slurp(path("f.csv")));
  ASSERT_EQ(rows.size(), f.size());
  Field back(f.grid);
  for (std::size_t i = 0; i < f.size(); ++i) {
    Point p = f.grid.point(i);
    EXPECT_EQ(rows[i][0], p[0]);
    EXPECT_EQ(rows[i][1], p[1]);
    back[i] = rows[i][2];
  }
  write_file(path("back.qtat"), back);
  EXPECT_EQ(io::slurp(path("f.qtat")), io::slurp(path("back.qtat")));
}

TEST_F(Cli, NoiseIsReproducibleAndManifestReplays) {
  ASSERT_EQ(run("forward --op " + cfg("op_constant.cfg") + " --f " + cfg("source_bump.cfg") + " --geometry " +
                cfg("geometry_ip2.cfg") + " --T 2 --trace t.qtat"), 0) << output;
  ASSERT_EQ(run("noise --in t.qtat --out a.qtat --delta 0.05 --seed 11"), 0) << output;
  ASSERT_EQ(run("noise --in t.qtat --out b.qtat --delta 0.05 --seed 11"), 0) << output;
  ASSERT_EQ(run("noise --in t.qtat --out c.qtat --delta 0.05 --seed 12"), 0) << output;
  EXPECT_EQ(io::slurp(path("a.qtat")), io::slurp(path("b.qtat")));
  EXPECT_NE(io::slurp(path("a.qtat")), io::slurp(path("c.qtat")));

  auto j = nlohmann::json::parse(io::slurp(path("a.qtat.manifest.json")));
  EXPECT_EQ(j["subcommand"], "noise");
  EXPECT_EQ(j["seeds"][0], 11);
  EXPECT_EQ(j["inputs"][0]["sha256"], sha256_file(path("t.qtat")));
  EXPECT_EQ(j["outputs"][0]["sha256"], sha256_file(path("a.qtat")));

  EXPECT_EQ(run("replay a.qtat.manifest.json"), 0) << output;
  EXPECT_NE(output.find("bit-exactly"), std::string::npos) << output;
  // a tampered output no longer matches its manifest
  write("a.qtat", "tampered");
  io::dump(path("t.qtat"), "not a trace either");
  EXPECT_NE(run("replay a.qtat.manifest.json"), 0);
}

TEST_F(Cli, SweepNeedsSeedsAndWritesReport) {
  write("s.cfg", "ladder = 1e-2, 1e-3\nnodes = 33\ntime_steps = 32\n");
  EXPECT_EQ(run("sweep --scenario qrm --config s.cfg --out r.csv"), 2);
  ASSERT_EQ(run("sweep --scenario qrm --config s.cfg --seeds 1 2 --out r.csv"), 0) << output;
  auto text = io::slurp(path("r.csv"));
  EXPECT_EQ(text.rfind("# qtat stability report v1, scenario=qrm\n", 0), 0u);
  EXPECT_EQ(run("sweep --scenario nope --config s.cfg --seeds 1 --out r.csv"), 2);
}

TEST_F(Cli, CarlemanCheck) {
  ASSERT_EQ(run("carleman-check --op " + cfg("op_constant.cfg") +
                " --nu 4 --eps 0.05 --estimate psi --family trig3 --space 17 --time 17 --samples 1000 --out c.csv"), 0)
      << output;
  auto text = io::slurp(path("c.csv"));
  EXPECT_EQ(text.rfind("function,log_lhs,log_rhs,log_constant,degenerate\n", 0), 0u);
  EXPECT_NE(text.find("nesting=0 strip=0 weight_bound=0"), std::string::npos) << text;
  // config values stand unless a flag overrides them
  write("cc.cfg", "[op]\nndim = 1\n[carleman]\nestimate = theta\nfamily = 2\nspace = 17\ntime = 17\n");
  ASSERT_EQ(run("carleman-check --config cc.cfg --out d.csv"), 0) << output;
  auto j = nlohmann::json::parse(io::slurp(path("d.csv.manifest.json")));
  EXPECT_EQ(j["parameters"]["estimate"], "theta");
  EXPECT_EQ(j["parameters"]["family"], "trig2");
  EXPECT_EQ(j["parameters"]["space"], 17);
  ASSERT_EQ(run("carleman-check --config cc.cfg --estimate psi --out d.csv"), 0) << output;
  EXPECT_EQ(nlohmann::json::parse(io::slurp(path("d.csv.manifest.json")))["parameters"]["estimate"], "psi");
  EXPECT_EQ(run("carleman-check --op " + cfg("op_constant.cfg") + " --nu 3 --out c.csv"), 2);
  EXPECT_EQ(run("carleman-check --op " + cfg("op_constant.cfg") + " --family sobol --out c.csv"), 2);
}
