#include <gtest/gtest.h>

#include <string>

#include "qtat/config.hpp"
#include "qtat/manifest.hpp"

using namespace qtat;
using config::parse_config_text;

namespace {

std::size_t error_line(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  ADD_FAILURE() << "no ConfigError for:\n" << text;
  return 0;
}

const char* kFull = R"(# a complete run
[op]
ndim = 2
mu1 = 0.5
mu2 = 3
a11 = 1 + 0.5*x1
a12 = 0.1*sin(x2)
clamp_lo = 0, -1
clamp_hi = 1, 1

[geometry]
measurement = hyperplane
lo = 0.1, -0.2
hi = 0.3, 0.2

[source]
lo = 0.1, -0.2
hi = 0.3, 0.2
domain_lo = 0, -1
domain_hi = 1, 1
nodes = 33, 65

[qrm]
gamma = 1e-6
resolution = 33, 65
reg = h4

[noise]
delta = 0.01
seed = 7
)";

}  // namespace

TEST(Config, MinimalConfigParses) {
  auto c = parse_config_text("[op]\nndim = 1\n");
  ASSERT_TRUE(c.op);
  EXPECT_EQ(c.op->ndim(), 1u);
  EXPECT_FALSE(c.geometry);
  EXPECT_EQ(c.pipeline.gamma, 1e-8);
}

TEST(Config, FullConfigParses) {
  auto c = parse_config_text(kFull);
  ASSERT_TRUE(c.op && c.geometry && c.source && c.noise);
  const double x[2] = {0.4, 0.3};
  EXPECT_DOUBLE_EQ(c.op->a(0, 0, x), 1.2);
  EXPECT_DOUBLE_EQ(c.op->a(1, 0, x), 0.1 * std::sin(0.3));
  EXPECT_EQ(c.op->mu2(), 3.0);
  EXPECT_EQ(c.geometry->omega_box.hi[1], 0.2);
  EXPECT_EQ(c.source->nodes[1], 65u);
  EXPECT_EQ(c.pipeline.resolution[0], 33u);
  EXPECT_EQ(c.pipeline.reg_norm, RegNorm::H4Surrogate);
  EXPECT_EQ(c.pipeline.gamma, 1e-6);
  EXPECT_EQ(c.noise->delta, 0.01);
  EXPECT_EQ(*c.noise->seed, 7u);
}

TEST(Config, NegativeGammaIsRejectedWithItsLine) {
  EXPECT_EQ(error_line("[op]\nndim = 1\n[qrm]\ngamma = -1\n"), 4u);
  EXPECT_EQ(error_line("[qrm]\ngamma = 0\n"), 2u);
}

TEST(Config, DeltaOutsideUnitIntervalIsRejected) {
  EXPECT_EQ(error_line("[noise]\ndelta = 1.5\n"), 2u);
  EXPECT_EQ(error_line("[noise]\n\n# zero is not a noise level\ndelta = 0\n"), 4u);
}

TEST(Config, UnknownKeyIsAnError) {
  EXPECT_EQ(error_line("[op]\nndim = 1\nmu3 = 2\n"), 3u);
  EXPECT_EQ(error_line("[op]\nndim = 1\n[qrm]\ngama = 1e-3\n"), 4u);
  EXPECT_EQ(error_line("stray = 1\n"), 1u);
}

TEST(Config, TypeMismatches) {
  EXPECT_EQ(error_line("[op]\nndim = two\n"), 2u);
  EXPECT_EQ(error_line("[op]\nndim = 1\n[qrm]\ntime_steps = 1.5\n"), 4u);
  EXPECT_EQ(error_line("[op]\nndim = 1\n[qrm]\ngamma = 1e-3x\n"), 4u);
  EXPECT_EQ(error_line("[op]\nndim = 1\n[qrm]\nreg = h3\n"), 4u);
  EXPECT_EQ(error_line("[op]\nndim = 1\na11 = 1 + \n"), 3u);
}

TEST(Config, SyntaxErrors) {
  EXPECT_EQ(error_line("[op\nndim = 1\n"), 1u);
  EXPECT_EQ(error_line("[op]\nndim 1\n"), 2u);
  EXPECT_EQ(error_line("[op]\nndim = 1\nndim = 2\n"), 3u);
  EXPECT_EQ(error_line("[op]\nndim =\n"), 2u);
}

TEST(Config, ConstraintViolations) {
  EXPECT_EQ(error_line("[op]\nndim = 4\n"), 2u);
  EXPECT_EQ(error_line("[op]\nndim = 1\nmu1 = 2\nmu2 = 1\n"), 3u);
  // Ω must lie beyond the measurement plane
  EXPECT_EQ(error_line("[op]\nndim = 1\n[geometry]\nlo = -0.1\nhi = 0.2\n"), 4u);
  EXPECT_EQ(error_line("[op]\nndim = 1\n[geometry]\nlo = 0.3\nhi = 0.2\n"), 5u);
  EXPECT_EQ(error_line("[op]\nndim = 1\n[qrm]\nresolution = 33, 33\n"), 4u);
  EXPECT_GT(error_line("[sweep]\nladder = 1e-3, 1e-2\n"), 0u);
  EXPECT_EQ(error_line("[carleman]\nnu = 3\n"), 2u);
}

TEST(Config, MissingRequiredKeys) {
  EXPECT_THROW(parse_config_text("[op]\nmu1 = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[op]\nndim = 1\n[geometry]\nlo = 0.1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[geometry]\nlo = 0.1\nhi = 0.2\n"), ConfigError);
}

TEST(Config, AsymmetricEntriesWhenBothGiven) {
  auto d = config::Document::parse("ndim = 2\na12 = 0.2\na21 = 0.1\n", "op");
  auto op = config::load_operator(d);
  d.finish();
  const double x[2] = {0.0, 0.0};
  EXPECT_EQ(op.a(0, 1, x), 0.2);
  EXPECT_EQ(op.a(1, 0, x), 0.1);
}

TEST(Config, SweepSection) {
  auto c = parse_config_text("[sweep]\nscenario = ip2\nladder = 0.1, 0.01\nseeds = 4, 5\nbaseline = false\n");
  ASSERT_TRUE(c.sweep);
  EXPECT_EQ(c.sweep->scenario, Scenario::IP2Stability);
  EXPECT_EQ(c.sweep->ladder.size(), 2u);
  EXPECT_EQ(c.sweep->seeds[1], 5u);
  EXPECT_FALSE(c.sweep->baseline);
}

TEST(Config, MissingFileIsAConfigError) {
  EXPECT_THROW(config::parse_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(Manifest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, RecordsEverything) {
  RunManifest m({"qtat", "noise", "--seed", "3"});
  m.set_subcommand("noise");
  m.add_seed(3);
  m.add_output("/nonexistent/out.qtat");
  m.set_parameter("delta", 0.01);
  auto j = m.to_json(0);
  for (const char* k : {"tool", "version", "formats", "command_line", "argv", "configs", "inputs", "outputs", "seeds",
                        "parameters", "threads", "exit_status", "wall_time_seconds", "working_directory"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["command_line"], "qtat noise --seed 3");
  EXPECT_EQ(j["seeds"][0], 3);
  EXPECT_TRUE(j["outputs"][0]["missing"].get<bool>());
  EXPECT_EQ(m.path(), "/nonexistent/out.qtat.manifest.json");
  EXPECT_EQ(m.path("x.json"), "x.json");
}
