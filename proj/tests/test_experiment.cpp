#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "qtat/experiment.hpp"

using namespace qtat;

namespace {

SweepConfig small(Scenario sc) {
  SweepConfig cfg;
  cfg.scenario = sc;
  cfg.ladder = {1e-2, 1e-3};
  cfg.seeds = {1, 2};
  cfg.nodes = 65;
  cfg.time_steps = 64;
  return cfg;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(SweepConfig, Validation) {
  SweepConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.ladder = {1e-3, 1e-2};
  EXPECT_THROW(cfg.validate(), InvalidData);
  cfg.ladder = {1.0, 0.5};
  EXPECT_THROW(cfg.validate(), InvalidData);
  cfg = {};
  cfg.gamma_rule = GammaRule::Ladder;
  cfg.gamma_ladder = {1e-3};
  EXPECT_THROW(cfg.validate(), InvalidData);
  cfg = {};
  cfg.seeds.clear();
  EXPECT_THROW(cfg.validate(), InvalidData);
  cfg = {};
  cfg.op = EllipticOperator::laplacian(2);
  EXPECT_THROW(cfg.validate(), InvalidGeometry);
}

TEST(LogFit, RecoversPowerLaw) {
  std::vector<double> x{1e-1, 1e-2, 1e-3, 1e-4}, y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 0.4));
  auto f = fit_loglog(x, y);
  EXPECT_NEAR(f.slope, 0.4, 1e-12);
  EXPECT_NEAR(std::exp(f.intercept), 3.0, 1e-10);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_EQ(f.points, 4u);
  // nonpositive entries are dropped; one point is not a fit
  auto g = fit_loglog({1e-1, 0.0}, {1.0, 2.0});
  EXPECT_EQ(g.points, 1u);
  EXPECT_TRUE(std::isnan(g.slope));
}

TEST(LogFit, Median) {
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_TRUE(std::isnan(median({})));
}

TEST(StabilityReport, TrendIgnoresOutOfRegimeRows) {
  StabilityReport r;
  auto row = [](double level, double scaled, bool out) {
    StabilityRow x;
    x.level = level;
    x.scaled_error = scaled;
    x.error = scaled;
    x.out_of_regime = out;
    return x;
  };
  r.rows = {row(0.0, 9.0, false), row(1e-1, 100.0, true), row(1e-2, 1.0, false), row(1e-3, 1.0, false),
            row(1e-4, 1.5, false)};
  EXPECT_DOUBLE_EQ(r.trend_ratio(), 1.5);
  EXPECT_DOUBLE_EQ(r.monotonicity_excess(), 0.5);
}

TEST(Sweep, QrmConvergenceRowsAndCsv) {
  auto cfg = small(Scenario::QrmConvergence);
  auto rep = run_sweep(cfg);
  ASSERT_EQ(rep.rows.size(), 1 + cfg.ladder.size() * cfg.seeds.size());
  EXPECT_EQ(rep.rows[0].level, 0.0);
  EXPECT_TRUE(rep.inequality_holds());
  for (const auto& r : rep.rows) {
    EXPECT_TRUE(std::isfinite(r.error));
    EXPECT_LE(r.residual, 1e-9);
    EXPECT_LE(r.bound_lhs, r.bound_rhs);
    if (r.level > 0.0) {
      EXPECT_EQ(r.gamma, r.level);
      EXPECT_NEAR(r.scaled_error, r.error * std::sqrt(std::log(1.0 / r.level)), 1e-15);
    }
  }

  auto ls = lines(rep.to_csv());
  ASSERT_EQ(ls.size(), rep.rows.size() + 3);
  EXPECT_EQ(ls[0], "# qtat stability report v1, scenario=qrm");
  EXPECT_EQ(ls[1], "level,seed,measure,gamma,error,scaled_error,holder_error,eq_lhs,eq_rhs,out_of_regime,residual,bound_lhs,bound_rhs");
  EXPECT_EQ(ls.back().rfind("# holder_fit rho=", 0), 0u);
  // 17 significant digits: every value parses back exactly
  std::istringstream cells(ls[3]);
  std::string cell;
  std::vector<std::string> c;
  while (std::getline(cells, cell, ',')) c.push_back(cell);
  ASSERT_EQ(c.size(), 13u);
  EXPECT_EQ(std::stod(c[4]), rep.rows[1].error);
  EXPECT_EQ(std::stod(c[7]), rep.rows[1].lhs);
}

TEST(Sweep, BitwiseReproducible) {
  auto cfg = small(Scenario::QrmConvergence);
  EXPECT_EQ(run_sweep(cfg).to_csv(), run_sweep(cfg).to_csv());
}

TEST(Sweep, Ip2NoiseLadder) {
  auto cfg = small(Scenario::IP2Stability);
  auto a = run_sweep(cfg);
  auto b = run_sweep(cfg);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_GT(a.rows[0].measure, 0.0);
  auto m = a.medians([](const StabilityRow& r) { return r.measure; });
  ASSERT_EQ(m.size(), 2u);
  EXPECT_GT(m[0].second, m[1].second);
  for (const auto& r : a.rows) {
    if (r.level == 0.0) continue;
    EXPECT_EQ(r.gamma, r.measure);
  }
}

TEST(Sweep, DataFloorShrinksUnderRefinement) {
  auto floor = [](std::size_t nodes, std::size_t steps) {
    auto cfg = small(Scenario::IP2Stability);
    cfg.nodes = nodes;
    cfg.time_steps = steps;
    auto s = detail::make_setup(cfg, false, true);
    return norms::data_size(trace_axpy(-1.0, detail::exact_cauchy(s), s.clean_cauchy));
  };
  const double coarse = floor(65, 64), fine = floor(129, 128);
  EXPECT_LT(fine, 0.5 * coarse) << coarse << " " << fine;
}

TEST(Sweep, PipelineIsLinearInTheSource) {
  auto cfg = small(Scenario::IP2Stability);
  auto s = detail::make_setup(cfg, false, true);
  auto run = [&](double scale) {
    auto cauchy = detail::cauchy_from_wave(trace_scale(scale, s.hyperbolic), s, cfg.tau_max);
    auto [p, r] = homogenize(cauchy, s.op, s.grid);
    auto sol = assemble_and_minimize(QrmProblem{s.op, s.geometry, s.grid, p, r, cfg.gamma});
    return extract_initial(sol, r, s.geometry);
  };
  Field one = run(1.0), two = run(2.0);
  double peak = 0.0, dev = 0.0;
  for (std::size_t i = 0; i < one.size(); ++i) {
    peak = std::max(peak, std::abs(one[i]));
    dev = std::max(dev, std::abs(two[i] - 2.0 * one[i]));
  }
  EXPECT_GT(peak, 0.5);
  EXPECT_LT(dev, 1e-7 * peak);
}

TEST(Sweep, HolderScenarioRunsTheIp2Ladder) {
  auto ip2 = run_sweep(small(Scenario::IP2Stability));
  auto holder = run_sweep(small(Scenario::HolderRegion));
  EXPECT_EQ(holder.scenario, Scenario::HolderRegion);
  ASSERT_EQ(holder.rows.size(), ip2.rows.size());
  for (std::size_t i = 0; i < ip2.rows.size(); ++i) {
    EXPECT_EQ(holder.rows[i].measure, ip2.rows[i].measure);
    EXPECT_EQ(holder.rows[i].holder_error, ip2.rows[i].holder_error);
  }
  EXPECT_EQ(holder.holder_fit.slope, ip2.holder_fit.slope);
}
