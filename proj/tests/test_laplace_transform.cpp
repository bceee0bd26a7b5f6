#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "qtat/laplace_transform.hpp"

using namespace qtat;

namespace {

std::vector<double> samples(double dtau, double tau_max, const std::function<double(double)>& g) {
  std::size_t M = static_cast<std::size_t>(std::llround(tau_max / dtau)) + 1;
  std::vector<double> s(M);
  for (std::size_t m = 0; m < M; ++m) s[m] = g(dtau * static_cast<double>(m));
  return s;
}

TransformPlan plan_at(std::vector<double> t, double tau_max = 20.0) {
  TransformPlan p;
  p.t_targets = std::move(t);
  p.tau_max = tau_max;
  return p;
}

// Independent oracle: long-double trapezoid with a million panels on [0, 2√t·10].
double brute_force(const std::function<double(double)>& g, double t) {
  const std::size_t N = 1000000;
  const long double L = 20.0L * std::sqrt(static_cast<long double>(t)), h = L / N;
  long double s = 0.5L * g(0.0);
  for (std::size_t i = 1; i < N; ++i) {
    long double tau = h * static_cast<long double>(i);
    s += std::exp(-tau * tau / (4.0L * t)) * static_cast<long double>(g(static_cast<double>(tau)));
  }
  return static_cast<double>(s * h / std::sqrt(std::numbers::pi_v<long double> * t));
}

}  // namespace

TEST(Transform, UnitSignalHasUnitTransform) {
  auto g = samples(1e-3, 20.0, [](double) { return 1.0; });
  auto r = transform_signal(g, 1e-3, plan_at({0.01, 0.1, 0.5, 1.0}), GrowthBound{1.0, 0.0});
  for (double v : r.values) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(Transform, CosineMatchesGaussianClosedForm) {
  for (double w : {1.0, 2.0, 4.0}) {
    auto g = samples(1e-3, 20.0, [w](double tau) { return std::cos(w * tau); });
    auto r = transform_signal(g, 1e-3, plan_at({0.1, 0.5, 1.0}), GrowthBound{1.0, 0.0});
    for (std::size_t i = 0; i < r.times.size(); ++i) {
      double exact = std::exp(-w * w * r.times[i]);
      EXPECT_LE(std::abs(r.values[i] - exact), r.tails[i].bound + 1e-6 * exact) << "w=" << w;
      EXPECT_LE(r.tails[i].bound, 1e-8);
    }
  }
}

TEST(Transform, ClosedFormAgreesWithBruteForceOracle) {
  auto c = [](double tau) { return std::cos(2.0 * tau); };
  for (double t : {0.1, 0.5, 1.0}) EXPECT_NEAR(brute_force(c, t), std::exp(-4.0 * t), 1e-12);
}

TEST(Transform, DampedRampAgainstBruteForce) {
  auto g = [](double tau) { return tau * std::exp(-tau); };
  auto s = samples(1e-3, 20.0, g);
  auto r = transform_signal(s, 1e-3, plan_at({0.3}), GrowthBound{1.0, 0.0});
  EXPECT_NEAR(r.values[0], brute_force(g, 0.3), 1e-7);
}

TEST(Transform, SmallTimeUsesSubstitutionAndRecoversInitialValue) {
  // g'(0) = 0, as for every trace of a wave started at rest; ‖g''‖∞ ≤ 10
  auto g = [](double tau) { return 0.7 + std::cos(3 * tau) * std::cos(tau); };
  auto s = samples(1e-2, 20.0, g);
  auto r = transform_signal(s, 1e-2, plan_at({1e-4}), GrowthBound{2.0, 0.0});
  EXPECT_LE(std::abs(r.values[0] - g(0.0)), 1e-3 * (1 + 10.0));
  TransformPlan off = plan_at({1e-4});
  off.substitute_near_zero = false;
  auto coarse = transform_signal(s, 1e-2, off, GrowthBound{2.0, 0.0});
  EXPECT_LT(std::abs(r.values[0] - brute_force(g, 1e-4)), std::abs(coarse.values[0] - brute_force(g, 1e-4)));
}

TEST(Transform, PositivityAndSupBound) {
  auto g = [](double tau) { return std::abs(std::sin(5 * tau)) * std::exp(-0.1 * tau); };
  auto s = samples(1e-3, 20.0, g);
  auto r = transform_signal(s, 1e-3, TransformPlan{}, GrowthBound{1.0, 0.0});
  for (double v : r.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
}

TEST(Transform, TailBoundMonotonicity) {
  GrowthBound gb{1.0, 0.5};
  EXPECT_GT(tail_bound(gb, 5.0, 1.0).bound, tail_bound(gb, 6.0, 1.0).bound);
  EXPECT_LT(tail_bound(gb, 5.0, 0.5).bound, tail_bound(gb, 5.0, 1.0).bound);
}

TEST(Transform, DoublingHorizonStaysWithinOldTailBound) {
  GrowthBound gb{1.0, 0.5};
  auto g = [](double tau) { return std::exp(0.5 * tau) * std::cos(tau); };
  auto s = samples(1e-3, 10.0, g);
  for (double t : {0.5, 1.0}) {
    auto r5 = transform_signal(s, 1e-3, plan_at({t}, 5.0), gb);
    auto r10 = transform_signal(s, 1e-3, plan_at({t}, 10.0), gb);
    EXPECT_LE(std::abs(r10.values[0] - r5.values[0]), r5.tails[0].bound);
  }
}

TEST(DerivativeIdentity, ConstantHasZeroDefect) {
  EXPECT_LT(check_derivative_identity([](double) { return 1.0; }, [](double) { return 0.0; }, 1e-3, plan_at(clustered_targets(), 20.0)), 1e-8);
}

TEST(DerivativeIdentity, CosineAndSquare) {
  auto plan = plan_at(clustered_targets(), 20.0);
  double dc = check_derivative_identity([](double x) { return std::cos(2 * x); },
                                        [](double x) { return -4 * std::cos(2 * x); }, 1e-3, plan);
  EXPECT_LE(dc, 1e-5);
  double ds = check_derivative_identity([](double x) { return x * x; }, [](double) { return 2.0; }, 1e-3, plan);
  EXPECT_LE(ds, 1e-6);
}

TEST(TransformTrace, ZeroConstantAndLinear) {
  Grid surf(std::vector<double>{-1.0}, std::vector<double>{0.5}, std::vector<std::size_t>{5});
  const double dt = 1e-3;
  const std::size_t M = 20001;
  BoundaryTrace a;
  a.ndim = 2;
  TraceFace face;
  face.dirichlet = SpaceTimeField::uniform(surf, 0.0, dt, M);
  a.faces.push_back(face);
  BoundaryTrace zero = a;

  for (std::size_t n = 0; n < M; ++n)
    for (std::size_t i = 0; i < surf.size(); ++i) a.faces[0].dirichlet.at(n, i) = std::cos(2.0 * dt * static_cast<double>(n));
  BoundaryTrace b = a;
  for (std::size_t n = 0; n < M; ++n)
    for (std::size_t i = 0; i < surf.size(); ++i) b.faces[0].dirichlet.at(n, i) = std::sin(static_cast<double>(i) + 1e-3 * static_cast<double>(n * n % 977));

  TransformPlan plan;
  plan.tau_max = 20.0;
  GrowthBound gb{1.0, 0.0};
  auto tz = transform_trace(zero, plan, gb);
  EXPECT_EQ(tz.max_abs(), 0.0);

  auto ta = transform_trace(a, plan, gb);
  for (std::size_t n = 0; n < ta.times().size(); ++n)
    for (std::size_t i = 0; i < surf.size(); ++i)
      EXPECT_NEAR(ta.faces[0].dirichlet.at(n, i), std::exp(-4.0 * ta.times()[n]), 1e-8);
  EXPECT_EQ(ta.tail.size(), plan.t_targets.size());

  auto tb = transform_trace(b, plan, gb);
  auto tab = transform_trace(trace_axpy(1.0, a, b), plan, gb);
  for (std::size_t k = 0; k < tab.faces[0].dirichlet.data().size(); ++k)
    EXPECT_NEAR(tab.faces[0].dirichlet.data()[k], ta.faces[0].dirichlet.data()[k] + tb.faces[0].dirichlet.data()[k], 1e-13);
}

TEST(TransformPlan, RejectsBadTargets) {
  auto g = samples(1e-2, 5.0, [](double) { return 1.0; });
  EXPECT_THROW(transform_signal(g, 1e-2, plan_at({0.0, 0.5}), {}), InvalidData);
  EXPECT_THROW(transform_signal(g, 1e-2, plan_at({0.5, 1.5}), {}), InvalidData);
  EXPECT_THROW(transform_signal(g, 1e-2, plan_at({0.5, 0.2}), {}), InvalidData);
}

TEST(TransformPlan, DefaultTargetsAreClustered) {
  auto t = clustered_targets();
  ASSERT_EQ(t.size(), 33u);
  EXPECT_EQ(t.back(), 1.0);
  EXPECT_LT(t.front(), 2e-3);
  for (std::size_t i = 2; i < t.size(); ++i) EXPECT_GT(t[i] - t[i - 1], t[i - 1] - t[i - 2]);
}
