#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "qtat/elliptic_operator.hpp"

using namespace qtat;
using std::numbers::pi;

namespace {
Grid unit1(std::size_t n) { return build_grid(Box{{0}, {1}}, {n}); }
Grid unit2(std::size_t n) { return build_grid(Box{{0, 0}, {1, 1}}, {n, n}); }

double max_interior_abs(const Field& f) {
  double m = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (!f.grid.on_edge(i)) m = std::max(m, std::abs(f[i]));
  return m;
}
}  // namespace

TEST(Expression, PrecedenceAndFunctions) {
  std::vector<double> x{2.0, 3.0};
  EXPECT_DOUBLE_EQ(Expression::parse("1 + 2*x1^2")(x), 9.0);
  EXPECT_DOUBLE_EQ(Expression::parse("-x2^2")(x), -9.0);
  EXPECT_DOUBLE_EQ(Expression::parse("2^3^2")(x), 512.0);
  EXPECT_DOUBLE_EQ(Expression::parse("(x1+x2)/5")(x), 1.0);
  EXPECT_NEAR(Expression::parse("sin(pi/2) + exp(0) + sqrt(4) + cos(0)")(x), 5.0, 1e-15);
  EXPECT_TRUE(Expression::parse("2*pi - e")(x) > 0);
  EXPECT_TRUE(Expression::parse("3*(2+1)").is_constant());
  EXPECT_FALSE(Expression::parse("x1").is_constant());
  EXPECT_EQ(Expression::parse("x2 + x1").max_variable(), 2u);
}

TEST(Expression, RejectsMalformedInput) {
  EXPECT_THROW(Expression::parse("1 +"), ConfigError);
  EXPECT_THROW(Expression::parse("foo(1)"), ConfigError);
  EXPECT_THROW(Expression::parse("x4", 3), ConfigError);
  EXPECT_THROW(Expression::parse("(1"), ConfigError);
  EXPECT_THROW(Expression::parse("1 2"), ConfigError);
}

TEST(Apply, QuadraticGivesTwoEverywhere) {
  Field u = sample(unit1(11), [](auto x) { return x[0] * x[0]; });
  Field lu = apply(EllipticOperator::laplacian(1), u);
  for (double v : lu.values) EXPECT_NEAR(v, 2.0, 1e-11);
}

TEST(Apply, ConstantGivesZero) {
  EllipticOperator op(2, 1.0, 2.0);
  op.set_a(0, 0, Expression::parse("1 + 0.5*x1"));
  op.set_a(0, 1, Expression::parse("0.2*x2"));
  op.set_b(1, 3.0);
  Field u(unit2(9), 4.0);
  Field lu = apply(op, u);
  EXPECT_LT(lu.max_abs(), 1e-11);
}

TEST(Apply, LaplacianOfSineIsSecondOrder) {
  auto err = [](std::size_t n) {
    Grid g = unit2(n);
    Field u = sample(g, [](auto x) { return std::sin(pi * x[0]) * std::sin(pi * x[1]); });
    Field lu = apply(EllipticOperator::laplacian(2), u);
    for (std::size_t i = 0; i < g.size(); ++i) lu[i] += 2 * pi * pi * u[i];
    return max_interior_abs(lu);
  };
  double ratio = err(33) / err(65);
  EXPECT_NEAR(ratio, 4.0, 0.4);
}

TEST(Apply, ExactOnQuadraticsWithConstantCoefficients) {
  EllipticOperator op(2, 0.5, 3.0);
  op.set_a(0, 0, 2.0);
  op.set_a(1, 1, 1.0);
  op.set_a(0, 1, 0.5);
  op.set_b(0, 1.0);
  op.set_b(1, 2.0);
  op.set_b0(-0.5);
  auto u_fn = [](auto x) { return x[0] * x[0] + x[0] * x[1] + 3 * x[1] * x[1] + x[0] - x[1]; };
  Field u = sample(unit2(7), u_fn);
  Field lu = apply(op, u);
  for (std::size_t i = 0; i < u.size(); ++i) {
    Point p = u.grid.point(i);
    double x = p[0], y = p[1];
    double exact = 2 * 2 + 2 * 0.5 * 1 + 1 * 6 + 1.0 * (2 * x + y + 1) + 2.0 * (x + 6 * y - 1) - 0.5 * u[i];
    EXPECT_NEAR(lu[i], exact, 1e-10) << "node " << i;
  }
}

TEST(Apply, IsLinear) {
  EllipticOperator op(2, 1.0, 2.0);
  op.set_a(0, 0, Expression::parse("1 + 0.5*sin(x1)"));
  op.set_a(0, 1, Expression::parse("0.1*x1*x2"));
  op.set_b(0, Expression::parse("x2"));
  op.set_b0(Expression::parse("-x1"));
  Grid g = unit2(17);
  Field u = sample(g, [](auto x) { return std::exp(x[0]) * std::cos(3 * x[1]); });
  Field w = sample(g, [](auto x) { return x[0] * x[1] * x[1]; });
  Field c(g);
  for (std::size_t i = 0; i < g.size(); ++i) c[i] = 2.5 * u[i] - 0.75 * w[i];
  Field lu = apply(op, u), lw = apply(op, w), lc = apply(op, c);
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(lc[i], 2.5 * lu[i] - 0.75 * lw[i], 1e-10 * (1 + std::abs(lc[i])));
}

TEST(Apply, RejectsTinyGrid) {
  Grid g(std::vector<double>{0.0}, std::vector<double>{0.5}, std::vector<std::size_t>{2});
  EXPECT_THROW(apply(EllipticOperator::laplacian(1), Field(g, 1.0)), InvalidGeometry);
}

TEST(ApplyPrincipal, MatchesApplyWithoutLowerOrder) {
  EllipticOperator op(1, 1.0, 2.0);
  op.set_a(0, 0, Expression::parse("1 + x1"));
  op.set_b(0, Expression::parse("sin(5*x1)"));
  op.set_b0(3.0);
  Field u = sample(unit1(21), [](auto x) { return x[0] * x[0]; });
  Field p = apply_principal(op, u);
  Field q = apply(op.principal(), u);
  EXPECT_EQ(p.values, q.values);

  Field lin = sample(unit1(21), [](auto x) { return 3 * x[0] - 1; });
  EXPECT_LT(apply_principal(op, lin).max_abs(), 1e-12);
}

TEST(ApplyPrincipal, DifferenceIsLowerOrderTerms) {
  EllipticOperator op(1, 1.0, 2.0);
  op.set_a(0, 0, Expression::parse("1 + x1"));
  op.set_b(0, Expression::parse("cos(x1)"));
  op.set_b0(Expression::parse("-2*x1"));
  Grid g = unit1(41);
  Field u = sample(g, [](auto x) { return std::sin(4 * x[0]); });
  Field d = apply(op, u), p = apply_principal(op, u);
  const double h = g.spacing(0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    double x = g.coord(0, i), ux;
    if (i == 0) ux = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h);
    else if (i + 1 == g.size()) ux = (u[i - 2] - 4 * u[i - 1] + 3 * u[i]) / (2 * h);
    else ux = (u[i + 1] - u[i - 1]) / (2 * h);
    EXPECT_NEAR(d[i] - p[i], std::cos(x) * ux - 2 * x * u[i], 1e-11);
  }
}

TEST(Ellipticity, IdentityPasses) {
  auto r = validate_ellipticity(EllipticOperator::laplacian(2), unit2(5));
  EXPECT_TRUE(r.passed);
  EXPECT_DOUBLE_EQ(r.min_eig, 1.0);
  EXPECT_DOUBLE_EQ(r.max_eig, 1.0);
}

TEST(Ellipticity, DiagonalAboveBoundFails) {
  EllipticOperator op(2, 1.0, 2.0);
  op.set_a(1, 1, 3.0);
  auto r = validate_ellipticity(op, unit2(5));
  EXPECT_FALSE(r.passed);
  EXPECT_DOUBLE_EQ(r.max_eig, 3.0);
}

TEST(Ellipticity, OscillatingCoefficientExtremes) {
  EllipticOperator op(1, 0.5, 1.5);
  op.set_a(0, 0, Expression::parse("1 + 0.5*sin(2*pi*x1)"));
  auto r = validate_ellipticity(op, unit1(101));
  EXPECT_NEAR(r.min_eig, 0.5, 1e-14);
  EXPECT_NEAR(r.max_eig, 1.5, 1e-14);
  EXPECT_TRUE(r.passed);
}

TEST(Ellipticity, AsymmetricThrows) {
  EllipticOperator op(2, 0.5, 2.0);
  op.set_a_entry(0, 1, 0.3);
  EXPECT_THROW(validate_ellipticity(op, unit2(5)), InvalidOperator);
}

TEST(Ellipticity, InvariantUnderAxisRelabeling) {
  EllipticOperator a(2, 0.5, 4.0), b(2, 0.5, 4.0);
  a.set_a(0, 0, Expression::parse("2 + x1"));
  a.set_a(0, 1, Expression::parse("0.3*x2"));
  b.set_a(1, 1, Expression::parse("2 + x2"));
  b.set_a(0, 1, Expression::parse("0.3*x1"));
  auto ra = validate_ellipticity(a, unit2(11)), rb = validate_ellipticity(b, unit2(11));
  EXPECT_EQ(ra.passed, rb.passed);
  EXPECT_NEAR(ra.min_eig, rb.min_eig, 1e-14);
  EXPECT_NEAR(ra.max_eig, rb.max_eig, 1e-14);
}

TEST(Pseudoconvexity, ConstantSpeedGivesZero) {
  Field c(unit2(9), 1.0);
  std::vector<double> x0{0.0, 0.0};
  EXPECT_LT(pseudoconvexity_indicator(c, x0).max_abs(), 1e-12);
}

TEST(Pseudoconvexity, HoldsAndFailsForAnalyticSpeeds) {
  Grid g = unit1(201);
  std::vector<double> x0{0.0};
  Field holds = sample(g, [](auto x) { return std::sqrt(1.0 / (1.0 + x[0])); });
  Field fails = sample(g, [](auto x) { return std::sqrt(1.0 + x[0]); });
  Field ih = pseudoconvexity_indicator(holds, x0), iv = pseudoconvexity_indicator(fails, x0);
  for (std::size_t i = 1; i < g.size(); ++i) {
    double x = g.coord(0, i);
    EXPECT_NEAR(ih[i], x, 1e-10);
    EXPECT_GE(ih[i], 0.0);
    EXPECT_NEAR(iv[i], -x / ((1 + x) * (1 + x)), 1e-4);
    EXPECT_LT(iv[i], 0.0);
  }
}

TEST(Pseudoconvexity, RejectsNonPositiveSpeed) {
  Field c(unit1(5), 1.0);
  c[2] = 0.0;
  std::vector<double> x0{0.0};
  EXPECT_THROW(pseudoconvexity_indicator(c, x0), InvalidOperator);
}

TEST(CoefficientBox, ExtendsConstantlyOutside) {
  EllipticOperator op(1, 1.0, 2.0);
  op.set_a(0, 0, Expression::parse("1 + x1"));
  op.set_coefficient_box(Box{{0}, {1}});
  double lo = -5, hi = 7, mid = 0.25;
  EXPECT_DOUBLE_EQ(op.a(0, 0, std::span<const double>(&lo, 1)), 1.0);
  EXPECT_DOUBLE_EQ(op.a(0, 0, std::span<const double>(&hi, 1)), 2.0);
  EXPECT_DOUBLE_EQ(op.a(0, 0, std::span<const double>(&mid, 1)), 1.25);
}
