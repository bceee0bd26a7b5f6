#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "qtat/error.hpp"
#include "qtat/expression.hpp"
#include "qtat/grid.hpp"
#include "qtat/parallel.hpp"

namespace qtat {

using ScalarFn = std::function<double(std::span<const double>)>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline ScalarFn constant_fn(double v) {
  return [v](std::span<const double>) { return v; };
}

/// L u = sum a_ij u_{x_i x_j} + sum b_j u_{x_j} + b0 u, with coefficients given
/// as callables. When a coefficient box is set, coefficients are extended
/// constantly outside it (evaluated at the nearest point of the box).
class EllipticOperator {
 public:
  EllipticOperator() = default;

  explicit EllipticOperator(std::size_t ndim, double mu1 = 1.0, double mu2 = 1.0) : ndim_(ndim), mu1_(mu1), mu2_(mu2) {
    if (ndim < 1 || ndim > kMaxDim) throw InvalidOperator("operator dimension must be 1..3");
    for (std::size_t i = 0; i < ndim; ++i) {
      for (std::size_t j = 0; j < ndim; ++j) {
        a_[i][j] = constant_fn(i == j ? 1.0 : 0.0);
        a_const_[i][j] = i == j ? 1.0 : 0.0;
      }
      b_[i] = constant_fn(0.0);
      b_const_[i] = 0.0;
    }
    b0_ = constant_fn(0.0);
    b0_const_ = 0.0;
    check_bounds();
  }

  /// Constant-coefficient operator s·Δ.
  static EllipticOperator laplacian(std::size_t ndim, double s = 1.0) {
    EllipticOperator op(ndim, s, s);
    for (std::size_t i = 0; i < ndim; ++i) op.set_a(i, i, s);
    return op;
  }

  std::size_t ndim() const { return ndim_; }
  double mu1() const { return mu1_; }
  double mu2() const { return mu2_; }

  void set_bounds(double mu1, double mu2) {
    mu1_ = mu1;
    mu2_ = mu2;
    check_bounds();
  }

  /// Sets a_ij and a_ji together.
  void set_a(std::size_t i, std::size_t j, ScalarFn fn, std::optional<double> constant = std::nullopt) {
    set_a_entry(i, j, fn, constant);
    if (i != j) set_a_entry(j, i, fn, constant);
  }
  void set_a(std::size_t i, std::size_t j, double v) { set_a(i, j, constant_fn(v), v); }
  void set_a_entry(std::size_t i, std::size_t j, double v) { set_a_entry(i, j, constant_fn(v), v); }

  /// Sets a single entry; used to load possibly asymmetric user input.
  void set_a_entry(std::size_t i, std::size_t j, ScalarFn fn, std::optional<double> constant = std::nullopt) {
    check_index(i);
    check_index(j);
    a_[i][j] = std::move(fn);
    a_const_[i][j] = constant;
  }

  void set_b(std::size_t j, ScalarFn fn, std::optional<double> constant = std::nullopt) {
    check_index(j);
    b_[j] = std::move(fn);
    b_const_[j] = constant;
  }
  void set_b(std::size_t j, double v) { set_b(j, constant_fn(v), v); }

  void set_b0(ScalarFn fn, std::optional<double> constant = std::nullopt) {
    b0_ = std::move(fn);
    b0_const_ = constant;
  }
  void set_b0(double v) { set_b0(constant_fn(v), v); }

  void set_a(std::size_t i, std::size_t j, const Expression& e) {
    set_a(i, j, [e](std::span<const double> x) { return e(x); }, const_of(e));
  }
  void set_a_entry(std::size_t i, std::size_t j, const Expression& e) {
    set_a_entry(i, j, [e](std::span<const double> x) { return e(x); }, const_of(e));
  }
  void set_b(std::size_t j, const Expression& e) {
    set_b(j, [e](std::span<const double> x) { return e(x); }, const_of(e));
  }
  void set_b0(const Expression& e) {
    set_b0([e](std::span<const double> x) { return e(x); }, const_of(e));
  }

  void set_coefficient_box(std::optional<Box> box) { coefficient_box_ = std::move(box); }
  const std::optional<Box>& coefficient_box() const { return coefficient_box_; }

  double a(std::size_t i, std::size_t j, std::span<const double> x) const { return eval(a_[i][j], a_const_[i][j], x); }
  double b(std::size_t j, std::span<const double> x) const { return eval(b_[j], b_const_[j], x); }
  double b0(std::span<const double> x) const { return eval(b0_, b0_const_, x); }

  bool has_lower_order() const {
    for (std::size_t j = 0; j < ndim_; ++j)
      if (!b_const_[j] || *b_const_[j] != 0.0) return true;
    return !b0_const_ || *b0_const_ != 0.0;
  }

  bool principal_is_constant() const {
    for (std::size_t i = 0; i < ndim_; ++i)
      for (std::size_t j = 0; j < ndim_; ++j)
        if (!a_const_[i][j]) return false;
    return true;
  }

  /// Copy with b and b0 removed.
  EllipticOperator principal() const {
    EllipticOperator p = *this;
    for (std::size_t j = 0; j < ndim_; ++j) p.set_b(j, 0.0);
    p.set_b0(0.0);
    return p;
  }

  /// Operator in the variables x' = √c·x, t' = d·t: a → a·c/d, b → b·√c/d, b0 → b0/d,
  /// coefficients evaluated at x'/√c.
  EllipticOperator rescaled(double c, double d) const {
    if (c == 1.0 && d == 1.0) return *this;
    const double s = std::sqrt(c);
    EllipticOperator out(ndim_, mu1_ * c / d, mu2_ * c / d);
    auto wrap = [this, s](const ScalarFn& fn, const std::optional<double>& k, double factor) -> std::pair<ScalarFn, std::optional<double>> {
      if (k) return {constant_fn(*k * factor), *k * factor};
      return {[self = *this, fn, s, factor](std::span<const double> xp) {
                Point x{};
                for (std::size_t q = 0; q < xp.size(); ++q) x[q] = xp[q] / s;
                return factor * self.eval(fn, std::nullopt, std::span<const double>(x.data(), xp.size()));
              },
              std::nullopt};
    };
    for (std::size_t i = 0; i < ndim_; ++i) {
      for (std::size_t j = 0; j < ndim_; ++j) {
        auto [fn, k] = wrap(a_[i][j], a_const_[i][j], c / d);
        out.set_a_entry(i, j, fn, k);
      }
      auto [fb, kb] = wrap(b_[i], b_const_[i], s / d);
      out.set_b(i, fb, kb);
    }
    auto [f0, k0] = wrap(b0_, b0_const_, 1.0 / d);
    out.set_b0(f0, k0);
    if (coefficient_box_) {
      Box bx = *coefficient_box_;
      for (auto& v : bx.lo) v *= s;
      for (auto& v : bx.hi) v *= s;
      out.set_coefficient_box(bx);
    }
    return out;
  }

 private:
  static std::optional<double> const_of(const Expression& e) {
    if (e.is_constant()) return e(std::span<const double>{});
    return std::nullopt;
  }

  void check_index(std::size_t i) const {
    if (i >= ndim_) throw InvalidOperator("coefficient index out of range");
  }

  void check_bounds() const {
    if (!(mu1_ > 0.0) || !(mu2_ >= mu1_)) throw InvalidOperator("ellipticity bounds need 0 < mu1 <= mu2");
  }

  double eval(const ScalarFn& fn, const std::optional<double>& k, std::span<const double> x) const {
    if (k) return *k;
    if (!coefficient_box_) return fn(x);
    Point c{};
    for (std::size_t q = 0; q < x.size(); ++q) c[q] = std::clamp(x[q], coefficient_box_->lo[q], coefficient_box_->hi[q]);
    return fn(std::span<const double>(c.data(), x.size()));
  }

  std::size_t ndim_ = 0;
  double mu1_ = 1.0, mu2_ = 1.0;
  std::array<std::array<ScalarFn, kMaxDim>, kMaxDim> a_{};
  std::array<std::array<std::optional<double>, kMaxDim>, kMaxDim> a_const_{};
  std::array<ScalarFn, kMaxDim> b_{};
  std::array<std::optional<double>, kMaxDim> b_const_{};
  ScalarFn b0_;
  std::optional<double> b0_const_;
  std::optional<Box> coefficient_box_;
};

/// Coefficients sampled on a grid.
struct OperatorFields {
  Grid grid;
  std::size_t ndim = 0;
  std::vector<Field> a;  // row-major ndim×ndim
  std::vector<Field> b;
  Field b0;

  const Field& aij(std::size_t i, std::size_t j) const { return a[i * ndim + j]; }
};

inline OperatorFields rasterize(const EllipticOperator& op, const Grid& grid) {
  if (op.ndim() != grid.ndim()) throw InvalidGeometry("operator and grid dimensions differ");
  OperatorFields out;
  out.grid = grid;
  out.ndim = op.ndim();
  const std::size_t n = op.ndim();
  out.a.assign(n * n, Field(grid));
  out.b.assign(n, Field(grid));
  out.b0 = Field(grid);
  parallel_for(grid.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t node = lo; node < hi; ++node) {
      Point p = grid.point(node);
      std::span<const double> x(p.data(), n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) out.a[i * n + j][node] = op.a(i, j, x);
        out.b[i][node] = op.b(i, x);
      }
      out.b0[node] = op.b0(x);
    }
  });
  return out;
}

namespace detail {

struct Tap {
  std::size_t index;
  double weight;
};

/// First-derivative weights along one axis at position i of n nodes (spacing h).
/// Central in the interior, second-order one-sided on the outermost layer.
inline std::vector<Tap> first_derivative_taps(std::size_t i, std::size_t n, double h) {
  if (i == 0) return {{0, -1.5 / h}, {1, 2.0 / h}, {2, -0.5 / h}};
  if (i + 1 == n) return {{n - 3, 0.5 / h}, {n - 2, -2.0 / h}, {n - 1, 1.5 / h}};
  return {{i - 1, -0.5 / h}, {i + 1, 0.5 / h}};
}

/// Second-derivative weights; the one-sided 4-point formula is second order.
inline std::vector<Tap> second_derivative_taps(std::size_t i, std::size_t n, double h) {
  const double h2 = h * h;
  if (n < 4 && (i == 0 || i + 1 == n)) return {{0, 1.0 / h2}, {1, -2.0 / h2}, {2, 1.0 / h2}};
  if (i == 0) return {{0, 2.0 / h2}, {1, -5.0 / h2}, {2, 4.0 / h2}, {3, -1.0 / h2}};
  if (i + 1 == n) return {{n - 4, -1.0 / h2}, {n - 3, 4.0 / h2}, {n - 2, -5.0 / h2}, {n - 1, 2.0 / h2}};
  return {{i - 1, 1.0 / h2}, {i, -2.0 / h2}, {i + 1, 1.0 / h2}};
}

inline void check_stencil_grid(const Grid& g) {
  for (std::size_t k = 0; k < g.ndim(); ++k)
    if (g.count(k) < 3) throw InvalidGeometry("operator stencils need at least 3 nodes per axis");
}

}  // namespace detail

/// Sparse matrix of the discrete L on every node of the coefficient grid.
inline SparseMatrix assemble_operator(const OperatorFields& c, bool principal_only = false) {
  const Grid& g = c.grid;
  detail::check_stencil_grid(g);
  const std::size_t n = c.ndim;
  std::vector<std::vector<Eigen::Triplet<double>>> chunks;
  std::size_t workers = std::max<std::size_t>(1, std::min(thread_count(), g.size() / 2048));
  chunks.resize(workers);
  std::size_t chunk = (g.size() + workers - 1) / workers;
  parallel_for(workers, [&](std::size_t wb, std::size_t we) {
    for (std::size_t w = wb; w < we; ++w) {
      auto& trip = chunks[w];
      std::array<std::size_t, kMaxDim> multi{};
      for (std::size_t node = w * chunk; node < std::min(g.size(), (w + 1) * chunk); ++node) {
        g.unravel(node, std::span<std::size_t>(multi.data(), n));
        auto shifted = [&](std::size_t axis, std::size_t to) {
          return node + (to - multi[axis]) * g.stride(axis);
        };
        for (std::size_t i = 0; i < n; ++i) {
          double aii = c.aij(i, i)[node];
          if (aii != 0.0)
            for (auto t : detail::second_derivative_taps(multi[i], g.count(i), g.spacing(i)))
              trip.emplace_back(node, shifted(i, t.index), aii * t.weight);
          for (std::size_t j = i + 1; j < n; ++j) {
            double aij = c.aij(i, j)[node] + c.aij(j, i)[node];
            if (aij == 0.0) continue;
            auto ti = detail::first_derivative_taps(multi[i], g.count(i), g.spacing(i));
            auto tj = detail::first_derivative_taps(multi[j], g.count(j), g.spacing(j));
            for (auto p : ti)
              for (auto q : tj)
                trip.emplace_back(node, shifted(i, p.index) + (q.index - multi[j]) * g.stride(j), aij * p.weight * q.weight);
          }
          if (!principal_only) {
            double bi = c.b[i][node];
            if (bi != 0.0)
              for (auto t : detail::first_derivative_taps(multi[i], g.count(i), g.spacing(i)))
                trip.emplace_back(node, shifted(i, t.index), bi * t.weight);
          }
        }
        if (!principal_only && c.b0[node] != 0.0) trip.emplace_back(node, node, c.b0[node]);
      }
    }
  }, 1);
  std::vector<Eigen::Triplet<double>> all;
  for (auto& t : chunks) all.insert(all.end(), t.begin(), t.end());
  SparseMatrix m(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g.size()));
  m.setFromTriplets(all.begin(), all.end());
  return m;
}

inline SparseMatrix assemble_operator(const EllipticOperator& op, const Grid& grid, bool principal_only = false) {
  return assemble_operator(rasterize(op, grid), principal_only);
}

inline Field apply_matrix(const SparseMatrix& m, const Field& u) {
  Eigen::Map<const Eigen::VectorXd> x(u.values.data(), static_cast<Eigen::Index>(u.size()));
  Field out(u.grid);
  Eigen::Map<Eigen::VectorXd> y(out.values.data(), static_cast<Eigen::Index>(out.size()));
  y.noalias() = m * x;
  return out;
}

inline Field apply(const EllipticOperator& op, const Field& u) {
  return apply_matrix(assemble_operator(op, u.grid), u);
}

inline Field apply_principal(const EllipticOperator& op, const Field& u) {
  return apply_matrix(assemble_operator(op, u.grid, true), u);
}

struct EllipticityReport {
  double min_eig = 0.0;
  double max_eig = 0.0;
  std::size_t worst_node = 0;
  bool passed = false;
};

/// Node-wise eigenvalue range of [a_ij] on the grid, checked against (mu1, mu2).
inline EllipticityReport validate_ellipticity(const EllipticOperator& op, const Grid& grid) {
  OperatorFields c = rasterize(op, grid);
  const std::size_t n = c.ndim;
  EllipticityReport r;
  r.min_eig = std::numeric_limits<double>::infinity();
  r.max_eig = -std::numeric_limits<double>::infinity();
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t node = 0; node < grid.size(); ++node) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double x = c.aij(i, j)[node], y = c.aij(j, i)[node];
        if (std::abs(x - y) > 1e-12 * std::max({1.0, std::abs(x), std::abs(y)}))
          throw InvalidOperator("coefficient matrix is not symmetric at node " + std::to_string(node));
      }
    double lo, hi;
    if (n == 1) {
      lo = hi = c.aij(0, 0)[node];
    } else if (n == 2) {
      double p = c.aij(0, 0)[node], q = c.aij(1, 1)[node], s = c.aij(0, 1)[node];
      double m = 0.5 * (p + q), rad = std::hypot(0.5 * (p - q), s);
      lo = m - rad;
      hi = m + rad;
    } else {
      Eigen::Matrix3d a;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c.aij(i, j)[node];
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(a, Eigen::EigenvaluesOnly);
      lo = es.eigenvalues()(0);
      hi = es.eigenvalues()(2);
    }
    r.min_eig = std::min(r.min_eig, lo);
    r.max_eig = std::max(r.max_eig, hi);
    double violation = std::max(op.mu1() - lo, hi - op.mu2());
    if (violation > worst) {
      worst = violation;
      r.worst_node = node;
    }
  }
  double tol = 1e-12 * op.mu2();
  r.passed = r.min_eig >= op.mu1() - tol && r.max_eig <= op.mu2() + tol;
  return r;
}

/// (x − x0)·∇(c^{-2}) node-wise; negative values mark points where the
/// classical pseudoconvexity condition on the speed fails.
inline Field pseudoconvexity_indicator(const Field& c, std::span<const double> x0) {
  const Grid& g = c.grid;
  detail::check_stencil_grid(g);
  Field inv(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(c[i] > 0.0)) throw InvalidOperator("speed must be positive on the grid");
    inv[i] = 1.0 / (c[i] * c[i]);
  }
  Field out(g);
  std::array<std::size_t, kMaxDim> multi{};
  for (std::size_t node = 0; node < g.size(); ++node) {
    g.unravel(node, std::span<std::size_t>(multi.data(), g.ndim()));
    double acc = 0.0;
    for (std::size_t k = 0; k < g.ndim(); ++k) {
      double d = 0.0;
      for (auto t : detail::first_derivative_taps(multi[k], g.count(k), g.spacing(k)))
        d += t.weight * inv[node + (t.index - multi[k]) * g.stride(k)];
      acc += (g.coord(k, multi[k]) - x0[k]) * d;
    }
    out[node] = acc;
  }
  return out;
}

}  // namespace qtat
