#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <span>
#include <tuple>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qtat/elliptic_operator.hpp"
#include "qtat/geometry.hpp"
#include "qtat/grid.hpp"
#include "qtat/laplace_transform.hpp"
#include "qtat/norms.hpp"
#include "qtat/parabolic_solver.hpp"
#include "qtat/trace.hpp"
#include "qtat/wave_forward.hpp"

namespace qtat {

enum class RegNorm { H21, H4Surrogate };

/// t_n = (n/N)^power, clustered at t = 0 where the solution changes fastest.
inline std::vector<double> graded_times(std::size_t steps, double power = 3.0) {
  if (steps < 2) throw InvalidData("graded time axis needs at least 2 steps");
  if (!(power >= 1.0)) throw InvalidData("grading power must be at least 1");
  std::vector<double> t(steps + 1);
  for (std::size_t n = 0; n <= steps; ++n) t[n] = std::pow(static_cast<double>(n) / static_cast<double>(steps), power);
  t.back() = 1.0;
  return t;
}

/// A face of Φ on which the unknown carries zero value and zero normal derivative.
struct ZeroFace {
  std::size_t axis = 0;
  std::size_t side = 0;
};

/// Space-time discretization of Φ.
struct QrmGrid {
  Grid space;
  std::vector<double> times;
  std::vector<ZeroFace> zero_faces{ZeroFace{}};

  std::size_t nodes() const { return space.size(); }
  std::size_t frames() const { return times.size(); }

  /// Node layers touched by the zero-boundary relations must leave room for rows.
  void validate() const {
    if (times.size() < 3 || times.front() != 0.0) throw InvalidData("QRM time axis must start at 0 with at least 2 steps");
    for (std::size_t n = 1; n < times.size(); ++n)
      if (!(times[n] > times[n - 1])) throw InvalidData("QRM time axis must increase");
    for (const auto& z : zero_faces) {
      if (z.axis >= space.ndim() || z.side > 1) throw InvalidGeometry("QRM zero face outside the grid");
      if (space.count(z.axis) < 6) throw InvalidGeometry("QRM grid too coarse along a constrained axis");
    }
  }
};

struct QrmProblem {
  EllipticOperator op;
  GeometrySpec geometry;
  QrmGrid grid;
  SpaceTimeField p;  // frames t_1..t_N; nonzero only on residual rows
  SpaceTimeField r;  // lifting, frames t_0..t_N
  double gamma = 1e-8;
  RegNorm reg_norm = RegNorm::H21;
  double tolerance = 1e-10;
  std::size_t max_iterations = 100000;

  void validate() const {
    grid.validate();
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidData("QRM: gamma must be positive");
    if (op.ndim() != grid.space.ndim()) throw InvalidGeometry("QRM: operator and grid dimensions differ");
    if (!(p.grid() == grid.space) || p.frames() + 1 != grid.frames())
      throw InvalidData("QRM: right-hand side is not defined on Φ's discretization");
    if (!(r.grid() == grid.space) || r.times() != grid.times) throw InvalidData("QRM: lifting is not defined on Φ");
  }
};

struct QrmSolution {
  SpaceTimeField u_gamma;
  std::size_t iterations = 0;
  double residual = 0.0;       // ‖M u − b‖ / ‖b‖ of the normal equations
  double functional = 0.0;     // misfit² + γ‖u‖²_R
  double misfit = 0.0;         // ‖A u − p‖
  double reg_norm = 0.0;       // ‖u‖_R
  double p_norm = 0.0;         // ‖p‖
  double gamma = 0.0;

  double bound_lhs() const { return reg_norm; }
  double bound_rhs() const { return p_norm / std::sqrt(gamma); }
};

namespace detail {

using ColMatrix = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

/// All matrices of the discrete functional on one Φ discretization.
/// Unknowns are the free nodes; the full vector is E·u with frame-major layout.
struct QrmSystem {
  const QrmGrid* grid = nullptr;
  std::size_t S = 0, N = 0;                 // spatial nodes, time steps
  std::vector<std::size_t> free_nodes;      // spatial node of each free slot
  std::vector<std::size_t> rows;            // spatial nodes carrying residual rows
  ColMatrix E;                              // full × free
  ColMatrix A_full;                         // residual rows × full
  Eigen::VectorXd w;                        // residual row weights
  ColMatrix R;                              // free × free regularizer

  std::size_t full_size() const { return S * (N + 1); }
};

/// Source of a full-grid node under the zero-boundary relations: the free
/// node it copies and the factor (0 on the boundary layer, 1/4 next to it).
inline std::pair<std::size_t, double> embed_source(const Grid& g, const std::vector<ZeroFace>& faces, std::size_t node) {
  std::array<std::size_t, kMaxDim> m{};
  g.unravel(node, std::span<std::size_t>(m.data(), g.ndim()));
  double factor = 1.0;
  for (const auto& z : faces) {
    const std::size_t n = g.count(z.axis);
    std::size_t& i = m[z.axis];
    const std::size_t d = z.side == 0 ? i : n - 1 - i;
    if (d == 0) return {Grid::npos, 0.0};
    if (d == 1) {
      factor *= 0.25;
      i = z.side == 0 ? i + 1 : i - 1;
    }
  }
  return {g.index(std::span<const std::size_t>(m.data(), g.ndim())), factor};
}

/// Discrete (∂t − L) with Crank–Nicolson rows on every interior node.
inline ColMatrix pde_rows(const EllipticOperator& op, const QrmGrid& qg, const std::vector<std::size_t>& rows) {
  const std::size_t S = qg.nodes(), N = qg.frames() - 1, R = rows.size();
  SparseMatrix L = assemble_operator(op, qg.space);
  Triplets t;
  t.reserve(N * R * 2 * 10);
  for (std::size_t n = 1; n <= N; ++n) {
    const double dt = qg.times[n] - qg.times[n - 1];
    for (std::size_t q = 0; q < R; ++q) {
      const auto row = static_cast<Eigen::Index>((n - 1) * R + q);
      const std::size_t i = rows[q];
      t.emplace_back(row, static_cast<Eigen::Index>(n * S + i), 1.0 / dt);
      t.emplace_back(row, static_cast<Eigen::Index>((n - 1) * S + i), -1.0 / dt);
      for (SparseMatrix::InnerIterator it(L, static_cast<Eigen::Index>(i)); it; ++it) {
        t.emplace_back(row, static_cast<Eigen::Index>(n * S) + it.col(), -0.5 * it.value());
        t.emplace_back(row, static_cast<Eigen::Index>((n - 1) * S) + it.col(), -0.5 * it.value());
      }
    }
  }
  ColMatrix A(static_cast<Eigen::Index>(N * R), static_cast<Eigen::Index>(S * (N + 1)));
  A.setFromTriplets(t.begin(), t.end());
  return A;
}

/// Accumulates Σ Oᵀ·diag(w)·O for weighted difference operators on the full grid.
class RegBuilder {
 public:
  RegBuilder(const QrmGrid& g) : g_(g), S_(g.nodes()), N_(g.frames() - 1) {
    tw_ = norms::time_weights(g.times);
    cell_ = g.space.cell_volume();
  }

  /// Spatial stencil applied at every frame: `taps(i)` lists (offset node, coefficient) for node i.
  template <class Taps>
  void spatial(Taps&& taps, double weight = 1.0) {
    for (std::size_t n = 0; n <= N_; ++n)
      for (std::size_t i = 0; i < S_; ++i) {
        auto tp = taps(i);
        if (tp.empty()) continue;
        add_row(weight * cell_ * tw_[n], [&](auto&& emit) {
          for (auto [j, c] : tp) emit(n * S_ + j, c);
        });
      }
  }

  /// Time stencil at every node: `taps(n)` lists (frame, coefficient) with weight wt.
  template <class Taps>
  void temporal(Taps&& taps) {
    for (std::size_t n = 0; n <= N_; ++n) {
      auto [wt, tp] = taps(n);
      if (tp.empty()) continue;
      for (std::size_t i = 0; i < S_; ++i)
        add_row(wt * cell_, [&](auto&& emit) {
          for (auto [m, c] : tp) emit(m * S_ + i, c);
        });
    }
  }

  ColMatrix build(std::size_t full) {
    ColMatrix O(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(full));
    O.setFromTriplets(t_.begin(), t_.end());
    Eigen::VectorXd w = Eigen::Map<Eigen::VectorXd>(w_.data(), static_cast<Eigen::Index>(w_.size()));
    return ColMatrix(O.transpose() * w.asDiagonal() * O);
  }

 private:
  template <class Body>
  void add_row(double weight, Body&& body) {
    const auto r = static_cast<Eigen::Index>(rows_++);
    w_.push_back(weight);
    body([&](std::size_t col, double c) { t_.emplace_back(r, static_cast<Eigen::Index>(col), c); });
  }

  const QrmGrid& g_;
  std::size_t S_, N_;
  std::vector<double> tw_;
  double cell_ = 1.0;
  std::size_t rows_ = 0;
  Triplets t_;
  std::vector<double> w_;
};

using Taps = std::vector<std::pair<std::size_t, double>>;

inline ColMatrix regularizer_full(const QrmGrid& qg, RegNorm norm) {
  const Grid& g = qg.space;
  const std::size_t nd = g.ndim(), N = qg.frames() - 1;
  const auto& t = qg.times;
  RegBuilder b(qg);
  b.spatial([](std::size_t i) { return Taps{{i, 1.0}}; });
  for (std::size_t k = 0; k < nd; ++k) {
    const double h = g.spacing(k);
    const std::size_t s = g.stride(k), n = g.count(k);
    b.spatial([&](std::size_t i) {
      return g.axis_index(i, k) + 1 < n ? Taps{{i, -1.0 / h}, {i + s, 1.0 / h}} : Taps{};
    });
    b.spatial([&](std::size_t i) {
      std::size_t a = g.axis_index(i, k);
      return a > 0 && a + 1 < n ? Taps{{i - s, 1.0 / (h * h)}, {i, -2.0 / (h * h)}, {i + s, 1.0 / (h * h)}} : Taps{};
    });
    for (std::size_t l = k + 1; l < nd; ++l) {
      const double hl = g.spacing(l);
      const std::size_t sl = g.stride(l), nl = g.count(l);
      const double c = 1.0 / (h * hl);
      b.spatial([&](std::size_t i) {
        return g.axis_index(i, k) + 1 < n && g.axis_index(i, l) + 1 < nl
                   ? Taps{{i, c}, {i + s, -c}, {i + sl, -c}, {i + s + sl, c}}
                   : Taps{};
      }, 2.0);
    }
    if (norm == RegNorm::H4Surrogate) {
      const double c = 1.0 / (h * h * h * h);
      b.spatial([&](std::size_t i) {
        std::size_t a = g.axis_index(i, k);
        return a >= 2 && a + 2 < n ? Taps{{i - 2 * s, c}, {i - s, -4 * c}, {i, 6 * c}, {i + s, -4 * c}, {i + 2 * s, c}} : Taps{};
      });
    }
  }
  b.temporal([&](std::size_t n) -> std::pair<double, Taps> {
    if (n == 0) return {0.0, {}};
    const double dt = t[n] - t[n - 1];
    return {dt, Taps{{n - 1, -1.0 / dt}, {n, 1.0 / dt}}};
  });
  if (norm == RegNorm::H4Surrogate)
    b.temporal([&](std::size_t n) -> std::pair<double, Taps> {
      if (n == 0 || n == N) return {0.0, {}};
      const double d0 = t[n] - t[n - 1], d1 = t[n + 1] - t[n], m = 0.5 * (d0 + d1);
      return {m, Taps{{n - 1, 1.0 / (d0 * m)}, {n, -(1.0 / d0 + 1.0 / d1) / m}, {n + 1, 1.0 / (d1 * m)}}};
    });
  return b.build(qg.nodes() * (N + 1));
}

inline QrmSystem build_system(const EllipticOperator& op, const QrmGrid& qg, RegNorm norm) {
  qg.validate();
  QrmSystem sys;
  sys.grid = &qg;
  sys.S = qg.nodes();
  sys.N = qg.frames() - 1;
  const Grid& g = qg.space;

  std::vector<std::size_t> slot(sys.S, Grid::npos);
  for (std::size_t i = 0; i < sys.S; ++i) {
    auto [src, f] = embed_source(g, qg.zero_faces, i);
    if (src == i && f == 1.0) {
      slot[i] = sys.free_nodes.size();
      sys.free_nodes.push_back(i);
    }
    if (!g.on_edge(i)) sys.rows.push_back(i);
  }
  const std::size_t F = sys.free_nodes.size();
  Triplets et;
  for (std::size_t i = 0; i < sys.S; ++i) {
    auto [src, f] = embed_source(g, qg.zero_faces, i);
    if (src == Grid::npos) continue;
    for (std::size_t n = 0; n <= sys.N; ++n)
      et.emplace_back(static_cast<Eigen::Index>(n * sys.S + i), static_cast<Eigen::Index>(n * F + slot[src]), f);
  }
  sys.E.resize(static_cast<Eigen::Index>(sys.full_size()), static_cast<Eigen::Index>(F * (sys.N + 1)));
  sys.E.setFromTriplets(et.begin(), et.end());

  sys.A_full = pde_rows(op, qg, sys.rows);
  sys.w.resize(sys.A_full.rows());
  const double cell = g.cell_volume();
  for (std::size_t n = 1; n <= sys.N; ++n)
    for (std::size_t q = 0; q < sys.rows.size(); ++q)
      sys.w[static_cast<Eigen::Index>((n - 1) * sys.rows.size() + q)] = cell * (qg.times[n] - qg.times[n - 1]);

  ColMatrix Rf = regularizer_full(qg, norm);
  sys.R = ColMatrix(sys.E.transpose() * Rf * sys.E);
  return sys;
}

/// Row vector of p (frames t_1..t_N on the space grid) restricted to residual rows.
inline Eigen::VectorXd row_vector(const QrmSystem& sys, const SpaceTimeField& p) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(sys.N * sys.rows.size()));
  for (std::size_t n = 0; n < sys.N; ++n)
    for (std::size_t q = 0; q < sys.rows.size(); ++q)
      v[static_cast<Eigen::Index>(n * sys.rows.size() + q)] = p.at(n, sys.rows[q]);
  return v;
}

inline SpaceTimeField rows_to_field(const QrmSystem& sys, const Eigen::VectorXd& v) {
  std::vector<double> t(sys.grid->times.begin() + 1, sys.grid->times.end());
  SpaceTimeField p(sys.grid->space, t);
  for (std::size_t n = 0; n < sys.N; ++n)
    for (std::size_t q = 0; q < sys.rows.size(); ++q)
      p.at(n, sys.rows[q]) = v[static_cast<Eigen::Index>(n * sys.rows.size() + q)];
  return p;
}

inline Eigen::VectorXd full_vector(const SpaceTimeField& u) {
  return Eigen::Map<const Eigen::VectorXd>(u.data().data(), static_cast<Eigen::Index>(u.data().size()));
}

inline double weighted_norm(const Eigen::VectorXd& v, const Eigen::VectorXd& w) {
  return std::sqrt(v.cwiseProduct(v).dot(w));
}

/// Conjugate gradients preconditioned by an LDLᵀ factor of the same matrix.
inline std::pair<Eigen::VectorXd, std::pair<std::size_t, double>> pcg(const ColMatrix& M, const Eigen::VectorXd& b,
                                                                       double tol, std::size_t max_it) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  const double bn = b.norm();
  if (bn == 0.0) return {x, {0, 0.0}};
  Eigen::SimplicialLDLT<ColMatrix> ldlt(M);
  if (ldlt.info() != Eigen::Success) throw SolverFailure("QRM preconditioner factorization failed", 0, 1.0);
  Eigen::VectorXd r = b, z = ldlt.solve(r), d = z;
  double rz = r.dot(z), rel = 1.0, best = 1.0;
  std::size_t it = 0, stalled = 0;
  while (it < max_it) {
    Eigen::VectorXd Md = M * d;
    const double alpha = rz / d.dot(Md);
    x += alpha * d;
    ++it;
    // recompute the true residual so round-off in the recurrence cannot fake convergence
    r = b - M * x;
    rel = r.norm() / bn;
    if (rel <= tol) break;
    if (rel < 0.5 * best) {
      best = rel;
      stalled = 0;
    } else if (++stalled > 50) {
      break;
    }
    z = ldlt.solve(r);
    const double rz_new = r.dot(z);
    d = z + (rz_new / rz) * d;
    rz = rz_new;
  }
  return {x, {it, rel}};
}

}  // namespace detail

/// Interpolates Cauchy data onto Φ and builds r = φ̄ + (x1 − x1₀)ψ̄ and p = −(∂t − L)r.
/// One hyperplane face gives the linear lifting; a 1-D full-boundary trace on the
/// two ends of Φ gives the cubic Hermite lifting matching both ends.
inline std::pair<SpaceTimeField, SpaceTimeField> homogenize(const BoundaryTrace& cauchy, const EllipticOperator& op,
                                                          const QrmGrid& qg) {
  qg.validate();
  if (!cauchy.has_neumann()) throw InvalidData("homogenize: trace lacks Neumann data");
  const Grid& g = qg.space;
  const auto& tq = qg.times;
  const double t_end = cauchy.times().back();
  if (t_end < tq.back() * (1.0 - 1e-12)) throw InvalidData("homogenize: trace does not cover Φ's time axis");
  for (const auto& f : cauchy.faces)
    if (f.dirichlet.times() != cauchy.times() || f.neumann->times() != cauchy.times())
      throw InvalidData("homogenize: faces sampled at different times");

  SpaceTimeField r(g, tq);
  auto value = [&](const SpaceTimeField& s, std::size_t node, std::size_t n) { return detail::face_value(s, node, tq[n]); };

  if (cauchy.surface == Surface::Hyperplane) {
    if (cauchy.faces.size() != 1 || cauchy.faces[0].axis != 0) throw InvalidGeometry("homogenize: expected one x1 face");
    const TraceFace& face = cauchy.faces[0];
    if (std::abs(face.position - g.origin(0)) > 1e-9 * g.spacing(0))
      throw InvalidGeometry("homogenize: trace is not on the x1 boundary of Φ");
    const Grid& s = face.dirichlet.grid();
    std::vector<std::size_t> src(g.size());
    std::array<std::size_t, kMaxDim> m{};
    for (std::size_t i = 0; i < g.size(); ++i) {
      Point p = g.point(i);
      for (std::size_t k = 1; k < g.ndim(); ++k) {
        m[k - 1] = s.node_at(k - 1, p[k]);
        if (m[k - 1] == Grid::npos) throw InvalidGeometry("homogenize: Φ node not covered by the trace surface");
      }
      src[i] = s.index(std::span<const std::size_t>(m.data(), s.ndim()));
    }
    for (std::size_t n = 0; n < tq.size(); ++n)
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x1 = g.coord(0, g.axis_index(i, 0)) - face.position;
        r.at(n, i) = value(face.dirichlet, src[i], n) + x1 * value(*face.neumann, src[i], n);
      }
  } else {
    if (g.ndim() != 1 || cauchy.faces.size() != 2)
      throw InvalidGeometry("homogenize: full-boundary data is supported for 1-D intervals");
    const TraceFace* lo = &cauchy.faces[0];
    const TraceFace* hi = &cauchy.faces[1];
    if (lo->position > hi->position) std::swap(lo, hi);
    const double a = g.origin(0), b = g.upper(0), len = b - a;
    if (std::abs(lo->position - a) > 1e-9 * g.spacing(0) || std::abs(hi->position - b) > 1e-9 * g.spacing(0))
      throw InvalidGeometry("homogenize: trace faces are not the ends of Φ");
    for (std::size_t n = 0; n < tq.size(); ++n) {
      const double fa = value(lo->dirichlet, 0, n), ga = value(*lo->neumann, 0, n);
      const double fb = value(hi->dirichlet, 0, n), gb = value(*hi->neumann, 0, n);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = (g.coord(0, i) - a) / len, s2 = s * s, s3 = s2 * s;
        r.at(n, i) = (2 * s3 - 3 * s2 + 1) * fa + (s3 - 2 * s2 + s) * len * ga + (-2 * s3 + 3 * s2) * fb +
                     (s3 - s2) * len * gb;
      }
    }
  }

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!g.on_edge(i)) rows.push_back(i);
  detail::QrmSystem shell;
  shell.grid = &qg;
  shell.S = g.size();
  shell.N = tq.size() - 1;
  shell.rows = rows;
  detail::ColMatrix A = detail::pde_rows(op, qg, rows);
  Eigen::VectorXd pv = -(A * detail::full_vector(r));
  return {detail::rows_to_field(shell, pv), r};
}

/// Minimizes ‖A u − p‖² + γ‖u‖²_R over the zero-boundary subspace.
inline QrmSolution assemble_and_minimize(const QrmProblem& problem) {
  problem.validate();
  auto sys = detail::build_system(problem.op, problem.grid, problem.reg_norm);
  detail::ColMatrix A = sys.A_full * sys.E;
  Eigen::VectorXd p = detail::row_vector(sys, problem.p);
  detail::ColMatrix M = detail::ColMatrix(A.transpose() * sys.w.asDiagonal() * A) + problem.gamma * sys.R;
  Eigen::VectorXd b = A.transpose() * sys.w.cwiseProduct(p);

  auto [u, info] = detail::pcg(M, b, problem.tolerance, problem.max_iterations);
  QrmSolution sol;
  sol.iterations = info.first;
  sol.residual = info.second;
  if (sol.residual > 1e-9) throw SolverFailure("QRM conjugate gradients stagnated", sol.iterations, sol.residual);

  Eigen::VectorXd full = sys.E * u;
  sol.u_gamma = SpaceTimeField(problem.grid.space, problem.grid.times,
                               std::vector<double>(full.data(), full.data() + full.size()));
  sol.gamma = problem.gamma;
  sol.misfit = detail::weighted_norm(A * u - p, sys.w);
  sol.reg_norm = std::sqrt(std::max(0.0, u.dot(sys.R * u)));
  sol.p_norm = detail::weighted_norm(p, sys.w);
  sol.functional = sol.misfit * sol.misfit + problem.gamma * sol.reg_norm * sol.reg_norm;
  return sol;
}

/// Free-node projection and norms of an arbitrary space-time function, used by
/// the error-equation checks of the experiments.
struct QrmMeasures {
  detail::QrmSystem sys;
  detail::ColMatrix A;

  QrmMeasures(const EllipticOperator& op, const QrmGrid& qg, RegNorm norm) : sys(detail::build_system(op, qg, norm)) {
    A = sys.A_full * sys.E;
  }

  /// Free-node coordinates of a full field that already satisfies the zero-boundary relations.
  Eigen::VectorXd restrict(const SpaceTimeField& u) const {
    const std::size_t F = sys.free_nodes.size();
    Eigen::VectorXd x(static_cast<Eigen::Index>(F * (sys.N + 1)));
    for (std::size_t n = 0; n <= sys.N; ++n)
      for (std::size_t q = 0; q < F; ++q) x[static_cast<Eigen::Index>(n * F + q)] = u.at(n, sys.free_nodes[q]);
    return x;
  }

  double reg_norm(const SpaceTimeField& u) const {
    Eigen::VectorXd x = restrict(u);
    return std::sqrt(std::max(0.0, x.dot(sys.R * x)));
  }

  /// ‖(∂t − L)u‖ over the residual rows.
  double pde_norm(const SpaceTimeField& u) const {
    return detail::weighted_norm(sys.A_full * detail::full_vector(u), sys.w);
  }

  /// (∂t − L)u as a right-hand side field.
  SpaceTimeField apply(const SpaceTimeField& u) const {
    return detail::rows_to_field(sys, sys.A_full * detail::full_vector(u));
  }

  double p_norm(const SpaceTimeField& p) const { return detail::weighted_norm(detail::row_vector(sys, p), sys.w); }
};

/// f̂ = u_γ(·,0) + r(·,0) on the nodes of Ω's bounding box (zero outside Ω),
/// mapped back to original coordinates.
inline Field extract_initial(const QrmSolution& solution, const SpaceTimeField& r, const GeometrySpec& geometry,
                             const ScaleRecord& scale = {}) {
  const Grid& g = solution.u_gamma.grid();
  if (!(r.grid() == g)) throw InvalidData("extract_initial: lifting and solution grids differ");
  const Box& b = geometry.omega_box;
  std::vector<double> o;
  std::vector<std::size_t> lo, c;
  for (std::size_t k = 0; k < g.ndim(); ++k) {
    auto first = static_cast<std::ptrdiff_t>(std::ceil((b.lo[k] - g.origin(k)) / g.spacing(k) - 1e-9));
    auto last = static_cast<std::ptrdiff_t>(std::floor((b.hi[k] - g.origin(k)) / g.spacing(k) + 1e-9));
    first = std::max<std::ptrdiff_t>(first, 0);
    last = std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(g.count(k)) - 1);
    if (last < first) throw InvalidGeometry("extract_initial: Ω has no nodes on Φ's grid");
    lo.push_back(static_cast<std::size_t>(first));
    c.push_back(static_cast<std::size_t>(last - first + 1));
    o.push_back(g.coord(k, lo.back()));
  }
  Grid sub(o, g.spacings(), c);
  Field f(sub);
  std::array<std::size_t, kMaxDim> m{};
  for (std::size_t i = 0; i < sub.size(); ++i) {
    sub.unravel(i, std::span<std::size_t>(m.data(), sub.ndim()));
    for (std::size_t k = 0; k < sub.ndim(); ++k) m[k] += lo[k];
    const std::size_t j = g.index(std::span<const std::size_t>(m.data(), g.ndim()));
    Point p = sub.point(i);
    f[i] = geometry.inside(std::span<const double>(p.data(), sub.ndim())) ? solution.u_gamma.at(0, j) + r.at(0, j) : 0.0;
  }
  return scale.to_original(f);
}

/// Φ grid for a geometry: phi_box (or Ω's box for full-boundary data) sampled
/// with `resolution` nodes per axis and a graded time axis.
inline QrmGrid make_qrm_grid(const GeometrySpec& geometry, const std::vector<std::size_t>& resolution,
                             std::size_t time_steps, double grading = 3.0) {
  QrmGrid qg;
  if (geometry.kind == MeasurementKind::Hyperplane) {
    Box b = geometry.phi_box;
    b.lo[0] = geometry.hyperplane;
    qg.space = build_grid(b, std::span<const std::size_t>(resolution));
    qg.zero_faces = {ZeroFace{0, 0}};
  } else {
    if (geometry.ndim() != 1) throw InvalidGeometry("full-boundary reconstruction is supported for 1-D intervals");
    qg.space = build_grid(geometry.omega_box, std::span<const std::size_t>(resolution));
    qg.zero_faces = {ZeroFace{0, 0}, ZeroFace{0, 1}};
  }
  qg.times = graded_times(time_steps, grading);
  qg.validate();
  return qg;
}

struct ReconstructConfig {
  EllipticOperator op;
  GeometrySpec geometry;                  // original coordinates
  std::vector<std::size_t> resolution;    // Φ nodes per axis
  std::size_t time_steps = 256;
  double grading = 3.0;
  double tau_max = 10.0;
  std::optional<double> omega;            // declared noise level; selects γ = ω
  double gamma = 1e-8;
  RegNorm reg_norm = RegNorm::H21;
  NeumannOptions neumann;
};

/// Intermediate products of the pipeline, kept for inspection and for
/// stage-by-stage reproduction through the CLI.
struct Reconstruction {
  GeometrySpec geometry;  // normalized
  EllipticOperator op;    // normalized
  ScaleRecord scale;
  QrmGrid grid;
  BoundaryTrace transformed;
  BoundaryTrace cauchy;
  SpaceTimeField p, r;
  QrmSolution solution;
  Field f_hat;
};

/// Maps a trace given in original coordinates to normalized coordinates.
inline BoundaryTrace normalize_trace(const BoundaryTrace& tr, const ScaleRecord& rec) {
  if (rec.c == 1.0) return tr;
  const double s = std::sqrt(rec.c);
  BoundaryTrace out = tr;
  auto scale_grid = [s](const Grid& g) {
    std::vector<double> o = g.origins(), h = g.spacings();
    for (auto& v : o) v *= s;
    for (auto& v : h) v *= s;
    return Grid(o, h, g.counts());
  };
  for (auto& f : out.faces) {
    f.position *= s;
    f.normal_spacing *= s;
    f.dirichlet = SpaceTimeField(scale_grid(f.dirichlet.grid()), f.dirichlet.times(), f.dirichlet.data());
    if (f.neumann) {
      SpaceTimeField nm(scale_grid(f.neumann->grid()), f.neumann->times(), f.neumann->data());
      for (auto& v : nm.data()) v /= s;
      f.neumann = nm;
    }
  }
  return out;
}

/// Growth bound of a hyperbolic-time trace from the sup over all faces.
inline GrowthBound trace_growth_bound(const BoundaryTrace& tr) {
  const auto& t = tr.times();
  SpaceTimeField sup(Grid({}, {}, {}), t);
  for (const auto& f : tr.faces)
    for (std::size_t n = 0; n < t.size(); ++n)
      for (double v : f.dirichlet.frame(n)) sup.at(n, 0) = std::max(sup.at(n, 0), std::abs(v));
  return estimate_growth_bound(sup);
}

namespace detail {
template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e);
  }
}
}  // namespace detail

/// transform → recover Neumann → homogenize → minimize → extract, with every
/// failure tagged by the stage that raised it.
inline Reconstruction reconstruct_detailed(const BoundaryTrace& hyperbolic, const ReconstructConfig& cfg) {
  Reconstruction out;
  detail::stage("normalize", [&] {
    auto [geo, op, rec] = normalize_geometry(cfg.geometry, cfg.op);
    out.geometry = geo;
    out.op = op;
    out.scale = rec;
    out.grid = make_qrm_grid(geo, cfg.resolution, cfg.time_steps, cfg.grading);
    return 0;
  });
  BoundaryTrace data = normalize_trace(hyperbolic, out.scale);
  out.transformed = detail::stage("transform", [&] {
    TransformPlan plan;
    plan.tau_max = cfg.tau_max;
    plan.t_targets.assign(out.grid.times.begin() + 1, out.grid.times.end());
    plan.include_zero = true;
    return transform_trace(data, plan, trace_growth_bound(data));
  });
  out.cauchy = detail::stage("recover-neumann", [&] { return recover_neumann(out.op, out.transformed, out.geometry, cfg.neumann); });
  detail::stage("homogenize", [&] {
    std::tie(out.p, out.r) = homogenize(out.cauchy, out.op, out.grid);
    return 0;
  });
  out.solution = detail::stage("qrm", [&] {
    QrmProblem prob{out.op, out.geometry, out.grid, out.p, out.r, cfg.omega ? *cfg.omega : cfg.gamma, cfg.reg_norm};
    return assemble_and_minimize(prob);
  });
  out.f_hat = detail::stage("extract", [&] { return extract_initial(out.solution, out.r, out.geometry, out.scale); });
  return out;
}

inline Field reconstruct(const BoundaryTrace& hyperbolic, const ReconstructConfig& cfg) {
  return reconstruct_detailed(hyperbolic, cfg).f_hat;
}

}  // namespace qtat
