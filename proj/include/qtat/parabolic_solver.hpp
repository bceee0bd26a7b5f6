#pragma once

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "qtat/elliptic_operator.hpp"
#include "qtat/grid.hpp"
#include "qtat/random.hpp"
#include "qtat/trace.hpp"
#include "qtat/wave_forward.hpp"

namespace qtat {

struct ParabolicOptions {
  double max_dt = 0.0;       // largest internal step; 0 selects the smallest grid spacing
  double step_growth = 0.05; // steps also obey dt <= step_growth·(t + h²/μ2); 0 disables
  double pad_width = -1.0;   // free-space padding on every side; negative selects 12·√(μ2·t_end)
  bool record_full_grid = false;
  double tolerance = 1e-12;  // relative residual of each implicit step
  std::size_t max_iterations = 10000;
};

namespace detail {

/// Crank–Nicolson march of v_t = L v on one grid. Nodes flagged in `fixed`
/// carry Dirichlet values supplied by `boundary(t, values)`; every other row
/// is an implicit CN row. `record(n, u)` fires at each requested output time.
class CrankNicolson {
 public:
  using BoundaryFn = std::function<void(double, std::vector<double>&)>;

  CrankNicolson(SparseMatrix L, std::vector<std::uint8_t> fixed, double tolerance, std::size_t max_iterations)
      : L_(std::move(L)), fixed_(std::move(fixed)), tol_(tolerance), max_it_(max_iterations) {}

  /// Step size rule: dt <= max_dt and, when growth > 0, dt <= growth·(t + t_floor).
  void set_steps(double max_dt, double growth, double t_floor) {
    max_dt_ = max_dt;
    growth_ = growth;
    t_floor_ = t_floor;
  }

  template <class Record>
  void march(std::vector<double>& u, const std::vector<double>& times, const BoundaryFn& boundary, Record&& record) {
    double t = 0.0;
    std::size_t first = 0;
    if (!times.empty() && times.front() <= 0.0) {
      record(0, u);
      first = 1;
    }
    std::vector<double> bvals(u.size(), 0.0);
    for (std::size_t n = first; n < times.size(); ++n) {
      while (t < times[n]) {
        double dt = max_dt_;
        if (growth_ > 0.0) dt = std::min(dt, growth_ * (t + t_floor_));
        const double rest = times[n] - t;
        // split the remainder evenly instead of leaving a sliver
        if (rest <= dt * (1.0 + 1e-9)) dt = rest;
        else if (rest < 2.0 * dt) dt = 0.5 * rest;
        const double tn = dt == rest ? times[n] : t + dt;
        factor(dt);
        if (boundary) boundary(tn, bvals);
        step(u, bvals);
        t = tn;
      }
      record(n, u);
    }
  }

 private:
  void factor(double dt) {
    if (dt == dt_) return;
    dt_ = dt;
    const Eigen::Index n = L_.rows();
    std::vector<Eigen::Triplet<double>> lhs, rhs;
    lhs.reserve(static_cast<std::size_t>(L_.nonZeros()) + static_cast<std::size_t>(n));
    rhs.reserve(lhs.capacity());
    for (Eigen::Index r = 0; r < n; ++r) {
      if (fixed_[static_cast<std::size_t>(r)]) {
        lhs.emplace_back(r, r, 1.0);
        continue;
      }
      lhs.emplace_back(r, r, 1.0);
      rhs.emplace_back(r, r, 1.0);
      for (SparseMatrix::InnerIterator it(L_, r); it; ++it) {
        lhs.emplace_back(r, it.col(), -0.5 * dt * it.value());
        rhs.emplace_back(r, it.col(), 0.5 * dt * it.value());
      }
    }
    lhs_.resize(n, n);
    lhs_.setFromTriplets(lhs.begin(), lhs.end());
    rhs_.resize(n, n);
    rhs_.setFromTriplets(rhs.begin(), rhs.end());
    solver_.setTolerance(tol_);
    solver_.setMaxIterations(static_cast<Eigen::Index>(max_it_));
    solver_.compute(lhs_);
    if (solver_.info() != Eigen::Success) throw SolverFailure("Crank–Nicolson preconditioner setup failed", 0, 0.0);
  }

  void step(std::vector<double>& u, const std::vector<double>& bvals) {
    const Eigen::Index n = L_.rows();
    Eigen::Map<Eigen::VectorXd> x(u.data(), n);
    Eigen::VectorXd b = rhs_ * x;
    for (Eigen::Index r = 0; r < n; ++r)
      if (fixed_[static_cast<std::size_t>(r)]) b[r] = bvals[static_cast<std::size_t>(r)];
    if (b.squaredNorm() == 0.0) {
      x.setZero();
      return;
    }
    Eigen::VectorXd guess = x;
    Eigen::VectorXd next = solver_.solveWithGuess(b, guess);
    if (solver_.info() != Eigen::Success)
      throw SolverFailure("Crank–Nicolson step did not converge", static_cast<std::size_t>(solver_.iterations()),
                          solver_.error());
    x = next;
  }

  SparseMatrix L_;
  std::vector<std::uint8_t> fixed_;
  double tol_;
  std::size_t max_it_;
  double dt_ = -1.0;
  double max_dt_ = 1.0, growth_ = 0.0, t_floor_ = 0.0;
  Eigen::SparseMatrix<double> lhs_, rhs_;
  Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, Eigen::IncompleteLUT<double>> solver_;
};

inline void check_time_grid(const std::vector<double>& t) {
  if (t.empty()) throw InvalidData("time grid is empty");
  if (t.front() < 0.0) throw InvalidData("time grid must start at t >= 0");
  for (std::size_t n = 1; n < t.size(); ++n)
    if (!(t[n] > t[n - 1])) throw InvalidData("time grid must be strictly increasing");
}

inline std::vector<std::uint8_t> edge_flags(const Grid& g) {
  std::vector<std::uint8_t> fixed(g.size(), 0);
  for (std::size_t i = 0; i < g.size(); ++i) fixed[i] = g.on_edge(i) ? 1 : 0;
  return fixed;
}

}  // namespace detail

/// Implicit solution of v_t = L v, v(·,0) = f on free space, truncated to a
/// padded box with zero far-field values. Frames are returned at `t_grid`.
inline SpaceTimeField solve_parabolic(const EllipticOperator& op, const Field& f, const std::vector<double>& t_grid,
                                      const ParabolicOptions& opt = {}) {
  if (op.ndim() != f.grid.ndim()) throw InvalidGeometry("operator and initial condition dimensions differ");
  detail::check_time_grid(t_grid);
  detail::check_stencil_grid(f.grid);
  detail::check_compact_support(f);

  const double width = opt.pad_width >= 0.0 ? opt.pad_width : 12.0 * std::sqrt(op.mu2() * t_grid.back());
  const std::size_t pad = static_cast<std::size_t>(std::ceil(width / f.grid.h_min() - 1e-9));
  const Grid box = padded_grid(f.grid, pad);
  const auto inner = detail::embedded_indices(f.grid, box, pad);
  const double max_dt = opt.max_dt > 0.0 ? opt.max_dt : f.grid.h_min();

  std::vector<double> u(box.size(), 0.0);
  for (std::size_t i = 0; i < inner.size(); ++i) u[inner[i]] = f[i];

  SpaceTimeField out(opt.record_full_grid ? box : f.grid, t_grid);
  detail::CrankNicolson cn(assemble_operator(op, box), detail::edge_flags(box), opt.tolerance, opt.max_iterations);
  cn.set_steps(max_dt, opt.step_growth, f.grid.h_min() * f.grid.h_min() / op.mu2());
  cn.march(u, t_grid, nullptr, [&](std::size_t n, const std::vector<double>& v) {
    auto dst = out.frame(n);
    if (opt.record_full_grid) std::copy(v.begin(), v.end(), dst.begin());
    else
      for (std::size_t i = 0; i < inner.size(); ++i) dst[i] = v[inner[i]];
  });
  return out;
}

struct NeumannOptions {
  double slab_width = -1.0;  // exterior truncation distance; negative selects 12·√(μ2·t_end)
  double max_dt = 0.0;      // 0 selects the normal spacing of the data
  double step_growth = 0.05;
  double tolerance = 1e-12;
  std::size_t max_iterations = 10000;
};

namespace detail {

/// Value of a face's Dirichlet data at time t, linear between stored frames and
/// zero before the first frame when that frame is later than t = 0.
inline double face_value(const SpaceTimeField& d, std::size_t node, double t) {
  const auto& ts = d.times();
  if (t <= ts.front()) return ts.front() <= 0.0 ? d.at(0, node) : d.at(0, node) * t / ts.front();
  if (t >= ts.back()) return d.at(ts.size() - 1, node);
  std::size_t k = static_cast<std::size_t>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
  double w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
  return (1.0 - w) * d.at(k - 1, node) + w * d.at(k, node);
}

inline std::size_t locate(const Grid& g, const Point& p, const char* what) {
  std::array<std::size_t, kMaxDim> m{};
  for (std::size_t k = 0; k < g.ndim(); ++k) m[k] = require_node(g, k, p[k], what);
  return g.index(std::span<const std::size_t>(m.data(), g.ndim()));
}

}  // namespace detail

/// Recovers the normal derivative on the measurement surface by solving the
/// parabolic problem in the exterior region with the given Dirichlet data and
/// zero initial and far-field values. The returned Neumann data is the
/// derivative along the +axis direction of each face.
inline BoundaryTrace recover_neumann(const EllipticOperator& op, const BoundaryTrace& dirichlet, const GeometrySpec& geometry,
                                     const NeumannOptions& opt = {}) {
  if (dirichlet.faces.empty()) throw InvalidGeometry("recover_neumann: trace has no faces");
  if (dirichlet.ndim != geometry.ndim() || op.ndim() != geometry.ndim())
    throw InvalidGeometry("recover_neumann: trace, operator and geometry dimensions differ");
  const std::size_t nd = geometry.ndim();
  const auto& times = dirichlet.times();
  detail::check_time_grid(times);
  const double slab = opt.slab_width > 0.0 ? opt.slab_width : 12.0 * std::sqrt(op.mu2() * times.back());
  for (const auto& f : dirichlet.faces)
    if (f.dirichlet.times() != times) throw InvalidGeometry("recover_neumann: faces sampled at different times");

  // exterior grid and the node carrying each face's data
  Grid grid;
  std::vector<std::uint8_t> fixed;
  std::vector<std::vector<std::size_t>> face_nodes(dirichlet.faces.size());

  if (geometry.kind == MeasurementKind::Hyperplane) {
    if (dirichlet.surface != Surface::Hyperplane || dirichlet.faces.size() != 1)
      throw InvalidGeometry("recover_neumann: hyperplane geometry needs a single hyperplane face");
    const TraceFace& face = dirichlet.faces[0];
    if (face.axis != 0 || std::abs(face.position - geometry.hyperplane) > 1e-12)
      throw InvalidGeometry("recover_neumann: trace does not lie on the hyperplane");
    const double h = face.normal_spacing;
    const std::size_t layers = static_cast<std::size_t>(std::llround(slab / h)) + 1;
    if (layers < 4) throw InvalidGeometry("recover_neumann: slab too thin for the normal spacing");
    const Grid& s = face.dirichlet.grid();
    std::vector<double> o{face.position - h * static_cast<double>(layers - 1)}, sp{h};
    std::vector<std::size_t> c{layers};
    for (std::size_t k = 0; k < s.ndim(); ++k) {
      o.push_back(s.origin(k));
      sp.push_back(s.spacing(k));
      c.push_back(s.count(k));
    }
    grid = Grid(o, sp, c);
    fixed = detail::edge_flags(grid);
    face_nodes[0].resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) face_nodes[0][i] = detail::locate(grid, face.point(i, nd), "trace node");
  } else {
    if (dirichlet.surface != Surface::Lateral || !geometry.omega_is_box)
      throw InvalidGeometry("recover_neumann: full-boundary data needs a box Ω and a lateral trace");
    if (dirichlet.faces.size() != 2 * nd) throw InvalidGeometry("recover_neumann: expected one face per side of Ω");
    const Box& b = geometry.omega_box;
    std::vector<double> o(nd), sp(nd);
    std::vector<std::size_t> c(nd);
    for (const auto& f : dirichlet.faces) sp[f.axis] = f.normal_spacing;
    for (std::size_t k = 0; k < nd; ++k) {
      if (!(sp[k] > 0.0)) throw InvalidGeometry("recover_neumann: missing normal spacing");
      const std::size_t padn = static_cast<std::size_t>(std::llround(slab / sp[k]));
      const std::size_t inside = static_cast<std::size_t>(std::llround((b.hi[k] - b.lo[k]) / sp[k]));
      if (std::abs(static_cast<double>(inside) * sp[k] - (b.hi[k] - b.lo[k])) > 1e-9 * sp[k] * static_cast<double>(inside))
        throw InvalidGeometry("recover_neumann: Ω is not aligned with the trace spacing");
      if (padn < 3) throw InvalidGeometry("recover_neumann: exterior padding too thin");
      o[k] = b.lo[k] - sp[k] * static_cast<double>(padn);
      c[k] = inside + 2 * padn + 1;
    }
    grid = Grid(o, sp, c);
    fixed = detail::edge_flags(grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      Point p = grid.point(i);
      if (b.contains(std::span<const double>(p.data(), nd), 1e-9 * grid.h_min())) fixed[i] = 1;
    }
    for (std::size_t q = 0; q < dirichlet.faces.size(); ++q) {
      const auto& face = dirichlet.faces[q];
      const Grid& s = face.dirichlet.grid();
      face_nodes[q].resize(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) face_nodes[q][i] = detail::locate(grid, face.point(i, nd), "trace node");
    }
  }

  auto boundary = [&](double t, std::vector<double>& vals) {
    std::fill(vals.begin(), vals.end(), 0.0);
    for (std::size_t q = dirichlet.faces.size(); q-- > 0;) {
      const auto& d = dirichlet.faces[q].dirichlet;
      for (std::size_t i = 0; i < face_nodes[q].size(); ++i) vals[face_nodes[q][i]] = detail::face_value(d, i, t);
    }
  };

  BoundaryTrace out = dirichlet;
  for (auto& f : out.faces) f.neumann = SpaceTimeField(f.dirichlet.grid(), times);

  std::vector<double> u(grid.size(), 0.0);
  if (times.front() <= 0.0) boundary(0.0, u);
  const double max_dt = opt.max_dt > 0.0 ? opt.max_dt : grid.h_min();
  detail::CrankNicolson cn(assemble_operator(op, grid), fixed, opt.tolerance, opt.max_iterations);
  cn.set_steps(max_dt, opt.step_growth, grid.h_min() * grid.h_min() / op.mu2());
  cn.march(u, times, boundary, [&](std::size_t n, const std::vector<double>& v) {
    for (std::size_t q = 0; q < out.faces.size(); ++q) {
      auto& face = out.faces[q];
      const std::size_t stride = grid.stride(face.axis);
      const double h = grid.spacing(face.axis);
      const bool ip2 = geometry.kind == MeasurementKind::Hyperplane;
      // exterior lies below the face for the hyperplane and for low faces of Ω
      const bool below = ip2 || face.side == 0;
      for (std::size_t i = 0; i < face_nodes[q].size(); ++i) {
        const std::size_t j = face_nodes[q][i];
        face.neumann->at(n, i) = below ? (3 * v[j] - 4 * v[j - stride] + v[j - 2 * stride]) / (2 * h)
                                       : (-3 * v[j] + 4 * v[j + stride] - v[j + 2 * stride]) / (2 * h);
      }
    }
  });
  return out;
}

enum class NoiseMode { RelativeUniform };

struct NoiseSpec {
  double delta = 0.0;
  std::uint64_t seed = 0;
  NoiseMode mode = NoiseMode::RelativeUniform;

  void validate() const {
    if (!(delta >= 0.0 && delta < 1.0)) throw InvalidData("noise level must lie in [0, 1)");
  }
};

/// v ↦ v·(1 + δξ) with ξ uniform on [−1, 1], drawn face by face in storage order.
inline BoundaryTrace add_noise(const BoundaryTrace& trace, const NoiseSpec& spec) {
  spec.validate();
  BoundaryTrace out = trace;
  if (spec.delta == 0.0) return out;
  Rng rng(spec.seed);
  auto perturb = [&](SpaceTimeField& s) {
    for (auto& v : s.data()) v *= 1.0 + spec.delta * rng.uniform(-1.0, 1.0);
  };
  for (auto& f : out.faces) {
    perturb(f.dirichlet);
    if (f.neumann) perturb(*f.neumann);
  }
  return out;
}

}  // namespace qtat
