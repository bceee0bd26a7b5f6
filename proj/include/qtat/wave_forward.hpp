#pragma once

#include <Eigen/Sparse>

#include <cmath>
#include <optional>
#include <vector>

#include "qtat/elliptic_operator.hpp"
#include "qtat/error.hpp"
#include "qtat/grid.hpp"
#include "qtat/trace.hpp"

namespace qtat {

enum class PaddingRule {
  Numerical,  // steps + 2 nodes per side: the discrete domain of dependence never reaches the edge
  Physical,   // √μ2·T/h + margin nodes per side; far cheaper in 2-D/3-D, leaks only roundoff-level values
};

struct WaveOptions {
  double cfl = 0.5;
  std::size_t stride = 1;         // record every stride-th step
  PaddingRule padding = PaddingRule::Numerical;
  std::size_t margin = 16;        // extra nodes for the physical rule
  std::optional<std::size_t> pad_nodes;  // overrides the padding rule
  std::optional<double> dt;       // overrides the CFL step; T must be a multiple of it
  bool record_full_grid = false;  // record the padded box instead of f's grid
  bool keep_state = false;        // keep the last two padded states for resuming
};

struct WaveState {
  Grid grid;
  std::vector<double> prev;
  std::vector<double> cur;
  std::size_t step = 0;
};

struct WaveRun {
  SpaceTimeField u;
  double cfl_used = 0.0;
  double dt = 0.0;
  std::size_t padding = 0;
  std::size_t steps = 0;
  double T = 0.0;
  std::optional<WaveState> state;
};

/// Largest stable step for the explicit scheme: h_min/√(n·μ2).
inline double wave_dt_limit(const EllipticOperator& op, const Grid& grid) {
  return grid.h_min() / std::sqrt(static_cast<double>(grid.ndim()) * op.mu2());
}

/// f's grid grown by `pad` nodes on every side.
inline Grid padded_grid(const Grid& g, std::size_t pad) {
  std::vector<double> o = g.origins();
  std::vector<std::size_t> c = g.counts();
  for (std::size_t k = 0; k < g.ndim(); ++k) {
    o[k] -= static_cast<double>(pad) * g.spacing(k);
    c[k] += 2 * pad;
  }
  return Grid(o, g.spacings(), c);
}

namespace detail {

/// Flat indices in `outer` of the nodes of `inner`, which sits `pad` nodes in from each side.
inline std::vector<std::size_t> embedded_indices(const Grid& inner, const Grid& outer, std::size_t pad) {
  std::vector<std::size_t> idx(inner.size());
  std::array<std::size_t, kMaxDim> m{};
  for (std::size_t i = 0; i < inner.size(); ++i) {
    inner.unravel(i, std::span<std::size_t>(m.data(), inner.ndim()));
    for (std::size_t k = 0; k < inner.ndim(); ++k) m[k] += pad;
    idx[i] = outer.index(std::span<const std::size_t>(m.data(), inner.ndim()));
  }
  return idx;
}

inline void check_compact_support(const Field& f) {
  double tol = 1e-14 * std::max(f.max_abs(), 1e-300);
  for (std::size_t i = 0; i < f.size(); ++i)
    if (f.grid.on_edge(i) && std::abs(f[i]) > tol)
      throw InvalidInitialCondition("initial condition must vanish on the outer layer of its grid");
  if (!f.all_finite()) throw InvalidInitialCondition("initial condition has non-finite values");
}

}  // namespace detail

/// Leapfrog steps: u^{m+1} = 2u^m − u^{m−1} + dt²·L u^m, in place on (prev, cur).
inline void leapfrog(const SparseMatrix& L, double dt, std::vector<double>& prev, std::vector<double>& cur, std::size_t steps) {
  const Eigen::Index n = static_cast<Eigen::Index>(cur.size());
  Eigen::VectorXd lu(n);
  const double dt2 = dt * dt;
  for (std::size_t s = 0; s < steps; ++s) {
    Eigen::Map<const Eigen::VectorXd> c(cur.data(), n);
    lu.noalias() = L * c;
    for (Eigen::Index i = 0; i < n; ++i) prev[i] = 2.0 * cur[i] - prev[i] + dt2 * lu[i];
    std::swap(prev, cur);
  }
}

/// Solves u_tt = Lu, u(·,0) = f, u_t(·,0) = 0 on a padded box up to time T.
inline WaveRun solve_wave(const EllipticOperator& op, const Field& f, double T, const WaveOptions& opt = {}) {
  if (!(opt.cfl > 0.0) || !(opt.cfl < 1.0)) throw UnstableConfiguration("cfl must lie in (0, 1)");
  if (!(T > 0.0)) throw UnstableConfiguration("final time must be positive");
  if (op.ndim() != f.grid.ndim()) throw InvalidGeometry("operator and initial condition dimensions differ");
  if (opt.stride < 1) throw UnstableConfiguration("stride must be at least 1");
  detail::check_stencil_grid(f.grid);
  detail::check_compact_support(f);

  const double limit = wave_dt_limit(op, f.grid);
  WaveRun run;
  run.T = T;
  if (opt.dt) {
    run.steps = static_cast<std::size_t>(std::llround(T / *opt.dt));
    if (run.steps == 0 || std::abs(run.steps * *opt.dt - T) > 1e-9 * T)
      throw UnstableConfiguration("T must be a whole multiple of the requested dt");
    run.dt = *opt.dt;
    if (run.dt / limit >= 1.0) throw UnstableConfiguration("requested dt violates the CFL limit");
  } else {
    run.steps = static_cast<std::size_t>(std::ceil(T / (opt.cfl * limit) - 1e-12));
    run.dt = T / static_cast<double>(run.steps);
  }
  run.cfl_used = run.dt / limit;

  if (opt.pad_nodes) run.padding = *opt.pad_nodes;
  else if (opt.padding == PaddingRule::Numerical) run.padding = run.steps + 2;
  else run.padding = static_cast<std::size_t>(std::ceil(std::sqrt(op.mu2()) * T / f.grid.h_min())) + opt.margin;

  Grid box = padded_grid(f.grid, run.padding);
  SparseMatrix L = assemble_operator(op, box);
  auto inner = detail::embedded_indices(f.grid, box, run.padding);

  std::vector<double> prev(box.size(), 0.0), cur(box.size(), 0.0);
  for (std::size_t i = 0; i < inner.size(); ++i) prev[inner[i]] = f[i];

  const Grid& rec_grid = opt.record_full_grid ? box : f.grid;
  std::size_t nframes = run.steps / opt.stride + 1;
  run.u = SpaceTimeField::uniform(rec_grid, 0.0, run.dt * static_cast<double>(opt.stride), nframes);
  auto record = [&](std::size_t frame, const std::vector<double>& v) {
    auto out = run.u.frame(frame);
    if (opt.record_full_grid) std::copy(v.begin(), v.end(), out.begin());
    else
      for (std::size_t i = 0; i < inner.size(); ++i) out[i] = v[inner[i]];
  };
  record(0, prev);

  // first step from the Taylor expansion with u_t(·,0) = 0
  {
    Eigen::Map<const Eigen::VectorXd> u0(prev.data(), static_cast<Eigen::Index>(prev.size()));
    Eigen::VectorXd lu = L * u0;
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = prev[i] + 0.5 * run.dt * run.dt * lu[static_cast<Eigen::Index>(i)];
  }
  if (opt.stride == 1) record(1, cur);
  for (std::size_t m = 1; m < run.steps; ++m) {
    leapfrog(L, run.dt, prev, cur, 1);
    if ((m + 1) % opt.stride == 0) record((m + 1) / opt.stride, cur);
  }
  for (double v : run.u.data())
    if (!std::isfinite(v)) throw UnstableConfiguration("wave solution became non-finite");
  if (opt.keep_state) run.state = WaveState{box, prev, cur, run.steps};
  return run;
}

/// Continues a run kept with keep_state for `steps` more steps and returns
/// frames of the f-grid window (given by `inner_grid` and `pad`).
inline SpaceTimeField resume_wave(const EllipticOperator& op, WaveState& state, double dt, std::size_t steps,
                                  const Grid& inner_grid, std::size_t pad) {
  SparseMatrix L = assemble_operator(op, state.grid);
  auto inner = detail::embedded_indices(inner_grid, state.grid, pad);
  auto out = SpaceTimeField::uniform(inner_grid, static_cast<double>(state.step) * dt, dt, steps + 1);
  auto record = [&](std::size_t frame) {
    auto o = out.frame(frame);
    for (std::size_t i = 0; i < inner.size(); ++i) o[i] = state.cur[inner[i]];
  };
  record(0);
  for (std::size_t s = 1; s <= steps; ++s) {
    leapfrog(L, dt, state.prev, state.cur, 1);
    record(s);
  }
  state.step += steps;
  return out;
}

struct GrowthBound {
  double B = 0.0;
  double d = 0.0;

  double at(double t) const { return B * std::exp(d * t); }
};

/// Tightest B·e^{d t} majorant of the frame sup-norms: d from a least-squares
/// fit of log‖u(·,t)‖∞ (clamped at 0), then the smallest B for that d.
inline GrowthBound estimate_growth_bound(const SpaceTimeField& u) {
  if (u.frames() < 10) throw InvalidData("growth bound needs at least 10 frames");
  std::vector<double> ts, ls, ms(u.frames());
  for (std::size_t n = 0; n < u.frames(); ++n) {
    double m = 0.0;
    for (double v : u.frame(n)) m = std::max(m, std::abs(v));
    ms[n] = m;
    if (m > 0.0) {
      ts.push_back(u.times()[n]);
      ls.push_back(std::log(m));
    }
  }
  if (ts.empty()) return {};
  double d = 0.0;
  if (ts.size() >= 2) {
    double tm = 0.0, lm = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      tm += ts[i];
      lm += ls[i];
    }
    tm /= static_cast<double>(ts.size());
    lm /= static_cast<double>(ts.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      sxy += (ts[i] - tm) * (ls[i] - lm);
      sxx += (ts[i] - tm) * (ts[i] - tm);
    }
    if (sxx > 0.0) d = std::max(0.0, sxy / sxx);
  }
  GrowthBound g{0.0, d};
  for (std::size_t n = 0; n < u.frames(); ++n) g.B = std::max(g.B, ms[n] * std::exp(-d * u.times()[n]));
  return g;
}

inline GrowthBound estimate_growth_bound(const WaveRun& run) { return estimate_growth_bound(run.u); }

namespace detail {

/// Surface grid and node list for the face {x_axis = position} of `g`, with
/// tangential extent limited to [lo, hi] on the other axes.
inline std::pair<Grid, std::vector<std::size_t>> face_nodes(const Grid& g, std::size_t axis, std::size_t at,
                                                            const std::vector<std::size_t>& lo,
                                                            const std::vector<std::size_t>& hi) {
  std::vector<double> o, h;
  std::vector<std::size_t> c;
  for (std::size_t k = 0; k < g.ndim(); ++k) {
    if (k == axis) continue;
    o.push_back(g.coord(k, lo[k]));
    h.push_back(g.spacing(k));
    c.push_back(hi[k] - lo[k] + 1);
  }
  Grid surf(o, h, c);
  std::vector<std::size_t> nodes(surf.size());
  std::array<std::size_t, kMaxDim> sm{}, m{};
  for (std::size_t i = 0; i < surf.size(); ++i) {
    surf.unravel(i, std::span<std::size_t>(sm.data(), surf.ndim()));
    for (std::size_t k = 0, q = 0; k < g.ndim(); ++k) m[k] = k == axis ? at : lo[k] + sm[q++];
    nodes[i] = g.index(std::span<const std::size_t>(m.data(), g.ndim()));
  }
  return {surf, nodes};
}

inline SpaceTimeField gather(const SpaceTimeField& u, const Grid& surf, const std::vector<std::size_t>& nodes) {
  SpaceTimeField out(surf, u.times());
  for (std::size_t n = 0; n < u.frames(); ++n) {
    auto src = u.frame(n);
    auto dst = out.frame(n);
    for (std::size_t i = 0; i < nodes.size(); ++i) dst[i] = src[nodes[i]];
  }
  return out;
}

inline std::size_t require_node(const Grid& g, std::size_t axis, double x, const char* what) {
  std::size_t i = g.node_at(axis, x);
  if (i == Grid::npos) throw InvalidGeometry(std::string(what) + " is not aligned with a grid node layer");
  return i;
}

}  // namespace detail

/// Dirichlet values on every face of a box Ω at every recorded time.
inline BoundaryTrace extract_trace_ip1(const SpaceTimeField& u, const GeometrySpec& geometry) {
  if (geometry.kind != MeasurementKind::FullBoundary) throw InvalidGeometry("full-boundary trace needs a FullBoundary geometry");
  if (!geometry.omega_is_box) throw InvalidGeometry("full-boundary traces are supported for box domains only");
  const Grid& g = u.grid();
  const Box& b = geometry.omega_box;
  if (b.ndim() != g.ndim()) throw InvalidGeometry("geometry and run dimensions differ");
  std::vector<std::size_t> lo(g.ndim()), hi(g.ndim());
  for (std::size_t k = 0; k < g.ndim(); ++k) {
    lo[k] = detail::require_node(g, k, b.lo[k], "Ω face");
    hi[k] = detail::require_node(g, k, b.hi[k], "Ω face");
  }
  BoundaryTrace t;
  t.surface = Surface::Lateral;
  t.ndim = g.ndim();
  for (std::size_t k = 0; k < g.ndim(); ++k)
    for (std::uint32_t side = 0; side < 2; ++side) {
      std::size_t at = side ? hi[k] : lo[k];
      auto [surf, nodes] = detail::face_nodes(g, k, at, lo, hi);
      TraceFace face;
      face.axis = static_cast<std::uint32_t>(k);
      face.side = side;
      face.position = g.coord(k, at);
      face.normal_spacing = g.spacing(k);
      face.dirichlet = detail::gather(u, surf, nodes);
      t.faces.push_back(std::move(face));
    }
  return t;
}

inline BoundaryTrace extract_trace_ip1(const WaveRun& run, const GeometrySpec& geometry) {
  return extract_trace_ip1(run.u, geometry);
}

/// Dirichlet values on the hyperplane patch {x1 = 0, x̄ ∈ Φ's tangential box}.
inline BoundaryTrace extract_trace_ip2(const SpaceTimeField& u, const GeometrySpec& geometry) {
  if (geometry.kind != MeasurementKind::Hyperplane) throw InvalidGeometry("hyperplane trace needs a Hyperplane geometry");
  const Grid& g = u.grid();
  if (geometry.ndim() != g.ndim()) throw InvalidGeometry("geometry and run dimensions differ");
  std::size_t at = detail::require_node(g, 0, geometry.hyperplane, "hyperplane x1 = 0");
  std::vector<std::size_t> lo(g.ndim(), 0), hi(g.ndim(), 0);
  for (std::size_t k = 1; k < g.ndim(); ++k) {
    double a = std::max(geometry.phi_box.lo[k], g.origin(k)), bnd = std::min(geometry.phi_box.hi[k], g.upper(k));
    lo[k] = static_cast<std::size_t>(std::ceil((a - g.origin(k)) / g.spacing(k) - 1e-9));
    hi[k] = static_cast<std::size_t>(std::floor((bnd - g.origin(k)) / g.spacing(k) + 1e-9));
    if (hi[k] < lo[k] + 2) throw InvalidGeometry("hyperplane patch is too small on the grid");
  }
  auto [surf, nodes] = detail::face_nodes(g, 0, at, lo, hi);
  BoundaryTrace t;
  t.surface = Surface::Hyperplane;
  t.ndim = g.ndim();
  TraceFace face;
  face.axis = 0;
  face.side = 0;
  face.position = g.coord(0, at);
  face.normal_spacing = g.spacing(0);
  face.dirichlet = detail::gather(u, surf, nodes);
  t.faces.push_back(std::move(face));
  return t;
}

inline BoundaryTrace extract_trace_ip2(const WaveRun& run, const GeometrySpec& geometry) {
  return extract_trace_ip2(run.u, geometry);
}

}  // namespace qtat
