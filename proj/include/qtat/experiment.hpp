#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "qtat/geometry.hpp"
#include "qtat/norms.hpp"
#include "qtat/parallel.hpp"
#include "qtat/qrm_solver.hpp"
#include "qtat/random.hpp"

namespace qtat {

enum class Scenario { IP1Stability, IP2Stability, QrmConvergence, HolderRegion };
enum class GammaRule { EqualOmega, Fixed, Ladder };

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::IP1Stability: return "ip1";
    case Scenario::IP2Stability: return "ip2";
    case Scenario::QrmConvergence: return "qrm";
    case Scenario::HolderRegion: return "holder";
  }
  return "?";
}

struct SweepConfig {
  Scenario scenario = Scenario::QrmConvergence;
  std::vector<double> ladder{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
  GammaRule gamma_rule = GammaRule::EqualOmega;
  double gamma = 1e-8;                     // Fixed rule and the noiseless row
  std::vector<double> gamma_ladder;        // Ladder rule: one γ per ladder entry
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  EllipticOperator op = EllipticOperator::laplacian(1);
  Box omega{{0.01}, {0.21}};               // support of the truth; IP1 measures on its ends
  std::size_t nodes = 257;                 // Φ nodes along x1 (IP1: across Ω)
  std::size_t time_steps = 256;
  double grading = 3.0;
  double tau_max = 10.0;
  double omega0 = 1.0;                     // regime threshold proxy
  bool baseline = true;                    // prepend a noiseless row

  void validate() const {
    if (ladder.empty()) throw InvalidData("sweep: empty ladder");
    for (std::size_t k = 0; k < ladder.size(); ++k) {
      if (!(ladder[k] > 0.0 && ladder[k] < 1.0)) throw InvalidData("sweep: ladder values must lie in (0,1)");
      if (k && !(ladder[k] < ladder[k - 1])) throw InvalidData("sweep: ladder must decrease strictly");
    }
    if (seeds.empty()) throw InvalidData("sweep: no seeds");
    if (!(gamma > 0.0)) throw InvalidData("sweep: gamma must be positive");
    if (gamma_rule == GammaRule::Ladder && gamma_ladder.size() != ladder.size())
      throw InvalidData("sweep: gamma ladder must match the noise ladder");
    if (op.ndim() != 1 || omega.ndim() != 1) throw InvalidGeometry("sweep: experiments run in one space dimension");
    if (nodes < 17 || time_steps < 8) throw InvalidData("sweep: resolution too coarse");
  }
};

/// One (level, seed) job. `measure` is F for the stability scenarios and ω for
/// the convergence scenario; the scaled error is error·√ln(1/measure).
struct StabilityRow {
  double level = 0.0;
  std::uint64_t seed = 0;
  double measure = 0.0;
  double gamma = 0.0;
  double error = 0.0;          // relative L2(Ω) error of the initial state
  double scaled_error = 0.0;
  double holder_error = 0.0;   // H^{1,0}(D_{1/2}) norm of the space-time error
  double lhs = 0.0, rhs = 0.0; // error-equation inequality, convergence scenario only
  bool out_of_regime = false;
  double residual = 0.0;       // relative normal-equation residual of the solve
  double bound_lhs = 0.0, bound_rhs = 0.0;  // ‖u_γ‖_R and ‖p‖/√γ
};

struct LogFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t points = 0;
};

/// Least squares of log y on log x.
inline LogFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  LogFit f;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0 && y[i] > 0.0) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  f.points = lx.size();
  if (lx.size() < 2) return f;
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct StabilityReport {
  Scenario scenario = Scenario::QrmConvergence;
  std::vector<StabilityRow> rows;  // baseline first, then ladder-major, seed-minor
  LogFit holder_fit;               // ρ = slope of log holder_error against log measure

  /// Per-level medians over seeds of a row quantity, in ladder order (in-regime rows only).
  template <class Get>
  std::vector<std::pair<double, double>> medians(Get&& get) const {
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < rows.size();) {
      std::size_t j = i;
      std::vector<double> vals;
      while (j < rows.size() && rows[j].level == rows[i].level) {
        if (!rows[j].out_of_regime) vals.push_back(get(rows[j]));
        ++j;
      }
      if (rows[i].level > 0.0 && !vals.empty()) out.emplace_back(rows[i].level, median(vals));
      i = j;
    }
    return out;
  }

  /// max over levels of the median scaled error, divided by the median of those medians.
  double trend_ratio() const {
    auto m = medians([](const StabilityRow& r) { return r.scaled_error; });
    if (m.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> v;
    for (auto& p : m) v.push_back(p.second);
    return *std::max_element(v.begin(), v.end()) / median(v);
  }

  /// Largest relative increase of the median error as the level decreases.
  double monotonicity_excess() const {
    auto m = medians([](const StabilityRow& r) { return r.error; });
    double worst = 0.0;
    for (std::size_t k = 1; k < m.size(); ++k) worst = std::max(worst, m[k].second / m[k - 1].second - 1.0);
    return worst;
  }

  bool inequality_holds(double rel = 1e-8) const {
    for (const auto& r : rows)
      if (r.lhs > r.rhs * (1.0 + rel)) return false;
    return true;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "# qtat stability report v1, scenario=" << scenario_name(scenario) << "\n";
    os << "level,seed,measure,gamma,error,scaled_error,holder_error,eq_lhs,eq_rhs,out_of_regime,residual,"
          "bound_lhs,bound_rhs\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
      os << r.level << ',' << r.seed << ',' << r.measure << ',' << r.gamma << ',' << r.error << ',' << r.scaled_error
         << ',' << r.holder_error << ',' << r.lhs << ',' << r.rhs << ',' << (r.out_of_regime ? 1 : 0) << ',' << r.residual
         << ',' << r.bound_lhs << ',' << r.bound_rhs << "\n";
    os << "# holder_fit rho=" << holder_fit.slope << " r2=" << holder_fit.r2 << " points=" << holder_fit.points << "\n";
    return os.str();
  }
};

namespace detail {

/// Everything the noisy rows share: truth, clean data, and the Φ discretization.
struct SweepSetup {
  EllipticOperator op;
  GeometrySpec geometry;
  QrmGrid grid;
  Field truth;                 // on Φ's space grid
  SpaceTimeField v_true;       // parabolic solution on Φ × times
  BoundaryTrace hyperbolic;    // clean wave trace
  BoundaryTrace clean_cauchy;  // transformed + recovered clean data
  std::vector<std::uint8_t> d12;  // D_{1/2} mask over (frame, node)
};

inline BoundaryTrace cauchy_from_wave(const BoundaryTrace& hyperbolic, const SweepSetup& s, double tau_max) {
  TransformPlan plan;
  plan.tau_max = tau_max;
  plan.t_targets.assign(s.grid.times.begin() + 1, s.grid.times.end());
  plan.include_zero = true;
  auto transformed = transform_trace(hyperbolic, plan, trace_growth_bound(hyperbolic));
  return recover_neumann(s.op, transformed, s.geometry);
}

inline SweepSetup make_setup(const SweepConfig& cfg, bool full_boundary, bool need_wave) {
  SweepSetup s;
  const MeasurementKind kind = full_boundary ? MeasurementKind::FullBoundary : MeasurementKind::Hyperplane;
  auto [geo, op, rec] = normalize_geometry(GeometrySpec::box(cfg.omega, kind), cfg.op);
  s.geometry = geo;
  s.op = op;
  s.grid = make_qrm_grid(geo, {cfg.nodes}, cfg.time_steps, cfg.grading);
  const Box support = geo.omega_box;
  s.truth = sample(s.grid.space, [&](std::span<const double> x) { return box_bump(x, support); });
  s.v_true = solve_parabolic(s.op, s.truth, s.grid.times);
  const Grid& g = s.grid.space;
  s.d12.assign(g.size() * s.grid.frames(), 0);
  for (std::size_t n = 0; n < s.grid.frames(); ++n)
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = s.grid.times[n];
      const double x1 = g.coord(0, g.axis_index(i, 0));
      s.d12[n * g.size() + i] = x1 > 0.0 && t > 0.0 && t < 1.0 && x1 + (t - 0.5) * (t - 0.5) + 0.25 < 0.5;
    }
  if (need_wave) {
    auto run = solve_wave(s.op, s.truth, cfg.tau_max);
    s.hyperbolic = full_boundary ? extract_trace_ip1(run, s.geometry) : extract_trace_ip2(run, s.geometry);
    s.clean_cauchy = cauchy_from_wave(s.hyperbolic, s, cfg.tau_max);
  }
  return s;
}

inline double relative_error(const Field& fhat, const SweepSetup& s) {
  double num = 0.0, den = 0.0;
  const Grid& g = s.grid.space;
  for (std::size_t i = 0; i < fhat.size(); ++i) {
    Point p = fhat.grid.point(i);
    std::array<std::size_t, kMaxDim> m{};
    for (std::size_t k = 0; k < g.ndim(); ++k) m[k] = g.node_at(k, p[k]);
    const double f = s.truth[g.index(std::span<const std::size_t>(m.data(), g.ndim()))];
    num += (fhat[i] - f) * (fhat[i] - f);
    den += f * f;
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline double holder_norm(const SpaceTimeField& err, const SweepSetup& s) {
  const std::size_t S = s.grid.space.size();
  return norms::h10(err, [&](std::size_t n, std::size_t i) { return s.d12[n * S + i] != 0; });
}

inline double gamma_for(const SweepConfig& cfg, std::size_t level_index, double measure) {
  switch (cfg.gamma_rule) {
    case GammaRule::EqualOmega: return measure;
    case GammaRule::Fixed: return cfg.gamma;
    case GammaRule::Ladder: return cfg.gamma_ladder[level_index];
  }
  return measure;
}

/// Runs the jobs concurrently; rows land in a fixed order regardless of scheduling.
template <class Job>
std::vector<StabilityRow> run_rows(const SweepConfig& cfg, Job&& job) {
  struct Spec {
    double level;
    std::size_t index;
    std::uint64_t seed;
  };
  std::vector<Spec> specs;
  if (cfg.baseline) specs.push_back({0.0, 0, cfg.seeds.front()});
  for (std::size_t k = 0; k < cfg.ladder.size(); ++k)
    for (auto sd : cfg.seeds) specs.push_back({cfg.ladder[k], k, sd});
  std::vector<StabilityRow> rows(specs.size());
  parallel_for(specs.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) rows[i] = job(specs[i].level, specs[i].index, specs[i].seed);
  }, 1);
  return rows;
}

inline LogFit holder_fit(const StabilityReport& r) {
  auto m = r.medians([](const StabilityRow& row) { return row.holder_error; });
  auto meas = r.medians([](const StabilityRow& row) { return row.measure; });
  std::vector<double> x, y;
  for (std::size_t k = 0; k < m.size(); ++k) {
    x.push_back(meas[k].second);
    y.push_back(m[k].second);
  }
  return fit_loglog(x, y);
}

/// Cauchy data of the parabolic truth itself, laid out like the pipeline's clean data.
inline BoundaryTrace exact_cauchy(const SweepSetup& s) {
  BoundaryTrace out = s.clean_cauchy;
  const Grid& g = s.grid.space;
  const std::size_t L = g.count(0) - 1;
  const double h = g.spacing(0);
  for (auto& f : out.faces) {
    SpaceTimeField nm = f.dirichlet;
    for (std::size_t n = 0; n < s.grid.frames(); ++n) {
      const double v0 = s.v_true.at(n, f.side ? L : 0);
      const double v1 = s.v_true.at(n, f.side ? L - 1 : 1);
      const double v2 = s.v_true.at(n, f.side ? L - 2 : 2);
      f.dirichlet.at(n, 0) = v0;
      nm.at(n, 0) = (f.side ? 1.0 : -1.0) * (3 * v0 - 4 * v1 + v2) / (2 * h);
    }
    f.neumann = nm;
  }
  return out;
}

/// Data-noise experiment shared by the IP1 and IP2 scenarios.
inline StabilityReport run_noise_sweep(const SweepConfig& cfg, bool full_boundary) {
  cfg.validate();
  SweepSetup s = make_setup(cfg, full_boundary, true);
  const double floor = norms::data_size(trace_axpy(-1.0, exact_cauchy(s), s.clean_cauchy));
  StabilityReport rep;
  rep.scenario = full_boundary ? Scenario::IP1Stability
                               : (cfg.scenario == Scenario::HolderRegion ? Scenario::HolderRegion : Scenario::IP2Stability);
  rep.rows = run_rows(cfg, [&](double delta, std::size_t index, std::uint64_t seed) {
    StabilityRow row;
    row.level = delta;
    row.seed = seed;
    BoundaryTrace cauchy = s.clean_cauchy;
    if (delta > 0.0) cauchy = cauchy_from_wave(add_noise(s.hyperbolic, NoiseSpec{delta, seed}), s, cfg.tau_max);
    BoundaryTrace diff = trace_axpy(-1.0, s.clean_cauchy, cauchy);
    // the noiseless row reports the discretization floor against the truth's own data
    row.measure = delta > 0.0 ? norms::data_size(diff) : floor;
    row.gamma = delta > 0.0 ? gamma_for(cfg, index, row.measure) : cfg.gamma;
    auto [p, r] = homogenize(cauchy, s.op, s.grid);
    QrmProblem prob{s.op, s.geometry, s.grid, p, r, row.gamma};
    auto sol = assemble_and_minimize(prob);
    row.residual = sol.residual;
    row.bound_lhs = sol.bound_lhs();
    row.bound_rhs = sol.bound_rhs();
    Field fhat = extract_initial(sol, r, s.geometry);
    row.error = relative_error(fhat, s);
    SpaceTimeField err = sol.u_gamma;
    for (std::size_t k = 0; k < err.data().size(); ++k) err.data()[k] += r.data()[k] - s.v_true.data()[k];
    row.holder_error = holder_norm(err, s);
    row.out_of_regime = delta > 0.0 && !(row.measure < cfg.omega0);
    row.scaled_error = row.measure > 0.0 && row.measure < 1.0 ? row.error * std::sqrt(std::log(1.0 / row.measure))
                                                              : std::numeric_limits<double>::quiet_NaN();
    return row;
  });
  rep.holder_fit = holder_fit(rep);
  return rep;
}

}  // namespace detail

/// Full-boundary data with multiplicative noise δ; F from the transformed data.
inline StabilityReport run_ip1_stability(const SweepConfig& cfg) { return detail::run_noise_sweep(cfg, true); }

/// Hyperplane data with multiplicative noise δ; also fits ρ of the H^{1,0}(D_{1/2}) error against F.
inline StabilityReport run_ip2_stability(const SweepConfig& cfg) { return detail::run_noise_sweep(cfg, false); }

/// Noise of size exactly ω added to the noiseless right-hand side, γ = ω.
/// The noiseless pair (p*, v̂*) comes from the parabolic solution of the truth,
/// lifted with its own one-sided derivative so v̂* lies in the constrained subspace.
inline StabilityReport run_qrm_convergence(const SweepConfig& cfg) {
  cfg.validate();
  detail::SweepSetup s = detail::make_setup(cfg, false, false);
  const Grid& g = s.grid.space;
  const std::size_t S = g.size();
  const double h = g.spacing(0);

  // Cauchy data of v_true on x1 = 0; Neumann as the one-sided difference the constraint uses
  BoundaryTrace cauchy;
  TraceFace face;
  face.position = g.origin(0);
  face.normal_spacing = h;
  face.dirichlet = SpaceTimeField(Grid({}, {}, {}), s.grid.times);
  SpaceTimeField nm(Grid({}, {}, {}), s.grid.times);
  for (std::size_t n = 0; n < s.grid.frames(); ++n) {
    face.dirichlet.at(n, 0) = s.v_true.at(n, 0);
    nm.at(n, 0) = (-3 * s.v_true.at(n, 0) + 4 * s.v_true.at(n, 1) - s.v_true.at(n, 2)) / (2 * h);
  }
  face.neumann = nm;
  cauchy.faces.push_back(face);
  auto [p_unused, r] = homogenize(cauchy, s.op, s.grid);
  (void)p_unused;
  SpaceTimeField vstar = s.v_true;
  for (std::size_t k = 0; k < vstar.data().size(); ++k) vstar.data()[k] -= r.data()[k];

  QrmMeasures meas(s.op, s.grid, RegNorm::H21);
  const SpaceTimeField pstar = meas.apply(vstar);
  const double Y = meas.reg_norm(vstar);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < S; ++i)
    if (!g.on_edge(i)) rows.push_back(i);

  StabilityReport rep;
  rep.scenario = Scenario::QrmConvergence;
  rep.rows = detail::run_rows(cfg, [&](double omega, std::size_t index, std::uint64_t seed) {
    StabilityRow row;
    row.level = omega;
    row.seed = seed;
    SpaceTimeField dir = pstar;
    std::fill(dir.data().begin(), dir.data().end(), 0.0);
    Rng rng(seed);
    for (std::size_t n = 0; n < dir.frames(); ++n)
      for (std::size_t i : rows) dir.at(n, i) = rng.normal();
    const double dn = meas.p_norm(dir);
    SpaceTimeField p = pstar;
    for (std::size_t k = 0; k < p.data().size(); ++k) p.data()[k] += omega * dir.data()[k] / dn;
    row.measure = omega;
    row.gamma = omega > 0.0 ? detail::gamma_for(cfg, index, omega) : cfg.gamma;
    QrmProblem prob{s.op, s.geometry, s.grid, p, r, row.gamma};
    auto sol = assemble_and_minimize(prob);
    row.residual = sol.residual;
    row.bound_lhs = sol.bound_lhs();
    row.bound_rhs = sol.bound_rhs();
    Field fhat = extract_initial(sol, r, s.geometry);
    row.error = detail::relative_error(fhat, s);
    SpaceTimeField vt = sol.u_gamma;
    for (std::size_t k = 0; k < vt.data().size(); ++k) vt.data()[k] -= vstar.data()[k];
    row.holder_error = detail::holder_norm(vt, s);
    SpaceTimeField pt = p;
    for (std::size_t k = 0; k < pt.data().size(); ++k) pt.data()[k] -= pstar.data()[k];
    const double a = meas.pde_norm(vt), rr = meas.reg_norm(vt), pn = meas.p_norm(pt);
    row.lhs = a * a + row.gamma * rr * rr;
    row.rhs = pn * pn + row.gamma * Y * Y;
    row.out_of_regime = omega > 0.0 && !(omega * std::sqrt(Y * Y + 1.0) < cfg.omega0);
    row.scaled_error = omega > 0.0 ? row.error * std::sqrt(std::log(1.0 / omega)) : std::numeric_limits<double>::quiet_NaN();
    return row;
  });
  rep.holder_fit = detail::holder_fit(rep);
  return rep;
}

inline StabilityReport run_sweep(const SweepConfig& cfg) {
  switch (cfg.scenario) {
    case Scenario::IP1Stability: return run_ip1_stability(cfg);
    // the Hölder scenario is the IP2 ladder read through its fit against F
    case Scenario::IP2Stability:
    case Scenario::HolderRegion: return run_ip2_stability(cfg);
    case Scenario::QrmConvergence: return run_qrm_convergence(cfg);
  }
  throw InvalidData("sweep: unknown scenario");
}

}  // namespace qtat
