#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "qtat/error.hpp"
#include "qtat/parallel.hpp"
#include "qtat/trace.hpp"
#include "qtat/wave_forward.hpp"

namespace qtat {

enum class Quadrature { Simpson, Trapezoid };

/// Points 1 − cos(πk/(2n)), k = 1..n: clustered near 0, last point exactly 1.
inline std::vector<double> clustered_targets(std::size_t n = 33) {
  std::vector<double> t(n);
  for (std::size_t k = 1; k <= n; ++k)
    t[k - 1] = 1.0 - std::cos(std::numbers::pi * static_cast<double>(k) / (2.0 * static_cast<double>(n)));
  t.back() = 1.0;
  return t;
}

struct TransformPlan {
  double tau_max = 10.0;
  Quadrature quadrature = Quadrature::Simpson;
  bool substitute_near_zero = true;
  std::vector<double> t_targets = clustered_targets();
  bool include_zero = false;  // prepend t = 0 carrying the limit value g(0)

  void validate() const {
    if (!(tau_max > 0.0)) throw InvalidData("transform: tau_max must be positive");
    if (t_targets.empty()) throw InvalidData("transform: no target times");
    for (std::size_t i = 0; i < t_targets.size(); ++i) {
      if (!(t_targets[i] > 0.0) || t_targets[i] > 1.0 + 1e-12) throw InvalidData("transform: targets must lie in (0, 1]");
      if (i && !(t_targets[i] > t_targets[i - 1])) throw InvalidData("transform: targets must increase");
    }
  }
};

struct TailBound {
  double bound = 0.0;
  double B = 0.0, d = 0.0, tau_max = 0.0, t = 0.0;
};

/// B·(1/√(πt))∫_{τmax}^∞ e^{−τ²/4t + dτ} dτ = B·e^{d²t}·erfc((τmax − 2dt)/(2√t)).
inline TailBound tail_bound(const GrowthBound& g, double tau_max, double t) {
  TailBound tb{0.0, g.B, g.d, tau_max, t};
  if (g.B == 0.0) return tb;
  tb.bound = g.B * std::exp(g.d * g.d * t) * std::erfc((tau_max - 2.0 * g.d * t) / (2.0 * std::sqrt(t)));
  return tb;
}

namespace detail {

inline constexpr double kKernelWidths = 8.0;     // integrate up to 2√t·8 (kernel below e^{-64})
inline constexpr double kResolvedSamples = 32.0;  // samples per kernel width 2√t before switching to z
inline constexpr std::size_t kZPanels = 512;

/// Composite rule over w[0..K] with spacing h; Simpson uses a 3/8 panel when K is odd.
inline double composite(const std::vector<double>& w, double h, Quadrature q) {
  const std::size_t K = w.size() - 1;
  if (K == 0) return 0.0;
  if (q == Quadrature::Trapezoid || K < 2) {
    double s = 0.5 * (w.front() + w.back());
    for (std::size_t i = 1; i < K; ++i) s += w[i];
    return s * h;
  }
  std::size_t simpson_end = (K % 2 == 0) ? K : K - 3;
  double s = 0.0;
  for (std::size_t i = 0; i + 2 <= simpson_end; i += 2) s += w[i] + 4.0 * w[i + 1] + w[i + 2];
  s *= h / 3.0;
  if (simpson_end != K) {
    std::size_t i = simpson_end;
    s += 3.0 * h / 8.0 * (w[i] + 3.0 * w[i + 1] + 3.0 * w[i + 2] + w[i + 3]);
  }
  return s;
}

/// Cubic Lagrange interpolation of uniform samples, reflected evenly at τ = 0.
inline double interpolate_even(std::span<const double> g, double dtau, double tau) {
  const std::ptrdiff_t M = static_cast<std::ptrdiff_t>(g.size());
  double s = tau / dtau;
  std::ptrdiff_t i0 = static_cast<std::ptrdiff_t>(std::floor(s)) - 1;
  i0 = std::min(i0, M - 4);
  auto sample = [&](std::ptrdiff_t i) { return g[static_cast<std::size_t>(std::min(std::abs(i), M - 1))]; };
  double r = 0.0;
  for (std::ptrdiff_t a = 0; a < 4; ++a) {
    double w = 1.0;
    for (std::ptrdiff_t b = 0; b < 4; ++b)
      if (b != a) w *= (s - static_cast<double>(i0 + b)) / static_cast<double>(a - b);
    r += w * sample(i0 + a);
  }
  return r;
}

}  // namespace detail

/// ℒg(t) for one t from samples g(m·dtau), m = 0..M−1. Returns the value and
/// the upper integration limit actually used.
inline std::pair<double, double> transform_at(std::span<const double> g, double dtau, double t, const TransformPlan& plan) {
  const double width = 2.0 * std::sqrt(t);
  const double avail = std::min(plan.tau_max, dtau * static_cast<double>(g.size() - 1));
  const double upper = std::min(avail, detail::kKernelWidths * width);
  if (plan.substitute_near_zero && width < detail::kResolvedSamples * dtau && g.size() >= 4) {
    // τ = 2√t·z: ℒg(t) = (2/√π)∫ e^{−z²} g(2√t z) dz
    const double zmax = upper / width;
    const double hz = zmax / static_cast<double>(detail::kZPanels);
    std::vector<double> w(detail::kZPanels + 1);
    for (std::size_t j = 0; j <= detail::kZPanels; ++j) {
      double z = hz * static_cast<double>(j);
      w[j] = std::exp(-z * z) * detail::interpolate_even(g, dtau, width * z);
    }
    return {2.0 / std::sqrt(std::numbers::pi) * detail::composite(w, hz, plan.quadrature), upper};
  }
  const std::size_t K = std::min(g.size() - 1, static_cast<std::size_t>(std::floor(upper / dtau + 1e-9)));
  std::vector<double> w(K + 1);
  const double inv4t = 1.0 / (4.0 * t);
  for (std::size_t m = 0; m <= K; ++m) {
    double tau = dtau * static_cast<double>(m);
    w[m] = std::exp(-tau * tau * inv4t) * g[m];
  }
  return {detail::composite(w, dtau, plan.quadrature) / std::sqrt(std::numbers::pi * t), dtau * static_cast<double>(K)};
}

struct TransformResult {
  std::vector<double> times;
  std::vector<double> values;
  std::vector<TailBound> tails;
};

/// Applies ℒ at every target of the plan.
inline TransformResult transform_signal(std::span<const double> g, double dtau, const TransformPlan& plan, const GrowthBound& growth) {
  plan.validate();
  if (g.size() < 2 || !(dtau > 0.0)) throw InvalidData("transform: need a uniformly sampled signal");
  TransformResult r;
  if (plan.include_zero) {
    r.times.push_back(0.0);
    r.values.push_back(g[0]);
    r.tails.push_back(TailBound{0.0, growth.B, growth.d, 0.0, 0.0});
  }
  for (double t : plan.t_targets) {
    auto [v, upper] = transform_at(g, dtau, t, plan);
    r.times.push_back(t);
    r.values.push_back(v);
    r.tails.push_back(tail_bound(growth, upper, t));
  }
  return r;
}

/// max over targets of |ℒ(g'')(t) − d/dt ℒ(g)(t)|; the t-derivative uses a
/// fourth-order central difference with step 1e-3·t.
inline double check_derivative_identity(const std::function<double(double)>& g, const std::function<double(double)>& g2,
                                        double dtau, const TransformPlan& plan) {
  plan.validate();
  const std::size_t M = static_cast<std::size_t>(std::floor(plan.tau_max / dtau)) + 1;
  std::vector<double> s(M), s2(M);
  for (std::size_t m = 0; m < M; ++m) {
    double tau = dtau * static_cast<double>(m);
    s[m] = g(tau);
    s2[m] = g2(tau);
  }
  double defect = 0.0;
  for (double t : plan.t_targets) {
    double eta = 1e-3 * t;
    auto F = [&](double tt) { return transform_at(s, dtau, tt, plan).first; };
    double dF = (-F(t + 2 * eta) + 8 * F(t + eta) - 8 * F(t - eta) + F(t - 2 * eta)) / (12 * eta);
    defect = std::max(defect, std::abs(transform_at(s2, dtau, t, plan).first - dF));
  }
  return defect;
}

namespace detail {
inline SpaceTimeField transform_series(const SpaceTimeField& in, const TransformPlan& plan, const GrowthBound& growth) {
  if (in.frames() < 2 || !in.is_uniform() || std::abs(in.t0()) > 1e-12)
    throw InvalidData("transform: trace must be sampled uniformly from t = 0");
  const double dtau = in.dt();
  std::vector<double> times;
  if (plan.include_zero) times.push_back(0.0);
  times.insert(times.end(), plan.t_targets.begin(), plan.t_targets.end());
  SpaceTimeField out(in.grid(), times);
  parallel_for(in.nodes(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      auto r = transform_signal(in.series(i), dtau, plan, growth);
      for (std::size_t n = 0; n < r.values.size(); ++n) out.at(n, i) = r.values[n];
    }
  }, 1);
  return out;
}
}  // namespace detail

/// Point-wise transform of every surface node; the per-target tail bound is attached.
inline BoundaryTrace transform_trace(const BoundaryTrace& trace, const TransformPlan& plan, const GrowthBound& growth) {
  plan.validate();
  BoundaryTrace out;
  out.surface = trace.surface;
  out.ndim = trace.ndim;
  for (const auto& face : trace.faces) {
    TraceFace f;
    f.axis = face.axis;
    f.side = face.side;
    f.position = face.position;
    f.normal_spacing = face.normal_spacing;
    f.dirichlet = detail::transform_series(face.dirichlet, plan, growth);
    if (face.neumann) f.neumann = detail::transform_series(*face.neumann, plan, growth);
    out.faces.push_back(std::move(f));
  }
  const auto& src = trace.faces.at(0).dirichlet;
  double avail = std::min(plan.tau_max, src.dt() * static_cast<double>(src.frames() - 1));
  if (plan.include_zero) out.tail.push_back(0.0);
  for (double t : plan.t_targets)
    out.tail.push_back(tail_bound(growth, std::min(avail, detail::kKernelWidths * 2.0 * std::sqrt(t)), t).bound);
  return out;
}

}  // namespace qtat
