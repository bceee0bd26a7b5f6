#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "qtat/elliptic_operator.hpp"
#include "qtat/error.hpp"
#include "qtat/grid.hpp"
#include "qtat/parallel.hpp"
#include "qtat/random.hpp"

namespace qtat {

struct CarlemanParams {
  double nu = 4.0;
  double epsilon = 0.05;
  double lambda = 2.0;
  std::array<double, 3> levels{0.25, 0.5, 0.75};

  void validate() const {
    if (!(nu > 1.0) || !(std::pow(5.0 / 6.0, nu) < 0.5)) throw InvalidData("carleman: nu must satisfy (5/6)^nu < 1/2");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidData("carleman: epsilon must lie in (0,1)");
    if (!(lambda > 1.0)) throw InvalidData("carleman: lambda must exceed 1");
    if (!(levels[0] > 0.0 && levels[0] < levels[1] && levels[1] < levels[2]))
      throw InvalidData("carleman: levels must increase from a positive value");
  }
};

enum class WeightKind { PsiPhi, ThetaXi };

/// Level-set value and the natural log of the weight at one point.
struct WeightValue {
  double level = 0.0;
  double log_weight = 0.0;
};

enum class DomainLabel { G34, G12, D34, D12, Boundary1G, Boundary2G, Boundary1D, Boundary2D };

/// A point of space × time; only the first `ndim` entries of x are used.
struct SpaceTimePoint {
  Point x{};
  std::size_t ndim = 1;
  double t = 0.0;
};

namespace detail {
inline double radial(const SpaceTimePoint& p) {
  double v = p.x[0];
  for (std::size_t k = 1; k < p.ndim; ++k) v += p.x[k] * p.x[k];
  return v;
}
}  // namespace detail

inline double psi(const CarlemanParams& c, const SpaceTimePoint& p) {
  const double s = (p.t - c.epsilon) / c.epsilon;
  return detail::radial(p) + s * s + 0.25;
}

inline double theta(const SpaceTimePoint& p) {
  const double s = p.t - 0.5;
  return detail::radial(p) + s * s + 0.25;
}

/// ψ with log φ = ψ^{−ν}/ε, or θ with log ξ = λθ^{−ν}.
inline WeightValue weight_value(const CarlemanParams& c, const SpaceTimePoint& p, WeightKind which) {
  if (which == WeightKind::PsiPhi) {
    const double s = psi(c, p);
    return {s, std::pow(s, -c.nu) / c.epsilon};
  }
  const double s = theta(p);
  return {s, c.lambda * std::pow(s, -c.nu)};
}

inline std::vector<WeightValue> weight_values(const CarlemanParams& c, std::span<const SpaceTimePoint> points,
                                              WeightKind which) {
  std::vector<WeightValue> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = weight_value(c, points[i], which);
  return out;
}

/// Strict membership in the level-set domains. The D domains also require
/// t ∈ (0,1); without it θ < 3/4 reaches |t − 1/2| < 1/√2. Boundary labels
/// take a tolerance `band`: the x1 = 0 face within the closed domain for the
/// first, |level − η₃| ≤ band with x1 > 0 for the second.
inline bool domain_membership(const CarlemanParams& c, const SpaceTimePoint& p, DomainLabel label, double band = 0.0) {
  const double x1 = p.x[0];
  const bool in_t = p.t > 0.0 && p.t < 1.0;
  switch (label) {
    case DomainLabel::G34: return x1 > 0.0 && psi(c, p) < c.levels[2];
    case DomainLabel::G12: return x1 > 0.0 && psi(c, p) < c.levels[1];
    case DomainLabel::D34: return x1 > 0.0 && in_t && theta(p) < c.levels[2];
    case DomainLabel::D12: return x1 > 0.0 && in_t && theta(p) < c.levels[1];
    case DomainLabel::Boundary1G: return std::abs(x1) <= band && psi(c, p) <= c.levels[2];
    case DomainLabel::Boundary2G: return x1 > 0.0 && std::abs(psi(c, p) - c.levels[2]) <= band;
    case DomainLabel::Boundary1D: return std::abs(x1) <= band && in_t && theta(p) <= c.levels[2];
    case DomainLabel::Boundary2D: return x1 > 0.0 && in_t && std::abs(theta(p) - c.levels[2]) <= band;
  }
  return false;
}

/// Projection of a level-set domain onto t = 0: x with x1 > 0 and x1 + |x̄|² + 1/4 < η.
inline bool in_projection(const SpaceTimePoint& p, double level) {
  return p.x[0] > 0.0 && detail::radial(p) + 0.25 < level;
}

/// Violation counts of the geometric facts the weights rely on.
struct GeometryCheck {
  std::size_t samples = 0;
  std::size_t nesting = 0;        // G12 ⊄ G34 or D12 ⊄ D34
  std::size_t strip = 0;          // G34 outside |t−ε| < ε/√2, D34 outside |t−1/2| < 1/2
  std::size_t weight_bound = 0;   // log φ² < 2^{ν+1}/ε on G12
  std::size_t hits_g12 = 0, hits_g34 = 0, hits_d12 = 0, hits_d34 = 0;

  std::size_t violations() const { return nesting + strip + weight_bound; }
};

/// Samples points uniformly in a box enclosing all four domains. Half the
/// points are drawn from the strip around t = ε so the thin G domains are hit often.
inline GeometryCheck check_geometry(const CarlemanParams& c, std::size_t ndim, std::size_t samples, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  GeometryCheck g;
  g.samples = samples;
  const double bound_g12 = std::pow(2.0, c.nu + 1.0) / c.epsilon;
  for (std::size_t s = 0; s < samples; ++s) {
    SpaceTimePoint p;
    p.ndim = ndim;
    p.x[0] = rng.uniform(-0.1, 0.6);
    for (std::size_t k = 1; k < ndim; ++k) p.x[k] = rng.uniform(-0.8, 0.8);
    p.t = s % 2 ? rng.uniform(-0.5, 1.5) : rng.uniform(c.epsilon * (1 - 1.5), c.epsilon * (1 + 1.5));
    const bool g12 = domain_membership(c, p, DomainLabel::G12), g34 = domain_membership(c, p, DomainLabel::G34);
    const bool d12 = domain_membership(c, p, DomainLabel::D12), d34 = domain_membership(c, p, DomainLabel::D34);
    g.hits_g12 += g12;
    g.hits_g34 += g34;
    g.hits_d12 += d12;
    g.hits_d34 += d34;
    if ((g12 && !g34) || (d12 && !d34)) ++g.nesting;
    if (g34 && !(std::abs(p.t - c.epsilon) < c.epsilon / std::sqrt(2.0))) ++g.strip;
    if (d34 && !(std::abs(p.t - 0.5) < 0.5)) ++g.strip;
    if (g12 && !(2.0 * weight_value(c, p, WeightKind::PsiPhi).log_weight >= bound_g12)) ++g.weight_bound;
  }
  return g;
}

/// Projection checks on a node set: every Ω node lies in RG_{1/2}, and the
/// t = 0 shadows of D_{3/4} and G_{3/4}, found by scanning t, coincide.
struct ProjectionCheck {
  std::size_t omega_nodes = 0;
  std::size_t outside_rg12 = 0;
  std::size_t shadow_mismatch = 0;

  std::size_t violations() const { return outside_rg12 + shadow_mismatch; }
};

inline ProjectionCheck check_projections(const CarlemanParams& c, const Grid& grid, const GeometrySpec& normalized,
                                         std::size_t t_samples = 2001) {
  c.validate();
  ProjectionCheck out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    SpaceTimePoint p;
    p.ndim = grid.ndim();
    p.x = grid.point(i);
    if (normalized.inside(std::span<const double>(p.x.data(), p.ndim))) {
      ++out.omega_nodes;
      if (!in_projection(p, c.levels[1])) ++out.outside_rg12;
    }
    bool in_g = false, in_d = false;
    for (std::size_t k = 0; k < t_samples && !(in_g && in_d); ++k) {
      const double s = static_cast<double>(k) / static_cast<double>(t_samples - 1);
      p.t = c.epsilon * (1.0 + (2.0 * s - 1.0));
      in_g = in_g || domain_membership(c, p, DomainLabel::G34);
      p.t = s;
      in_d = in_d || domain_membership(c, p, DomainLabel::D34);
    }
    if (in_g != in_d) ++out.shadow_mismatch;
  }
  return out;
}

/// Value and exact derivatives of a test function at one point.
struct Jet {
  double u = 0.0, ut = 0.0;
  std::array<double, kMaxDim> grad{};
  std::array<std::array<double, kMaxDim>, kMaxDim> hess{};
};

/// Σ c_m cos(k_m·x + w_m t + φ_m): smooth, non-polynomial, exact derivatives.
class TrigPolynomial {
 public:
  struct Mode {
    double c = 0.0, w = 0.0, phase = 0.0;
    std::array<double, kMaxDim> k{};
  };

  TrigPolynomial() = default;
  explicit TrigPolynomial(std::vector<Mode> modes, std::size_t ndim) : modes_(std::move(modes)), ndim_(ndim) {}

  static TrigPolynomial constant(double v, std::size_t ndim) {
    Mode m;
    m.c = v;
    return TrigPolynomial({m}, ndim);
  }

  Jet operator()(const SpaceTimePoint& p) const {
    Jet j;
    for (const auto& m : modes_) {
      double arg = m.w * p.t + m.phase;
      for (std::size_t k = 0; k < ndim_; ++k) arg += m.k[k] * p.x[k];
      const double cs = m.c * std::cos(arg), sn = m.c * std::sin(arg);
      j.u += cs;
      j.ut -= m.w * sn;
      for (std::size_t a = 0; a < ndim_; ++a) {
        j.grad[a] -= m.k[a] * sn;
        for (std::size_t b = 0; b < ndim_; ++b) j.hess[a][b] -= m.k[a] * m.k[b] * cs;
      }
    }
    return j;
  }

 private:
  std::vector<Mode> modes_;
  std::size_t ndim_ = 1;
};

/// The seeded family of random trigonometric polynomials.
inline std::vector<TrigPolynomial> trig_family(std::size_t ndim, std::size_t count = 20, std::uint64_t seed = 20,
                                               std::size_t modes = 4, double max_frequency = 4.0) {
  Rng rng(seed);
  std::vector<TrigPolynomial> out;
  for (std::size_t f = 0; f < count; ++f) {
    std::vector<TrigPolynomial::Mode> ms(modes);
    for (auto& m : ms) {
      m.c = rng.normal() / static_cast<double>(modes);
      m.w = rng.uniform(-max_frequency, max_frequency);
      m.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t k = 0; k < ndim; ++k) m.k[k] = rng.uniform(-max_frequency, max_frequency);
    }
    out.emplace_back(std::move(ms), ndim);
  }
  return out;
}

enum class CarlemanEstimate { PsiPhi, ThetaXi };

/// Nodes per axis and the power of the apex-clustering maps. The weights grow
/// like exp(κ·(1/4 − level)) with κ of order 10⁴–10⁵, so both sides of the
/// estimates concentrate within 1/κ of the apex; uniform grids cannot see that.
struct CarlemanResolution {
  std::size_t space = 65;
  std::size_t time = 65;
  double normal_grading = 4.0;  // x1 = X·σ^p
  double grading = 2.0;         // x̄ and t: centre ± H·|σ|^p
};

/// Both sides of one estimate as natural logs. The constant is the smallest
/// C with C·LHS ≥ RHS, i.e. C = RHS/LHS; a zero function is degenerate.
struct CarlemanSample {
  double log_lhs = -std::numeric_limits<double>::infinity();
  double log_rhs = -std::numeric_limits<double>::infinity();
  bool degenerate = true;

  double log_constant() const { return degenerate ? std::numeric_limits<double>::quiet_NaN() : log_rhs - log_lhs; }
  double constant() const { return std::exp(log_constant()); }
};

struct CarlemanReport {
  std::vector<CarlemanSample> samples;
  std::size_t volume_nodes = 0, boundary1_nodes = 0, boundary2_nodes = 0;

  /// Largest finite log-constant over the family (NaN if every sample is degenerate).
  double max_log_constant() const {
    double m = std::numeric_limits<double>::quiet_NaN();
    for (const auto& s : samples)
      if (!s.degenerate && !(s.log_constant() <= m)) m = s.log_constant();
    return m;
  }
};

namespace detail {

/// Σ exp(terms) kept in log space.
class LogSum {
 public:
  void add(double log_term) {
    if (log_term == -std::numeric_limits<double>::infinity()) return;
    if (log_term > max_) {
      sum_ = sum_ * std::exp(max_ - log_term) + 1.0;
      max_ = log_term;
    } else {
      sum_ += std::exp(log_term - max_);
    }
  }
  void add_scaled(double weight, double log_w) {
    if (weight > 0.0) add(std::log(weight) + log_w);
  }
  double value() const { return sum_ > 0.0 ? max_ + std::log(sum_) : -std::numeric_limits<double>::infinity(); }

 private:
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
};

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

enum class NodeRole : std::uint8_t { None, Volume, Face1, Band2, VolumeBand2 };

}  // namespace detail

/// Measures the Carleman constant with weights (ψ, φ) on G or (θ, ξ) on D, on the
/// principal part of `op`, one value per test function.
///
/// Integrals use node-masked midpoint quadrature on a graded box around the
/// domain. The x1 = 0 face is a node layer. The curved face uses a band
/// |level − 3/4| ≤ w with coarea weight |∇_{x,t} level|/(2w).
inline CarlemanReport measure_carleman_constant(const EllipticOperator& op, const CarlemanParams& c,
                                                const std::vector<TrigPolynomial>& family, CarlemanEstimate estimate,
                                                const CarlemanResolution& res = {}) {
  c.validate();
  const std::size_t nd = op.ndim();
  if (nd < 1 || nd > kMaxDim) throw InvalidGeometry("carleman: unsupported dimension");
  if (res.space < 5 || res.time < 5) throw UnderResolved("carleman: at least 5 nodes per axis");
  const bool psi = estimate == CarlemanEstimate::PsiPhi;
  const double top = c.levels[2];
  const double reach = top - 0.25;  // x1 + |x̄|² + (time part) < reach
  const double half_t = psi ? c.epsilon * std::sqrt(reach) : 0.5;
  const double t_lo = psi ? c.epsilon - half_t : 0.0, t_hi = psi ? c.epsilon + half_t : 1.0;
  const double xr = std::sqrt(reach);

  // Graded tensor grid: nodes carry dual-cell widths, so the rule stays a
  // node-masked midpoint rule in the mapped variable.
  struct Axis {
    std::vector<double> x, w;
    double max_width = 0.0;
  };
  auto make_axis = [](std::size_t n, double centre, double half, double p, bool one_sided) {
    Axis ax;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = one_sided ? static_cast<double>(k) / static_cast<double>(n - 1)
                                 : -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(n - 1);
      ax.x.push_back(centre + half * std::copysign(std::pow(std::abs(s), p), s));
    }
    ax.w.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double left = k > 0 ? ax.x[k] - ax.x[k - 1] : 0.0, right = k + 1 < n ? ax.x[k + 1] - ax.x[k] : 0.0;
      ax.w[k] = 0.5 * (left + right);
      ax.max_width = std::max({ax.max_width, left, right});
    }
    return ax;
  };
  const double grow = 1.15;  // room for the outer half of the curved-face band
  std::vector<Axis> axes;
  axes.push_back(make_axis(res.space, 0.0, reach * grow, res.normal_grading, true));
  for (std::size_t k = 1; k < nd; ++k) axes.push_back(make_axis(res.space | 1, 0.0, xr * grow, res.grading, false));
  const double t_c = 0.5 * (t_lo + t_hi);
  axes.push_back(make_axis(res.time | 1, t_c, half_t * grow, res.grading, false));

  // band half-width: the coarsest cell times the largest slope of the level along that axis
  double w = axes[0].max_width;
  for (std::size_t k = 1; k < nd; ++k) w = std::max(w, axes[k].max_width * 2.0 * xr * grow);
  w = std::max(w, axes[nd].max_width * (psi ? 2.0 * half_t * grow / (c.epsilon * c.epsilon) : 2.0 * half_t * grow));

  const double nu = c.nu, eps = c.epsilon, lam = c.lambda;
  const double log_b1 = psi ? std::log(nu * nu * nu / (eps * eps * eps)) + 2.0 * std::pow(4.0, nu) / eps
                            : std::log(lam * lam * lam * nu * nu * nu) + 2.0 * lam * std::pow(4.0, nu);
  const double log_b2 = psi ? std::log(nu * nu * nu / (eps * eps * eps)) + 2.0 * nu * std::log(4.0 / 3.0) +
                                  (2.0 / eps) * std::pow(4.0 / 3.0, nu)
                            : std::log(lam * lam * lam * nu * nu * nu) + 2.0 * nu * std::log(4.0 / 3.0) +
                                  2.0 * lam * std::pow(4.0 / 3.0, nu);
  const double grad_coef = psi ? nu / eps : lam * nu;
  const double value_coef = psi ? std::pow(nu, 4) / (eps * eps * eps) : lam * lam * lam * std::pow(nu, 4);

  struct Node {
    SpaceTimePoint p;
    double level = 0.0, log_w2 = 0.0, cell = 0.0, face_cell = 0.0, band_weight = 0.0;
    bool volume = false, face1 = false;
    std::array<std::array<double, kMaxDim>, kMaxDim> a{};
  };
  std::vector<Node> nodes;
  CarlemanReport report;
  const DomainLabel vol = psi ? DomainLabel::G34 : DomainLabel::D34;
  const DomainLabel f1 = psi ? DomainLabel::Boundary1G : DomainLabel::Boundary1D;
  const DomainLabel f2 = psi ? DomainLabel::Boundary2G : DomainLabel::Boundary2D;
  const WeightKind wk = psi ? WeightKind::PsiPhi : WeightKind::ThetaXi;
  std::size_t total = 1;
  for (const auto& ax : axes) total *= ax.x.size();
  std::array<std::size_t, kMaxDim + 1> m{};
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rest = flat;
    for (std::size_t k = axes.size(); k-- > 0;) {
      m[k] = rest % axes[k].x.size();
      rest /= axes[k].x.size();
    }
    Node nd_;
    nd_.p.ndim = nd;
    for (std::size_t k = 0; k < nd; ++k) nd_.p.x[k] = axes[k].x[m[k]];
    nd_.p.t = axes[nd].x[m[nd]];
    nd_.volume = domain_membership(c, nd_.p, vol);
    nd_.face1 = m[0] == 0 && domain_membership(c, nd_.p, f1, 0.0);
    const bool band = domain_membership(c, nd_.p, f2, w);
    if (!nd_.volume && !nd_.face1 && !band) continue;
    nd_.face_cell = 1.0;
    for (std::size_t k = 1; k <= nd; ++k) nd_.face_cell *= axes[k].w[m[k]];
    nd_.cell = nd_.face_cell * axes[0].w[m[0]];
    auto wv = weight_value(c, nd_.p, wk);
    nd_.level = wv.level;
    nd_.log_w2 = 2.0 * wv.log_weight;
    if (band) {
      double g2 = 0.0;
      for (std::size_t k = 0; k < nd; ++k) {
        const double d = k == 0 ? 1.0 : 2.0 * nd_.p.x[k];
        g2 += d * d;
      }
      const double dt = psi ? 2.0 * (nd_.p.t - eps) / (eps * eps) : 2.0 * (nd_.p.t - 0.5);
      g2 += dt * dt;
      nd_.band_weight = nd_.cell * std::sqrt(g2) / (2.0 * w);
      ++report.boundary2_nodes;
    }
    for (std::size_t a = 0; a < nd; ++a)
      for (std::size_t b = 0; b < nd; ++b) nd_.a[a][b] = op.a(a, b, std::span<const double>(nd_.p.x.data(), nd));
    report.volume_nodes += nd_.volume;
    report.boundary1_nodes += nd_.face1;
    nodes.push_back(nd_);
  }
  if (report.volume_nodes < 100)
    throw UnderResolved("carleman: only " + std::to_string(report.volume_nodes) + " nodes inside the domain");

  report.samples.resize(family.size());
  parallel_for(family.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t f = b; f < e; ++f) {
      detail::LogSum s1, s2, interior, rhs;
      for (const auto& nd_ : nodes) {
        Jet j = family[f](nd_.p);
        double g2 = 0.0, l0u = 0.0;
        for (std::size_t a = 0; a < nd; ++a) {
          g2 += j.grad[a] * j.grad[a];
          for (std::size_t bb = 0; bb < nd; ++bb) l0u += nd_.a[a][bb] * j.hess[a][bb];
        }
        const double full = j.u * j.u + g2 + j.ut * j.ut;
        if (nd_.face1) s1.add_scaled(nd_.face_cell * full, 0.0);
        if (nd_.band_weight > 0.0) s2.add_scaled(nd_.band_weight * full, 0.0);
        if (nd_.volume) {
          const double r = j.ut - l0u;
          interior.add_scaled(nd_.cell * r * r, nd_.log_w2);
          const double val = grad_coef * g2 + value_coef * std::pow(nd_.level, -2.0 * nu) * j.u * j.u;
          rhs.add_scaled(nd_.cell * val, nd_.log_w2);
        }
      }
      CarlemanSample smp;
      smp.log_lhs = detail::log_add(detail::log_add(log_b1 + s1.value(), log_b2 + s2.value()), interior.value());
      smp.log_rhs = rhs.value();
      smp.degenerate = !std::isfinite(smp.log_lhs) || !std::isfinite(smp.log_rhs);
      report.samples[f] = smp;
    }
  }, 1);
  return report;
}

}  // namespace qtat
