#pragma once

#include <cmath>
#include <tuple>

#include "qtat/elliptic_operator.hpp"
#include "qtat/grid.hpp"

namespace qtat {

/// Largest value of x1 + |x̄|² over a box.
inline double max_paraboloid_level(const Box& b) {
  double v = b.hi[0];
  for (std::size_t k = 1; k < b.ndim(); ++k) {
    double m = std::max(std::abs(b.lo[k]), std::abs(b.hi[k]));
    v += m * m;
  }
  return v;
}

/// C^∞ bump exp(1 − 1/(1 − r²)) on the box, r² summed over the axes' scaled offsets.
inline double box_bump(std::span<const double> x, const Box& b) {
  double r2 = 0.0;
  for (std::size_t k = 0; k < b.ndim(); ++k) {
    const double s = 2.0 * (x[k] - b.lo[k]) / (b.hi[k] - b.lo[k]) - 1.0;
    r2 += s * s;
  }
  return r2 < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - r2)) : 0.0;
}

/// Shrinks the geometry so Ω lies inside {x1 + |x̄|² < 1/4, x1 > 0}.
/// The spatial factor is s = √c with d = 1; an already admissible Ω is left alone.
inline std::tuple<GeometrySpec, EllipticOperator, ScaleRecord> normalize_geometry(const GeometrySpec& geometry,
                                                                                 const EllipticOperator& op) {
  const Box& b = geometry.omega_box;
  if (b.ndim() == 0 || b.ndim() != op.ndim()) throw InvalidGeometry("normalize_geometry: dimension mismatch");
  if (!(b.lo[0] > 0.0)) throw InvalidGeometry("normalize_geometry: Ω must lie in {x1 > 0}");
  const double level = max_paraboloid_level(b);
  if (level < 0.25) return {geometry, op, ScaleRecord{}};

  // s·X1 + s²·R² = 0.95/4 keeps a margin below the level 1/4
  double x1 = b.hi[0], r2 = level - b.hi[0], target = 0.95 / 4.0;
  double s = r2 > 0.0 ? (-x1 + std::sqrt(x1 * x1 + 4.0 * r2 * target)) / (2.0 * r2) : target / x1;
  ScaleRecord rec{s * s, 1.0};

  GeometrySpec out = geometry;
  for (auto& v : out.omega_box.lo) v *= s;
  for (auto& v : out.omega_box.hi) v *= s;
  out.hyperplane = geometry.hyperplane * s;
  out.omega = [inner = geometry.omega, s](std::span<const double> xp) {
    Point x{};
    for (std::size_t k = 0; k < xp.size(); ++k) x[k] = xp[k] / s;
    return inner(std::span<const double>(x.data(), xp.size()));
  };
  return {out, op.rescaled(rec.c, rec.d), rec};
}

}  // namespace qtat
