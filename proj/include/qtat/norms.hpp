#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "qtat/grid.hpp"
#include "qtat/trace.hpp"

// Discrete norms used across the pipeline. Space integrals are node sums
// times the cell volume; time integrals use trapezoid weights on the (possibly
// graded) time axis; derivatives are forward differences over one cell.

namespace qtat::norms {

/// Trapezoid weights of a strictly increasing time axis.
inline std::vector<double> time_weights(const std::vector<double>& t) {
  std::vector<double> w(t.size(), 0.0);
  for (std::size_t n = 1; n < t.size(); ++n) {
    double d = t[n] - t[n - 1];
    w[n - 1] += 0.5 * d;
    w[n] += 0.5 * d;
  }
  if (t.size() == 1) w[0] = 1.0;
  return w;
}

inline double l2(const Field& f) {
  double s = 0.0;
  for (double v : f.values) s += v * v;
  return std::sqrt(s * f.grid.cell_volume());
}

/// L2 norm over the nodes where `keep` is set.
inline double l2(const Field& f, const std::vector<std::uint8_t>& keep) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (keep[i]) s += f[i] * f[i];
  return std::sqrt(s * f.grid.cell_volume());
}

inline double l2(const SpaceTimeField& u) {
  auto w = time_weights(u.times());
  double s = 0.0;
  for (std::size_t n = 0; n < u.frames(); ++n) {
    double fs = 0.0;
    for (double v : u.frame(n)) fs += v * v;
    s += w[n] * fs;
  }
  return std::sqrt(s * u.grid().cell_volume());
}

/// H¹ over surface × time: value, time difference and tangential differences.
inline double h1(const SpaceTimeField& u) {
  const Grid& g = u.grid();
  const auto& t = u.times();
  auto w = time_weights(t);
  double s = 0.0;
  for (std::size_t n = 0; n < u.frames(); ++n) {
    auto f = u.frame(n);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double acc = f[i] * f[i];
      for (std::size_t k = 0; k < g.ndim(); ++k)
        if (g.axis_index(i, k) + 1 < g.count(k)) {
          double d = (f[i + g.stride(k)] - f[i]) / g.spacing(k);
          acc += d * d;
        }
      s += w[n] * acc;
    }
  }
  for (std::size_t n = 1; n < u.frames(); ++n) {
    double dt = t[n] - t[n - 1];
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = (u.at(n, i) - u.at(n - 1, i)) / dt;
      s += dt * d * d;
    }
  }
  return std::sqrt(s * g.cell_volume());
}

inline double trace_l2(const BoundaryTrace& tr, bool neumann) {
  double s = 0.0;
  for (const auto& f : tr.faces) {
    const SpaceTimeField* d = neumann ? (f.neumann ? &*f.neumann : nullptr) : &f.dirichlet;
    if (!d) throw InvalidData("trace has no Neumann data");
    double v = l2(*d);
    s += v * v;
  }
  return std::sqrt(s);
}

inline double trace_h1(const BoundaryTrace& tr) {
  double s = 0.0;
  for (const auto& f : tr.faces) {
    double v = h1(f.dirichlet);
    s += v * v;
  }
  return std::sqrt(s);
}

/// Data size ‖β0‖_{H¹} + ‖β1‖_{L2} of a Cauchy trace.
inline double data_size(const BoundaryTrace& tr) { return trace_h1(tr) + trace_l2(tr, true); }

/// H^{1,0} over the space-time nodes selected by `keep(frame, node)`:
/// value plus spatial first differences, with trapezoid weights in time.
inline double h10(const SpaceTimeField& u, const std::function<bool(std::size_t, std::size_t)>& keep) {
  const Grid& g = u.grid();
  auto w = time_weights(u.times());
  double s = 0.0;
  for (std::size_t n = 0; n < u.frames(); ++n) {
    auto f = u.frame(n);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!keep(n, i)) continue;
      double acc = f[i] * f[i];
      for (std::size_t k = 0; k < g.ndim(); ++k)
        if (g.axis_index(i, k) + 1 < g.count(k)) {
          double d = (f[i + g.stride(k)] - f[i]) / g.spacing(k);
          acc += d * d;
        }
      s += w[n] * acc;
    }
  }
  return std::sqrt(s * g.cell_volume());
}

}  // namespace qtat::norms
