#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "qtat/grid.hpp"

namespace qtat {

enum class Surface : std::uint32_t {
  Lateral = 0,     // ∂Ω × (0,T), full-boundary measurements
  Hyperplane = 1,  // the patch of {x1 = 0} bounding Φ
};

/// Data on one planar piece of the measurement surface. The surface grid has
/// ndim−1 axes (none for a 1-D problem); `axis` is the normal direction.
struct TraceFace {
  std::uint32_t axis = 0;
  std::uint32_t side = 0;  // 0: face at the low end of `axis`, 1: high end
  double position = 0.0;
  double normal_spacing = 0.0;
  SpaceTimeField dirichlet;
  std::optional<SpaceTimeField> neumann;  // derivative along +axis

  /// Space coordinates of surface node `i`, with the normal coordinate filled in.
  Point point(std::size_t i, std::size_t ndim) const {
    Point tangential = dirichlet.grid().point(i);
    Point p{};
    for (std::size_t k = 0, q = 0; k < ndim; ++k) p[k] = k == axis ? position : tangential[q++];
    return p;
  }
};

struct BoundaryTrace {
  Surface surface = Surface::Hyperplane;
  std::size_t ndim = 1;
  std::vector<TraceFace> faces;
  std::vector<double> tail;  // per-time truncation bound carried from the transform

  const std::vector<double>& times() const { return faces.at(0).dirichlet.times(); }
  bool has_neumann() const {
    return !faces.empty() && std::all_of(faces.begin(), faces.end(), [](const TraceFace& f) { return f.neumann.has_value(); });
  }

  double max_abs() const {
    double m = 0.0;
    for (auto& f : faces) m = std::max(m, f.dirichlet.max_abs());
    return m;
  }
};

namespace detail {
inline void axpy(SpaceTimeField& y, double a, const SpaceTimeField& x) {
  if (y.data().size() != x.data().size() || y.times() != x.times())
    throw InvalidData("trace arithmetic on mismatched sampling");
  for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] += a * x.data()[i];
}
}  // namespace detail

/// a·x + y face by face; both traces must share surfaces and time sampling.
inline BoundaryTrace trace_axpy(double a, const BoundaryTrace& x, const BoundaryTrace& y) {
  if (x.faces.size() != y.faces.size()) throw InvalidData("trace arithmetic on different surfaces");
  BoundaryTrace out = y;
  for (std::size_t k = 0; k < out.faces.size(); ++k) {
    detail::axpy(out.faces[k].dirichlet, a, x.faces[k].dirichlet);
    if (out.faces[k].neumann && x.faces[k].neumann) detail::axpy(*out.faces[k].neumann, a, *x.faces[k].neumann);
  }
  return out;
}

inline BoundaryTrace trace_scale(double a, const BoundaryTrace& x) {
  BoundaryTrace out = x;
  for (auto& f : out.faces) {
    for (auto& v : f.dirichlet.data()) v *= a;
    if (f.neumann)
      for (auto& v : f.neumann->data()) v *= a;
  }
  return out;
}

}  // namespace qtat
