#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qtat/error.hpp"

namespace qtat {

inline constexpr std::size_t kMaxDim = 3;

/// A point in up to kMaxDim dimensions; only the first ndim entries are meaningful.
using Point = std::array<double, kMaxDim>;

/// Axis-aligned box [lo, hi] in ndim dimensions.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t ndim() const { return lo.size(); }

  bool contains(std::span<const double> x, double tol = 0.0) const {
    for (std::size_t k = 0; k < lo.size(); ++k)
      if (x[k] < lo[k] - tol || x[k] > hi[k] + tol) return false;
    return true;
  }

  bool contains_strictly(std::span<const double> x) const {
    for (std::size_t k = 0; k < lo.size(); ++k)
      if (!(x[k] > lo[k] && x[k] < hi[k])) return false;
    return true;
  }

  double volume() const {
    double v = 1.0;
    for (std::size_t k = 0; k < lo.size(); ++k) v *= hi[k] - lo[k];
    return v;
  }

  bool operator==(const Box&) const = default;
};

/// Uniform tensor-product grid. Nodes are numbered row-major with the last
/// axis fastest. A zero-dimensional grid has exactly one node and represents
/// a point (the measurement surface of a 1-D problem).
class Grid {
 public:
  Grid() = default;

  Grid(std::vector<double> origin, std::vector<double> spacing, std::vector<std::size_t> counts)
      : origin_(std::move(origin)), spacing_(std::move(spacing)), counts_(std::move(counts)) {
    if (origin_.size() != spacing_.size() || origin_.size() != counts_.size())
      throw InvalidGeometry("grid: origin, spacing and counts must have the same length");
    if (counts_.size() > kMaxDim) throw InvalidGeometry("grid: at most 3 dimensions supported");
    for (std::size_t k = 0; k < counts_.size(); ++k) {
      if (!(spacing_[k] > 0.0) || !std::isfinite(spacing_[k]))
        throw InvalidGeometry("grid: spacing must be strictly positive on every axis");
      if (counts_[k] < 1) throw InvalidGeometry("grid: empty axis");
    }
    strides_.assign(counts_.size(), 1);
    for (std::size_t k = counts_.size(); k-- > 1;) strides_[k - 1] = strides_[k] * counts_[k];
    size_ = std::accumulate(counts_.begin(), counts_.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t ndim() const { return counts_.size(); }
  std::size_t size() const { return size_; }
  std::size_t count(std::size_t axis) const { return counts_[axis]; }
  double spacing(std::size_t axis) const { return spacing_[axis]; }
  double origin(std::size_t axis) const { return origin_[axis]; }
  std::size_t stride(std::size_t axis) const { return strides_[axis]; }
  const std::vector<std::size_t>& counts() const { return counts_; }
  const std::vector<double>& spacings() const { return spacing_; }
  const std::vector<double>& origins() const { return origin_; }

  double coord(std::size_t axis, std::size_t i) const {
    return origin_[axis] + static_cast<double>(i) * spacing_[axis];
  }
  double upper(std::size_t axis) const { return coord(axis, counts_[axis] - 1); }

  double h_min() const {
    double h = spacing_.empty() ? 1.0 : spacing_[0];
    for (double s : spacing_) h = std::min(h, s);
    return h;
  }

  /// Product of spacings; 1 for a zero-dimensional grid.
  double cell_volume() const {
    double v = 1.0;
    for (double s : spacing_) v *= s;
    return v;
  }

  std::size_t index(std::span<const std::size_t> multi) const {
    std::size_t flat = 0;
    for (std::size_t k = 0; k < counts_.size(); ++k) flat += multi[k] * strides_[k];
    return flat;
  }

  std::size_t axis_index(std::size_t flat, std::size_t axis) const {
    return (flat / strides_[axis]) % counts_[axis];
  }

  void unravel(std::size_t flat, std::span<std::size_t> multi) const {
    for (std::size_t k = 0; k < counts_.size(); ++k) {
      multi[k] = flat / strides_[k];
      flat -= multi[k] * strides_[k];
    }
  }

  Point point(std::size_t flat) const {
    Point p{};
    for (std::size_t k = 0; k < counts_.size(); ++k) p[k] = coord(k, axis_index(flat, k));
    return p;
  }

  /// True if the node lies on the outermost layer along any axis.
  bool on_edge(std::size_t flat) const {
    for (std::size_t k = 0; k < counts_.size(); ++k) {
      std::size_t i = axis_index(flat, k);
      if (i == 0 || i + 1 == counts_[k]) return true;
    }
    return false;
  }

  Box bounds() const {
    Box b;
    for (std::size_t k = 0; k < counts_.size(); ++k) {
      b.lo.push_back(origin_[k]);
      b.hi.push_back(upper(k));
    }
    return b;
  }

  /// Index of the node whose coordinate along `axis` equals x, or npos when no
  /// node lies within tol·h of x.
  std::size_t node_at(std::size_t axis, double x, double tol = 1e-9) const {
    double s = (x - origin_[axis]) / spacing_[axis];
    double r = std::round(s);
    if (std::abs(s - r) > tol || r < 0 || r >= static_cast<double>(counts_[axis])) return npos;
    return static_cast<std::size_t>(r);
  }

  bool operator==(const Grid& o) const {
    return counts_ == o.counts_ && spacing_ == o.spacing_ && origin_ == o.origin_;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<double> origin_;
  std::vector<double> spacing_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 1;
};

/// Uniform grid covering `bounds` exactly (endpoints are nodes).
inline Grid build_grid(const Box& bounds, std::span<const std::size_t> resolution) {
  if (bounds.lo.size() != bounds.hi.size() || bounds.lo.size() != resolution.size())
    throw InvalidGeometry("build_grid: box and resolution dimensions differ");
  std::vector<double> spacing;
  std::vector<std::size_t> counts;
  for (std::size_t k = 0; k < resolution.size(); ++k) {
    if (!(bounds.hi[k] > bounds.lo[k])) throw InvalidGeometry("build_grid: degenerate box");
    if (resolution[k] < 3) throw InvalidGeometry("build_grid: need at least 3 nodes per axis");
    spacing.push_back((bounds.hi[k] - bounds.lo[k]) / static_cast<double>(resolution[k] - 1));
    counts.push_back(resolution[k]);
  }
  return Grid(bounds.lo, std::move(spacing), std::move(counts));
}

inline Grid build_grid(const Box& bounds, std::initializer_list<std::size_t> resolution) {
  std::vector<std::size_t> r(resolution);
  return build_grid(bounds, std::span<const std::size_t>(r));
}

/// Real scalar per grid node.
struct Field {
  Grid grid;
  std::vector<double> values;

  Field() = default;
  explicit Field(Grid g, double fill = 0.0) : grid(std::move(g)), values(grid.size(), fill) {}
  Field(Grid g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid.size()) throw InvalidData("field: value count does not match grid");
  }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }

  double max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

/// Samples a callable on every node of `grid`.
template <class Fn>
Field sample(const Grid& grid, Fn&& fn) {
  Field out(grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Point p = grid.point(i);
    out[i] = fn(std::span<const double>(p.data(), grid.ndim()));
  }
  return out;
}

/// Sequence of frames on a common grid at strictly increasing times.
/// Frames are stored contiguously, frame n occupying [n·size, (n+1)·size).
class SpaceTimeField {
 public:
  SpaceTimeField() = default;

  SpaceTimeField(Grid grid, std::vector<double> times)
      : grid_(std::move(grid)), times_(std::move(times)), data_(grid_.size() * times_.size(), 0.0) {
    validate();
  }

  SpaceTimeField(Grid grid, std::vector<double> times, std::vector<double> data)
      : grid_(std::move(grid)), times_(std::move(times)), data_(std::move(data)) {
    validate();
    if (data_.size() != grid_.size() * times_.size())
      throw InvalidData("space-time field: payload size mismatch");
  }

  /// Uniform time axis t0, t0+dt, ...
  static SpaceTimeField uniform(Grid grid, double t0, double dt, std::size_t frames) {
    if (!(dt > 0.0)) throw InvalidData("space-time field: dt must be positive");
    std::vector<double> t(frames);
    for (std::size_t n = 0; n < frames; ++n) t[n] = t0 + static_cast<double>(n) * dt;
    return SpaceTimeField(std::move(grid), std::move(t));
  }

  const Grid& grid() const { return grid_; }
  const std::vector<double>& times() const { return times_; }
  std::size_t frames() const { return times_.size(); }
  std::size_t nodes() const { return grid_.size(); }
  double t0() const { return times_.front(); }

  std::span<double> frame(std::size_t n) { return {data_.data() + n * grid_.size(), grid_.size()}; }
  std::span<const double> frame(std::size_t n) const {
    return {data_.data() + n * grid_.size(), grid_.size()};
  }
  Field frame_field(std::size_t n) const {
    auto f = frame(n);
    return Field(grid_, std::vector<double>(f.begin(), f.end()));
  }

  double& at(std::size_t n, std::size_t node) { return data_[n * grid_.size() + node]; }
  double at(std::size_t n, std::size_t node) const { return data_[n * grid_.size() + node]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool is_uniform(double rel_tol = 1e-9) const {
    if (times_.size() < 2) return true;
    double dt = (times_.back() - times_.front()) / static_cast<double>(times_.size() - 1);
    for (std::size_t n = 1; n < times_.size(); ++n)
      if (std::abs(times_[n] - times_[n - 1] - dt) > rel_tol * dt) return false;
    return true;
  }

  /// Step of a uniform series; throws for graded time axes.
  double dt() const {
    if (times_.size() < 2 || !is_uniform())
      throw InvalidData("space-time field: time axis is not uniform");
    return (times_.back() - times_.front()) / static_cast<double>(times_.size() - 1);
  }

  /// Time series of one node.
  std::vector<double> series(std::size_t node) const {
    std::vector<double> s(times_.size());
    for (std::size_t n = 0; n < times_.size(); ++n) s[n] = at(n, node);
    return s;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  void validate() const {
    if (times_.empty()) throw InvalidData("space-time field: no frames");
    for (std::size_t n = 1; n < times_.size(); ++n)
      if (!(times_[n] > times_[n - 1]))
        throw InvalidData("space-time field: times must be strictly increasing");
  }

  Grid grid_;
  std::vector<double> times_;
  std::vector<double> data_;
};

enum class MeasurementKind { FullBoundary, Hyperplane };

/// Ω as a predicate plus a bounding box, and the measurement setup.
struct GeometrySpec {
  std::function<bool(std::span<const double>)> omega;
  Box omega_box;
  MeasurementKind kind = MeasurementKind::Hyperplane;
  Box phi_box;  // spatial part of Φ: x1 ∈ (0,1), x̄ ∈ (−1,1)^{n−1}
  double hyperplane = 0.0;
  bool omega_is_box = false;

  std::size_t ndim() const { return omega_box.ndim(); }
  bool inside(std::span<const double> x) const { return omega(x); }

  static Box default_phi_box(std::size_t ndim) {
    Box b;
    b.lo.push_back(0.0);
    b.hi.push_back(1.0);
    for (std::size_t k = 1; k < ndim; ++k) {
      b.lo.push_back(-1.0);
      b.hi.push_back(1.0);
    }
    return b;
  }

  /// Open box Ω = (lo, hi).
  static GeometrySpec box(Box omega, MeasurementKind kind) {
    GeometrySpec g;
    g.omega_box = omega;
    g.omega = [b = omega](std::span<const double> x) { return b.contains_strictly(x); };
    g.kind = kind;
    g.phi_box = default_phi_box(omega.ndim());
    g.omega_is_box = true;
    return g;
  }

  static GeometrySpec ball(std::vector<double> center, double radius, MeasurementKind kind) {
    GeometrySpec g;
    for (double c : center) {
      g.omega_box.lo.push_back(c - radius);
      g.omega_box.hi.push_back(c + radius);
    }
    g.omega = [center, radius](std::span<const double> x) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < center.size(); ++k) r2 += (x[k] - center[k]) * (x[k] - center[k]);
      return r2 < radius * radius;
    };
    g.kind = kind;
    g.phi_box = default_phi_box(center.size());
    return g;
  }
};

/// x1 + |x̄|², the level function whose sublevel set 1/4 must contain Ω after normalization.
inline double paraboloid_level(std::span<const double> x) {
  double v = x[0];
  for (std::size_t k = 1; k < x.size(); ++k) v += x[k] * x[k];
  return v;
}

/// Record of the change of variables x' = √c·x, t' = d·t.
struct ScaleRecord {
  double c = 1.0;
  double d = 1.0;

  bool identity() const { return c == 1.0 && d == 1.0; }

  /// Field in normalized coordinates → original coordinates. Node values are untouched.
  Field to_original(const Field& f) const { return rescale(f, 1.0 / std::sqrt(c)); }
  Field to_normalized(const Field& f) const { return rescale(f, std::sqrt(c)); }

 private:
  static Field rescale(const Field& f, double s) {
    if (s == 1.0) return f;
    std::vector<double> o = f.grid.origins(), h = f.grid.spacings();
    for (auto& v : o) v *= s;
    for (auto& v : h) v *= s;
    return Field(Grid(o, h, f.grid.counts()), f.values);
  }
};

/// Node-wise indicator of Ω. `boundary` marks inside nodes with an axis
/// neighbour outside Ω (or on the grid edge).
struct DomainMask {
  Grid grid;
  std::vector<std::uint8_t> inside;
  std::vector<std::uint8_t> boundary;

  std::size_t count_inside() const {
    return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), std::uint8_t{1}));
  }
};

inline DomainMask domain_mask(const Grid& grid, const GeometrySpec& geometry) {
  if (geometry.ndim() != grid.ndim()) throw InvalidGeometry("domain_mask: dimension mismatch");
  DomainMask m{grid, std::vector<std::uint8_t>(grid.size(), 0), std::vector<std::uint8_t>(grid.size(), 0)};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Point p = grid.point(i);
    m.inside[i] = geometry.inside(std::span<const double>(p.data(), grid.ndim())) ? 1 : 0;
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!m.inside[i]) continue;
    for (std::size_t k = 0; k < grid.ndim() && !m.boundary[i]; ++k) {
      std::size_t a = grid.axis_index(i, k);
      if (a == 0 || a + 1 == grid.count(k) || !m.inside[i - grid.stride(k)] ||
          !m.inside[i + grid.stride(k)])
        m.boundary[i] = 1;
    }
  }
  return m;
}

}  // namespace qtat
