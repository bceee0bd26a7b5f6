#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "qtat/error.hpp"
#include "qtat/grid.hpp"
#include "qtat/trace.hpp"

namespace qtat {

// On-disk layout (native little-endian):
//   "QTAT" u32 version
//   v1 field:      u32 ndim, u64 counts[ndim], f64 spacing[ndim], f64 origin[ndim], f64 payload
//   v2 space-time: v1 grid header, u64 nframes, f64 times[nframes], f64 payload (frame-major)
//   v3 trace:      u32 surface, u32 ndim, u32 nfaces, u32 has_neumann, u32 has_tail, u64 ntimes,
//                  f64 times[ntimes], then per face: u32 axis, u32 side, f64 position,
//                  f64 normal_spacing, grid header, dirichlet payload[, neumann payload];
//                  then f64 tail[ntimes] when has_tail
inline constexpr std::uint32_t kFieldVersion = 1;
inline constexpr std::uint32_t kSpaceTimeVersion = 2;
inline constexpr std::uint32_t kTraceVersion = 3;

namespace io {

class Writer {
 public:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void f64s(const std::vector<double>& v) { raw(v.data(), v.size() * 8); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) throw InvalidData("truncated file");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::vector<double> f64s(std::size_t n) {
    if (n > (buf_.size() - pos_) / 8) throw InvalidData("truncated file");
    std::vector<double> v(n);
    raw(v.data(), n * 8);
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

inline void grid_header(Writer& w, const Grid& g) {
  w.u32(static_cast<std::uint32_t>(g.ndim()));
  for (auto c : g.counts()) w.u64(c);
  for (auto h : g.spacings()) w.f64(h);
  for (auto o : g.origins()) w.f64(o);
}

inline Grid grid_header(Reader& r) {
  std::uint32_t nd = r.u32();
  if (nd > kMaxDim) throw InvalidData("unsupported dimension in file");
  std::vector<std::size_t> counts(nd);
  std::vector<double> h(nd), o(nd);
  for (auto& c : counts) c = r.u64();
  for (auto& v : h) v = r.f64();
  for (auto& v : o) v = r.f64();
  return Grid(o, h, counts);
}

inline void magic(Writer& w, std::uint32_t version) {
  w.raw("QTAT", 4);
  w.u32(version);
}

inline std::uint32_t magic(Reader& r) {
  char m[4];
  r.raw(m, 4);
  if (std::memcmp(m, "QTAT", 4) != 0) throw InvalidData("not a QTAT file (bad magic)");
  return r.u32();
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidData("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidData("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidData("write failed for " + path);
}

}  // namespace io

inline std::string encode(const Field& f) {
  io::Writer w;
  io::magic(w, kFieldVersion);
  io::grid_header(w, f.grid);
  w.f64s(f.values);
  return w.bytes();
}

inline std::string encode(const SpaceTimeField& f) {
  io::Writer w;
  io::magic(w, kSpaceTimeVersion);
  io::grid_header(w, f.grid());
  w.u64(f.frames());
  w.f64s(f.times());
  w.f64s(f.data());
  return w.bytes();
}

inline std::string encode(const BoundaryTrace& t) {
  io::Writer w;
  io::magic(w, kTraceVersion);
  if (t.faces.empty()) throw InvalidData("trace has no faces");
  w.u32(static_cast<std::uint32_t>(t.surface));
  w.u32(static_cast<std::uint32_t>(t.ndim));
  w.u32(static_cast<std::uint32_t>(t.faces.size()));
  w.u32(t.has_neumann() ? 1 : 0);
  w.u32(t.tail.empty() ? 0 : 1);
  w.u64(t.times().size());
  w.f64s(t.times());
  for (auto& face : t.faces) {
    if (face.dirichlet.times() != t.times()) throw InvalidData("trace faces disagree on time sampling");
    w.u32(face.axis);
    w.u32(face.side);
    w.f64(face.position);
    w.f64(face.normal_spacing);
    io::grid_header(w, face.dirichlet.grid());
    w.f64s(face.dirichlet.data());
    if (t.has_neumann()) w.f64s(face.neumann->data());
  }
  if (!t.tail.empty()) w.f64s(t.tail);
  return w.bytes();
}

using AnyData = std::variant<Field, SpaceTimeField, BoundaryTrace>;

inline AnyData decode(const std::string& bytes) {
  io::Reader r(bytes);
  std::uint32_t version = io::magic(r);
  AnyData out;
  if (version == kFieldVersion) {
    Grid g = io::grid_header(r);
    out = Field(g, r.f64s(g.size()));
  } else if (version == kSpaceTimeVersion) {
    Grid g = io::grid_header(r);
    std::size_t nf = r.u64();
    auto times = r.f64s(nf);
    out = SpaceTimeField(g, times, r.f64s(g.size() * nf));
  } else if (version == kTraceVersion) {
    BoundaryTrace t;
    std::uint32_t surface = r.u32();
    if (surface > 1) throw InvalidData("unknown surface kind in trace file");
    t.surface = static_cast<Surface>(surface);
    t.ndim = r.u32();
    std::uint32_t nfaces = r.u32();
    bool neumann = r.u32() != 0;
    bool tail = r.u32() != 0;
    std::size_t nt = r.u64();
    auto times = r.f64s(nt);
    for (std::uint32_t k = 0; k < nfaces; ++k) {
      TraceFace face;
      face.axis = r.u32();
      face.side = r.u32();
      face.position = r.f64();
      face.normal_spacing = r.f64();
      Grid g = io::grid_header(r);
      face.dirichlet = SpaceTimeField(g, times, r.f64s(g.size() * nt));
      if (neumann) face.neumann = SpaceTimeField(g, times, r.f64s(g.size() * nt));
      t.faces.push_back(std::move(face));
    }
    if (tail) t.tail = r.f64s(nt);
    out = std::move(t);
  } else {
    throw InvalidData("unsupported QTAT format version " + std::to_string(version));
  }
  if (!r.done()) throw InvalidData("trailing bytes after payload");
  return out;
}

template <class T>
void write_file(const std::string& path, const T& value) {
  io::dump(path, encode(value));
}

inline AnyData read_any(const std::string& path) { return decode(io::slurp(path)); }

template <class T>
T read_file(const std::string& path) {
  AnyData any = read_any(path);
  if (auto* p = std::get_if<T>(&any)) return std::move(*p);
  throw InvalidData(path + ": file holds a different kind of data");
}

namespace detail {
inline void csv_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}
}  // namespace detail

/// One row per node: x1..xn,value.
inline std::string to_csv(const Field& f) {
  std::string out;
  for (std::size_t k = 0; k < f.grid.ndim(); ++k) out += "x" + std::to_string(k + 1) + ",";
  out += "value\n";
  for (std::size_t i = 0; i < f.size(); ++i) {
    Point p = f.grid.point(i);
    for (std::size_t k = 0; k < f.grid.ndim(); ++k) {
      detail::csv_number(out, p[k]);
      out += ',';
    }
    detail::csv_number(out, f[i]);
    out += '\n';
  }
  return out;
}

/// One row per (frame, node): x1..xn,t,value.
inline std::string to_csv(const SpaceTimeField& f) {
  std::string out;
  for (std::size_t k = 0; k < f.grid().ndim(); ++k) out += "x" + std::to_string(k + 1) + ",";
  out += "t,value\n";
  for (std::size_t n = 0; n < f.frames(); ++n)
    for (std::size_t i = 0; i < f.nodes(); ++i) {
      Point p = f.grid().point(i);
      for (std::size_t k = 0; k < f.grid().ndim(); ++k) {
        detail::csv_number(out, p[k]);
        out += ',';
      }
      detail::csv_number(out, f.times()[n]);
      out += ',';
      detail::csv_number(out, f.at(n, i));
      out += '\n';
    }
  return out;
}

/// One row per (face, frame, surface node): face,x1..xn,t,dirichlet[,neumann].
inline std::string to_csv(const BoundaryTrace& t) {
  std::string out = "face,";
  for (std::size_t k = 0; k < t.ndim; ++k) out += "x" + std::to_string(k + 1) + ",";
  out += t.has_neumann() ? "t,dirichlet,neumann\n" : "t,dirichlet\n";
  for (std::size_t fi = 0; fi < t.faces.size(); ++fi) {
    const auto& face = t.faces[fi];
    for (std::size_t n = 0; n < face.dirichlet.frames(); ++n)
      for (std::size_t i = 0; i < face.dirichlet.nodes(); ++i) {
        out += std::to_string(fi) + ",";
        Point p = face.point(i, t.ndim);
        for (std::size_t k = 0; k < t.ndim; ++k) {
          detail::csv_number(out, p[k]);
          out += ',';
        }
        detail::csv_number(out, face.dirichlet.times()[n]);
        out += ',';
        detail::csv_number(out, face.dirichlet.at(n, i));
        if (t.has_neumann()) {
          out += ',';
          detail::csv_number(out, face.neumann->at(n, i));
        }
        out += '\n';
      }
  }
  return out;
}

}  // namespace qtat
