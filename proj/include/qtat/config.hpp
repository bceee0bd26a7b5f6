#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qtat/carleman.hpp"
#include "qtat/elliptic_operator.hpp"
#include "qtat/error.hpp"
#include "qtat/experiment.hpp"
#include "qtat/expression.hpp"
#include "qtat/field_io.hpp"
#include "qtat/geometry.hpp"
#include "qtat/qrm_solver.hpp"

// Structured text configuration.
//
//   # comment
//   [op]                 section header; keys below become "op.<key>"
//   ndim = 1
//   a11  = 1 + x1        expressions, numbers, comma lists, words
//
// Every key must be known to the loader that reads the document; leftovers
// are reported with their line number once loading finishes.

namespace qtat::config {

class Document {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  /// `section` names the implicit section for keys before the first header.
  static Document parse(std::string_view text, const std::string& section = "") {
    Document d;
    std::string current = section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string line(text.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
        current = trim(line.substr(1, line.size() - 2));
        if (current.empty()) throw ConfigError("empty section name", line_no);
        d.sections_[current] = line_no;
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key = value", line_no);
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("missing key", line_no);
      if (value.empty()) throw ConfigError("missing value for '" + key + "'", line_no);
      if (!current.empty()) key = current + "." + key;
      if (d.entries_.count(key)) throw ConfigError("duplicate key '" + key + "'", line_no);
      d.entries_[key] = Entry{value, line_no};
    }
    return d;
  }

  static Document load(const std::string& path, const std::string& section = "") {
    std::string text;
    try {
      text = io::slurp(path);
    } catch (const InvalidData&) {
      throw ConfigError("cannot read config file " + path);
    }
    return parse(text, section);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  bool has_section(const std::string& name) const {
    if (sections_.count(name)) return true;
    const std::string prefix = name + ".";
    for (const auto& [k, e] : entries_)
      if (k.rfind(prefix, 0) == 0) return true;
    return false;
  }
  std::size_t line(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }
  std::size_t section_line(const std::string& name) const {
    auto it = sections_.find(name);
    return it == sections_.end() ? 0 : it->second;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(key + ": " + what, line(key));
  }

  std::optional<std::string> text(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    return it->second.value;
  }
  std::string text(const std::string& key, const std::string& fallback) const { return text(key).value_or(fallback); }
  std::string required(const std::string& key) const {
    auto v = text(key);
    if (!v) throw ConfigError("missing required key '" + key + "'");
    return *v;
  }

  std::optional<double> number(const std::string& key) const {
    auto v = text(key);
    if (!v) return std::nullopt;
    return to_number(key, *v);
  }
  double number(const std::string& key, double fallback) const { return number(key).value_or(fallback); }

  std::optional<std::uint64_t> integer(const std::string& key) const {
    auto v = text(key);
    if (!v) return std::nullopt;
    return to_integer(key, *v);
  }
  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const { return integer(key).value_or(fallback); }

  std::optional<bool> boolean(const std::string& key) const {
    auto v = text(key);
    if (!v) return std::nullopt;
    if (*v == "true" || *v == "yes" || *v == "1") return true;
    if (*v == "false" || *v == "no" || *v == "0") return false;
    fail(key, "expected a boolean, got '" + *v + "'");
  }

  std::optional<std::vector<double>> numbers(const std::string& key) const {
    auto v = text(key);
    if (!v) return std::nullopt;
    std::vector<double> out;
    for (const auto& item : split(*v)) out.push_back(to_number(key, item));
    return out;
  }
  std::optional<std::vector<std::uint64_t>> integers(const std::string& key) const {
    auto v = text(key);
    if (!v) return std::nullopt;
    std::vector<std::uint64_t> out;
    for (const auto& item : split(*v)) out.push_back(to_integer(key, item));
    return out;
  }

  template <class T>
  std::optional<T> choice(const std::string& key, const std::map<std::string, T>& options) const {
    auto v = text(key);
    if (!v) return std::nullopt;
    auto it = options.find(*v);
    if (it == options.end()) {
      std::string allowed;
      for (const auto& [name, value] : options) allowed += (allowed.empty() ? "" : ", ") + name;
      fail(key, "unknown value '" + *v + "' (allowed: " + allowed + ")");
    }
    return it->second;
  }

  /// Reports the first key no loader consumed.
  void finish() const {
    const Entry* first = nullptr;
    std::string name;
    for (const auto& [k, e] : entries_)
      if (!used_.count(k) && (!first || e.line < first->line)) {
        first = &e;
        name = k;
      }
    if (first) throw ConfigError("unknown key '" + name + "'", first->line);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
      auto comma = s.find(',', pos);
      out.push_back(trim(s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    return out;
  }
  double to_number(const std::string& key, const std::string& s) const {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
      fail(key, "expected a number, got '" + s + "'");
    return v;
  }
  std::uint64_t to_integer(const std::string& key, const std::string& s) const {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail(key, "expected a nonnegative integer, got '" + s + "'");
    return v;
  }

  std::map<std::string, Entry> entries_;
  std::map<std::string, std::size_t> sections_;
  mutable std::set<std::string> used_;
};

namespace detail {

inline std::string key(const std::string& section, const std::string& name) {
  return section.empty() ? name : section + "." + name;
}

inline Box read_box(const Document& d, const std::string& lo_key, const std::string& hi_key, std::size_t ndim) {
  auto lo = d.numbers(lo_key), hi = d.numbers(hi_key);
  if (!lo) throw ConfigError("missing required key '" + lo_key + "'");
  if (!hi) throw ConfigError("missing required key '" + hi_key + "'");
  if (lo->size() != ndim) d.fail(lo_key, "expected " + std::to_string(ndim) + " values");
  if (hi->size() != ndim) d.fail(hi_key, "expected " + std::to_string(ndim) + " values");
  for (std::size_t k = 0; k < ndim; ++k)
    if (!((*lo)[k] < (*hi)[k])) d.fail(hi_key, "upper corner must exceed the lower corner on every axis");
  return Box{*lo, *hi};
}

inline std::size_t read_ndim(const Document& d, const std::string& k) {
  auto n = d.integer(k);
  if (!n) throw ConfigError("missing required key '" + k + "'");
  if (*n < 1 || *n > kMaxDim) d.fail(k, "dimension must be 1, 2 or 3");
  return static_cast<std::size_t>(*n);
}

inline Expression read_expression(const Document& d, const std::string& k) {
  const std::string src = d.required(k);
  try {
    return Expression::parse(src);
  } catch (const std::exception& e) {
    d.fail(k, e.what());
  }
}

}  // namespace detail

/// Operator keys: ndim, mu1, mu2, aIJ (expressions in x1..xn; aIJ alone sets the
/// symmetric pair), bJ, b0, clamp_lo/clamp_hi (coefficient clamping box).
inline EllipticOperator load_operator(const Document& d, const std::string& section = "op") {
  using detail::key;
  const std::size_t n = detail::read_ndim(d, key(section, "ndim"));
  const double mu1 = d.number(key(section, "mu1"), 1.0), mu2 = d.number(key(section, "mu2"), 1.0);
  EllipticOperator op;
  try {
    op = EllipticOperator(n, mu1, mu2);
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), d.line(key(section, "mu1")) ? d.line(key(section, "mu1")) : d.line(key(section, "mu2")));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::string k = key(section, "a" + std::to_string(i + 1) + std::to_string(j + 1));
      if (!d.has(k)) continue;
      const std::string mirror = key(section, "a" + std::to_string(j + 1) + std::to_string(i + 1));
      if (i != j && !d.has(mirror))
        op.set_a(i, j, detail::read_expression(d, k));
      else
        op.set_a_entry(i, j, detail::read_expression(d, k));
    }
  for (std::size_t j = 0; j < n; ++j) {
    const std::string k = key(section, "b" + std::to_string(j + 1));
    if (d.has(k)) op.set_b(j, detail::read_expression(d, k));
  }
  if (d.has(key(section, "b0"))) op.set_b0(detail::read_expression(d, key(section, "b0")));
  if (d.has(key(section, "clamp_lo")) || d.has(key(section, "clamp_hi")))
    op.set_coefficient_box(detail::read_box(d, key(section, "clamp_lo"), key(section, "clamp_hi"), n));
  return op;
}

/// Geometry keys: measurement (hyperplane | full), shape (box | ball), lo/hi or
/// center/radius, hyperplane (x1 position of the measurement plane).
inline GeometrySpec load_geometry(const Document& d, std::size_t ndim, const std::string& section = "geometry") {
  using detail::key;
  const auto kind = d.choice<MeasurementKind>(key(section, "measurement"),
                                              {{"hyperplane", MeasurementKind::Hyperplane},
                                               {"full", MeasurementKind::FullBoundary}})
                        .value_or(MeasurementKind::Hyperplane);
  const std::string shape = d.text(key(section, "shape"), "box");
  GeometrySpec geo;
  if (shape == "box") {
    geo = GeometrySpec::box(detail::read_box(d, key(section, "lo"), key(section, "hi"), ndim), kind);
  } else if (shape == "ball") {
    auto c = d.numbers(key(section, "center"));
    auto r = d.number(key(section, "radius"));
    if (!c) throw ConfigError("missing required key '" + key(section, "center") + "'");
    if (!r) throw ConfigError("missing required key '" + key(section, "radius") + "'");
    if (c->size() != ndim) d.fail(key(section, "center"), "expected " + std::to_string(ndim) + " values");
    if (!(*r > 0.0)) d.fail(key(section, "radius"), "radius must be positive");
    geo = GeometrySpec::ball(*c, *r, kind);
  } else {
    d.fail(key(section, "shape"), "unknown shape '" + shape + "' (allowed: box, ball)");
  }
  geo.hyperplane = d.number(key(section, "hyperplane"), 0.0);
  if (!(geo.omega_box.lo[0] > geo.hyperplane))
    throw ConfigError("Ω must lie strictly on the positive side of the measurement plane",
                      d.line(key(section, "lo")) ? d.line(key(section, "lo")) : d.line(key(section, "center")));
  return geo;
}

/// Initial condition: a C^∞ bump over `lo..hi` sampled on `domain_lo..domain_hi`
/// with `nodes` per axis, or a field file (`path`).
struct SourceSpec {
  std::string path;
  Box support, domain;
  std::vector<std::size_t> nodes;
  double amplitude = 1.0;

  Field build() const {
    if (!path.empty()) return read_file<Field>(path);
    return sample(build_grid(domain, nodes), [&](std::span<const double> x) { return amplitude * box_bump(x, support); });
  }
};

inline SourceSpec load_source(const Document& d, std::size_t ndim, const std::string& section = "source") {
  using detail::key;
  SourceSpec s;
  const std::string kind = d.text(key(section, "kind"), "bump");
  if (kind == "file") {
    s.path = d.required(key(section, "path"));
    return s;
  }
  if (kind != "bump") d.fail(key(section, "kind"), "unknown source kind '" + kind + "' (allowed: bump, file)");
  s.support = detail::read_box(d, key(section, "lo"), key(section, "hi"), ndim);
  s.domain = detail::read_box(d, key(section, "domain_lo"), key(section, "domain_hi"), ndim);
  auto nodes = d.integers(key(section, "nodes"));
  if (!nodes) throw ConfigError("missing required key '" + key(section, "nodes") + "'");
  if (nodes->size() != ndim) d.fail(key(section, "nodes"), "expected " + std::to_string(ndim) + " values");
  for (auto v : *nodes) {
    if (v < 5) d.fail(key(section, "nodes"), "at least 5 nodes per axis");
    s.nodes.push_back(static_cast<std::size_t>(v));
  }
  s.amplitude = d.number(key(section, "amplitude"), 1.0);
  for (std::size_t k = 0; k < ndim; ++k)
    if (s.support.lo[k] <= s.domain.lo[k] || s.support.hi[k] >= s.domain.hi[k])
      d.fail(key(section, "lo"), "bump support must lie inside the sampling domain");
  return s;
}

/// Pipeline parameters shared by qrm and reconstruct.
struct PipelineParams {
  std::vector<std::size_t> resolution;
  std::size_t time_steps = 256;
  double grading = 3.0;
  double tau_max = 10.0;
  double gamma = 1e-8;
  std::optional<double> omega;
  RegNorm reg_norm = RegNorm::H21;

  ReconstructConfig reconstruct(const EllipticOperator& op, const GeometrySpec& geo) const {
    ReconstructConfig c;
    c.op = op;
    c.geometry = geo;
    c.resolution = resolution.empty() ? std::vector<std::size_t>(op.ndim(), 257) : resolution;
    c.time_steps = time_steps;
    c.grading = grading;
    c.tau_max = tau_max;
    c.omega = omega;
    c.gamma = gamma;
    c.reg_norm = reg_norm;
    return c;
  }
};

inline PipelineParams load_pipeline(const Document& d, const std::string& section = "qrm") {
  using detail::key;
  PipelineParams p;
  if (auto r = d.integers(key(section, "resolution")))
    for (auto v : *r) {
      if (v < 6) d.fail(key(section, "resolution"), "at least 6 nodes per axis");
      p.resolution.push_back(static_cast<std::size_t>(v));
    }
  p.time_steps = d.integer(key(section, "time_steps"), p.time_steps);
  if (p.time_steps < 4) d.fail(key(section, "time_steps"), "at least 4 time steps");
  p.grading = d.number(key(section, "grading"), p.grading);
  if (!(p.grading >= 1.0)) d.fail(key(section, "grading"), "grading exponent must be at least 1");
  p.tau_max = d.number(key(section, "tau_max"), p.tau_max);
  if (!(p.tau_max > 0.0)) d.fail(key(section, "tau_max"), "tau_max must be positive");
  p.gamma = d.number(key(section, "gamma"), p.gamma);
  if (!(p.gamma > 0.0)) d.fail(key(section, "gamma"), "gamma must be positive");
  if (auto w = d.number(key(section, "omega"))) {
    if (!(*w > 0.0 && *w < 1.0)) d.fail(key(section, "omega"), "omega must lie in (0, 1)");
    p.omega = *w;
  }
  p.reg_norm = d.choice<RegNorm>(key(section, "reg"), {{"h21", RegNorm::H21}, {"h4", RegNorm::H4Surrogate}})
                   .value_or(p.reg_norm);
  return p;
}

struct NoiseParams {
  double delta = 0.0;
  std::optional<std::uint64_t> seed;
};

inline NoiseParams load_noise(const Document& d, const std::string& section = "noise") {
  using detail::key;
  NoiseParams n;
  auto delta = d.number(key(section, "delta"));
  if (!delta) throw ConfigError("missing required key '" + key(section, "delta") + "'");
  if (!(*delta > 0.0 && *delta < 1.0)) d.fail(key(section, "delta"), "delta must lie in (0, 1)");
  n.delta = *delta;
  n.seed = d.integer(key(section, "seed"));
  return n;
}

/// Sweep keys: scenario, ladder, gamma_rule, gamma, gamma_ladder, seeds, omega_lo,
/// omega_hi, nodes, time_steps, grading, tau_max, omega0, baseline; the operator
/// comes from the [op] section when present.
inline SweepConfig load_sweep(const Document& d, const std::string& section = "sweep") {
  using detail::key;
  SweepConfig c;
  c.scenario = d.choice<Scenario>(key(section, "scenario"), {{"ip1", Scenario::IP1Stability},
                                                             {"ip2", Scenario::IP2Stability},
                                                             {"qrm", Scenario::QrmConvergence},
                                                             {"holder", Scenario::HolderRegion}})
                   .value_or(c.scenario);
  if (auto v = d.numbers(key(section, "ladder"))) c.ladder = *v;
  c.gamma_rule = d.choice<GammaRule>(key(section, "gamma_rule"), {{"equal_omega", GammaRule::EqualOmega},
                                                                  {"fixed", GammaRule::Fixed},
                                                                  {"ladder", GammaRule::Ladder}})
                     .value_or(c.gamma_rule);
  c.gamma = d.number(key(section, "gamma"), c.gamma);
  if (auto v = d.numbers(key(section, "gamma_ladder"))) c.gamma_ladder = *v;
  if (auto v = d.integers(key(section, "seeds"))) c.seeds.assign(v->begin(), v->end());
  if (d.has_section("op")) c.op = load_operator(d, "op");
  if (d.has(key(section, "omega_lo")) || d.has(key(section, "omega_hi")))
    c.omega = detail::read_box(d, key(section, "omega_lo"), key(section, "omega_hi"), 1);
  c.nodes = d.integer(key(section, "nodes"), c.nodes);
  c.time_steps = d.integer(key(section, "time_steps"), c.time_steps);
  c.grading = d.number(key(section, "grading"), c.grading);
  c.tau_max = d.number(key(section, "tau_max"), c.tau_max);
  c.omega0 = d.number(key(section, "omega0"), c.omega0);
  c.baseline = d.boolean(key(section, "baseline")).value_or(c.baseline);
  if (!(c.gamma > 0.0)) d.fail(key(section, "gamma"), "gamma must be positive");
  for (double g : c.gamma_ladder)
    if (!(g > 0.0)) d.fail(key(section, "gamma_ladder"), "gamma must be positive");
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what(), d.line(key(section, "ladder")) ? d.line(key(section, "ladder")) : d.section_line(section));
  }
  return c;
}

struct CarlemanCheckParams {
  CarlemanParams params;
  CarlemanEstimate estimate = CarlemanEstimate::PsiPhi;
  std::size_t family = 20;
  std::uint64_t seed = 20;
  CarlemanResolution resolution;
};

inline CarlemanCheckParams load_carleman(const Document& d, const std::string& section = "carleman") {
  using detail::key;
  CarlemanCheckParams c;
  c.params.nu = d.number(key(section, "nu"), c.params.nu);
  c.params.epsilon = d.number(key(section, "epsilon"), c.params.epsilon);
  c.params.lambda = d.number(key(section, "lambda"), c.params.lambda);
  c.estimate = d.choice<CarlemanEstimate>(key(section, "estimate"), {{"psi", CarlemanEstimate::PsiPhi}, {"theta", CarlemanEstimate::ThetaXi}})
                .value_or(c.estimate);
  c.family = d.integer(key(section, "family"), c.family);
  if (c.family == 0) d.fail(key(section, "family"), "family must hold at least one function");
  c.seed = d.integer(key(section, "seed"), c.seed);
  c.resolution.space = d.integer(key(section, "space"), c.resolution.space);
  c.resolution.time = d.integer(key(section, "time"), c.resolution.time);
  try {
    c.params.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what(), d.line(key(section, "nu")) ? d.line(key(section, "nu")) : d.line(key(section, "epsilon")));
  }
  return c;
}

/// Whole-run configuration: every section is optional, but whatever is present
/// is validated in full and unknown keys are rejected.
struct RunConfig {
  std::optional<EllipticOperator> op;
  std::optional<GeometrySpec> geometry;
  std::optional<SourceSpec> source;
  PipelineParams pipeline;
  std::optional<NoiseParams> noise;
  std::optional<SweepConfig> sweep;
  std::optional<CarlemanCheckParams> carleman;
};

inline RunConfig parse_config_text(std::string_view text) {
  Document d = Document::parse(text);
  RunConfig c;
  if (d.has_section("op")) c.op = load_operator(d, "op");
  const std::size_t n = c.op ? c.op->ndim() : 1;
  if (d.has_section("geometry")) {
    if (!c.op) throw ConfigError("[geometry] needs an [op] section for its dimension", d.section_line("geometry"));
    c.geometry = load_geometry(d, n);
  }
  if (d.has_section("source")) {
    if (!c.op) throw ConfigError("[source] needs an [op] section for its dimension", d.section_line("source"));
    c.source = load_source(d, n);
  }
  c.pipeline = load_pipeline(d);
  if (!c.pipeline.resolution.empty() && c.op && c.pipeline.resolution.size() != n)
    d.fail("qrm.resolution", "expected " + std::to_string(n) + " values");
  if (d.has_section("noise")) c.noise = load_noise(d);
  if (d.has_section("sweep")) c.sweep = load_sweep(d);
  if (d.has_section("carleman")) c.carleman = load_carleman(d);
  d.finish();
  return c;
}

inline RunConfig parse_config(const std::string& path) {
  std::string text;
  try {
    text = io::slurp(path);
  } catch (const InvalidData&) {
    throw ConfigError("cannot read config file " + path);
  }
  return parse_config_text(text);
}

}  // namespace qtat::config
