#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qtat/manifest.hpp"
#include "qtat/qtat.hpp"

using namespace qtat;

namespace {

constexpr int kOk = 0, kDomainError = 1, kConfigError = 2;

struct Run {
  RunManifest manifest;
  std::string manifest_path;
  bool quiet = false;

  void say(const std::string& s) const {
    if (!quiet) std::cout << s << "\n";
  }
};

// ---- config resolution: a dedicated file wins over a section of --config ----

struct Sources {
  std::string op, geometry, source, config;
  std::optional<config::RunConfig> run;

  const config::RunConfig* run_config(Run& r) {
    if (config.empty()) return nullptr;
    if (!run) {
      run = config::parse_config(config);
      r.manifest.add_config(config);
    }
    return &*run;
  }

  EllipticOperator load_op(Run& r) {
    if (!op.empty()) {
      auto d = config::Document::load(op, "op");
      auto o = config::load_operator(d, "op");
      d.finish();
      r.manifest.add_config(op);
      return o;
    }
    if (auto* c = run_config(r); c && c->op) return *c->op;
    throw ConfigError("no operator given: pass --op or a config with an [op] section");
  }

  GeometrySpec load_geometry(Run& r, std::size_t ndim) {
    if (!geometry.empty()) {
      auto d = config::Document::load(geometry, "geometry");
      auto g = config::load_geometry(d, ndim, "geometry");
      d.finish();
      r.manifest.add_config(geometry);
      return g;
    }
    if (auto* c = run_config(r); c && c->geometry) return *c->geometry;
    throw ConfigError("no geometry given: pass --geometry or a config with a [geometry] section");
  }

  config::SourceSpec load_source(Run& r, std::size_t ndim) {
    if (!source.empty()) {
      auto d = config::Document::load(source, "source");
      auto s = config::load_source(d, ndim, "source");
      d.finish();
      r.manifest.add_config(source);
      return s;
    }
    if (auto* c = run_config(r); c && c->source) return *c->source;
    throw ConfigError("no initial condition given: pass --f or a config with a [source] section");
  }
};

void add_sources(CLI::App* sub, Sources& s, bool op, bool geometry, bool source) {
  if (op) sub->add_option("--op", s.op, "operator config (ndim, mu1, mu2, aIJ, bJ, b0, clamp_lo/hi)");
  if (geometry) sub->add_option("--geometry", s.geometry, "geometry config (measurement, shape, lo/hi, hyperplane)");
  if (source) sub->add_option("--f", s.source, "initial condition config (kind, lo/hi, domain_lo/hi, nodes, path)");
  sub->add_option("--config", s.config, "sectioned run config ([op], [geometry], [source], [qrm], ...)");
}

/// Pipeline flags override the [qrm] section of --config.
struct PipelineFlags {
  std::optional<double> gamma, omega, tau_max, grading;
  std::optional<std::size_t> time_steps;
  std::vector<std::size_t> resolution;
  std::optional<std::string> reg;

  void add(CLI::App* sub, bool transform_only = false) {
    sub->add_option("--tau-max", tau_max, "truncation of the time integral (default 10)");
    sub->add_option("--time-steps", time_steps, "graded parabolic time steps (default 256)");
    sub->add_option("--grading", grading, "time grading exponent (default 3)");
    if (transform_only) return;
    sub->add_option("--gamma", gamma, "regularization parameter (default 1e-8)");
    sub->add_option("--omega", omega, "declared noise level; selects gamma = omega");
    sub->add_option("--resolution", resolution, "Φ nodes per axis (default 257)");
    sub->add_option("--reg", reg, "regularization norm: h21 or h4");
  }

  config::PipelineParams resolve(const config::RunConfig* c, std::size_t ndim) const {
    config::PipelineParams p = c ? c->pipeline : config::PipelineParams{};
    if (gamma) {
      if (!(*gamma > 0.0)) throw ConfigError("--gamma must be positive");
      p.gamma = *gamma;
    }
    if (omega) {
      if (!(*omega > 0.0 && *omega < 1.0)) throw ConfigError("--omega must lie in (0, 1)");
      p.omega = *omega;
    }
    if (tau_max) {
      if (!(*tau_max > 0.0)) throw ConfigError("--tau-max must be positive");
      p.tau_max = *tau_max;
    }
    if (grading) {
      if (!(*grading >= 1.0)) throw ConfigError("--grading must be at least 1");
      p.grading = *grading;
    }
    if (time_steps) {
      if (*time_steps < 4) throw ConfigError("--time-steps must be at least 4");
      p.time_steps = *time_steps;
    }
    if (!resolution.empty()) p.resolution = resolution;
    if (!p.resolution.empty() && p.resolution.size() != ndim)
      throw ConfigError("--resolution needs " + std::to_string(ndim) + " values");
    for (auto n : p.resolution)
      if (n < 6) throw ConfigError("--resolution needs at least 6 nodes per axis");
    if (reg) {
      if (*reg == "h21") p.reg_norm = RegNorm::H21;
      else if (*reg == "h4") p.reg_norm = RegNorm::H4Surrogate;
      else throw ConfigError("--reg must be h21 or h4");
    }
    return p;
  }

  void record(Run& r, const config::PipelineParams& p) const {
    r.manifest.set_parameter("gamma", p.gamma);
    if (p.omega) r.manifest.set_parameter("omega", *p.omega);
    r.manifest.set_parameter("tau_max", p.tau_max);
    r.manifest.set_parameter("time_steps", p.time_steps);
    r.manifest.set_parameter("grading", p.grading);
    r.manifest.set_parameter("resolution", p.resolution);
    r.manifest.set_parameter("reg", p.reg_norm == RegNorm::H21 ? "h21" : "h4");
  }
};

template <class T>
void write_output(Run& r, const std::string& path, const T& value) {
  write_file(path, value);
  r.manifest.add_output(path);
}

void write_text(Run& r, const std::string& path, const std::string& text) {
  io::dump(path, text);
  r.manifest.add_output(path);
}

template <class T>
T read_input(Run& r, const std::string& path) {
  r.manifest.add_input(path);
  return read_file<T>(path);
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string qrm_report(const QrmSolution& s, double gamma, std::optional<double> error) {
  std::string out = "gamma,iterations,residual,functional,bound_lhs,bound_rhs,l2_error_vs_truth\n";
  out += number(gamma) + "," + std::to_string(s.iterations) + "," + number(s.residual) + "," + number(s.functional) +
         "," + number(s.bound_lhs()) + "," + number(s.bound_rhs()) + "," + (error ? number(*error) : "") + "\n";
  return out;
}

/// Relative L2 error of f̂ against a truth field sampled on a grid that
/// contains f̂'s nodes.
double error_vs_truth(const Field& fhat, const Field& truth) {
  const Grid& g = truth.grid;
  if (g.ndim() != fhat.grid.ndim()) throw InvalidData("truth and reconstruction dimensions differ");
  double num = 0.0, den = 0.0;
  std::array<std::size_t, kMaxDim> m{};
  for (std::size_t i = 0; i < fhat.size(); ++i) {
    Point p = fhat.grid.point(i);
    for (std::size_t k = 0; k < g.ndim(); ++k) {
      m[k] = g.node_at(k, p[k], 1e-6);
      if (m[k] == Grid::npos) throw InvalidData("truth grid does not contain the reconstruction nodes");
    }
    const double f = truth[g.index(std::span<const std::size_t>(m.data(), g.ndim()))];
    num += (fhat[i] - f) * (fhat[i] - f);
    den += f * f;
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

int run_cli(int argc, char** argv);

/// Reruns the command recorded in a manifest from its working directory and
/// compares every output digest. Returns the number of mismatches.
std::size_t replay(const std::string& manifest_file, std::ostream& log) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::slurp(manifest_file));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest_file + ": not a manifest (" + e.what() + ")");
  }
  if (!m.contains("argv") || !m.contains("outputs") || !m.contains("working_directory"))
    throw ConfigError(manifest_file + ": manifest lacks argv, outputs or working_directory");
  if (m.value("exit_status", -1) != 0) throw InvalidData("replay: the recorded run did not succeed");
  const auto here = std::filesystem::current_path();
  const std::string replay_manifest = std::filesystem::absolute(manifest_file).string() + ".replay.json";
  std::filesystem::current_path(m["working_directory"].get<std::string>());
  std::vector<std::string> args = m["argv"].get<std::vector<std::string>>();
  args.push_back("--manifest");
  args.push_back(replay_manifest);
  args.push_back("--quiet");
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  const int status = run_cli(static_cast<int>(cargs.size()), cargs.data());
  std::size_t mismatches = 0;
  if (status != 0) {
    log << "replay: rerun exited with status " << status << "\n";
    ++mismatches;
  }
  for (const auto& out : m["outputs"]) {
    const std::string path = out["path"];
    const std::string want = out.value("sha256", "");
    std::string got;
    try {
      got = sha256_file(path);
    } catch (const std::exception&) {
      got = "(missing)";
    }
    const bool same = got == want;
    mismatches += same ? 0 : 1;
    log << (same ? "same    " : "DIFFERS ") << path << "\n";
  }
  std::filesystem::current_path(here);
  return mismatches;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(argc, argv); }

namespace {

int run_cli(int argc, char** argv) {
  CLI::App app{"qtat: thermoacoustic reconstruction by transform to a parabolic problem and quasi-reversibility"};
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 0;
  std::string manifest_path;
  bool quiet = false;
  app.add_option("--threads", threads, "worker threads (default: QTAT_THREADS, else all cores)");
  app.add_option("--manifest", manifest_path, "manifest path (default: next to the first output)");
  app.add_flag("--quiet", quiet, "suppress the summary on stdout");

  std::map<CLI::App*, std::function<void(Run&)>> handlers;

  // forward
  Sources fw_src;
  double fw_T = 10.0, fw_cfl = 0.5;
  std::size_t fw_stride = 1;
  std::string fw_out, fw_trace;
  auto* forward = app.add_subcommand("forward", "solve the wave problem and record the boundary trace");
  add_sources(forward, fw_src, true, true, true);
  forward->add_option("--T", fw_T, "final time (default 10)");
  forward->add_option("--cfl", fw_cfl, "CFL number in (0, 1] (default 0.5)");
  forward->add_option("--stride", fw_stride, "record every n-th step (default 1)");
  forward->add_option("--out", fw_out, "space-time wave field (.qtat)");
  forward->add_option("--trace", fw_trace, "boundary trace on the measurement surface (.qtat)");
  handlers[forward] = [&](Run& r) {
    if (fw_out.empty() && fw_trace.empty()) throw ConfigError("forward: give --out, --trace or both");
    if (!(fw_T > 0.0)) throw ConfigError("--T must be positive");
    if (!(fw_cfl > 0.0 && fw_cfl <= 1.0)) throw ConfigError("--cfl must lie in (0, 1]");
    if (fw_stride == 0) throw ConfigError("--stride must be positive");
    auto op = fw_src.load_op(r);
    auto src = fw_src.load_source(r, op.ndim());
    std::optional<GeometrySpec> geo;
    if (!fw_trace.empty()) geo = fw_src.load_geometry(r, op.ndim());
    if (!src.path.empty()) r.manifest.add_input(src.path);
    r.manifest.set_parameter("T", fw_T);
    r.manifest.set_parameter("cfl", fw_cfl);
    WaveOptions opt;
    opt.cfl = fw_cfl;
    opt.stride = fw_stride;
    auto run = solve_wave(op, src.build(), fw_T, opt);
    if (!fw_out.empty()) write_output(r, fw_out, run.u);
    if (geo) {
      auto tr = geo->kind == MeasurementKind::Hyperplane ? extract_trace_ip2(run, *geo) : extract_trace_ip1(run, *geo);
      write_output(r, fw_trace, tr);
    }
    r.say("forward: " + std::to_string(run.steps) + " steps, dt = " + number(run.dt) + ", padding " +
          std::to_string(run.padding) + " nodes");
  };

  // transform
  std::string tr_in, tr_out, tr_tail, tr_targets = "graded";
  PipelineFlags tr_flags;
  auto* transform = app.add_subcommand("transform", "map a hyperbolic trace to parabolic time");
  transform->add_option("--in", tr_in, "hyperbolic trace (.qtat)")->required();
  transform->add_option("--out", tr_out, "transformed trace (.qtat)")->required();
  transform->add_option("--tail-report", tr_tail, "CSV of the truncation bound per target time");
  transform->add_option("--targets", tr_targets, "graded (the reconstruction grid, default) or clustered");
  tr_flags.add(transform, true);
  handlers[transform] = [&](Run& r) {
    auto p = tr_flags.resolve(nullptr, 1);
    auto trace = read_input<BoundaryTrace>(r, tr_in);
    TransformPlan plan;
    plan.tau_max = p.tau_max;
    if (tr_targets == "graded") {
      auto t = graded_times(p.time_steps, p.grading);
      plan.t_targets.assign(t.begin() + 1, t.end());
      plan.include_zero = true;
    } else if (tr_targets != "clustered") {
      throw ConfigError("--targets must be graded or clustered");
    }
    r.manifest.set_parameter("tau_max", p.tau_max);
    r.manifest.set_parameter("targets", tr_targets);
    auto out = transform_trace(trace, plan, trace_growth_bound(trace));
    write_output(r, tr_out, out);
    double worst = 0.0;
    for (double b : out.tail) worst = std::max(worst, b);
    if (!tr_tail.empty()) {
      std::string csv = "t,tail_bound\n";
      for (std::size_t n = 0; n < out.tail.size(); ++n) csv += number(out.times()[n]) + "," + number(out.tail[n]) + "\n";
      write_text(r, tr_tail, csv);
    }
    r.say("transform: " + std::to_string(out.times().size()) + " target times, largest tail bound " + number(worst));
  };

  // recover-neumann
  Sources rn_src;
  std::string rn_trace, rn_out;
  std::optional<double> rn_slab;
  auto* recover = app.add_subcommand("recover-neumann", "complete transformed Dirichlet data with Neumann data");
  add_sources(recover, rn_src, true, true, false);
  recover->add_option("--trace", rn_trace, "transformed trace (.qtat)")->required();
  recover->add_option("--out", rn_out, "Cauchy data in normalized coordinates (.qtat)")->required();
  recover->add_option("--slab-width", rn_slab, "exterior truncation distance (default 12·sqrt(mu2·t_end))");
  handlers[recover] = [&](Run& r) {
    auto op = rn_src.load_op(r);
    auto geo = rn_src.load_geometry(r, op.ndim());
    auto trace = read_input<BoundaryTrace>(r, rn_trace);
    NeumannOptions opt;
    if (rn_slab) {
      if (!(*rn_slab > 0.0)) throw ConfigError("--slab-width must be positive");
      opt.slab_width = *rn_slab;
    }
    auto [ngeo, nop, rec] = normalize_geometry(geo, op);
    r.manifest.set_parameter("scale_c", rec.c);
    auto out = recover_neumann(nop, normalize_trace(trace, rec), ngeo, opt);
    write_output(r, rn_out, out);
    r.say("recover-neumann: " + std::to_string(out.faces.size()) + " face(s), scale c = " + number(rec.c));
  };

  // noise
  std::string nz_in, nz_out;
  std::optional<double> nz_delta;
  std::optional<std::uint64_t> nz_seed;
  auto* noise = app.add_subcommand("noise", "corrupt a trace with multiplicative noise v(1 + δξ)");
  noise->add_option("--in", nz_in, "trace (.qtat)")->required();
  noise->add_option("--out", nz_out, "noisy trace (.qtat)")->required();
  noise->add_option("--delta", nz_delta, "noise level in (0, 1)")->required();
  noise->add_option("--seed", nz_seed, "random seed (mandatory)")->required();
  handlers[noise] = [&](Run& r) {
    if (!(*nz_delta > 0.0 && *nz_delta < 1.0)) throw ConfigError("--delta must lie in (0, 1)");
    r.manifest.add_seed(*nz_seed);
    r.manifest.set_parameter("delta", *nz_delta);
    auto trace = read_input<BoundaryTrace>(r, nz_in);
    write_output(r, nz_out, add_noise(trace, NoiseSpec{*nz_delta, *nz_seed}));
    r.say("noise: delta = " + number(*nz_delta) + ", seed = " + std::to_string(*nz_seed));
  };

  // qrm
  Sources qr_src;
  PipelineFlags qr_flags;
  std::string qr_trace, qr_out, qr_report, qr_truth, qr_solution;
  auto* qrm = app.add_subcommand("qrm", "quasi-reversibility solve from Cauchy data");
  add_sources(qrm, qr_src, true, true, false);
  qr_flags.add(qrm);
  qrm->add_option("--trace", qr_trace, "Cauchy data from recover-neumann (.qtat)")->required();
  qrm->add_option("--out", qr_out, "reconstructed initial condition (.qtat)")->required();
  qrm->add_option("--report", qr_report, "solve report CSV");
  qrm->add_option("--truth", qr_truth, "known initial condition for the error column (.qtat)");
  qrm->add_option("--solution", qr_solution, "regularized space-time solution on Φ (.qtat)");
  handlers[qrm] = [&](Run& r) {
    auto op = qr_src.load_op(r);
    auto geo = qr_src.load_geometry(r, op.ndim());
    auto p = qr_flags.resolve(qr_src.run_config(r), op.ndim());
    qr_flags.record(r, p);
    auto cauchy = read_input<BoundaryTrace>(r, qr_trace);
    auto cfg = p.reconstruct(op, geo);
    auto [ngeo, nop, rec] = normalize_geometry(geo, op);
    if (ngeo.kind == MeasurementKind::Hyperplane &&
        (cauchy.faces.empty() || std::abs(cauchy.faces[0].position - ngeo.hyperplane) > 1e-12))
      throw InvalidData("qrm: trace is not in the normalized coordinates recover-neumann writes");
    auto grid = make_qrm_grid(ngeo, cfg.resolution, cfg.time_steps, cfg.grading);
    auto [pp, rr] = homogenize(cauchy, nop, grid);
    const double gamma = cfg.omega ? *cfg.omega : cfg.gamma;
    QrmProblem prob{nop, ngeo, grid, pp, rr, gamma, cfg.reg_norm};
    auto sol = assemble_and_minimize(prob);
    Field fhat = extract_initial(sol, rr, ngeo, rec);
    write_output(r, qr_out, fhat);
    if (!qr_solution.empty()) write_output(r, qr_solution, sol.u_gamma);
    std::optional<double> err;
    if (!qr_truth.empty()) err = error_vs_truth(fhat, read_input<Field>(r, qr_truth));
    if (!qr_report.empty()) write_text(r, qr_report, qrm_report(sol, gamma, err));
    r.say("qrm: " + std::to_string(sol.iterations) + " iterations, residual " + number(sol.residual) +
          (err ? ", relative error " + number(*err) : ""));
  };

  // reconstruct
  Sources rc_src;
  PipelineFlags rc_flags;
  std::string rc_trace, rc_out, rc_report, rc_truth;
  auto* recon = app.add_subcommand("reconstruct", "trace to initial condition in one call");
  add_sources(recon, rc_src, true, true, false);
  rc_flags.add(recon);
  recon->add_option("--trace", rc_trace, "hyperbolic trace from forward (.qtat)")->required();
  recon->add_option("--out", rc_out, "reconstructed initial condition (.qtat)")->required();
  recon->add_option("--report", rc_report, "solve report CSV");
  recon->add_option("--truth", rc_truth, "known initial condition for the error column (.qtat)");
  handlers[recon] = [&](Run& r) {
    auto op = rc_src.load_op(r);
    auto geo = rc_src.load_geometry(r, op.ndim());
    auto p = rc_flags.resolve(rc_src.run_config(r), op.ndim());
    rc_flags.record(r, p);
    auto trace = read_input<BoundaryTrace>(r, rc_trace);
    auto cfg = p.reconstruct(op, geo);
    auto out = reconstruct_detailed(trace, cfg);
    write_output(r, rc_out, out.f_hat);
    std::optional<double> err;
    if (!rc_truth.empty()) err = error_vs_truth(out.f_hat, read_input<Field>(r, rc_truth));
    const double gamma = cfg.omega ? *cfg.omega : cfg.gamma;
    if (!rc_report.empty()) write_text(r, rc_report, qrm_report(out.solution, gamma, err));
    r.say("reconstruct: " + std::to_string(out.solution.iterations) + " iterations, residual " +
          number(out.solution.residual) + (err ? ", relative error " + number(*err) : ""));
  };

  // sweep
  std::string sw_config, sw_out, sw_scenario;
  std::vector<std::uint64_t> sw_seeds;
  auto* sweep = app.add_subcommand("sweep", "noise-ladder stability experiment");
  sweep->add_option("--scenario", sw_scenario, "ip1, ip2, qrm or holder");
  sweep->add_option("--config", sw_config, "sweep config (keys of [sweep], optional [op])");
  sweep->add_option("--seeds", sw_seeds, "seeds, one row per seed and level");
  sweep->add_option("--out", sw_out, "report CSV")->required();
  handlers[sweep] = [&](Run& r) {
    SweepConfig cfg;
    bool seeded = !sw_seeds.empty();
    if (!sw_config.empty()) {
      auto d = config::Document::load(sw_config, "sweep");
      seeded = seeded || d.has("sweep.seeds");
      cfg = config::load_sweep(d, "sweep");
      d.finish();
      r.manifest.add_config(sw_config);
    }
    if (!seeded) throw ConfigError("sweep: seeds are mandatory (--seeds or 'seeds' in the config)");
    if (!sw_seeds.empty()) cfg.seeds = sw_seeds;
    if (!sw_scenario.empty()) {
      static const std::map<std::string, Scenario> names{{"ip1", Scenario::IP1Stability},
                                                         {"ip2", Scenario::IP2Stability},
                                                         {"qrm", Scenario::QrmConvergence},
                                                         {"holder", Scenario::HolderRegion}};
      auto it = names.find(sw_scenario);
      if (it == names.end()) throw ConfigError("--scenario must be ip1, ip2, qrm or holder");
      cfg.scenario = it->second;
    }
    try {
      cfg.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    for (auto s : cfg.seeds) r.manifest.add_seed(s);
    r.manifest.set_parameter("scenario", scenario_name(cfg.scenario));
    r.manifest.set_parameter("ladder", cfg.ladder);
    auto rep = run_sweep(cfg);
    write_text(r, sw_out, rep.to_csv());
    r.say(std::string("sweep ") + scenario_name(cfg.scenario) + ": " + std::to_string(rep.rows.size()) +
          " rows, trend ratio " + number(rep.trend_ratio()) + ", holder rho " + number(rep.holder_fit.slope) +
          " (r2 " + number(rep.holder_fit.r2) + ")");
  };

  // carleman-check
  Sources cc_src;
  std::optional<double> cc_nu, cc_eps, cc_lambda;
  std::optional<std::string> cc_estimate, cc_family;
  std::string cc_out;
  std::optional<std::uint64_t> cc_seed;
  std::optional<std::size_t> cc_space, cc_time;
  std::size_t cc_samples = 0;
  auto* carleman = app.add_subcommand("carleman-check", "measure Carleman constants and check the weight geometry");
  add_sources(carleman, cc_src, true, false, false);
  carleman->add_option("--nu", cc_nu, "weight exponent (default 4)");
  carleman->add_option("--eps", cc_eps, "time-scale parameter in (0, 1/2) (default 0.05)");
  carleman->add_option("--lambda", cc_lambda, "second-weight parameter (default 2)");
  carleman->add_option("--estimate", cc_estimate, "weight pair: psi (ψ, φ on G, default) or theta (θ, ξ on D)");
  carleman->add_option("--family", cc_family, "trigN: N seeded trig polynomials (default trig20)");
  carleman->add_option("--seed", cc_seed, "family seed (default 20)");
  carleman->add_option("--space", cc_space, "nodes per space axis (default 65)");
  carleman->add_option("--time", cc_time, "time nodes (default 65)");
  carleman->add_option("--samples", cc_samples, "random points for the geometry invariants (0 skips)");
  carleman->add_option("--out", cc_out, "per-function CSV")->required();
  handlers[carleman] = [&](Run& r) {
    config::CarlemanCheckParams p;
    if (auto* c = cc_src.run_config(r); c && c->carleman) p = *c->carleman;
    if (cc_nu) p.params.nu = *cc_nu;
    if (cc_eps) p.params.epsilon = *cc_eps;
    if (cc_lambda) p.params.lambda = *cc_lambda;
    try {
      p.params.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (cc_estimate) {
      if (*cc_estimate == "psi") p.estimate = CarlemanEstimate::PsiPhi;
      else if (*cc_estimate == "theta") p.estimate = CarlemanEstimate::ThetaXi;
      else throw ConfigError("--estimate must be psi or theta");
    }
    if (cc_family) {
      if (cc_family->rfind("trig", 0) != 0) throw ConfigError("--family must be trigN");
      try {
        p.family = std::stoul(cc_family->substr(4));
      } catch (const std::exception&) {
        throw ConfigError("--family must be trigN with N a positive integer");
      }
      if (p.family == 0) throw ConfigError("--family must hold at least one function");
    }
    if (cc_seed) p.seed = *cc_seed;
    if (cc_space) p.resolution.space = *cc_space;
    if (cc_time) p.resolution.time = *cc_time;
    auto op = cc_src.load_op(r);
    r.manifest.add_seed(p.seed);
    r.manifest.set_parameter("nu", p.params.nu);
    r.manifest.set_parameter("epsilon", p.params.epsilon);
    r.manifest.set_parameter("lambda", p.params.lambda);
    r.manifest.set_parameter("estimate", p.estimate == CarlemanEstimate::PsiPhi ? "psi" : "theta");
    r.manifest.set_parameter("family", "trig" + std::to_string(p.family));
    r.manifest.set_parameter("space", p.resolution.space);
    r.manifest.set_parameter("time", p.resolution.time);
    auto fam = trig_family(op.ndim(), p.family, p.seed);
    auto rep = measure_carleman_constant(op, p.params, fam, p.estimate, p.resolution);
    std::string csv = "function,log_lhs,log_rhs,log_constant,degenerate\n";
    for (std::size_t k = 0; k < rep.samples.size(); ++k) {
      const auto& s = rep.samples[k];
      csv += std::to_string(k) + "," + number(s.log_lhs) + "," + number(s.log_rhs) + "," + number(s.log_constant()) +
             "," + (s.degenerate ? "1" : "0") + "\n";
    }
    csv += "# max_log_constant=" + number(rep.max_log_constant()) + " volume_nodes=" + std::to_string(rep.volume_nodes) +
           "\n";
    std::string summary = "carleman-check: log C = " + number(rep.max_log_constant());
    if (cc_samples) {
      r.manifest.set_parameter("samples", cc_samples);
      auto g = check_geometry(p.params, op.ndim(), cc_samples, p.seed);
      csv += "# geometry samples=" + std::to_string(g.samples) + " nesting=" + std::to_string(g.nesting) +
             " strip=" + std::to_string(g.strip) + " weight_bound=" + std::to_string(g.weight_bound) + "\n";
      summary += ", geometry violations " + std::to_string(g.violations());
      if (g.violations()) {
        write_text(r, cc_out, csv);
        throw InvalidData("carleman-check: geometry invariants violated");
      }
    }
    write_text(r, cc_out, csv);
    r.say(summary);
  };

  // export-csv
  std::string ex_in, ex_out;
  auto* exporter = app.add_subcommand("export-csv", "write a .qtat file as CSV (17 significant digits)");
  exporter->add_option("input", ex_in, "field, space-time field or trace (.qtat)")->required();
  exporter->add_option("output", ex_out, "CSV path")->required();
  handlers[exporter] = [&](Run& r) {
    r.manifest.add_input(ex_in);
    auto any = read_any(ex_in);
    write_text(r, ex_out, std::visit([](const auto& v) { return to_csv(v); }, any));
    r.say("export-csv: wrote " + ex_out);
  };

  // replay
  std::string rp_manifest;
  auto* replayer = app.add_subcommand("replay", "rerun a recorded command and compare output digests");
  replayer->add_option("manifest", rp_manifest, "manifest written by an earlier run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string what = e.what();
    if (argc > 1 && argv[1][0] != '-') {
      bool known = false;
      for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == argv[1];
      if (!known) what = std::string("unknown subcommand '") + argv[1] + "'";
    }
    std::cerr << "error: " << what << "\n\n" << app.help();
    return kConfigError;
  }

  if (threads) set_threads(threads);
  Run run{RunManifest(std::vector<std::string>(argv, argv + argc)), manifest_path, quiet};
  CLI::App* chosen = app.get_subcommands().front();
  if (chosen == replayer) {
    try {
      const std::size_t bad = replay(rp_manifest, std::cout);
      std::cout << (bad ? "replay: outputs differ\n" : "replay: all outputs reproduced bit-exactly\n");
      return bad ? kDomainError : kOk;
    } catch (const ConfigError& e) {
      std::cerr << "replay: " << e.what() << "\n";
      return kConfigError;
    } catch (const std::exception& e) {
      std::cerr << "replay: " << e.what() << "\n";
      return kDomainError;
    }
  }
  run.manifest.set_subcommand(chosen->get_name());
  for (const std::string* out : {&fw_trace, &fw_out, &tr_out, &rn_out, &nz_out, &qr_out, &rc_out, &sw_out, &cc_out, &ex_out})
    if (chosen->get_name() != "replay") run.manifest.declare_output(*out);

  int status = kOk;
  std::string error;
  try {
    handlers.at(chosen)(run);
  } catch (const ConfigError& e) {
    status = kConfigError;
    error = e.what();
  } catch (const std::exception& e) {
    status = kDomainError;
    error = e.what();
  }
  if (status != kOk) std::cerr << chosen->get_name() << ": " << error << "\n";
  try {
    run.manifest.write(run.manifest.path(manifest_path), status, error);
  } catch (const std::exception& e) {
    std::cerr << "warning: manifest not written: " << e.what() << "\n";
  }
  return status;
}

}  // namespace
