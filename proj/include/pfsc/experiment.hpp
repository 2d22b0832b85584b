#pragma once

// Command implementations behind the pfsc tool: forward, gradcheck,
// optimize, continue and sweep. Every command writes its artifacts into one
// output directory and returns the run manifest it also writes there.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "pfsc/io.hpp"
#include "pfsc/optimizer.hpp"
#include "pfsc/version.hpp"

namespace pfsc {

using Logger = std::function<void(const std::string&)>;

struct RunContext {
  std::filesystem::path out;
  Logger log = [](const std::string&) {};
};

namespace detail {

class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  void text(const std::string& name, const std::string& body) {
    write_text(dir_ / name, body);
    files_.push_back(name);
  }

  void field(const std::string& name, const ScalarField& f) {
    const auto sub = dir_ / "snapshots";
    std::error_code ec;
    std::filesystem::create_directories(sub, ec);
    if (ec) throw IoError("cannot create " + sub.string() + ": " + ec.message());
    write_snapshot(sub / name, f);
    files_.push_back("snapshots/" + name);
  }

  void series(const std::string& stem, const FieldSeries& s) {
    char buf[16];
    for (std::size_t n = 0; n < s.size(); ++n) {
      std::snprintf(buf, sizeof buf, "_%04zu.bin", n);
      field(stem + buf, s[n]);
    }
  }

  void add(const std::string& rel) { files_.push_back(rel); }

  json manifest(const std::string& command, const RunConfig& cfg, json stages, double seconds) {
    json m;
    m["tool"] = "pfsc";
    m["version"] = kVersion;
    m["command"] = command;
    m["seed"] = cfg.seed;
    m["config"] = config_to_json(cfg);
    m["stages"] = std::move(stages);
    m["timings"] = {{"total_seconds", seconds}};
    m["warnings"] = cfg.warnings;
    auto files = files_;
    std::sort(files.begin(), files.end());
    m["outputs"] = files;
    write_text(dir_ / "manifest.json", m.dump(2) + "\n");
    return m;
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string history_header() { return "stage,iteration,cost,residual,step,backtracks\n"; }

inline std::string history_rows(const std::string& stage, const OptimizationResult& r) {
  std::string out;
  for (const auto& h : r.history)
    out += stage + "," + std::to_string(h.iteration) + "," + fmt17(h.cost) + "," + fmt17(h.residual) + "," +
           fmt17(h.step) + "," + std::to_string(h.backtracks) + "\n";
  return out;
}

inline std::string stages_header() {
  return "stage,kind,eps,sigma,cost,residual,iterations,converged,zeta,zeta_over_eps,drift_u,u_violation,"
         "v_violation,eta_violation\n";
}

struct StageRow {
  std::string name;
  double eps = 0.0;
  std::optional<double> sigma;
  double zeta = 0.0;
  double drift_u = 0.0;
  double seconds = 0.0;
  const OptimizationResult* result = nullptr;
};

inline std::string stage_csv_row(const StageRow& s) {
  const auto& r = *s.result;
  return s.name + "," + (s.sigma ? "penalized" : "limit") + "," + fmt17(s.eps) + "," + (s.sigma ? fmt17(*s.sigma) : "0") +
         "," + fmt17(r.cost.total) + "," + fmt17(r.residual) + "," + std::to_string(r.iterations) + "," +
         (r.converged ? "1" : "0") + "," + fmt17(s.zeta) + "," + fmt17(s.zeta / s.eps) + "," + fmt17(s.drift_u) + "," +
         fmt17(r.kkt.u_fraction) + "," + fmt17(r.kkt.v_fraction) + "," + fmt17(r.kkt.eta_fraction) + "\n";
}

inline json stage_json(const StageRow& s) {
  const auto& r = *s.result;
  json j = {{"stage", s.name},
            {"kind", s.sigma ? "penalized" : "limit"},
            {"eps", detail::number_json(s.eps)},
            {"cost", r.cost.total},
            {"tracking_theta", r.cost.tracking_theta},
            {"tracking_phase", r.cost.tracking_phase},
            {"fenchel_term", r.cost.fenchel_term},
            {"penalty_terms", r.cost.penalty_terms},
            {"residual", r.residual},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"stop_reason", r.stop_reason},
            {"zeta", s.zeta},
            {"drift_u", s.drift_u},
            {"violation", {{"u", r.kkt.u_fraction}, {"v", r.kkt.v_fraction}, {"eta", r.kkt.eta_fraction}}},
            {"wall_seconds", s.seconds}};
  j["sigma"] = s.sigma ? json(*s.sigma) : json(nullptr);
  return j;
}

inline void write_stage_fields(OutputSet& out, const std::string& tag, const Model& model, const OptimizationResult& r) {
  out.text("state_" + tag + ".csv", state_csv(model, r.state));
  out.text("controls_" + tag + ".csv", controls_csv(model, r.controls));
  out.text("adjoint_" + tag + ".csv", adjoint_csv(model, r.adjoint, r.sources));
  out.series("theta_" + tag, r.state.theta);
  out.series("phi_" + tag, r.state.phi);
  out.series("u_" + tag, r.controls.u);
  out.series("eta_" + tag, r.controls.eta);
  out.series("p_" + tag, r.adjoint.p);
}

inline OptimizationResult timed_optimize(const Problem& pb, const ControlSet& start, const OptimizerOptions& opt,
                                         double& seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  auto r = optimize(pb, start, opt);
  seconds = seconds_since(t0);
  return r;
}

/// P_eps from the configured controls, then P_eps,sigma anchored at its optimum when sigma is set.
inline json optimize_into(OutputSet& out, RunConfig& cfg, const std::string& command, const Logger& log) {
  const auto t0 = std::chrono::steady_clock::now();
  auto su = build_setup(cfg);
  double s1 = 0.0, s2 = 0.0;
  log("optimize: eps = " + fmt17(cfg.eps) + " (limit mode)");
  const Problem p1{su.model, su.init, cfg.eps, LimitMode{}};
  const auto r1 = timed_optimize(p1, su.controls, cfg.optimizer, s1);
  log("  iterations " + std::to_string(r1.iterations) + ", residual " + fmt17(r1.residual) + ", " + r1.stop_reason);

  std::string hist = history_header() + history_rows("eps", r1);
  std::vector<StageRow> rows{{"eps", cfg.eps, std::nullopt, fenchel_gap_integral(su.model, r1.state, r1.controls), 0.0,
                              s1, &r1}};
  write_stage_fields(out, "eps", su.model, r1);

  OptimizationResult r2;
  if (cfg.sigma) {
    log("optimize: sigma = " + fmt17(*cfg.sigma) + " (penalized, anchored at the eps optimum)");
    const Problem p2{su.model, su.init, cfg.eps, PenalizedMode{*cfg.sigma, r1.controls}};
    r2 = timed_optimize(p2, r1.controls, cfg.optimizer, s2);
    log("  iterations " + std::to_string(r2.iterations) + ", residual " + fmt17(r2.residual) + ", " + r2.stop_reason);
    const auto d = difference(r2.controls.u, r1.controls.u);
    rows.push_back({"eps_sigma", cfg.eps, cfg.sigma, fenchel_gap_integral(su.model, r2.state, r2.controls),
                    std::sqrt(inner_control(*su.grid, d, d, su.model.tau())), s2, &r2});
    hist += history_rows("eps_sigma", r2);
    write_stage_fields(out, "eps_sigma", su.model, r2);
  }
  out.text("history.csv", hist);
  std::string st = stages_header();
  json js = json::array();
  for (const auto& r : rows) {
    st += stage_csv_row(r);
    js.push_back(stage_json(r));
  }
  out.text("stages.csv", st);
  return out.manifest(command, cfg, std::move(js), seconds_since(t0));
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline json cmd_forward(RunConfig cfg, const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::OutputSet out(ctx.out);
  auto su = build_setup(cfg);
  ctx.log("forward: " + std::to_string(cfg.nt) + " steps on " + std::to_string(su.grid->size()) + " nodes");
  const auto s = solve_state(su.model, su.init, su.controls);
  out.text("state_forward.csv", state_csv(su.model, s));
  out.text("controls_forward.csv", controls_csv(su.model, su.controls));
  out.series("theta_forward", s.theta);
  out.series("phi_forward", s.phi);
  int newton = 0;
  for (const auto& d : s.diagnostics) newton += d.newton_phi + d.newton_theta;
  json st = json::array();
  st.push_back({{"stage", "forward"},
                {"min_theta", s.min_theta()},
                {"max_balance_residual", s.max_balance_residual()},
                {"linf_violation", s.linf_violation()},
                {"newton_iterations", newton},
                {"energy_final", allen_cahn_energy(*su.grid, s.phi.back())}});
  return out.manifest("forward", cfg, std::move(st), detail::seconds_since(t0));
}

struct GradcheckEntry {
  std::string mode;
  std::string slot;
  int direction = 0;
  double fd = 0.0;
  double adjoint = 0.0;
  double rel_err = 0.0;
};

/// Central differences of the cost along random single-slot directions
/// against the adjoint gradient, for J_eps and (if sigma is set) J_eps,sigma.
inline std::vector<GradcheckEntry> gradcheck_entries(const RunConfig& cfg_in, const Setup& su) {
  RunConfig cfg = cfg_in;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const auto& model = su.model;
  const Grid& g = *su.grid;
  const std::size_t nt = model.nt();

  ControlSet base = su.controls;
  for (auto& f : base.eta)
    for (auto& x : f.values()) x = std::clamp(x, -0.9, 0.9);

  std::vector<std::pair<std::string, CostMode>> modes{{"limit", LimitMode{}}};
  if (cfg.sigma) {
    ControlSet anchors = base;
    const auto& b = model.params.bounds;
    for (auto& f : anchors.u)
      for (auto& x : f.values()) x = std::clamp(x + 0.25 * (b.u_max - b.u_min) * U(rng), b.u_min, b.u_max);
    for (auto& f : anchors.v)
      for (auto& x : f.values()) x = std::clamp(x + 0.25 * (b.v_max - b.v_min) * U(rng), b.v_min, b.v_max);
    for (auto& f : anchors.eta)
      for (auto& x : f.values()) x = std::clamp(x + 0.5 * U(rng), -1.0, 1.0);
    modes.emplace_back("penalized", PenalizedMode{*cfg.sigma, anchors});
  }

  std::vector<GradcheckEntry> out;
  const double h = cfg.gradcheck.fd_step;
  for (const auto& [name, mode] : modes) {
    const Problem pb{model, su.init, cfg.eps, mode};
    const auto ev = evaluate(pb, base);
    for (const char* slot : {"u", "v", "eta"}) {
      for (int k = 0; k < cfg.gradcheck.directions; ++k) {
        ControlSet d = ControlSet::constant(su.grid, nt, 0.0, 0.0, 0.0);
        const std::string s = slot;
        if (s == "u")
          for (auto& f : d.u)
            for (auto& x : f.values()) x = U(rng);
        if (s == "v")
          for (auto& f : d.v)
            for (auto& x : f.values()) x = U(rng);
        if (s == "eta")
          for (auto& f : d.eta)
            for (auto& x : f.values()) x = U(rng);
        ControlSet cp = base, cm = base;
        for (std::size_t n = 0; n < nt; ++n) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            cp.u[n][i] += h * d.u[n][i];
            cm.u[n][i] -= h * d.u[n][i];
          }
          for (std::size_t i = 0; i < g.boundary_size(); ++i) {
            cp.v[n][i] += h * d.v[n][i];
            cm.v[n][i] -= h * d.v[n][i];
          }
        }
        for (std::size_t n = 0; n <= nt; ++n)
          for (std::size_t i = 0; i < g.size(); ++i) {
            cp.eta[n][i] += h * d.eta[n][i];
            cm.eta[n][i] -= h * d.eta[n][i];
          }
        const double jp = evaluate(pb, cp, false).cost.total;
        const double jm = evaluate(pb, cm, false).cost.total;
        GradcheckEntry e;
        e.mode = name;
        e.slot = s;
        e.direction = k;
        e.fd = (jp - jm) / (2.0 * h);
        e.adjoint = control_inner(model, ev.gradient, d);
        const double scale = std::max({std::abs(e.fd), std::abs(e.adjoint), 1e-300});
        e.rel_err = std::abs(e.fd - e.adjoint) / scale;
        out.push_back(e);
      }
    }
  }
  return out;
}

inline json cmd_gradcheck(RunConfig cfg, const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::OutputSet out(ctx.out);
  auto su = build_setup(cfg);
  const auto entries = gradcheck_entries(cfg, su);
  std::string csv = "mode,slot,direction,fd,adjoint,rel_err\n";
  json st = json::array();
  std::map<std::string, double> worst;
  for (const auto& e : entries) {
    csv += e.mode + "," + e.slot + "," + std::to_string(e.direction) + "," + fmt17(e.fd) + "," + fmt17(e.adjoint) + "," +
           fmt17(e.rel_err) + "\n";
    worst[e.mode] = std::max(worst[e.mode], e.rel_err);
  }
  for (const auto& [mode, w] : worst) {
    ctx.log("gradcheck " + mode + ": max rel err " + fmt17(w));
    st.push_back({{"stage", mode}, {"max_rel_err", w}});
  }
  out.text("gradcheck.csv", csv);
  return out.manifest("gradcheck", cfg, std::move(st), detail::seconds_since(t0));
}

inline json cmd_optimize(RunConfig cfg, const RunContext& ctx) {
  detail::OutputSet out(ctx.out);
  return detail::optimize_into(out, cfg, "optimize", ctx.log);
}

inline json cmd_continue(RunConfig cfg, const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::OutputSet out(ctx.out);
  auto su = build_setup(cfg);
  ctx.log("continue: " + std::to_string(cfg.schedule.eps.size()) + " eps stages x (1 + " +
          std::to_string(cfg.schedule.sigma.size()) + ")");
  const auto stages = continuation(su.model, su.init, cfg.schedule, su.controls, cfg.optimizer);
  std::string hist = detail::history_header();
  std::string st = detail::stages_header();
  json js = json::array();
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& s = stages[k];
    char tag[32];
    std::snprintf(tag, sizeof tag, "stage_%02zu", k);
    ctx.log(std::string("  ") + tag + " eps " + fmt17(s.eps) + (s.sigma ? " sigma " + fmt17(*s.sigma) : "") +
            ": residual " + fmt17(s.result.residual) + ", zeta/eps " + fmt17(s.zeta / s.eps));
    const detail::StageRow row{tag, s.eps, s.sigma, s.zeta, s.drift_u, s.wall_seconds, &s.result};
    hist += detail::history_rows(tag, s.result);
    st += detail::stage_csv_row(row);
    js.push_back(detail::stage_json(row));
    detail::write_stage_fields(out, tag, su.model, s.result);
  }
  out.text("history.csv", hist);
  out.text("stages.csv", st);
  return out.manifest("continue", cfg, std::move(js), detail::seconds_since(t0));
}

/// One cell per (eps, sigma) pair of the schedule, each an independent
/// optimize run in its own subdirectory; cells run on worker threads.
inline json cmd_sweep(RunConfig cfg, const RunContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::OutputSet out(ctx.out);
  build_setup(cfg);  // validate once before spawning workers

  struct Cell {
    std::size_t i, j;
    std::string name;
    json manifest;
  };
  std::vector<Cell> cells;
  const auto& se = cfg.schedule.eps;
  const auto& ss = cfg.schedule.sigma;
  for (std::size_t i = 0; i < se.size(); ++i)
    for (std::size_t j = 0; j < std::max<std::size_t>(ss.size(), 1); ++j) {
      char name[32];
      std::snprintf(name, sizeof name, "cell_%02zu_%02zu", i, j);
      cells.push_back({i, j, name, {}});
    }

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < cells.size();) {
      try {
        RunConfig cc = cfg;
        cc.warnings.clear();
        cc.eps = se[cells[k].i];
        cc.sigma = ss.empty() ? std::optional<double>{} : std::optional<double>{ss[cells[k].j]};
        detail::OutputSet cell_out(ctx.out / cells[k].name);
        cells[k].manifest = detail::optimize_into(cell_out, cc, "optimize", [](const std::string&) {});
        std::lock_guard lock(mu);
        ctx.log("sweep: " + cells[k].name + " done");
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned n_workers = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::thread::hardware_concurrency();
  n_workers = std::max(1u, std::min<unsigned>(n_workers, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::string csv = "cell,eps,sigma,stage,cost,residual,iterations,converged,zeta,u_violation,v_violation,eta_violation\n";
  json js = json::array();
  for (const auto& c : cells) {
    for (const auto& s : c.manifest.at("stages")) {
      const double sig = s.at("sigma").is_null() ? 0.0 : s.at("sigma").get<double>();
      csv += c.name + "," + fmt17(se[c.i]) + "," + fmt17(sig) + "," + s.at("stage").get<std::string>() + "," +
             fmt17(s.at("cost").get<double>()) + "," + fmt17(s.at("residual").get<double>()) + "," +
             std::to_string(s.at("iterations").get<int>()) + "," + (s.at("converged").get<bool>() ? "1" : "0") + "," +
             fmt17(s.at("zeta").get<double>()) + "," + fmt17(s.at("violation").at("u").get<double>()) + "," +
             fmt17(s.at("violation").at("v").get<double>()) + "," + fmt17(s.at("violation").at("eta").get<double>()) +
             "\n";
    }
    for (const auto& f : c.manifest.at("outputs")) out.add(c.name + "/" + f.get<std::string>());
    out.add(c.name + "/manifest.json");
    js.push_back({{"stage", c.name}, {"eps", se[c.i]}, {"stages", c.manifest.at("stages")}});
  }
  out.text("sweep.csv", csv);
  return out.manifest("sweep", cfg, std::move(js), detail::seconds_since(t0));
}

/// Dispatch by subcommand name.
inline json run_command(const std::string& command, RunConfig cfg, const RunContext& ctx) {
  if (command == "forward") return cmd_forward(std::move(cfg), ctx);
  if (command == "gradcheck") return cmd_gradcheck(std::move(cfg), ctx);
  if (command == "optimize") return cmd_optimize(std::move(cfg), ctx);
  if (command == "continue") return cmd_continue(std::move(cfg), ctx);
  if (command == "sweep") return cmd_sweep(std::move(cfg), ctx);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace pfsc
