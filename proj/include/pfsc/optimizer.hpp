#pragma once

// Projected-gradient descent with Armijo backtracking over (u, v, eta) in
// K1 x K2 x K_[-1,1], continuation in sigma and eps, and a posteriori
// classification of the bang-bang structure of a computed optimum.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pfsc/adjoint.hpp"
#include "pfsc/cost.hpp"
#include "pfsc/spacetime.hpp"
#include "pfsc/state.hpp"

namespace pfsc {

// ---------------------------------------------------------------------------
// Projection

inline ControlSet project_controls(const ControlSet& raw, const ControlBounds& b) {
  ControlSet c = raw;
  for (auto& f : c.u)
    for (auto& x : f.values()) x = std::clamp(x, b.u_min, b.u_max);
  for (auto& f : c.v)
    for (auto& x : f.values()) x = std::clamp(x, b.v_min, b.v_max);
  for (auto& f : c.eta)
    for (auto& x : f.values()) x = std::clamp(x, -1.0, 1.0);
  return c;
}

inline ControlSet project_controls(const ControlSet& raw, const ModelParams& params) {
  return project_controls(raw, params.bounds);
}

/// c + s * g, slot by slot.
inline ControlSet axpy(const ControlSet& c, double s, const Gradient& g) {
  ControlSet out = c;
  for (std::size_t n = 0; n < out.u.size(); ++n)
    for (std::size_t i = 0; i < out.u[n].size(); ++i) out.u[n][i] += s * g.u[n][i];
  for (std::size_t n = 0; n < out.v.size(); ++n)
    for (std::size_t k = 0; k < out.v[n].size(); ++k) out.v[n][k] += s * g.v[n][k];
  for (std::size_t n = 0; n < out.eta.size(); ++n)
    for (std::size_t i = 0; i < out.eta[n].size(); ++i) out.eta[n][i] += s * g.eta[n][i];
  return out;
}

/// Inner product on the control space: tau W on u, tau Gamma on v, trapezoid on eta.
inline double control_inner(const Model& model, const ControlSet& a, const ControlSet& b) {
  const Grid& g = *model.grid;
  const double tau = model.tau();
  return inner_control(g, a.u, b.u, tau) + inner_boundary(g, a.v, b.v, tau) + inner_state(g, a.eta, b.eta, tau);
}

inline double control_inner(const Model& model, const Gradient& gr, const ControlSet& d) {
  const Grid& g = *model.grid;
  const double tau = model.tau();
  return inner_control(g, gr.u, d.u, tau) + inner_boundary(g, gr.v, d.v, tau) + inner_state(g, gr.eta, d.eta, tau);
}

inline ControlSet control_difference(const ControlSet& a, const ControlSet& b) {
  return {difference(a.u, b.u), difference(a.v, b.v), difference(a.eta, b.eta)};
}

inline double control_norm(const Model& model, const ControlSet& c) { return std::sqrt(control_inner(model, c, c)); }

/// ||c - P(c - g)|| / max(1, ||c||).
inline double stationarity_residual(const Model& model, const ControlSet& c, const Gradient& g) {
  const auto pc = project_controls(axpy(c, -1.0, g), model.params.bounds);
  return control_norm(model, control_difference(c, pc)) / std::max(1.0, control_norm(model, c));
}

// ---------------------------------------------------------------------------
// Problem and one full evaluation (state, cost, adjoint, gradient)

struct Problem {
  Model model;
  InitialData init;
  double eps = 0.1;  // +inf drops the Fenchel term
  CostMode mode = LimitMode{};
};

struct Evaluation {
  StateTrajectory state;
  CostReport cost;
  AdjointSources sources;
  AdjointPair adjoint;
  Gradient gradient;
};

inline Evaluation evaluate(const Problem& pb, const ControlSet& c, bool with_gradient = true) {
  Evaluation e;
  e.state = solve_state(pb.model, pb.init, c);
  e.cost = evaluate_cost(pb.model, e.state, c, pb.eps, pb.mode);
  if (with_gradient) {
    e.sources = build_sources(pb.model, e.state, c, pb.eps, pb.mode);
    e.adjoint = solve_adjoint(pb.model, e.state, e.sources);
    e.gradient = reduced_gradient(pb.model, e.adjoint, e.sources, c, pb.mode);
  }
  return e;
}

/// Pointwise minimizer over |eta| <= 1 of the eta-dependent part of the cost,
///   l2 (phi - eta)^2 + (1/eps) eta (theta_c - theta) [+ (eta - eta*)^2],
/// which is exact because the state does not depend on eta.
inline void minimize_eta(const Problem& pb, const StateTrajectory& state, ControlSet& c) {
  const auto& P = pb.model.params;
  const double ie = inverse_eps(pb.eps);
  const auto* pen = std::get_if<PenalizedMode>(&pb.mode);
  const double a = P.lambda2 + (pen ? 1.0 : 0.0);
  for (std::size_t n = 0; n < c.eta.size(); ++n)
    for (std::size_t i = 0; i < c.eta[n].size(); ++i) {
      const double th = state.theta[n][i], ph = state.phi[n][i];
      const double lin = ie * (P.theta_c - th);
      if (a > 0.0) {
        const double anchor = pen ? pen->anchors.eta[n][i] : 0.0;
        c.eta[n][i] = std::clamp((P.lambda2 * ph + anchor - 0.5 * lin) / a, -1.0, 1.0);
      } else if (lin > 0.0) {
        c.eta[n][i] = -1.0;
      } else if (lin < 0.0) {
        c.eta[n][i] = 1.0;
      }
    }
}

// ---------------------------------------------------------------------------
// Bang-bang classification

struct BangBangReport {
  // per point: +1 gradient sign asks for the lower bound, -1 for the upper bound, 0 free
  std::vector<std::vector<std::int8_t>> u_class, v_class, eta_class;
  double u_violation = 0.0, v_violation = 0.0, eta_violation = 0.0;  // space-time measures
  double u_fraction = 0.0, v_fraction = 0.0, eta_fraction = 0.0;     // relative to |Q| or |Sigma|
  double complementarity = 0.0;  // int (u - u_m)(u_M - u) 1{|p| > tol_p}
  double tol_p = 0.0, tol_I3 = 0.0;
};

/// Checks u = u_m where p > tol_p, u = u_M where p < -tol_p (same for v with
/// alpha p on the boundary) and eta = -1 where I3 > tol_I3, eta = 1 where
/// I3 < -tol_I3. `bound_tol` is the slack for "sits on the bound".
inline BangBangReport bang_bang_classify(const Model& model, const ControlSet& c, const AdjointPair& adj,
                                         const AdjointSources& src, double tol_p, double tol_I3,
                                         double bound_tol = 1e-9) {
  const Grid& g = *model.grid;
  const auto& b = model.params.bounds;
  const std::size_t nt = model.nt();
  const double tau = model.tau();
  const auto cw = state_time_weights(nt, tau);
  const double su = bound_tol * std::max(1.0, b.u_max - b.u_min);
  const double sv = bound_tol * std::max(1.0, b.v_max - b.v_min);

  BangBangReport r;
  r.tol_p = tol_p;
  r.tol_I3 = tol_I3;
  auto classify = [](double s, double tol) -> std::int8_t { return s > tol ? 1 : (s < -tol ? -1 : 0); };
  auto violates = [](std::int8_t cls, double x, double lo, double hi, double slack) {
    if (cls > 0) return std::abs(x - lo) > slack;
    if (cls < 0) return std::abs(x - hi) > slack;
    return false;
  };

  r.u_class.assign(nt, std::vector<std::int8_t>(g.size(), 0));
  r.v_class.assign(nt, std::vector<std::int8_t>(g.boundary_size(), 0));
  for (std::size_t n = 0; n < nt; ++n) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto cls = classify(adj.p[n][i], tol_p);
      r.u_class[n][i] = cls;
      const double x = c.u[n][i];
      if (violates(cls, x, b.u_min, b.u_max, su)) r.u_violation += tau * g.weights()[i];
      if (cls != 0) r.complementarity += tau * g.weights()[i] * (x - b.u_min) * (b.u_max - x);
    }
    for (std::size_t k = 0; k < g.boundary_size(); ++k) {
      const double ap = model.robin.alpha()[k] * adj.p[n][g.boundary_index()[k]];
      const auto cls = classify(ap, tol_p);
      r.v_class[n][k] = cls;
      if (violates(cls, c.v[n][k], b.v_min, b.v_max, sv)) r.v_violation += tau * g.boundary_weights()[k];
    }
  }
  r.eta_class.assign(nt + 1, std::vector<std::int8_t>(g.size(), 0));
  for (std::size_t n = 0; n <= nt; ++n)
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto cls = classify(src.I3[n][i], tol_I3);
      r.eta_class[n][i] = cls;
      if (violates(cls, c.eta[n][i], -1.0, 1.0, bound_tol)) r.eta_violation += cw[n] * g.weights()[i];
    }
  const double Q = model.params.T * g.volume();
  const double S = model.params.T * g.perimeter();
  r.u_fraction = r.u_violation / Q;
  r.v_fraction = r.v_violation / S;
  r.eta_fraction = r.eta_violation / Q;
  return r;
}

inline double max_abs(const FieldSeries& s) {
  double m = 0.0;
  for (const auto& f : s)
    for (double x : f.values()) m = std::max(m, std::abs(x));
  return m;
}

// ---------------------------------------------------------------------------
// Projected gradient

struct OptimizerOptions {
  int max_iter = 200;
  double tol = 1e-6;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double initial_step = 1.0;
  int max_backtracks = 40;
  bool exact_eta = true;    // pointwise eta minimization after each accepted step
  double tol_p_rel = 1e-6;  // bang-bang threshold: tol_p = tol_p_rel * max|p|
  double tol_I3_rel = 1e-6; // tol_I3 = tol_I3_rel * max|I3|
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double residual = 0.0;
  double step = 0.0;
  int backtracks = 0;
};

struct OptimizationResult {
  ControlSet controls;
  StateTrajectory state;
  AdjointSources sources;
  AdjointPair adjoint;
  Gradient gradient;
  CostReport cost;
  std::vector<IterationRecord> history;
  BangBangReport kkt;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string stop_reason;
};

inline OptimizationResult optimize(const Problem& pb, const ControlSet& init_controls,
                                   const OptimizerOptions& opt = {}) {
  const auto& bounds = pb.model.params.bounds;
  init_controls.check_shape(*pb.model.grid, pb.model.nt());
  if (!init_controls.feasible(bounds, 1e-12)) throw DomainError("optimize: initial controls are not feasible");

  OptimizationResult res;
  ControlSet c = project_controls(init_controls, bounds);
  Evaluation ev;
  try {
    ev = evaluate(pb, c);
  } catch (const SolverFailure& e) {
    throw SolverFailure(std::string("optimize: initial iterate: ") + e.what(), e.step(), e.residual());
  }
  double r = stationarity_residual(pb.model, c, ev.gradient);
  res.history.push_back({0, ev.cost.total, r, 0.0, 0});

  int it = 0;
  res.stop_reason = "budget exhausted";
  while (true) {
    if (r <= opt.tol) {
      res.converged = true;
      res.stop_reason = "stationary";
      break;
    }
    if (it >= opt.max_iter) break;
    ++it;
    double s = opt.initial_step;
    bool accepted = false;
    int bt = 0;
    ControlSet trial;
    Evaluation tev;
    for (; bt <= opt.max_backtracks; ++bt, s *= opt.backtrack) {
      trial = project_controls(axpy(c, -s, ev.gradient), bounds);
      const double slope = control_inner(pb.model, ev.gradient, control_difference(trial, c));
      try {
        tev = evaluate(pb, trial, false);
      } catch (const SolverFailure& e) {
        throw SolverFailure("optimize: iteration " + std::to_string(it) + ": " + e.what(), e.step(), e.residual());
      }
      if (tev.cost.total < ev.cost.total && tev.cost.total <= ev.cost.total + opt.armijo_c * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      --it;
      res.stop_reason = "line search failed";
      break;
    }
    if (opt.exact_eta) minimize_eta(pb, tev.state, trial);
    c = std::move(trial);
    ev = evaluate(pb, c);
    r = stationarity_residual(pb.model, c, ev.gradient);
    res.history.push_back({it, ev.cost.total, r, s, bt});
  }

  res.iterations = it;
  res.residual = r;
  res.controls = std::move(c);
  res.state = std::move(ev.state);
  res.sources = std::move(ev.sources);
  res.adjoint = std::move(ev.adjoint);
  res.gradient = std::move(ev.gradient);
  res.cost = ev.cost;
  res.kkt = bang_bang_classify(pb.model, res.controls, res.adjoint, res.sources, opt.tol_p_rel * max_abs(res.adjoint.p),
                               opt.tol_I3_rel * max_abs(res.sources.I3));
  return res;
}

inline BangBangReport bang_bang_classify(const Model& model, const OptimizationResult& r, double tol_p,
                                         double tol_I3) {
  return bang_bang_classify(model, r.controls, r.adjoint, r.sources, tol_p, tol_I3);
}

// ---------------------------------------------------------------------------
// Continuation

struct Schedule {
  std::vector<double> eps;
  std::vector<double> sigma;  // may be empty: eps stages only

  void validate() const {
    auto check = [](const std::vector<double>& v, const char* name) {
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (!(v[k] > 0.0)) throw DomainError(std::string("Schedule: ") + name + " entries must be positive");
        if (k > 0 && !(v[k] < v[k - 1]))
          throw DomainError(std::string("Schedule: ") + name + " must be strictly decreasing");
      }
    };
    if (eps.empty()) throw DomainError("Schedule: eps list is empty");
    check(eps, "eps");
    check(sigma, "sigma");
  }
};

struct StageResult {
  double eps = 0.0;
  std::optional<double> sigma;  // empty for an eps (limit-mode) stage
  double zeta = 0.0;            // int_Q ( j(theta) + eta theta_c - eta theta )
  double drift_u = 0.0;         // ||u - u_prev||_{L2(Q)} against the previous stage of the same kind
  double wall_seconds = 0.0;
  OptimizationResult result;
};

/// For each eps: solve P_eps (limit mode) warm-started from the previous eps
/// optimum, then for each sigma solve P_eps,sigma anchored at that optimum,
/// warm-started from the previous sigma stage.
inline std::vector<StageResult> continuation(const Model& model, const InitialData& init, const Schedule& schedule,
                                             const ControlSet& init_controls, const OptimizerOptions& opt = {},
                                             double at_kink = 0.0) {
  schedule.validate();
  const Grid& g = *model.grid;
  std::vector<StageResult> out;
  ControlSet warm = init_controls;
  std::optional<FieldSeries> prev_eps_u;

  auto timed = [&](const Problem& pb, const ControlSet& start) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = optimize(pb, start, opt);
    const auto t1 = std::chrono::steady_clock::now();
    return std::make_pair(std::move(r), std::chrono::duration<double>(t1 - t0).count());
  };

  for (double eps : schedule.eps) {
    Problem pb{model, init, eps, LimitMode{at_kink}};
    auto [r, secs] = timed(pb, warm);
    StageResult st;
    st.eps = eps;
    st.zeta = fenchel_gap_integral(model, r.state, r.controls);
    if (prev_eps_u) {
      const auto d = difference(r.controls.u, *prev_eps_u);
      st.drift_u = std::sqrt(inner_control(g, d, d, model.tau()));
    }
    st.wall_seconds = secs;
    prev_eps_u = r.controls.u;
    warm = r.controls;
    const ControlSet anchors = r.controls;
    st.result = std::move(r);
    out.push_back(std::move(st));

    ControlSet sigma_warm = anchors;
    FieldSeries prev_u = anchors.u;
    for (double sigma : schedule.sigma) {
      Problem ps{model, init, eps, PenalizedMode{sigma, anchors}};
      auto [rs, ss] = timed(ps, sigma_warm);
      StageResult ss_rec;
      ss_rec.eps = eps;
      ss_rec.sigma = sigma;
      ss_rec.zeta = fenchel_gap_integral(model, rs.state, rs.controls);
      const auto d = difference(rs.controls.u, prev_u);
      ss_rec.drift_u = std::sqrt(inner_control(g, d, d, model.tau()));
      ss_rec.wall_seconds = ss;
      prev_u = rs.controls.u;
      sigma_warm = rs.controls;
      ss_rec.result = std::move(rs);
      out.push_back(std::move(ss_rec));
    }
  }
  return out;
}

}  // namespace pfsc
