#pragma once

// Cost functionals
//   J          = l1 int_Q (theta - theta_f)^2 + l2 int_Q (phi - eta)^2
//   J_eps      = J + (1/eps) int_Q ( j(theta) + eta theta_c - eta theta )
//   J_eps,sig  = J + (1/eps) int_Q ( j_sig(theta) + eta theta_c - eta theta )
//                  + int_Q (u - u*)^2 + int_Sigma (v - v*)^2 + int_Q (eta - eta*)^2
// with trapezoid quadrature in space and time (control slices: weight tau).

#include <cmath>
#include <cstddef>
#include <variant>

#include "pfsc/adjoint.hpp"
#include "pfsc/convex.hpp"
#include "pfsc/spacetime.hpp"
#include "pfsc/state.hpp"

namespace pfsc {

struct CostReport {
  double total = 0.0;
  double tracking_theta = 0.0;
  double tracking_phase = 0.0;
  double fenchel_term = 0.0;   // (1/eps) times the Fenchel integral
  double penalty_terms = 0.0;  // anchor distances, penalized mode only
};

namespace detail {

inline void check_cost_inputs(const Model& model, const StateTrajectory& state, const ControlSet& controls,
                              const char* who) {
  detail::check_trajectory(model, state, who);
  controls.check_shape(*model.grid, model.nt());
}

inline void require_eta_box(const ControlSet& controls, const char* who) {
  for (const auto& f : controls.eta)
    for (double x : f.values())
      if (std::abs(x) > 1.0) throw DomainError(std::string(who) + ": |eta| <= 1 violated");
}

/// Sum of the two tracking terms.
inline void tracking_terms(const Model& model, const StateTrajectory& state, const ControlSet& controls,
                           CostReport& r) {
  const Grid& g = *model.grid;
  const auto& P = model.params;
  const auto c = state_time_weights(model.nt(), model.tau());
  double a = 0.0, b = 0.0;
  for (std::size_t n = 0; n <= model.nt(); ++n)
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double w = c[n] * g.weights()[i];
      const double dt = state.theta[n][i] - P.theta_f[n][i];
      const double dp = state.phi[n][i] - controls.eta[n][i];
      a += w * dt * dt;
      b += w * dp * dp;
    }
  r.tracking_theta = P.lambda1 * a;
  r.tracking_phase = P.lambda2 * b;
}

/// int_Q ( f(theta) + eta theta_c - eta theta ) with f = j or j_sigma.
template <class F>
double fenchel_integral(const Model& model, const StateTrajectory& state, const ControlSet& controls, F&& f) {
  const Grid& g = *model.grid;
  const double tc = model.params.theta_c;
  const auto c = state_time_weights(model.nt(), model.tau());
  double s = 0.0;
  for (std::size_t n = 0; n <= model.nt(); ++n)
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double th = state.theta[n][i], et = controls.eta[n][i];
      s += c[n] * g.weights()[i] * (f(th) + et * tc - et * th);
    }
  return s;
}

inline double anchor_penalty(const Model& model, const ControlSet& controls, const ControlSet& anchors) {
  const Grid& g = *model.grid;
  const double tau = model.tau();
  const auto du = difference(controls.u, anchors.u);
  const auto dv = difference(controls.v, anchors.v);
  const auto de = difference(controls.eta, anchors.eta);
  return inner_control(g, du, du, tau) + inner_boundary(g, dv, dv, tau) + inner_state(g, de, de, tau);
}

}  // namespace detail

inline CostReport cost_J(const Model& model, const StateTrajectory& state, const ControlSet& controls) {
  detail::check_cost_inputs(model, state, controls, "cost_J");
  CostReport r;
  detail::tracking_terms(model, state, controls, r);
  r.total = r.tracking_theta + r.tracking_phase;
  return r;
}

/// zeta = int_Q ( j(theta) + eta theta_c - eta theta ), the Fenchel gap of the pair (theta, eta).
inline double fenchel_gap_integral(const Model& model, const StateTrajectory& state, const ControlSet& controls) {
  detail::check_cost_inputs(model, state, controls, "fenchel_gap_integral");
  const ConvexContext cx(model.params.theta_c);
  return detail::fenchel_integral(model, state, controls, [&](double th) { return cx.j(th); });
}

inline CostReport cost_J_eps(const Model& model, const StateTrajectory& state, const ControlSet& controls,
                             double eps) {
  detail::check_cost_inputs(model, state, controls, "cost_J_eps");
  detail::require_eta_box(controls, "cost_J_eps");
  const double ie = inverse_eps(eps);
  CostReport r;
  detail::tracking_terms(model, state, controls, r);
  if (ie > 0.0) r.fenchel_term = ie * fenchel_gap_integral(model, state, controls);
  r.total = r.tracking_theta + r.tracking_phase + r.fenchel_term;
  return r;
}

inline CostReport cost_J_eps_sigma(const Model& model, const StateTrajectory& state, const ControlSet& controls,
                                   double eps, double sigma, const ControlSet& anchors) {
  detail::check_cost_inputs(model, state, controls, "cost_J_eps_sigma");
  detail::require_eta_box(controls, "cost_J_eps_sigma");
  try {
    anchors.check_shape(*model.grid, model.nt());
  } catch (const GridMismatch&) {
    throw GridMismatch("cost_J_eps_sigma: anchors are not shaped like the controls");
  }
  if (!(sigma > 0.0)) throw DomainError("cost_J_eps_sigma: sigma must be positive");
  const double ie = inverse_eps(eps);
  const ConvexContext cx(model.params.theta_c);
  CostReport r;
  detail::tracking_terms(model, state, controls, r);
  if (ie > 0.0)
    r.fenchel_term =
        ie * detail::fenchel_integral(model, state, controls, [&](double th) { return cx.moreau_j(th, sigma); });
  r.penalty_terms = detail::anchor_penalty(model, controls, anchors);
  r.total = r.tracking_theta + r.tracking_phase + r.fenchel_term + r.penalty_terms;
  return r;
}

/// J_eps with j replaced by j_sigma, no anchor terms.
inline CostReport cost_J_eps_smoothed(const Model& model, const StateTrajectory& state, const ControlSet& controls,
                                      double eps, double sigma) {
  detail::check_cost_inputs(model, state, controls, "cost_J_eps_smoothed");
  detail::require_eta_box(controls, "cost_J_eps_smoothed");
  if (!(sigma > 0.0)) throw DomainError("cost_J_eps_smoothed: sigma must be positive");
  const double ie = inverse_eps(eps);
  const ConvexContext cx(model.params.theta_c);
  CostReport r;
  detail::tracking_terms(model, state, controls, r);
  if (ie > 0.0)
    r.fenchel_term =
        ie * detail::fenchel_integral(model, state, controls, [&](double th) { return cx.moreau_j(th, sigma); });
  r.total = r.tracking_theta + r.tracking_phase + r.fenchel_term;
  return r;
}

/// J_eps in limit mode, J_eps,sigma in penalized mode, smoothed J_eps otherwise.
inline CostReport evaluate_cost(const Model& model, const StateTrajectory& state, const ControlSet& controls,
                                double eps, const CostMode& mode) {
  if (const auto* pen = std::get_if<PenalizedMode>(&mode))
    return cost_J_eps_sigma(model, state, controls, eps, pen->sigma, pen->anchors);
  if (const auto* sm = std::get_if<SmoothedMode>(&mode)) return cost_J_eps_smoothed(model, state, controls, eps, sm->sigma);
  return cost_J_eps(model, state, controls, eps);
}

}  // namespace pfsc
