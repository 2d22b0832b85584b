#pragma once

// Semi-implicit time stepping of the Penrose-Fife system
//
//   theta_t - Lap beta(theta) + phi_t = u                     in Q
//   phi_t - Lap phi + phi^3 - phi     = 1/theta_c - 1/theta   in Q
//   -d_nu beta(theta) = alpha (beta(theta) - v),  d_nu phi = 0 on Sigma
//
// One step t_n -> t_{n+1} is
//   1. phi:   (phi+ - phi)/h - Lap_N phi+ + phi+^3 - phi = 1/theta_c - 1/theta
//      (cubic implicit, -phi explicit, source at the old temperature);
//   2. theta: (b(w) - theta)/h - Lap_R(w; v) + (phi+ - phi)/h = u,  theta+ = b(w)
//      where b = beta^{-1}, so theta+ > 0 for every w.
// Both nonlinear solves are damped Newton in weighted (W * equation) form.
//
// Time layout: the state lives on levels 0..nt; u and v are piecewise constant
// on the nt intervals, slice n acting on (t_n, t_{n+1}].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "pfsc/convex.hpp"
#include "pfsc/errors.hpp"
#include "pfsc/grid.hpp"
#include "pfsc/linalg.hpp"

namespace pfsc {

using FieldSeries = std::vector<ScalarField>;
using BoundarySeries = std::vector<BoundaryField>;

struct ControlBounds {
  double u_min = -1.0;
  double u_max = 1.0;
  double v_min = -1.0;
  double v_max = 1.0;
};

struct NewtonOptions {
  double tol = 1e-10;
  int max_iter = 50;
  int max_halvings = 30;
};

/// Caps for the L-infinity monitors on theta and 1/theta. Exceeding them is reported, never fatal.
struct LinfCaps {
  double theta_max = std::numeric_limits<double>::infinity();
  double inv_theta_max = std::numeric_limits<double>::infinity();
};

struct ModelParams {
  double theta_c = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  FieldSeries theta_f;  // nt + 1 levels
  ControlBounds bounds;
  double T = 1.0;
  std::size_t nt = 1;

  double tau() const noexcept { return T / static_cast<double>(nt); }

  void validate(const Grid& grid) const {
    if (!(theta_c > 0.0)) throw DomainError("ModelParams: theta_c must be positive");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw DomainError("ModelParams: lambda1, lambda2 must be >= 0");
    if (!(T > 0.0)) throw DomainError("ModelParams: T must be positive");
    if (nt < 1) throw DomainError("ModelParams: nt must be >= 1");
    if (bounds.u_min > bounds.u_max) throw DomainError("ModelParams: u_min > u_max (K1)");
    if (bounds.v_min > bounds.v_max) throw DomainError("ModelParams: v_min > v_max (K2)");
    if (theta_f.size() != nt + 1) throw GridMismatch("ModelParams: theta_f needs nt + 1 levels");
    for (const auto& f : theta_f) require_on(grid, f, "ModelParams.theta_f");
  }
};

/// Everything a forward/tangent/adjoint solve needs besides data.
struct Model {
  GridPtr grid;
  RobinOperator robin;
  ModelParams params;
  NewtonOptions newton{};
  LinfCaps caps{};

  Model(GridPtr g, RobinOperator r, ModelParams p, NewtonOptions n = {}, LinfCaps c = {})
      : grid(std::move(g)), robin(std::move(r)), params(std::move(p)), newton(n), caps(c) {
    if (!robin.grid()->same_as(*grid)) throw GridMismatch("Model: Robin operator on another grid");
    params.validate(*grid);
  }

  double tau() const noexcept { return params.tau(); }
  std::size_t nt() const noexcept { return params.nt; }
};

struct InitialData {
  ScalarField theta0;
  ScalarField phi0;

  void validate(const Grid& grid) const {
    require_on(grid, theta0, "InitialData.theta0");
    require_on(grid, phi0, "InitialData.phi0");
    if (!(theta0.min() > 0.0)) throw DomainError("InitialData: theta0 must be positive everywhere");
  }
};

/// u, v: nt slices (one per time interval); eta: nt + 1 levels (same as the state).
struct ControlSet {
  FieldSeries u;
  BoundarySeries v;
  FieldSeries eta;

  static ControlSet constant(const GridPtr& grid, std::size_t nt, double u, double v, double eta) {
    ControlSet c;
    c.u.assign(nt, ScalarField(grid, u));
    c.v.assign(nt, BoundaryField(grid, v));
    c.eta.assign(nt + 1, ScalarField(grid, eta));
    return c;
  }

  void check_shape(const Grid& grid, std::size_t nt) const {
    if (u.size() != nt || v.size() != nt || eta.size() != nt + 1)
      throw GridMismatch("ControlSet: expected nt slices for u, v and nt + 1 levels for eta");
    for (const auto& f : u) require_on(grid, f, "ControlSet.u");
    for (const auto& f : v) require_on(grid, f, "ControlSet.v");
    for (const auto& f : eta) require_on(grid, f, "ControlSet.eta");
  }

  bool feasible(const ControlBounds& b, double slack = 0.0) const {
    for (const auto& f : u)
      for (double x : f.values())
        if (x < b.u_min - slack || x > b.u_max + slack) return false;
    for (const auto& f : v)
      for (double x : f.values())
        if (x < b.v_min - slack || x > b.v_max + slack) return false;
    for (const auto& f : eta)
      for (double x : f.values())
        if (std::abs(x) > 1.0 + slack) return false;
    return true;
  }
};

struct StepDiagnostics {
  double min_theta = 0.0;
  double max_theta = 0.0;
  double max_abs_phi = 0.0;
  double balance_residual = 0.0;  // relative, see solve_state
  int newton_phi = 0;
  int newton_theta = 0;
  bool linf_violation = false;
};

struct StateTrajectory {
  FieldSeries theta;  // nt + 1
  FieldSeries phi;    // nt + 1
  std::vector<StepDiagnostics> diagnostics;  // nt + 1, entry 0 describes the initial data

  std::size_t nt() const noexcept { return theta.empty() ? 0 : theta.size() - 1; }

  double max_balance_residual() const {
    double m = 0.0;
    for (const auto& d : diagnostics) m = std::max(m, d.balance_residual);
    return m;
  }
  double min_theta() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& d : diagnostics) m = std::min(m, d.min_theta);
    return m;
  }
  bool linf_violation() const {
    return std::any_of(diagnostics.begin(), diagnostics.end(), [](const auto& d) { return d.linf_violation; });
  }
};

struct StepResult {
  ScalarField field;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

inline double weighted_max_norm(std::span<const double> r, std::span<const double> W) {
  double m = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) m = std::max(m, std::abs(r[i] / W[i]));
  return m;
}

/// Damped Newton on a weighted residual. `residual(x, R)` fills R; `jacobian(x)`
/// factorizes the Jacobian in `sys`. The convergence measure is max |R_i / W_i|,
/// i.e. the residual of the pointwise equation, compared against
/// tol * max(1, scale) where `scale` is the size of the right-hand side (this
/// keeps tiny time steps, whose terms carry 1/h, above the rounding floor).
/// Once below the tolerance one more full
/// step is taken (kept only if it does not increase the residual) so the
/// returned iterate sits at the rounding floor.
template <class Residual, class Jacobian>
std::pair<int, double> damped_newton(std::vector<double>& x, Residual&& residual, Jacobian&& jacobian,
                                     SpdSystem& sys, std::span<const double> W, const NewtonOptions& opt,
                                     double scale, const char* who) {
  const std::size_t n = x.size();
  const double tol = opt.tol * std::max(1.0, scale);
  std::vector<double> R(n), dx(n), xt(n), Rt(n);
  residual(x, R);
  double r = weighted_max_norm(R, W);
  if (!std::isfinite(r)) throw SolverFailure(std::string(who) + ": non-finite initial residual", -1, r);
  for (int it = 0; it < opt.max_iter; ++it) {
    jacobian(x);
    sys.solve(R, dx);
    if (r <= tol) {
      for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] - dx[i];
      residual(xt, Rt);
      const double rt = weighted_max_norm(Rt, W);
      if (rt <= r) {
        x.swap(xt);
        r = rt;
      }
      return {it + 1, r};
    }
    double step = 1.0;
    bool accepted = false;
    for (int k = 0; k <= opt.max_halvings; ++k) {
      for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] - step * dx[i];
      residual(xt, Rt);
      const double rt = weighted_max_norm(Rt, W);
      if (std::isfinite(rt) && rt < r) {
        x.swap(xt);
        R.swap(Rt);
        r = rt;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted)
      throw SolverFailure(std::string(who) + ": damped Newton stalled (no decrease after step halving)", -1, r);
  }
  if (r <= tol) return {opt.max_iter, r};
  throw SolverFailure(std::string(who) + ": Newton did not converge within the iteration limit", -1, r);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// phi step

inline StepResult step_phi(const Grid& grid, SpdSystem& sys, const ScalarField& phi_old, const ScalarField& theta_old,
                           double h, double theta_c, const NewtonOptions& opt = {}) {
  require_on(grid, phi_old, "step_phi");
  require_on(grid, theta_old, "step_phi");
  if (!(h > 0.0)) throw DomainError("step_phi: time step must be positive");
  if (!(theta_old.min() > 0.0)) throw DomainError("step_phi: theta_old must be positive");
  const auto& W = grid.weights();
  const std::size_t n = grid.size();
  std::vector<double> src(n);
  for (std::size_t i = 0; i < n; ++i) src[i] = phi_old[i] / h + phi_old[i] + 1.0 / theta_c - 1.0 / theta_old[i];

  std::vector<double> Kx(n), d(n);
  auto residual = [&](const std::vector<double>& x, std::vector<double>& R) {
    kernel::stiffness_apply(grid, x, Kx);
    for (std::size_t i = 0; i < n; ++i) R[i] = W[i] * (x[i] / h + x[i] * x[i] * x[i] - src[i]) + Kx[i];
  };
  auto jacobian = [&](const std::vector<double>& x) {
    for (std::size_t i = 0; i < n; ++i) d[i] = W[i] * (1.0 / h + 3.0 * x[i] * x[i]);
    sys.factorize(d);
  };
  std::vector<double> x = phi_old.vec();
  double scale = 0.0;
  for (double v : src) scale = std::max(scale, std::abs(v));
  auto [its, res] = detail::damped_newton(x, residual, jacobian, sys, W, opt, scale, "step_phi");
  return {ScalarField(phi_old.grid(), std::move(x)), its, res};
}

inline StepResult step_phi(const Grid& grid, const ScalarField& phi_old, const ScalarField& theta_old, double h,
                           double theta_c, const NewtonOptions& opt = {}) {
  SpdSystem sys(grid);
  return step_phi(grid, sys, phi_old, theta_old, h, theta_c, opt);
}

// ---------------------------------------------------------------------------
// theta step

inline StepResult step_theta(const Grid& grid, SpdSystem& sys, const RobinOperator& robin, const ScalarField& theta_old,
                             const ScalarField& phi_old, const ScalarField& phi_new, const ScalarField& u_now,
                             const BoundaryField& v_now, double h, const NewtonOptions& opt = {}) {
  for (const auto* f : {&theta_old, &phi_old, &phi_new, &u_now}) require_on(grid, *f, "step_theta");
  require_on(grid, v_now, "step_theta");
  if (!(h > 0.0)) throw DomainError("step_theta: time step must be positive");
  if (!(theta_old.min() > 0.0)) throw DomainError("step_theta: theta_old must be positive");
  const auto& W = grid.weights();
  const auto& Gw = grid.boundary_weights();
  const auto& bidx = grid.boundary_index();
  const auto& alpha = robin.alpha();
  const std::size_t n = grid.size();

  std::vector<double> src(n);
  for (std::size_t i = 0; i < n; ++i) src[i] = theta_old[i] / h - (phi_new[i] - phi_old[i]) / h + u_now[i];

  std::vector<double> Kx(n), d(n);
  auto residual = [&](const std::vector<double>& w, std::vector<double>& R) {
    kernel::stiffness_apply(grid, w, Kx);
    for (std::size_t i = 0; i < n; ++i) R[i] = W[i] * (beta_inverse(w[i]) / h - src[i]) + Kx[i];
    for (std::size_t k = 0; k < bidx.size(); ++k) R[bidx[k]] += Gw[k] * alpha[k] * (w[bidx[k]] - v_now[k]);
  };
  auto jacobian = [&](const std::vector<double>& w) {
    for (std::size_t i = 0; i < n; ++i) d[i] = W[i] * beta_inverse_prime(w[i]) / h;
    for (std::size_t k = 0; k < bidx.size(); ++k) d[bidx[k]] += Gw[k] * alpha[k];
    sys.factorize(d);
  };
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = beta(theta_old[i]);
  double scale = 0.0;
  for (double v : src) scale = std::max(scale, std::abs(v));
  auto [its, res] = detail::damped_newton(w, residual, jacobian, sys, W, opt, scale, "step_theta");
  for (auto& x : w) x = beta_inverse(x);
  return {ScalarField(theta_old.grid(), std::move(w)), its, res};
}

inline StepResult step_theta(const Grid& grid, const RobinOperator& robin, const ScalarField& theta_old,
                             const ScalarField& phi_old, const ScalarField& phi_new, const ScalarField& u_now,
                             const BoundaryField& v_now, double h, const NewtonOptions& opt = {}) {
  SpdSystem sys(grid);
  return step_theta(grid, sys, robin, theta_old, phi_old, phi_new, u_now, v_now, h, opt);
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Relative residual of the discrete heat balance over one step:
///   d/dt (int theta + int phi) - int u + int_Gamma alpha (beta(theta+) - v),
/// divided by max(1, sum of the magnitudes of the four terms).
inline double heat_balance_residual(const Grid& grid, const RobinOperator& robin, const ScalarField& theta_old,
                                    const ScalarField& theta_new, const ScalarField& phi_old,
                                    const ScalarField& phi_new, const ScalarField& u, const BoundaryField& v,
                                    double h) {
  const auto& W = grid.weights();
  double dtheta = 0.0, dphi = 0.0, src = 0.0, flux = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    dtheta += W[i] * (theta_new[i] - theta_old[i]) / h;
    dphi += W[i] * (phi_new[i] - phi_old[i]) / h;
    src += W[i] * u[i];
  }
  for (std::size_t k = 0; k < grid.boundary_size(); ++k) {
    const double tb = theta_new[grid.boundary_index()[k]];
    flux += grid.boundary_weights()[k] * robin.alpha()[k] * (beta(tb) - v[k]);
  }
  const double scale = std::max(1.0, std::abs(dtheta) + std::abs(dphi) + std::abs(src) + std::abs(flux));
  return std::abs(dtheta + dphi - src + flux) / scale;
}

inline StepDiagnostics level_diagnostics(const ScalarField& theta, const ScalarField& phi, const LinfCaps& caps) {
  StepDiagnostics d;
  d.min_theta = theta.min();
  d.max_theta = theta.max();
  d.max_abs_phi = std::max(std::abs(phi.min()), std::abs(phi.max()));
  d.linf_violation = d.max_theta > caps.theta_max || 1.0 / d.min_theta > caps.inv_theta_max;
  return d;
}

// ---------------------------------------------------------------------------
// Full forward solve

inline StateTrajectory solve_state(const Model& model, const InitialData& init, const ControlSet& controls) {
  const Grid& grid = *model.grid;
  init.validate(grid);
  controls.check_shape(grid, model.nt());
  const double h = model.tau();
  const std::size_t nt = model.nt();

  StateTrajectory traj;
  traj.theta.reserve(nt + 1);
  traj.phi.reserve(nt + 1);
  traj.theta.push_back(init.theta0);
  traj.phi.push_back(init.phi0);
  traj.diagnostics.push_back(level_diagnostics(init.theta0, init.phi0, model.caps));

  SpdSystem sys(grid);
  for (std::size_t n = 0; n < nt; ++n) {
    const auto& th = traj.theta.back();
    const auto& ph = traj.phi.back();
    StepResult sp, st;
    try {
      sp = step_phi(grid, sys, ph, th, h, model.params.theta_c, model.newton);
      st = step_theta(grid, sys, model.robin, th, ph, sp.field, controls.u[n], controls.v[n], h, model.newton);
    } catch (const SolverFailure& e) {
      throw SolverFailure(std::string(e.what()) + " at step " + std::to_string(n), static_cast<long>(n), e.residual());
    }
    auto diag = level_diagnostics(st.field, sp.field, model.caps);
    diag.newton_phi = sp.iterations;
    diag.newton_theta = st.iterations;
    diag.balance_residual =
        heat_balance_residual(grid, model.robin, th, st.field, ph, sp.field, controls.u[n], controls.v[n], h);
    traj.diagnostics.push_back(diag);
    traj.theta.push_back(std::move(st.field));
    traj.phi.push_back(std::move(sp.field));
  }
  return traj;
}

/// Discrete Allen-Cahn energy int |grad phi|^2 / 2 + (phi^2 - 1)^2 / 4.
inline double allen_cahn_energy(const Grid& grid, const ScalarField& phi) {
  double e = 0.0;
  for (const auto& ed : grid.edges()) {
    const double d = phi[ed.a] - phi[ed.b];
    e += 0.5 * ed.coef * d * d;
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s = phi[i] * phi[i] - 1.0;
    e += grid.weights()[i] * 0.25 * s * s;
  }
  return e;
}

}  // namespace pfsc
