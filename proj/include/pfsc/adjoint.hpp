#pragma once

// Tangent (system in variations) and adjoint (dual system) of the discrete
// forward map in state.hpp.
//
// The tangent linearizes each step exactly around the stored trajectory:
//   J_phi Phi^{n+1}  = W [ (1/h + 1) Phi^n + Y^n / (theta^n)^2 ]
//   J_th  dw^{n+1}   = W [ Y^n/h - (Phi^{n+1} - Phi^n)/h + u~^n ] + E^T Gamma alpha v~^n
//   Y^{n+1}          = dw^{n+1} / beta'(theta^{n+1})
// with J_phi = K + W (1/h + 3 (phi^{n+1})^2) and
//      J_th  = K + W / (h beta'(theta^{n+1})) + E^T Gamma alpha E  (both SPD).
//
// The adjoint is the transpose of that program, run backwards: within each
// slot the theta step is transposed first, then the phi step. With
// p^n = (J_th^{-1} ...)/h and q^n = (J_phi^{-1} ...)/h the duality identity
//
//   sum_Q c_n W (I1 Y + I2 Phi) = sum_n h [ W u~^n p^n + Gamma alpha v~^n p^n ]
//
// holds to rounding, and p^{nt} = q^{nt} = 0. In the continuous limit the
// recursion is p_t + beta'(theta) Lap p + q / theta^2 = -I1,
// q_t + Lap q - (3 phi^2 - 1) q + p_t = -I2, d_nu p + alpha p = 0, d_nu q = 0.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "pfsc/convex.hpp"
#include "pfsc/grid.hpp"
#include "pfsc/linalg.hpp"
#include "pfsc/spacetime.hpp"
#include "pfsc/state.hpp"

namespace pfsc {

struct TangentPair {
  FieldSeries Y;    // nt + 1, Y[0] = 0
  FieldSeries Phi;  // nt + 1, Phi[0] = 0
};

struct AdjointPair {
  FieldSeries p;  // nt + 1, p[nt] = 0; p[n] pairs with control slice n
  FieldSeries q;  // nt + 1, q[nt] = 0
};

struct AdjointSources {
  FieldSeries I1, I2, I3, xi;  // nt + 1 levels each
};

/// Cost with j replaced by its Moreau-Yosida envelope plus anchor penalties.
struct PenalizedMode {
  double sigma = 0.05;
  ControlSet anchors;
};

/// Cost with the exact j; xi is the selection sign(theta - theta_c), `at_kink` at theta == theta_c.
struct LimitMode {
  double at_kink = 0.0;
};

/// J_eps with j replaced by j_sigma and no anchor terms. A smooth surrogate of
/// P_eps; driving sigma to 0 approximates the eps-stage optimum.
struct SmoothedMode {
  double sigma = 0.05;
};

using CostMode = std::variant<LimitMode, PenalizedMode, SmoothedMode>;

/// sigma of a smoothing mode, empty in limit mode.
inline std::optional<double> mode_sigma(const CostMode& mode) {
  if (const auto* p = std::get_if<PenalizedMode>(&mode)) return p->sigma;
  if (const auto* s = std::get_if<SmoothedMode>(&mode)) return s->sigma;
  return std::nullopt;
}

inline double inverse_eps(double eps) {
  if (std::isinf(eps) && eps > 0.0) return 0.0;
  if (!(eps > 0.0)) throw DomainError("eps must be positive (or +inf to drop the Fenchel term)");
  return 1.0 / eps;
}

namespace detail {

inline void phi_jacobian_diag(const Grid& g, const ScalarField& phi_new, double h, std::vector<double>& d) {
  for (std::size_t i = 0; i < g.size(); ++i) d[i] = g.weights()[i] * (1.0 / h + 3.0 * phi_new[i] * phi_new[i]);
}

inline void theta_jacobian_diag(const Grid& g, const RobinOperator& robin, const ScalarField& theta_new, double h,
                                std::vector<double>& d) {
  for (std::size_t i = 0; i < g.size(); ++i) d[i] = g.weights()[i] / (h * beta_prime(theta_new[i]));
  for (std::size_t k = 0; k < g.boundary_size(); ++k)
    d[g.boundary_index()[k]] += g.boundary_weights()[k] * robin.alpha()[k];
}

inline void check_trajectory(const Model& model, const StateTrajectory& state, const char* who) {
  if (state.theta.size() != model.nt() + 1 || state.phi.size() != model.nt() + 1)
    throw GridMismatch(std::string(who) + ": trajectory does not match the model's time grid");
  require_on(*model.grid, state.theta.front(), who);
}

}  // namespace detail

inline TangentPair solve_tangent(const Model& model, const StateTrajectory& state, const FieldSeries& u_dir,
                                 const BoundarySeries& v_dir) {
  detail::check_trajectory(model, state, "solve_tangent");
  const Grid& g = *model.grid;
  const std::size_t nt = model.nt(), N = g.size();
  if (u_dir.size() != nt || v_dir.size() != nt) throw GridMismatch("solve_tangent: direction needs nt slices");
  for (std::size_t n = 0; n < nt; ++n) {
    require_on(g, u_dir[n], "solve_tangent");
    require_on(g, v_dir[n], "solve_tangent");
  }
  const double h = model.tau();
  const auto& W = g.weights();
  const auto& alpha = model.robin.alpha();

  TangentPair t;
  t.Y.assign(nt + 1, ScalarField(model.grid, 0.0));
  t.Phi.assign(nt + 1, ScalarField(model.grid, 0.0));

  SpdSystem sys(g);
  std::vector<double> d(N), rhs(N), sol(N);
  for (std::size_t n = 0; n < nt; ++n) {
    const auto& Y = t.Y[n];
    const auto& Ph = t.Phi[n];
    const auto& th = state.theta[n];

    for (std::size_t i = 0; i < N; ++i) rhs[i] = W[i] * ((1.0 / h + 1.0) * Ph[i] + Y[i] / (th[i] * th[i]));
    detail::phi_jacobian_diag(g, state.phi[n + 1], h, d);
    sys.factorize(d);
    sys.solve(rhs, t.Phi[n + 1].values());

    const auto& Phn = t.Phi[n + 1];
    for (std::size_t i = 0; i < N; ++i) rhs[i] = W[i] * (Y[i] / h - (Phn[i] - Ph[i]) / h + u_dir[n][i]);
    for (std::size_t k = 0; k < g.boundary_size(); ++k)
      rhs[g.boundary_index()[k]] += g.boundary_weights()[k] * alpha[k] * v_dir[n][k];
    detail::theta_jacobian_diag(g, model.robin, state.theta[n + 1], h, d);
    sys.factorize(d);
    sys.solve(rhs, sol);
    for (std::size_t i = 0; i < N; ++i) t.Y[n + 1][i] = sol[i] / beta_prime(state.theta[n + 1][i]);
  }
  return t;
}

/// I1 = 2 l1 (theta - theta_f) + (xi - eta)/eps, I2 = 2 l2 (phi - eta), I3 = -2 l2 (phi - eta) + (theta_c - theta)/eps.
inline AdjointSources build_sources(const Model& model, const StateTrajectory& state, const ControlSet& controls,
                                    double eps, const CostMode& mode) {
  detail::check_trajectory(model, state, "build_sources");
  const auto& P = model.params;
  const std::size_t nt = model.nt(), N = model.grid->size();
  if (controls.eta.size() != nt + 1) throw GridMismatch("build_sources: eta needs nt + 1 levels");
  const double ie = inverse_eps(eps);
  const ConvexContext cx(P.theta_c);
  const auto sigma = mode_sigma(mode);
  const auto* lim = std::get_if<LimitMode>(&mode);
  if (sigma && !(*sigma > 0.0)) throw DomainError("build_sources: sigma must be positive");

  AdjointSources s;
  s.I1.assign(nt + 1, ScalarField(model.grid, 0.0));
  s.I2 = s.I1;
  s.I3 = s.I1;
  s.xi = s.I1;
  for (std::size_t n = 0; n <= nt; ++n) {
    for (std::size_t i = 0; i < N; ++i) {
      const double th = state.theta[n][i], ph = state.phi[n][i], et = controls.eta[n][i];
      const double xi = sigma ? cx.moreau_jprime(th, *sigma) : cx.heaviside_selection(th, lim->at_kink);
      s.xi[n][i] = xi;
      s.I1[n][i] = 2.0 * P.lambda1 * (th - P.theta_f[n][i]) + ie * (xi - et);
      s.I2[n][i] = 2.0 * P.lambda2 * (ph - et);
      s.I3[n][i] = -2.0 * P.lambda2 * (ph - et) + ie * (P.theta_c - th);
    }
  }
  return s;
}

inline AdjointPair solve_adjoint(const Model& model, const StateTrajectory& state, const AdjointSources& src) {
  detail::check_trajectory(model, state, "solve_adjoint");
  const Grid& g = *model.grid;
  const std::size_t nt = model.nt(), N = g.size();
  if (src.I1.size() != nt + 1 || src.I2.size() != nt + 1)
    throw GridMismatch("solve_adjoint: sources do not match the time grid");
  for (std::size_t n = 0; n <= nt; ++n) {
    require_on(g, src.I1[n], "solve_adjoint");
    require_on(g, src.I2[n], "solve_adjoint");
  }
  const double h = model.tau();
  const auto& W = g.weights();
  const auto c = state_time_weights(nt, h);

  // adjoint accumulators (gradient of the cost w.r.t. Y^n, Phi^n)
  std::vector<std::vector<double>> Yb(nt + 1, std::vector<double>(N)), Pb(nt + 1, std::vector<double>(N));
  for (std::size_t n = 0; n <= nt; ++n)
    for (std::size_t i = 0; i < N; ++i) {
      Yb[n][i] = c[n] * W[i] * src.I1[n][i];
      Pb[n][i] = c[n] * W[i] * src.I2[n][i];
    }

  AdjointPair a;
  a.p.assign(nt + 1, ScalarField(model.grid, 0.0));
  a.q.assign(nt + 1, ScalarField(model.grid, 0.0));

  SpdSystem sys(g);
  std::vector<double> d(N), rhs(N), ra(N), rc(N);
  for (std::size_t m = nt; m-- > 0;) {
    // theta step transpose
    const auto& thn = state.theta[m + 1];
    for (std::size_t i = 0; i < N; ++i) rhs[i] = Yb[m + 1][i] / beta_prime(thn[i]);
    detail::theta_jacobian_diag(g, model.robin, thn, h, d);
    sys.factorize(d);
    sys.solve(rhs, ra);
    for (std::size_t i = 0; i < N; ++i) {
      const double f = W[i] * ra[i] / h;
      Yb[m][i] += f;
      Pb[m + 1][i] -= f;
      Pb[m][i] += f;
    }
    // phi step transpose
    detail::phi_jacobian_diag(g, state.phi[m + 1], h, d);
    sys.factorize(d);
    sys.solve(Pb[m + 1], rc);
    const auto& th = state.theta[m];
    for (std::size_t i = 0; i < N; ++i) {
      Pb[m][i] += (1.0 / h + 1.0) * W[i] * rc[i];
      Yb[m][i] += W[i] * rc[i] / (th[i] * th[i]);
    }
    for (std::size_t i = 0; i < N; ++i) {
      a.p[m][i] = ra[i] / h;
      a.q[m][i] = rc[i] / h;
    }
  }
  return a;
}

/// Riesz representatives of the reduced gradient: u and v w.r.t. the control
/// inner products (tau W, tau Gamma), eta w.r.t. the state inner product.
struct Gradient {
  FieldSeries u;      // nt
  BoundarySeries v;   // nt
  FieldSeries eta;    // nt + 1
};

inline Gradient reduced_gradient(const Model& model, const AdjointPair& adj, const AdjointSources& src,
                                 const ControlSet& controls, const CostMode& mode) {
  const Grid& g = *model.grid;
  const std::size_t nt = model.nt();
  controls.check_shape(g, nt);
  if (adj.p.size() != nt + 1 || src.I3.size() != nt + 1)
    throw GridMismatch("reduced_gradient: adjoint or sources do not match the time grid");
  const auto* pen = std::get_if<PenalizedMode>(&mode);
  if (pen) {
    try {
      pen->anchors.check_shape(g, nt);
    } catch (const GridMismatch&) {
      throw GridMismatch("reduced_gradient: penalized mode needs anchors shaped like the controls");
    }
  }
  const auto& alpha = model.robin.alpha();

  Gradient gr;
  gr.u.reserve(nt);
  gr.v.reserve(nt);
  for (std::size_t n = 0; n < nt; ++n) {
    ScalarField gu = adj.p[n];
    BoundaryField gv = trace(adj.p[n]);
    for (std::size_t k = 0; k < gv.size(); ++k) gv[k] *= alpha[k];
    if (pen) {
      for (std::size_t i = 0; i < gu.size(); ++i) gu[i] += 2.0 * (controls.u[n][i] - pen->anchors.u[n][i]);
      for (std::size_t k = 0; k < gv.size(); ++k) gv[k] += 2.0 * (controls.v[n][k] - pen->anchors.v[n][k]);
    }
    gr.u.push_back(std::move(gu));
    gr.v.push_back(std::move(gv));
  }
  gr.eta = src.I3;
  if (pen)
    for (std::size_t n = 0; n <= nt; ++n)
      for (std::size_t i = 0; i < g.size(); ++i) gr.eta[n][i] += 2.0 * (controls.eta[n][i] - pen->anchors.eta[n][i]);
  return gr;
}

}  // namespace pfsc
