#pragma once

// Space-time quadrature. State-like series (nt + 1 levels) use the trapezoid
// rule in time; control slices (nt intervals) use weight tau per slice.

#include <cmath>
#include <cstddef>
#include <vector>

#include "pfsc/grid.hpp"
#include "pfsc/state.hpp"

namespace pfsc {

inline std::vector<double> state_time_weights(std::size_t nt, double tau) {
  std::vector<double> c(nt + 1, tau);
  c.front() *= 0.5;
  c.back() *= 0.5;
  return c;
}

/// sum_n c_n sum_i W_i a_i^n b_i^n over nt + 1 levels.
inline double inner_state(const Grid& g, const FieldSeries& a, const FieldSeries& b, double tau) {
  if (a.size() != b.size()) throw GridMismatch("inner_state: series length mismatch");
  const auto c = state_time_weights(a.size() - 1, tau);
  double s = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t i = 0; i < g.size(); ++i) s += c[n] * g.weights()[i] * a[n][i] * b[n][i];
  return s;
}

/// sum_n tau sum_i W_i a_i^n b_i^n over control slices.
inline double inner_control(const Grid& g, const FieldSeries& a, const FieldSeries& b, double tau) {
  if (a.size() != b.size()) throw GridMismatch("inner_control: series length mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t i = 0; i < g.size(); ++i) s += tau * g.weights()[i] * a[n][i] * b[n][i];
  return s;
}

/// sum_n tau sum_k Gamma_k a_k^n b_k^n over boundary control slices.
inline double inner_boundary(const Grid& g, const BoundarySeries& a, const BoundarySeries& b, double tau) {
  if (a.size() != b.size()) throw GridMismatch("inner_boundary: series length mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t k = 0; k < g.boundary_size(); ++k) s += tau * g.boundary_weights()[k] * a[n][k] * b[n][k];
  return s;
}

template <class Series>
Series difference(const Series& a, const Series& b) {
  if (a.size() != b.size()) throw GridMismatch("difference: series length mismatch");
  Series out = a;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t i = 0; i < a[n].size(); ++i) out[n][i] -= b[n][i];
  return out;
}

/// Ratio monitored for continuous dependence on the data:
///   ||theta1 - theta2||^2_{L2(Q)} / (||u1 - u2||_{L2(Q)} + ||v1 - v2||^2_{L2(Sigma)}).
/// The mixed exponents follow the stated estimate as written.
inline double continuous_dependence_ratio(const Model& model, const StateTrajectory& s1, const StateTrajectory& s2,
                                          const ControlSet& c1, const ControlSet& c2) {
  const Grid& g = *model.grid;
  const double tau = model.tau();
  const auto dth = difference(s1.theta, s2.theta);
  const auto du = difference(c1.u, c2.u);
  const auto dv = difference(c1.v, c2.v);
  const double num = inner_state(g, dth, dth, tau);
  const double den = std::sqrt(inner_control(g, du, du, tau)) + inner_boundary(g, dv, dv, tau);
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace pfsc
