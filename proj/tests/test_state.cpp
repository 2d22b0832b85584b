#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "pfsc/spacetime.hpp"
#include "pfsc/state.hpp"
#include "support.hpp"

using namespace pfsc;
using pfsc::testing::Rng;
using pfsc::testing::random_field;
using pfsc::testing::small_model;
using pfsc::testing::smooth_init;

namespace {

using Vec = std::vector<double>;

// 1D ghost-stencil Laplacian with optional Robin data (alpha, g) at both ends.
Vec lap1d(const Vec& w, double h, const double* alpha, const double* g) {
  const std::size_t n = w.size();
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double lo, hi;
    if (i == 0) {
      hi = w[1];
      lo = alpha ? hi - 2.0 * h * alpha[0] * (w[0] - g[0]) : hi;
    } else if (i == n - 1) {
      lo = w[n - 2];
      hi = alpha ? lo - 2.0 * h * alpha[1] * (w[n - 1] - g[1]) : lo;
    } else {
      lo = w[i - 1];
      hi = w[i + 1];
    }
    out[i] = (lo - 2.0 * w[i] + hi) / (h * h);
  }
  return out;
}

// Plain Newton with a forward-difference Jacobian and dense LU.
Vec dense_root(const std::function<Vec(const Vec&)>& F, Vec x) {
  const std::size_t n = x.size();
  for (int it = 0; it < 100; ++it) {
    const Vec f = F(x);
    double r = 0.0;
    for (double v : f) r = std::max(r, std::abs(v));
    if (r < 1e-13) break;
    Eigen::MatrixXd J(n, n);
    for (std::size_t c = 0; c < n; ++c) {
      Vec xp = x;
      const double e = 1e-7 * std::max(1.0, std::abs(x[c]));
      xp[c] += e;
      const Vec fp = F(xp);
      for (std::size_t r2 = 0; r2 < n; ++r2) J(r2, c) = (fp[r2] - f[r2]) / e;
    }
    Eigen::VectorXd rhs(n);
    for (std::size_t i = 0; i < n; ++i) rhs[i] = -f[i];
    const Eigen::VectorXd dx = J.partialPivLu().solve(rhs);
    for (std::size_t i = 0; i < n; ++i) x[i] += dx[i];
  }
  return x;
}

double max_abs_diff(const Vec& a, const ScalarField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Model with_bounds(const Model& m, double ub, double vb) {
  auto p = m.params;
  p.bounds = {-ub, ub, -vb, vb};
  return Model(m.grid, m.robin, p, m.newton, m.caps);
}

}  // namespace

TEST(StepPhi, StationaryPoints) {
  auto g = Grid::line(1.0, 9);
  const auto zero = step_phi(*g, ScalarField(g, 0.0), ScalarField(g, 1.2), 0.3, 1.2);
  EXPECT_LT(zero.field.max(), 1e-14);
  EXPECT_GT(zero.field.min(), -1e-14);
  const auto one = step_phi(*g, ScalarField(g, 1.0), ScalarField(g, 1.2), 0.3, 1.2);
  EXPECT_NEAR(one.field.max(), 1.0, 1e-12);
  EXPECT_NEAR(one.field.min(), 1.0, 1e-12);
}

TEST(StepPhi, MatchesDenseRootFinder) {
  auto g = Grid::line(1.0, 4);
  const double h = 0.2, tc = 1.1, dx = g->spacing()[0];
  const Vec po = {0.3, -0.5, 0.9, 0.1}, to = {0.8, 1.4, 1.0, 1.2};
  auto F = [&](const Vec& x) {
    const Vec L = lap1d(x, dx, nullptr, nullptr);
    Vec r(4);
    for (int i = 0; i < 4; ++i)
      r[i] = (x[i] - po[i]) / h - L[i] + x[i] * x[i] * x[i] - po[i] - (1.0 / tc - 1.0 / to[i]);
    return r;
  };
  const Vec ref = dense_root(F, po);
  const auto got = step_phi(*g, ScalarField(g, po), ScalarField(g, to), h, tc);
  EXPECT_LE(max_abs_diff(ref, got.field), 1e-9);
  EXPECT_LE(got.residual, 1e-10);
}

TEST(StepTheta, MatchesDenseRootFinder) {
  auto g = Grid::line(1.0, 4);
  const double h = 0.15, dx = g->spacing()[0];
  const double alpha[2] = {0.7, 1.6}, v[2] = {0.4, -0.3};
  const Vec to = {0.9, 1.3, 0.6, 1.1}, po = {0.2, 0.4, -0.7, 0.0}, pn = {0.25, 0.3, -0.6, 0.1}, u = {0.5, -1.0, 0.2, 0.8};
  auto F = [&](const Vec& th) {
    Vec b(4);
    for (int i = 0; i < 4; ++i) b[i] = th[i] - 1.0 / th[i];
    const Vec L = lap1d(b, dx, alpha, v);
    Vec r(4);
    for (int i = 0; i < 4; ++i) r[i] = (th[i] - to[i]) / h - L[i] + (pn[i] - po[i]) / h - u[i];
    return r;
  };
  const Vec ref = dense_root(F, to);
  RobinOperator op(g, BoundaryField(g, Vec{alpha[0], alpha[1]}));
  const auto got = step_theta(*g, op, ScalarField(g, to), ScalarField(g, po), ScalarField(g, pn), ScalarField(g, u),
                              BoundaryField(g, Vec{v[0], v[1]}), h);
  EXPECT_LE(max_abs_diff(ref, got.field), 1e-9);
  EXPECT_GT(got.field.min(), 0.0);
}

TEST(StepTheta, StationaryWithMatchedBoundaryData) {
  auto g = Grid::rectangle(1.0, 1.0, 6, 6);
  const double tc = 1.3;
  RobinOperator op(g, BoundaryField(g, 2.0));
  const ScalarField th(g, tc), ph(g, 0.4);
  const auto r = step_theta(*g, op, th, ph, ph, ScalarField(g, 0.0), BoundaryField(g, beta(tc)), 0.1);
  EXPECT_NEAR(r.field.max(), tc, 1e-12);
  EXPECT_NEAR(r.field.min(), tc, 1e-12);
}

TEST(StepTheta, MeanRisesWithSource) {
  auto g = Grid::line(1.0, 21);
  const double tc = 1.0, c = 0.5, h = 1e-6;
  RobinOperator op(g, BoundaryField(g, 1.0));
  const ScalarField th(g, tc), ph(g, 0.0);
  const auto r = step_theta(*g, op, th, ph, ph, ScalarField(g, c), BoundaryField(g, beta(tc)), h);
  const double rise = integrate_omega(*g, r.field) - tc;
  EXPECT_NEAR(rise / (c * h), 1.0, 1e-3);
}

TEST(Steps, RejectBadArguments) {
  auto g = Grid::line(1.0, 5);
  RobinOperator op(g, BoundaryField(g, 1.0));
  const ScalarField one(g, 1.0), zero(g, 0.0);
  EXPECT_THROW(step_phi(*g, one, one, 0.0, 1.0), DomainError);
  EXPECT_THROW(step_phi(*g, one, zero, 0.1, 1.0), DomainError);
  EXPECT_THROW(step_theta(*g, op, zero, one, one, one, BoundaryField(g, 0.0), 0.1), DomainError);
  EXPECT_THROW(step_theta(*g, op, one, one, one, one, BoundaryField(g, 0.0), -0.1), DomainError);
  auto h = Grid::line(1.0, 6);
  EXPECT_THROW(step_phi(*g, ScalarField(h, 0.0), one, 0.1, 1.0), GridMismatch);
}

TEST(StepPhi, NewtonFailureIsReported) {
  auto g = Grid::line(1.0, 9);
  NewtonOptions opt;
  opt.max_iter = 1;
  opt.tol = 1e-300;
  try {
    step_phi(*g, ScalarField(g, 0.7), ScalarField(g, 0.5), 1.0, 1.0, opt);
    FAIL() << "expected SolverFailure";
  } catch (const SolverFailure& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
}

TEST(SolveState, FailurePropagatesStepIndex) {
  auto m = small_model(9, 4);
  m.newton.max_iter = 1;
  m.newton.tol = 1e-300;
  try {
    solve_state(m, smooth_init(m), ControlSet::constant(m.grid, m.nt(), 0.2, 0.1, 0.0));
    FAIL() << "expected SolverFailure";
  } catch (const SolverFailure& e) {
    EXPECT_EQ(e.step(), 0);
  }
}

TEST(SolveState, StationaryInputGivesConstantTrajectory) {
  for (double phi0 : {0.0, 1.0}) {
    auto m = small_model(11, 8, 1.0, 1.0, 1.0, 1.4);
    const InitialData init{ScalarField(m.grid, 1.4), ScalarField(m.grid, phi0)};
    const auto s = solve_state(m, init, ControlSet::constant(m.grid, m.nt(), 0.0, beta(1.4), 0.3));
    ASSERT_EQ(s.theta.size(), 9u);
    for (std::size_t n = 0; n <= m.nt(); ++n) {
      EXPECT_NEAR(s.theta[n].max(), 1.4, 1e-12);
      EXPECT_NEAR(s.theta[n].min(), 1.4, 1e-12);
      EXPECT_NEAR(s.phi[n].max(), phi0, 1e-12);
      EXPECT_NEAR(s.phi[n].min(), phi0, 1e-12);
    }
  }
}

TEST(SolveState, HeatBalanceHoldsPerStep) {
  Rng rng(31);
  auto m = small_model(17, 12);
  for (int t = 0; t < 10; ++t) {
    const auto c = pfsc::testing::random_controls(m, rng);
    const auto s = solve_state(m, smooth_init(m), c);
    EXPECT_LE(s.max_balance_residual(), 1e-9);
  }
  auto g = Grid::rectangle(1.0, 1.0, 8, 8);
  auto p = m.params;
  p.theta_f.assign(p.nt + 1, ScalarField(g, 1.0));
  Model m2(g, RobinOperator(g, BoundaryField(g, 1.2)), p);
  const auto s2 = solve_state(m2, InitialData{random_field(g, rng, 0.5, 1.5), random_field(g, rng, -1.0, 1.0)},
                              pfsc::testing::random_controls(m2, rng));
  EXPECT_LE(s2.max_balance_residual(), 1e-9);
}

TEST(SolveState, PositivityAtBoxCorners) {
  Rng rng(41);
  const auto m = with_bounds(small_model(17, 10, 1.0), 20.0, 20.0);
  const auto& b = m.params.bounds;
  for (int t = 0; t < 50; ++t) {
    ControlSet c = ControlSet::constant(m.grid, m.nt(), 0.0, 0.0, 0.0);
    for (std::size_t n = 0; n < m.nt(); ++n) {
      for (std::size_t i = 0; i < m.grid->size(); ++i) c.u[n][i] = rng.integer(0, 1) ? b.u_max : b.u_min;
      for (std::size_t k = 0; k < m.grid->boundary_size(); ++k) c.v[n][k] = rng.integer(0, 1) ? b.v_max : b.v_min;
    }
    ASSERT_TRUE(c.feasible(b));
    const auto s = solve_state(m, smooth_init(m), c);
    EXPECT_GT(s.min_theta(), 0.0);
    for (const auto& th : s.theta) EXPECT_GT(th.min(), 0.0);
  }
}

TEST(SolveState, AllenCahnEnergyNonincreasingUnderPhiSteps) {
  Rng rng(51);
  for (auto g : {Grid::line(2.0, 33), Grid::rectangle(1.0, 1.0, 12, 12)}) {
    for (double h : {0.01, 0.5, 5.0}) {
      auto phi = random_field(g, rng, -1.5, 1.5);
      const ScalarField th(g, 1.0);
      double e = allen_cahn_energy(*g, phi);
      for (int k = 0; k < 10; ++k) {
        phi = step_phi(*g, phi, th, h, 1.0).field;
        const double e2 = allen_cahn_energy(*g, phi);
        EXPECT_LE(e2, e + 1e-12 * std::max(1.0, e));
        e = e2;
      }
    }
  }
}

TEST(SolveState, ContinuousDependenceProbe) {
  auto m = small_model(17, 16);
  const auto init = smooth_init(m);
  const auto base = ControlSet::constant(m.grid, m.nt(), 0.1, -0.1, 0.0);
  const auto s0 = solve_state(m, init, base);
  std::vector<double> ratios, diffs;
  for (double delta : {1e-2, 5e-3, 2.5e-3}) {
    auto c = base;
    for (auto& f : c.u)
      for (auto& x : f.values()) x += delta;
    const auto s = solve_state(m, init, c);
    ratios.push_back(continuous_dependence_ratio(m, s, s0, c, base));
    diffs.push_back(pfsc::testing::series_max_diff(s.theta, s0.theta));
  }
  for (std::size_t k = 1; k < diffs.size(); ++k) EXPECT_LT(diffs[k], diffs[k - 1]);
  for (double r : ratios) {
    EXPECT_TRUE(std::isfinite(r));
    EXPECT_GT(r, 0.0);
    EXPECT_LE(r, 2.0 * ratios.front());
  }
}

TEST(SolveState, LinfMonitoringReportsWithoutFailing) {
  auto m = small_model(9, 6);
  const auto c = ControlSet::constant(m.grid, m.nt(), 0.5, 0.3, 0.0);
  const auto init = smooth_init(m);
  EXPECT_FALSE(solve_state(m, init, c).linf_violation());
  m.caps.theta_max = 10.0;
  m.caps.inv_theta_max = 10.0;
  EXPECT_FALSE(solve_state(m, init, c).linf_violation());
  m.caps.theta_max = 1.0;
  const auto s = solve_state(m, init, c);
  EXPECT_TRUE(s.linf_violation());
  ASSERT_EQ(s.diagnostics.size(), m.nt() + 1);
  for (std::size_t n = 0; n <= m.nt(); ++n) {
    EXPECT_DOUBLE_EQ(s.diagnostics[n].max_theta, s.theta[n].max());
    EXPECT_DOUBLE_EQ(s.diagnostics[n].min_theta, s.theta[n].min());
  }
}

TEST(SolveState, ShapeChecks) {
  auto m = small_model(9, 4);
  auto c = ControlSet::constant(m.grid, 3, 0.0, 0.0, 0.0);
  EXPECT_THROW(solve_state(m, smooth_init(m), c), GridMismatch);
  InitialData bad{ScalarField(m.grid, -1.0), ScalarField(m.grid, 0.0)};
  EXPECT_THROW(solve_state(m, bad, ControlSet::constant(m.grid, 4, 0.0, 0.0, 0.0)), DomainError);
}

TEST(ModelParams, Validation) {
  auto m = small_model(9, 4);
  auto p = m.params;
  p.bounds.u_min = 2.0;
  EXPECT_THROW(Model(m.grid, m.robin, p), DomainError);
  p = m.params;
  p.bounds.v_max = -2.0;
  EXPECT_THROW(Model(m.grid, m.robin, p), DomainError);
  p = m.params;
  p.theta_f.pop_back();
  EXPECT_THROW(Model(m.grid, m.robin, p), GridMismatch);
  p = m.params;
  p.lambda1 = -1.0;
  EXPECT_THROW(Model(m.grid, m.robin, p), DomainError);
}
