#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "pfsc/grid.hpp"
#include "support.hpp"

using namespace pfsc;
using pfsc::testing::Rng;
using pfsc::testing::random_boundary;
using pfsc::testing::random_field;

namespace {

// Textbook 3-point stencil per axis with the ghost node eliminated through
// the flux condition. With alpha == nullptr the ghost is a plain reflection.
std::vector<double> ghost_stencil(const Grid& g, const std::vector<double>& w, const std::vector<double>* alpha,
                                  const std::vector<double>* data) {
  const auto [nx, ny] = g.counts();
  const auto [hx, hy] = g.spacing();
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const std::size_t id = g.node(i, j);
      const long slot = g.boundary_slot(id);
      const double a = (alpha && slot >= 0) ? (*alpha)[slot] : 0.0;
      const double r = (alpha && slot >= 0) ? w[id] - (*data)[slot] : 0.0;
      for (int ax = 0; ax < g.dim(); ++ax) {
        const std::size_t n = ax == 0 ? nx : ny;
        const std::size_t k = ax == 0 ? i : j;
        const double h = ax == 0 ? hx : hy;
        auto at = [&](std::size_t kk) { return ax == 0 ? w[g.node(kk, j)] : w[g.node(i, kk)]; };
        double lo, hi;
        if (k == 0) {
          hi = at(1);
          lo = hi - 2.0 * h * a * r;  // w_x(0) = alpha (w - g)
        } else if (k == n - 1) {
          lo = at(n - 2);
          hi = lo - 2.0 * h * a * r;  // -w_x(L) = alpha (w - g)
        } else {
          lo = at(k - 1);
          hi = at(k + 1);
        }
        out[id] += (lo - 2.0 * w[id] + hi) / (h * h);
      }
    }
  }
  return out;
}

double max_diff(const std::vector<double>& a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST(Grid, LineGeometry) {
  auto g = Grid::line(1.0, 5);
  EXPECT_EQ(g->size(), 5u);
  EXPECT_DOUBLE_EQ(g->spacing()[0], 0.25);
  EXPECT_EQ(g->boundary_size(), 2u);
  EXPECT_EQ(g->boundary_index()[0], 0u);
  EXPECT_EQ(g->boundary_index()[1], 4u);
  EXPECT_DOUBLE_EQ(g->x(3), 0.75);
  EXPECT_THROW(Grid::line(1.0, 2), DomainError);
  EXPECT_THROW(Grid::line(0.0, 5), DomainError);
}

TEST(Grid, RectangleGeometry) {
  auto g = Grid::rectangle(2.0, 1.0, 5, 3);
  EXPECT_EQ(g->size(), 15u);
  EXPECT_EQ(g->boundary_size(), 12u);
  double wsum = 0.0;
  for (double w : g->weights()) wsum += w;
  EXPECT_NEAR(wsum, 2.0, 1e-14);
  double gsum = 0.0;
  for (double w : g->boundary_weights()) gsum += w;
  EXPECT_NEAR(gsum, 6.0, 1e-14);
}

TEST(Laplacian, ConstantsAreInTheKernel) {
  for (auto g : {Grid::line(1.0, 9), Grid::rectangle(1.0, 2.0, 6, 7)}) {
    ScalarField c(g, 3.7);
    EXPECT_LT(max_abs(apply_laplacian_neumann(*g, c).values()), 1e-12);
    RobinOperator op(g, BoundaryField(g, 2.0));
    EXPECT_LT(max_abs(op.apply(c, BoundaryField(g, 3.7)).values()), 1e-12);
  }
}

TEST(Laplacian, LinearFieldHasZeroInteriorLaplacian) {
  auto g = Grid::line(1.0, 11);
  ScalarField w(g, 0.0);
  for (std::size_t i = 0; i < g->size(); ++i) w[i] = g->x(i);
  RobinOperator op(g, BoundaryField(g, 1.0));
  const auto ln = apply_laplacian_neumann(*g, w);
  const auto lr = op.apply(w, BoundaryField(g, 0.3));
  for (std::size_t i : g->interior_index()) {
    EXPECT_NEAR(ln[i], 0.0, 1e-12);
    EXPECT_NEAR(lr[i], 0.0, 1e-12);
  }
}

TEST(Laplacian, MatchesDenseGhostStencilOnFiveNodes) {
  auto g = Grid::line(1.0, 5);
  const double h = g->spacing()[0];
  std::vector<double> w = {0.0, h * h, 4 * h * h, 9 * h * h, 16 * h * h};
  ScalarField wf(g, w);
  EXPECT_LT(max_diff(ghost_stencil(*g, w, nullptr, nullptr), apply_laplacian_neumann(*g, wf).values()), 1e-13);

  std::vector<double> alpha = {0.7, 1.9}, data = {0.2, -0.4};
  RobinOperator op(g, BoundaryField(g, alpha));
  EXPECT_LT(max_diff(ghost_stencil(*g, w, &alpha, &data), op.apply(wf, BoundaryField(g, data)).values()), 1e-13);
}

TEST(Laplacian, MatchesGhostStencilOnRandomFields) {
  Rng rng(21);
  for (auto g : {Grid::line(1.3, 9), Grid::rectangle(1.0, 0.6, 5, 4), Grid::rectangle(2.0, 2.0, 7, 7)}) {
    for (int t = 0; t < 5; ++t) {
      const auto w = random_field(g, rng, -1.0, 1.0);
      const auto a = random_boundary(g, rng, 0.5, 2.0);
      const auto d = random_boundary(g, rng, -1.0, 1.0);
      const auto ref_n = ghost_stencil(*g, w.vec(), nullptr, nullptr);
      const auto ref_r = ghost_stencil(*g, w.vec(), &a.vec(), &d.vec());
      const double scale = 1.0 / (g->spacing()[0] * g->spacing()[0]);
      EXPECT_LT(max_diff(ref_n, apply_laplacian_neumann(*g, w).values()), 1e-12 * scale);
      EXPECT_LT(max_diff(ref_r, RobinOperator(g, a).apply(w, d).values()), 1e-12 * scale);
    }
  }
}

TEST(Laplacian, WeightedOperatorsAreSymmetric) {
  for (std::size_t N = 3; N <= 7; ++N) {
    for (auto g : {Grid::line(1.0, N), Grid::rectangle(1.0, 1.5, N, N)}) {
      const std::size_t n = g->size();
      Rng rng(N);
      const auto alpha = random_boundary(g, rng, 0.5, 2.0);
      RobinOperator op(g, alpha);
      const BoundaryField zero(g, 0.0);
      std::vector<std::vector<double>> An(n), Ar(n);  // columns of W * Lap
      for (std::size_t c = 0; c < n; ++c) {
        ScalarField e(g, 0.0);
        e[c] = 1.0;
        const auto ln = apply_laplacian_neumann(*g, e), lr = op.apply(e, zero);
        An[c].resize(n);
        Ar[c].resize(n);
        for (std::size_t r = 0; r < n; ++r) {
          An[c][r] = g->weights()[r] * ln[r];
          Ar[c][r] = g->weights()[r] * lr[r];
        }
      }
      for (std::size_t r = 0; r < n; ++r) {
        double rowsum = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          EXPECT_NEAR(An[c][r], An[r][c], 1e-12);
          EXPECT_NEAR(Ar[c][r], Ar[r][c], 1e-12);
          rowsum += An[c][r];
        }
        EXPECT_NEAR(rowsum, 0.0, 1e-10);
      }
    }
  }
}

TEST(Laplacian, SummationByParts) {
  Rng rng(4);
  for (auto g : {Grid::line(2.0, 17), Grid::rectangle(1.0, 1.0, 9, 12)}) {
    for (int t = 0; t < 20; ++t) {
      const auto w = random_field(g, rng, -2.0, 2.0);
      const auto z = random_field(g, rng, -2.0, 2.0);
      const auto a = random_boundary(g, rng, 0.5, 2.0);
      const auto d = random_boundary(g, rng, -1.0, 1.0);
      EXPECT_NEAR(integrate_omega(*g, apply_laplacian_neumann(*g, w)), 0.0, 1e-10);

      BoundaryField flux(g, 0.0);
      for (std::size_t k = 0; k < g->boundary_size(); ++k) flux[k] = a[k] * (w[g->boundary_index()[k]] - d[k]);
      const double lhs = integrate_omega(*g, RobinOperator(g, a).apply(w, d));
      EXPECT_NEAR(lhs, -integrate_gamma(*g, flux), 1e-12 * std::max(1.0, std::abs(lhs)));

      // int (Lap_N w) z = -sum_e c_e (w_a - w_b)(z_a - z_b)
      const auto ln = apply_laplacian_neumann(*g, w);
      double left = 0.0, right = 0.0;
      for (std::size_t i = 0; i < g->size(); ++i) left += g->weights()[i] * ln[i] * z[i];
      for (const auto& e : g->edges()) right -= e.coef * (w[e.a] - w[e.b]) * (z[e.a] - z[e.b]);
      EXPECT_NEAR(left, right, 1e-10 * std::max(1.0, std::abs(right)));
    }
  }
}

TEST(Laplacian, SecondOrderInteriorConsistency) {
  const double pi = std::numbers::pi;
  std::vector<double> errs;
  for (std::size_t N : {17u, 33u, 65u, 129u}) {
    auto g = Grid::line(1.0, N);
    ScalarField w(g, 0.0);
    for (std::size_t i = 0; i < N; ++i) w[i] = std::sin(pi * g->x(i));
    const auto ln = apply_laplacian_neumann(*g, w);
    double e = 0.0;
    for (std::size_t i : g->interior_index()) e = std::max(e, std::abs(ln[i] + pi * pi * w[i]));
    errs.push_back(e);
  }
  for (std::size_t k = 1; k < errs.size(); ++k) {
    const double ratio = errs[k - 1] / errs[k];
    EXPECT_GT(ratio, 3.8);
    EXPECT_LT(ratio, 4.2);
  }
}

TEST(Laplacian, GridMismatch) {
  auto g = Grid::line(1.0, 5), h = Grid::line(1.0, 7);
  EXPECT_THROW(apply_laplacian_neumann(*g, ScalarField(h, 1.0)), GridMismatch);
  RobinOperator op(g, BoundaryField(g, 1.0));
  EXPECT_THROW(op.apply(ScalarField(h, 1.0), BoundaryField(g, 0.0)), GridMismatch);
  EXPECT_THROW(op.apply(ScalarField(g, 1.0), BoundaryField(h, 0.0)), GridMismatch);
  EXPECT_THROW(ScalarField(g, std::vector<double>(4, 0.0)), GridMismatch);
}

TEST(Robin, AlphaBounds) {
  auto g = Grid::line(1.0, 5);
  EXPECT_THROW(RobinOperator(g, BoundaryField(g, 0.0)), DomainError);
  EXPECT_THROW(RobinOperator(g, BoundaryField(g, std::vector<double>{1.0, 3.0}), 0.5, 2.0), DomainError);
  EXPECT_THROW(RobinOperator(g, BoundaryField(g, 1.0), 0.0, 2.0), DomainError);
  EXPECT_NO_THROW(RobinOperator(g, BoundaryField(g, std::vector<double>{0.5, 2.0}), 0.5, 2.0));
}

TEST(Quadrature, Examples) {
  auto g = Grid::line(1.0, 101);
  EXPECT_NEAR(integrate_omega(*g, ScalarField(g, 1.0)), 1.0, 1e-14);
  ScalarField x(g, 0.0);
  for (std::size_t i = 0; i < g->size(); ++i) x[i] = g->x(i);
  EXPECT_NEAR(integrate_omega(*g, x), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(integrate_gamma(*g, BoundaryField(g, 1.0)), 2.0);

  auto r = Grid::rectangle(2.0, 3.0, 9, 13);
  EXPECT_NEAR(integrate_omega(*r, ScalarField(r, 1.0)), 6.0, 1e-13);
  EXPECT_NEAR(integrate_gamma(*r, BoundaryField(r, 1.0)), 10.0, 1e-13);
}

TEST(Norm, Examples) {
  auto g = Grid::line(1.0, 21);
  EXPECT_EQ(norm_equivalent(*g, BoundaryField(g, 1.5), ScalarField(g, 0.0)), 0.0);
  EXPECT_NEAR(norm_equivalent(*g, BoundaryField(g, 1.5), ScalarField(g, 1.0)), 3.0, 1e-14);
  ScalarField x(g, 0.0);
  for (std::size_t i = 0; i < g->size(); ++i) x[i] = g->x(i);
  // int |x'|^2 = 1, boundary alpha * (0 + 1)
  EXPECT_NEAR(norm_equivalent(*g, BoundaryField(g, 1.5), x), 2.5, 1e-12);

  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const auto w = random_field(g, rng, -1.0, 1.0);
    EXPECT_GT(norm_equivalent(*g, BoundaryField(g, 0.1), w), 0.0);
  }
}

TEST(Fields, TraceAndExtrema) {
  auto g = Grid::rectangle(1.0, 1.0, 4, 4);
  ScalarField w(g, 0.0);
  for (std::size_t i = 0; i < g->size(); ++i) w[i] = static_cast<double>(i);
  const auto b = trace(w);
  ASSERT_EQ(b.size(), g->boundary_size());
  for (std::size_t k = 0; k < b.size(); ++k) EXPECT_EQ(b[k], static_cast<double>(g->boundary_index()[k]));
  EXPECT_EQ(w.min(), 0.0);
  EXPECT_EQ(w.max(), 15.0);
  EXPECT_THROW(ScalarField(g, std::vector<double>(16, std::nan(""))), DomainError);
}
