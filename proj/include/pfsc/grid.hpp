#pragma once

// Tensor-product finite-difference grids (1D interval, 2D rectangle),
// nodal fields, the Neumann and Robin Laplacians, trapezoidal quadrature.
//
// All operators are written through the edge form of the discrete Dirichlet
// energy, w^T K w = sum_edges c_e (w_a - w_b)^2, so that
//
//   W * Lap_N w        = -K w
//   W * Lap_R(w; g)    = -K w - E^T Gamma alpha (E w - g)
//
// with W the trapezoid node weights, E the boundary restriction and Gamma the
// trapezoid weights along the boundary. This is algebraically identical to
// the centred stencil with ghost nodes eliminated through the (reflecting or
// Robin) flux condition, and it makes the summation-by-parts identities exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "pfsc/errors.hpp"

namespace pfsc {

class Grid;
using GridPtr = std::shared_ptr<const Grid>;

struct Edge {
  std::size_t a;
  std::size_t b;
  double coef;
};

class Grid {
 public:
  static GridPtr line(double length, std::size_t count) {
    return std::shared_ptr<const Grid>(new Grid(1, {length, 1.0}, {count, 1}));
  }

  static GridPtr rectangle(double lx, double ly, std::size_t nx, std::size_t ny) {
    return std::shared_ptr<const Grid>(new Grid(2, {lx, ly}, {nx, ny}));
  }

  int dim() const noexcept { return dim_; }
  const std::array<double, 2>& extents() const noexcept { return extents_; }
  const std::array<std::size_t, 2>& counts() const noexcept { return counts_; }
  const std::array<double, 2>& spacing() const noexcept { return spacing_; }

  std::size_t size() const noexcept { return counts_[0] * counts_[1]; }
  std::size_t boundary_size() const noexcept { return boundary_.size(); }

  std::size_t node(std::size_t i, std::size_t j = 0) const noexcept { return i + counts_[0] * j; }
  double x(std::size_t id) const noexcept { return spacing_[0] * static_cast<double>(id % counts_[0]); }
  double y(std::size_t id) const noexcept {
    return dim_ == 1 ? 0.0 : spacing_[1] * static_cast<double>(id / counts_[0]);
  }

  /// Boundary node ids in increasing order.
  const std::vector<std::size_t>& boundary_index() const noexcept { return boundary_; }
  const std::vector<std::size_t>& interior_index() const noexcept { return interior_; }
  /// Slot of `id` in boundary_index(), or -1 for interior nodes.
  long boundary_slot(std::size_t id) const noexcept { return slot_[id]; }

  /// Trapezoid weights for integrals over the domain.
  const std::vector<double>& weights() const noexcept { return weights_; }
  /// Trapezoid weights for integrals over the boundary (1D: 1 at each end).
  const std::vector<double>& boundary_weights() const noexcept { return boundary_weights_; }

  const std::vector<Edge>& edges() const noexcept { return edges_; }

  /// Stiffness matrix K (symmetric positive semidefinite, K 1 = 0).
  const Eigen::SparseMatrix<double>& stiffness() const noexcept { return stiffness_; }

  double volume() const noexcept { return dim_ == 1 ? extents_[0] : extents_[0] * extents_[1]; }
  double perimeter() const noexcept { return dim_ == 1 ? 2.0 : 2.0 * (extents_[0] + extents_[1]); }

  bool same_as(const Grid& other) const noexcept {
    return this == &other || (dim_ == other.dim_ && counts_ == other.counts_ && extents_ == other.extents_);
  }

 private:
  Grid(int dim, std::array<double, 2> extents, std::array<std::size_t, 2> counts)
      : dim_(dim), extents_(extents), counts_(counts) {
    for (int a = 0; a < dim_; ++a) {
      if (counts_[a] < 3) throw DomainError("Grid: at least 3 nodes per axis required");
      if (!(extents_[a] > 0.0) || !std::isfinite(extents_[a]))
        throw DomainError("Grid: extents must be positive and finite");
      spacing_[a] = extents_[a] / static_cast<double>(counts_[a] - 1);
    }
    if (dim_ == 1) spacing_[1] = 1.0;
    build();
  }

  // 1D trapezoid weights along one axis
  std::vector<double> axis_weights(int a) const {
    std::vector<double> w(counts_[a], spacing_[a]);
    w.front() *= 0.5;
    w.back() *= 0.5;
    return w;
  }

  void build() {
    const std::size_t nx = counts_[0], ny = counts_[1];
    const double hx = spacing_[0], hy = spacing_[1];
    slot_.assign(size(), -1);
    weights_.assign(size(), 0.0);

    if (dim_ == 1) {
      const auto wx = axis_weights(0);
      for (std::size_t i = 0; i < nx; ++i) weights_[i] = wx[i];
      boundary_ = {0, nx - 1};
      boundary_weights_ = {1.0, 1.0};
      for (std::size_t i = 0; i + 1 < nx; ++i) edges_.push_back({i, i + 1, 1.0 / hx});
    } else {
      const auto wx = axis_weights(0);
      const auto wy = axis_weights(1);
      for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) weights_[node(i, j)] = wx[i] * wy[j];
      for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t i = 0; i < nx; ++i) {
          const bool left = i == 0, right = i == nx - 1, bottom = j == 0, top = j == ny - 1;
          if (!(left || right || bottom || top)) continue;
          // sum of along-edge trapezoid weights over the sides this node lies on
          double g = 0.0;
          if (left || right) g += wy[j];
          if (bottom || top) g += wx[i];
          boundary_.push_back(node(i, j));
          boundary_weights_.push_back(g);
        }
      }
      for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i + 1 < nx; ++i) edges_.push_back({node(i, j), node(i + 1, j), wy[j] / hx});
      for (std::size_t j = 0; j + 1 < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) edges_.push_back({node(i, j), node(i, j + 1), wx[i] / hy});
    }

    for (std::size_t k = 0; k < boundary_.size(); ++k) slot_[boundary_[k]] = static_cast<long>(k);
    for (std::size_t id = 0; id < size(); ++id)
      if (slot_[id] < 0) interior_.push_back(id);

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(4 * edges_.size());
    for (const auto& e : edges_) {
      trips.emplace_back(e.a, e.a, e.coef);
      trips.emplace_back(e.b, e.b, e.coef);
      trips.emplace_back(e.a, e.b, -e.coef);
      trips.emplace_back(e.b, e.a, -e.coef);
    }
    stiffness_.resize(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(size()));
    stiffness_.setFromTriplets(trips.begin(), trips.end());
    stiffness_.makeCompressed();
  }

  int dim_;
  std::array<double, 2> extents_;
  std::array<std::size_t, 2> counts_;
  std::array<double, 2> spacing_{1.0, 1.0};
  std::vector<std::size_t> boundary_;
  std::vector<std::size_t> interior_;
  std::vector<long> slot_;
  std::vector<double> weights_;
  std::vector<double> boundary_weights_;
  std::vector<Edge> edges_;
  Eigen::SparseMatrix<double> stiffness_;
};

namespace detail {

inline void check_finite(std::span<const double> v, const char* who) {
  for (double x : v)
    if (!std::isfinite(x)) throw DomainError(std::string(who) + ": non-finite value");
}

}  // namespace detail

/// Nodal values on the whole grid at one time level.
class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(GridPtr grid, double fill) : grid_(std::move(grid)), values_(grid_->size(), fill) {}
  ScalarField(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_->size()) throw GridMismatch("ScalarField: value count differs from node count");
    detail::check_finite(values_, "ScalarField");
  }

  const GridPtr& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& vec() const noexcept { return values_; }
  std::vector<double>& vec() noexcept { return values_; }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

/// Values on the boundary nodes, ordered as Grid::boundary_index().
class BoundaryField {
 public:
  BoundaryField() = default;
  BoundaryField(GridPtr grid, double fill) : grid_(std::move(grid)), values_(grid_->boundary_size(), fill) {}
  BoundaryField(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_->boundary_size())
      throw GridMismatch("BoundaryField: value count differs from boundary node count");
    detail::check_finite(values_, "BoundaryField");
  }

  const GridPtr& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const noexcept { return values_[k]; }
  double& operator[](std::size_t k) noexcept { return values_[k]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& vec() const noexcept { return values_; }
  std::vector<double>& vec() noexcept { return values_; }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

inline void require_on(const Grid& grid, const ScalarField& f, const char* who) {
  if (!f.grid() || !f.grid()->same_as(grid) || f.size() != grid.size())
    throw GridMismatch(std::string(who) + ": field lives on a different grid");
}

inline void require_on(const Grid& grid, const BoundaryField& f, const char* who) {
  if (!f.grid() || !f.grid()->same_as(grid) || f.size() != grid.boundary_size())
    throw GridMismatch(std::string(who) + ": boundary field lives on a different grid");
}

/// Restriction to boundary nodes.
inline BoundaryField trace(const ScalarField& w) {
  const auto& g = *w.grid();
  BoundaryField b(w.grid(), 0.0);
  for (std::size_t k = 0; k < g.boundary_size(); ++k) b[k] = w[g.boundary_index()[k]];
  return b;
}

// ---------------------------------------------------------------------------
// Raw kernels on spans (used by the solvers; no allocation, no checks)

namespace kernel {

/// out = K w
inline void stiffness_apply(const Grid& g, std::span<const double> w, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& e : g.edges()) {
    const double f = e.coef * (w[e.a] - w[e.b]);
    out[e.a] += f;
    out[e.b] -= f;
  }
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Operators

/// Centred Laplacian with reflecting ghost nodes (zero normal derivative).
inline ScalarField apply_laplacian_neumann(const Grid& grid, const ScalarField& w) {
  require_on(grid, w, "apply_laplacian_neumann");
  ScalarField out(w.grid(), 0.0);
  kernel::stiffness_apply(grid, w.values(), out.values());
  const auto& W = grid.weights();
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = -out[i] / W[i];
  return out;
}

/// Robin boundary operator: -d_nu w = alpha (w - g) on the boundary.
class RobinOperator {
 public:
  RobinOperator(GridPtr grid, BoundaryField alpha) : grid_(std::move(grid)), alpha_(std::move(alpha)) {
    require_on(*grid_, alpha_, "RobinOperator");
    if (!(alpha_.min() > 0.0)) throw DomainError("RobinOperator: alpha must be positive (0 < alpha_m)");
  }

  /// Also checks alpha against 0 < alpha_m <= alpha <= alpha_M.
  RobinOperator(GridPtr grid, BoundaryField alpha, double alpha_m, double alpha_M)
      : RobinOperator(std::move(grid), std::move(alpha)) {
    if (!(alpha_m > 0.0) || alpha_m > alpha_M) throw DomainError("RobinOperator: need 0 < alpha_m <= alpha_M");
    if (alpha_.min() < alpha_m || alpha_.max() > alpha_M)
      throw DomainError("RobinOperator: alpha outside [alpha_m, alpha_M]");
  }

  const GridPtr& grid() const noexcept { return grid_; }
  const BoundaryField& alpha() const noexcept { return alpha_; }

  /// Discrete Laplacian of w with Robin data g.
  ScalarField apply(const ScalarField& w, const BoundaryField& g) const {
    require_on(*grid_, w, "apply_laplacian_robin");
    require_on(*grid_, g, "apply_laplacian_robin");
    const auto& G = *grid_;
    ScalarField out(w.grid(), 0.0);
    kernel::stiffness_apply(G, w.values(), out.values());
    for (std::size_t k = 0; k < G.boundary_size(); ++k) {
      const auto id = G.boundary_index()[k];
      out[id] += G.boundary_weights()[k] * alpha_[k] * (w[id] - g[k]);
    }
    const auto& W = G.weights();
    for (std::size_t i = 0; i < G.size(); ++i) out[i] = -out[i] / W[i];
    return out;
  }

 private:
  GridPtr grid_;
  BoundaryField alpha_;
};

inline ScalarField apply_laplacian_robin(const RobinOperator& op, const ScalarField& w, const BoundaryField& g) {
  return op.apply(w, g);
}

// ---------------------------------------------------------------------------
// Quadrature and norms

inline double integrate_omega(const Grid& grid, const ScalarField& w) {
  require_on(grid, w, "integrate_omega");
  double s = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) s += grid.weights()[i] * w[i];
  return s;
}

inline double integrate_gamma(const Grid& grid, const BoundaryField& b) {
  require_on(grid, b, "integrate_gamma");
  double s = 0.0;
  for (std::size_t k = 0; k < grid.boundary_size(); ++k) s += grid.boundary_weights()[k] * b[k];
  return s;
}

/// Discrete int |grad w|^2 + int_Gamma alpha w^2.
inline double norm_equivalent(const Grid& grid, const BoundaryField& alpha, const ScalarField& w) {
  require_on(grid, w, "norm_equivalent");
  require_on(grid, alpha, "norm_equivalent");
  double s = 0.0;
  for (const auto& e : grid.edges()) {
    const double d = w[e.a] - w[e.b];
    s += e.coef * d * d;
  }
  for (std::size_t k = 0; k < grid.boundary_size(); ++k) {
    const double b = w[grid.boundary_index()[k]];
    s += grid.boundary_weights()[k] * alpha[k] * b * b;
  }
  return s;
}

}  // namespace pfsc
