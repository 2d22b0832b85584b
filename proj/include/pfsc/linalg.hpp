#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "pfsc/errors.hpp"
#include "pfsc/grid.hpp"

namespace pfsc {

/// Factorizations of K + diag(d) on a fixed grid. The sparsity pattern is
/// analysed once; every Newton iteration and every tangent/adjoint step only
/// refactorizes numerically. All matrices are symmetric, so transposed
/// solves reuse solve().
class SpdSystem {
 public:
  explicit SpdSystem(const Grid& grid) : mat_(grid.stiffness()), base_(grid.stiffness().nonZeros()) {
    const auto* vals = mat_.valuePtr();
    for (Eigen::Index k = 0; k < mat_.nonZeros(); ++k) base_[static_cast<std::size_t>(k)] = vals[k];
    diag_pos_.assign(grid.size(), -1);
    for (Eigen::Index col = 0; col < mat_.outerSize(); ++col) {
      for (Eigen::Index k = mat_.outerIndexPtr()[col]; k < mat_.outerIndexPtr()[col + 1]; ++k)
        if (mat_.innerIndexPtr()[k] == col) diag_pos_[static_cast<std::size_t>(col)] = k;
    }
    for (auto p : diag_pos_)
      if (p < 0) throw GridMismatch("SpdSystem: stiffness matrix lacks a diagonal entry");
    solver_.analyzePattern(mat_);
  }

  /// Factorize K + diag(d).
  void factorize(std::span<const double> d) {
    auto* vals = mat_.valuePtr();
    for (std::size_t k = 0; k < base_.size(); ++k) vals[k] = base_[k];
    for (std::size_t i = 0; i < diag_pos_.size(); ++i) vals[diag_pos_[i]] += d[i];
    solver_.factorize(mat_);
    if (solver_.info() != Eigen::Success) throw SolverFailure("SpdSystem: factorization failed", -1, NAN);
  }

  void solve(std::span<const double> rhs, std::span<double> out) const {
    Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    Eigen::Map<Eigen::VectorXd> x(out.data(), static_cast<Eigen::Index>(out.size()));
    x = solver_.solve(b);
  }

 private:
  Eigen::SparseMatrix<double> mat_;
  std::vector<double> base_;
  std::vector<Eigen::Index> diag_pos_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

}  // namespace pfsc
