#pragma once

// Convex machinery for j(r) = |r - theta_c| (the potential of the shifted
// Heaviside graph) and the singular heat-flux law beta(r) = r - 1/r.
//
// Everything here is pure and reentrant.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pfsc/errors.hpp"

namespace pfsc {

/// Closed interval [lo, hi]; used for the set-valued Heaviside graph.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  constexpr bool contains(double x) const noexcept { return lo <= x && x <= hi; }
  constexpr bool is_point() const noexcept { return lo == hi; }
};

/// Value returned by j_star outside [-1, 1]. It stands for +infinity; test it with is_infinite_sentinel.
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

constexpr bool is_infinite_sentinel(double x) noexcept { return x == kInfinity; }

// ---------------------------------------------------------------------------
// Heat-flux nonlinearity

inline double beta(double r) {
  if (!(r > 0.0)) throw DomainError("beta: argument must be positive");
  return r - 1.0 / r;
}

inline double beta_prime(double r) {
  if (!(r > 0.0)) throw DomainError("beta_prime: argument must be positive");
  return 1.0 + 1.0 / (r * r);
}

/// Positive root of r^2 - w r - 1 = 0. Both branches avoid cancellation.
inline double beta_inverse(double w) noexcept {
  const double s = std::sqrt(w * w + 4.0);
  return w >= 0.0 ? 0.5 * (w + s) : 2.0 / (s - w);
}

/// d/dw beta_inverse(w) = 1 / beta'(beta_inverse(w)).
inline double beta_inverse_prime(double w) noexcept {
  return beta_inverse(w) / std::sqrt(w * w + 4.0);
}

// ---------------------------------------------------------------------------
// j(r) = |r - theta_c| and friends

class ConvexContext {
 public:
  explicit ConvexContext(double theta_c) : theta_c_(theta_c) {
    if (!(theta_c > 0.0) || !std::isfinite(theta_c))
      throw DomainError("ConvexContext: theta_c must be positive and finite");
  }

  double theta_c() const noexcept { return theta_c_; }

  Interval heaviside(double r) const noexcept {
    if (r > theta_c_) return {1.0, 1.0};
    if (r < theta_c_) return {-1.0, -1.0};
    return {-1.0, 1.0};
  }

  double j(double r) const noexcept { return std::abs(r - theta_c_); }

  /// Conjugate w*theta_c + I_[-1,1](w); returns kInfinity off [-1, 1].
  double j_star(double w) const noexcept {
    if (std::abs(w) > 1.0) return kInfinity;
    return w * theta_c_;
  }

  /// j(r) + j*(w) - r w for |w| <= 1; zero exactly when w lies in heaviside(r).
  double fenchel_gap(double r, double w) const {
    if (!(std::abs(w) <= 1.0)) throw DomainError("fenchel_gap: |w| must be <= 1");
    // max(0, .) absorbs the last-bit rounding of the equality case
    return std::max(0.0, j(r) + w * theta_c_ - w * r);
  }

  /// (I + sigma H)^{-1} r: shrink toward theta_c by sigma, plateau at theta_c.
  double resolvent(double r, double sigma) const {
    check_sigma(sigma, "resolvent");
    if (r > theta_c_ + sigma) return r - sigma;
    if (r < theta_c_ - sigma) return r + sigma;
    return theta_c_;
  }

  /// Moreau-Yosida envelope (Huber form).
  double moreau_j(double r, double sigma) const {
    check_sigma(sigma, "moreau_j");
    const double d = std::abs(r - theta_c_);
    return d <= sigma ? d * d / (2.0 * sigma) : d - 0.5 * sigma;
  }

  double moreau_jprime(double r, double sigma) const {
    check_sigma(sigma, "moreau_jprime");
    return std::clamp((r - theta_c_) / sigma, -1.0, 1.0);
  }

  /// Selection from heaviside(r): sign(r - theta_c), with `at_kink` returned at r == theta_c.
  double heaviside_selection(double r, double at_kink = 0.0) const noexcept {
    if (r > theta_c_) return 1.0;
    if (r < theta_c_) return -1.0;
    return at_kink;
  }

 private:
  static void check_sigma(double sigma, const char* who) {
    if (!(sigma > 0.0)) throw DomainError(std::string(who) + ": sigma must be positive");
  }

  double theta_c_;
};

}  // namespace pfsc
