#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pfsc {

/// Argument outside the mathematical domain of an operation (r <= 0 for beta, sigma <= 0, |w| > 1 ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Field or operator built on a different grid / time grid than the one it is used with.
class GridMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Newton failure inside a time step. Carries the step index (or -1 when unknown) and the last residual.
class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, long step, double residual)
      : std::runtime_error(what), step_(step), residual_(residual) {}

  long step() const noexcept { return step_; }
  double residual() const noexcept { return residual_; }

 private:
  long step_;
  double residual_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pfsc
