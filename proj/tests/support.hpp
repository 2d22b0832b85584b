#pragma once

// Small models, random inputs and the benchmark loader shared by the tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "pfsc/experiment.hpp"
#include "pfsc/io.hpp"
#include "pfsc/optimizer.hpp"

#ifndef PFSC_SOURCE_DIR
#define PFSC_SOURCE_DIR "."
#endif

namespace pfsc::testing {

inline std::filesystem::path source_dir() { return PFSC_SOURCE_DIR; }
inline std::filesystem::path config_path(const std::string& name) { return source_dir() / "configs" / name; }

inline RunConfig load_named(const std::string& name) { return load_config(config_path(name)); }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("pfsc_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); }
};

inline ScalarField random_field(const GridPtr& g, Rng& r, double lo, double hi) {
  ScalarField f(g, 0.0);
  for (std::size_t i = 0; i < g->size(); ++i) f[i] = r.uniform(lo, hi);
  return f;
}

inline BoundaryField random_boundary(const GridPtr& g, Rng& r, double lo, double hi) {
  BoundaryField f(g, 0.0);
  for (std::size_t k = 0; k < g->boundary_size(); ++k) f[k] = r.uniform(lo, hi);
  return f;
}

inline FieldSeries random_series(const GridPtr& g, std::size_t n, Rng& r, double lo, double hi) {
  FieldSeries s;
  for (std::size_t k = 0; k < n; ++k) s.push_back(random_field(g, r, lo, hi));
  return s;
}

inline BoundarySeries random_boundary_series(const GridPtr& g, std::size_t n, Rng& r, double lo, double hi) {
  BoundarySeries s;
  for (std::size_t k = 0; k < n; ++k) s.push_back(random_boundary(g, r, lo, hi));
  return s;
}

inline ControlSet random_controls(const Model& m, Rng& r, double eta_amp = 0.9) {
  const auto& b = m.params.bounds;
  ControlSet c;
  c.u = random_series(m.grid, m.nt(), r, b.u_min, b.u_max);
  c.v = random_boundary_series(m.grid, m.nt(), r, b.v_min, b.v_max);
  c.eta = random_series(m.grid, m.nt() + 1, r, -eta_amp, eta_amp);
  return c;
}

/// A 1D model with a sign-feature target and smooth, non-degenerate data.
inline Model small_model(std::size_t N, std::size_t nt, double T = 0.5, double lambda1 = 1.0, double lambda2 = 1.0,
                         double theta_c = 1.0) {
  auto g = Grid::line(1.0, N);
  ModelParams P;
  P.theta_c = theta_c;
  P.lambda1 = lambda1;
  P.lambda2 = lambda2;
  P.T = T;
  P.nt = nt;
  ScalarField tf(g, 0.0);
  for (std::size_t i = 0; i < g->size(); ++i) tf[i] = theta_c + 0.1 * (g->x(i) < 0.5 ? 1.0 : -1.0);
  P.theta_f.assign(nt + 1, tf);
  BoundaryField alpha(g, std::vector<double>{0.8, 1.5});
  return Model(g, RobinOperator(g, alpha), P);
}

inline InitialData smooth_init(const Model& m) {
  const auto& g = m.grid;
  ScalarField th(g, 0.0), ph(g, 0.0);
  for (std::size_t i = 0; i < g->size(); ++i) {
    th[i] = m.params.theta_c + 0.05 + 0.2 * std::tanh((0.45 - g->x(i)) / 0.2);
    ph[i] = 0.8 * std::tanh((0.5 - g->x(i)) / 0.15);
  }
  return {th, ph};
}

/// || a - b ||_inf over a series.
inline double series_max_diff(const FieldSeries& a, const FieldSeries& b) {
  double m = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t i = 0; i < a[n].size(); ++i) m = std::max(m, std::abs(a[n][i] - b[n][i]));
  return m;
}

inline double rel_err(double a, double b) {
  const double s = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / s;
}

}  // namespace pfsc::testing
