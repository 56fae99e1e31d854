#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "nlselab/lattice.hpp"

namespace nlselab::testing {

inline FieldState random_state(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd;
  FieldState u(n);
  for (int i = 0; i < n; ++i) u(i) = scale * Complex(nd(rng), nd(rng));
  return u;
}

/// Random state rescaled to the given discrete H1 norm.
inline FieldState random_state_with_norm(const GridSpec& g, std::mt19937_64& rng, double norm) {
  FieldState u = random_state(g.dim(), rng);
  return u * (norm / norm_dx(g, u));
}

inline Eigen::MatrixXd dense_laplacian(const GridSpec& g) {
  const int n = g.dim();
  const double s = 1.0 / (g.delta_x * g.delta_x);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, i) = 2.0 * s;
    if (i + 1 < n) a(i, i + 1) = a(i + 1, i) = -s;
  }
  return a;
}

/// Least-squares slope of log10(y) against log10(x).
template <class V>
double loglog_slope(const V& x, const V& y) {
  const int n = static_cast<int>(x.size());
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += std::log10(x[i]) / n;
    my += std::log10(y[i]) / n;
  }
  double sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double dx = std::log10(x[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log10(y[i]) - my);
  }
  return sxy / sxx;
}

}  // namespace nlselab::testing
