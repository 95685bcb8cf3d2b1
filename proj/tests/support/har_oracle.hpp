#pragma once

// Naive-loop checks for least-squares solutions, kept free of Eigen so they
// do not share a code path with the solver under test.

#include <cmath>
#include <vector>

namespace volregime::testing {

/// ||X^T (X b - y)|| / (||X^T y|| + tiny), with X given row-major.
inline double normal_equation_residual(const std::vector<std::vector<double>>& x,
                                       const std::vector<double>& y,
                                       const std::vector<double>& b) {
  const std::size_t p = b.size();
  std::vector<double> g(p, 0.0), xty(p, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double fit = 0.0;
    for (std::size_t k = 0; k < p; ++k) fit += x[i][k] * b[k];
    const double resid = fit - y[i];
    for (std::size_t k = 0; k < p; ++k) {
      g[k] += x[i][k] * resid;
      xty[k] += x[i][k] * y[i];
    }
  }
  double gn = 0.0, yn = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    gn += g[k] * g[k];
    yn += xty[k] * xty[k];
  }
  return std::sqrt(gn) / (std::sqrt(yn) + 1e-300);
}

/// Builds the HAR design by direct loops: rows t = 21..n-2, columns
/// [1, log(v_t+f), log(mean5+f), log(mean22+f)], response log(v_{t+1}+f).
inline void har_design_naive(const std::vector<double>& v, double f,
                             std::vector<std::vector<double>>& x, std::vector<double>& y) {
  x.clear();
  y.clear();
  for (std::size_t t = 21; t + 1 < v.size(); ++t) {
    double w = 0.0, m = 0.0;
    for (std::size_t k = 0; k < 5; ++k) w += v[t - k];
    for (std::size_t k = 0; k < 22; ++k) m += v[t - k];
    x.push_back({1.0, std::log(v[t] + f), std::log(w / 5.0 + f), std::log(m / 22.0 + f)});
    y.push_back(std::log(v[t + 1] + f));
  }
}

}  // namespace volregime::testing
