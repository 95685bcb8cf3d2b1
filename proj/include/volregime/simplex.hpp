#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace volregime {

struct SimplexOptions {
  int max_iterations = 2000;
  /// Stop when the spread of objective values across the simplex falls below this.
  double f_tolerance = 1e-10;
  /// ... and the simplex diameter (max coordinate distance to the best vertex) below this.
  double x_tolerance = 1e-8;
  double initial_step = 0.25;
};

struct SimplexResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Nelder-Mead downhill simplex minimizer over an unconstrained space.
/// Non-finite objective values are treated as +infinity, so the objective may
/// return NaN outside its domain. Standard coefficients: reflection 1,
/// expansion 2, contraction 1/2, shrink 1/2.
template <class Objective>
SimplexResult nelder_mead(Objective&& f, std::vector<double> start, const SimplexOptions& opt = {}) {
  const std::size_t n = start.size();
  SimplexResult res;
  auto eval = [&](const std::vector<double>& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<std::vector<double>> pts(n + 1, start);
  for (std::size_t i = 0; i < n; ++i) {
    const double step = start[i] != 0.0 ? opt.initial_step * std::max(1.0, std::abs(start[i]))
                                        : opt.initial_step;
    pts[i + 1][i] += step;
  }
  std::vector<double> fv(n + 1);
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(pts[i]);

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), trial(n), trial2(n);
  auto along = [&](double t, std::vector<double>& out) {
    // out = centroid + t * (centroid - worst)
    const auto& worst = pts[order[n]];
    for (std::size_t i = 0; i < n; ++i) out[i] = centroid[i] + t * (centroid[i] - worst[i]);
  };

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order[0], worst = order[n], second = order[n - 1];

    double diameter = 0.0;
    for (std::size_t k = 1; k <= n; ++k)
      for (std::size_t i = 0; i < n; ++i)
        diameter = std::max(diameter, std::abs(pts[order[k]][i] - pts[best][i]));
    if (std::isfinite(fv[worst]) && fv[worst] - fv[best] <= opt.f_tolerance &&
        diameter <= opt.x_tolerance) {
      res.converged = true;
      break;
    }

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) centroid[i] += pts[order[k]][i];
    for (auto& c : centroid) c /= static_cast<double>(n);

    along(1.0, trial);
    const double fr = eval(trial);
    if (fr < fv[best]) {
      along(2.0, trial2);
      const double fe = eval(trial2);
      if (fe < fr) {
        pts[worst] = trial2;
        fv[worst] = fe;
      } else {
        pts[worst] = trial;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      pts[worst] = trial;
      fv[worst] = fr;
      continue;
    }
    // Contraction: outside if the reflected point beat the worst, inside otherwise.
    const bool outside = fr < fv[worst];
    along(outside ? 0.5 : -0.5, trial2);
    const double fc = eval(trial2);
    if (fc < (outside ? fr : fv[worst])) {
      pts[worst] = trial2;
      fv[worst] = fc;
      continue;
    }
    for (std::size_t k = 1; k <= n; ++k) {
      auto& p = pts[order[k]];
      for (std::size_t i = 0; i < n; ++i) p[i] = pts[best][i] + 0.5 * (p[i] - pts[best][i]);
      fv[order[k]] = eval(p);
    }
  }

  const auto best_it = std::min_element(fv.begin(), fv.end());
  res.value = *best_it;
  res.x = pts[static_cast<std::size_t>(best_it - fv.begin())];
  return res;
}

}  // namespace volregime
