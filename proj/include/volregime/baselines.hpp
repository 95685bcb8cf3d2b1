#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "volregime/error.hpp"
#include "volregime/marketdata.hpp"
#include "volregime/rng.hpp"
#include "volregime/simplex.hpp"

namespace volregime {

// ---------------------------------------------------------------------------
// Rolling mean

inline double rolling_mean_forecast(std::span<const double> history) {
  if (history.empty()) throw Error(ErrorKind::EmptyInput, "rolling mean of empty history");
  // Shifted by the first value so that a constant history returns that value exactly.
  const double base = history.front();
  double dev = 0.0;
  for (double v : history) dev += v - base;
  return base + dev / static_cast<double>(history.size());
}

/// Rolling mean over the realized variances of a window.
inline double rolling_mean_forecast(const WindowSample& window) {
  const auto v = variances_of(window.history);
  return rolling_mean_forecast(v);
}

// ---------------------------------------------------------------------------
// HAR on log realized variance

inline constexpr std::size_t kHarDaily = 1;
inline constexpr std::size_t kHarWeekly = 5;
inline constexpr std::size_t kHarMonthly = 22;
inline constexpr std::size_t kHarMinRows = 8;
inline constexpr double kHarLogFloor = 1e-12;

struct HarParams {
  double intercept = 0.0;
  double beta_daily = 0.0;
  double beta_weekly = 0.0;
  double beta_monthly = 0.0;
  double log_floor = kHarLogFloor;
};

inline const std::array<const char*, 4> kHarColumnNames = {"intercept", "daily", "weekly",
                                                           "monthly"};

/// Regressor row [1, log d, log w, log m] from the trailing 22 variances of `recent`.
inline std::array<double, 4> har_regressors(std::span<const double> recent, double floor) {
  if (recent.size() < kHarMonthly)
    throw Error(ErrorKind::Precondition, "HAR needs " + std::to_string(kHarMonthly) +
                                             " recent variances, got " +
                                             std::to_string(recent.size()));
  const auto tail = [&](std::size_t k) {
    const auto s = recent.subspan(recent.size() - k);
    return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(k);
  };
  return {1.0, std::log(recent.back() + floor), std::log(tail(kHarWeekly) + floor),
          std::log(tail(kHarMonthly) + floor)};
}

/// Regression design for variances v: one row per t in [21, n-2], response log(v[t+1] + floor).
struct HarDesign {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

inline HarDesign har_design(std::span<const double> variances, double floor = kHarLogFloor) {
  const std::size_t needed = kHarMonthly + kHarMinRows;
  if (variances.size() < needed)
    throw Error(ErrorKind::Precondition, "HAR fit needs at least " + std::to_string(needed) +
                                             " observations, got " +
                                             std::to_string(variances.size()));
  const std::size_t rows = variances.size() - kHarMonthly;
  HarDesign d{Eigen::MatrixXd(static_cast<Eigen::Index>(rows), 4),
              Eigen::VectorXd(static_cast<Eigen::Index>(rows))};
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t t = i + kHarMonthly - 1;
    const auto reg = har_regressors(variances.first(t + 1), floor);
    for (Eigen::Index c = 0; c < 4; ++c) d.x(static_cast<Eigen::Index>(i), c) = reg[static_cast<std::size_t>(c)];
    d.y(static_cast<Eigen::Index>(i)) = std::log(variances[t + 1] + floor);
  }
  return d;
}

/// Ordinary least squares fit of the HAR regression on training variances.
inline HarParams fit_har(std::span<const double> variances) {
  const auto d = har_design(variances);
  for (Eigen::Index c = 1; c < 4; ++c) {
    const auto col = d.x.col(c);
    if (col.maxCoeff() == col.minCoeff())
      throw Error(ErrorKind::DegenerateData,
                  std::string("zero-variance regressor '") + kHarColumnNames[static_cast<std::size_t>(c)] +
                      "' is collinear with the intercept");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x);
  if (qr.rank() < 4) {
    const auto col = qr.colsPermutation().indices()(qr.rank());
    throw Error(ErrorKind::DegenerateData,
                std::string("rank-deficient HAR design; column '") +
                    kHarColumnNames[static_cast<std::size_t>(col)] + "' is collinear with the others");
  }
  const Eigen::VectorXd beta = qr.solve(d.y);
  HarParams p;
  p.intercept = beta(0);
  p.beta_daily = beta(1);
  p.beta_weekly = beta(2);
  p.beta_monthly = beta(3);
  return p;
}

inline HarParams fit_har(std::span<const ReturnObservation> train) {
  const auto v = variances_of(train);
  return fit_har(std::span<const double>(v));
}

/// exp of the fitted log-variance; no smearing correction.
inline double har_forecast(const HarParams& p, std::span<const double> recent) {
  const auto reg = har_regressors(recent, p.log_floor);
  return std::exp(p.intercept + p.beta_daily * reg[1] + p.beta_weekly * reg[2] +
                  p.beta_monthly * reg[3]);
}

// ---------------------------------------------------------------------------
// GARCH(1,1) / GJR-GARCH(1,1,1) with Gaussian innovations

struct GarchParams {
  double omega = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  double persistence() const noexcept { return alpha + beta + 0.5 * gamma; }

  bool feasible() const noexcept {
    return std::isfinite(omega) && omega > 0.0 && alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0 &&
           persistence() < 1.0;
  }
};

inline void validate(const GarchParams& p) {
  if (!p.feasible())
    throw Error(ErrorKind::Parameter,
                "GARCH parameters must satisfy omega>0, alpha,beta,gamma>=0, "
                "alpha+beta+gamma/2<1 (got omega=" +
                    std::to_string(p.omega) + ", alpha=" + std::to_string(p.alpha) +
                    ", beta=" + std::to_string(p.beta) + ", gamma=" + std::to_string(p.gamma) + ")");
}

struct FitDiagnostics {
  /// Log-likelihood for GARCH fits (without the constant term), SSE for HAR.
  double log_likelihood_or_sse = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

namespace detail {
inline double garch_step(const GarchParams& p, double r, double sigma2) noexcept {
  const double arch = r < 0.0 ? p.alpha + p.gamma : p.alpha;
  return p.omega + arch * r * r + p.beta * sigma2;
}
}  // namespace detail

/// Conditional variances for `returns`: element t is the variance of return t,
/// starting from `initial_variance`; the extra last element is the
/// one-step-ahead variance after the final return.
inline std::vector<double> garch_filter(const GarchParams& p, std::span<const double> returns,
                                        double initial_variance) {
  validate(p);
  if (returns.empty()) throw Error(ErrorKind::EmptyInput, "no returns to filter");
  if (!(initial_variance > 0.0))
    throw Error(ErrorKind::Precondition, "initial variance must be positive");
  std::vector<double> out;
  out.reserve(returns.size() + 1);
  out.push_back(initial_variance);
  for (const double r : returns) out.push_back(detail::garch_step(p, r, out.back()));
  return out;
}

/// One application of the variance recursion.
inline double garch_forecast(const GarchParams& p, double r_t, double sigma2_t) {
  validate(p);
  if (!(sigma2_t > 0.0)) throw Error(ErrorKind::Precondition, "sigma2_t must be positive");
  return detail::garch_step(p, r_t, sigma2_t);
}

/// Gaussian log-likelihood -1/2 sum(ln s2_t + r_t^2 / s2_t), constant dropped.
/// Returns -inf for infeasible parameters.
inline double garch_log_likelihood(const GarchParams& p, std::span<const double> returns,
                                   double initial_variance) {
  if (!p.feasible() || !(initial_variance > 0.0))
    return -std::numeric_limits<double>::infinity();
  double s2 = initial_variance;
  double acc = 0.0;
  for (const double r : returns) {
    acc += std::log(s2) + r * r / s2;
    s2 = detail::garch_step(p, r, s2);
  }
  return -0.5 * acc;
}

inline double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (const double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size() - 1);
}

struct GarchFitOptions {
  int max_iterations = 2000;
  int restarts = 3;
  std::uint64_t seed = 20240601;
  std::size_t soft_min_observations = 100;
};

struct GarchFit {
  GarchParams params;
  FitDiagnostics diagnostics;
  double initial_variance = 0.0;
};

namespace detail {

inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Unconstrained coordinates:
//   u0 = ln omega
//   u1 = logit(alpha + beta + gamma/2)
//   u2.. = softmax logits splitting the persistence into alpha, (gamma/2,) beta;
//          beta's logit is pinned at 0.
inline GarchParams garch_from_coords(std::span<const double> u, bool asymmetric) {
  GarchParams p;
  p.omega = std::exp(u[0]);
  const double s = logistic(u[1]);
  if (asymmetric) {
    const double m = std::max({u[2], u[3], 0.0});
    const double ea = std::exp(u[2] - m), eg = std::exp(u[3] - m), eb = std::exp(-m);
    const double z = ea + eg + eb;
    p.alpha = s * ea / z;
    p.gamma = 2.0 * s * eg / z;
    p.beta = s * eb / z;
  } else {
    const double a = logistic(u[2]);
    p.alpha = s * a;
    p.beta = s * (1.0 - a);
  }
  return p;
}

inline std::vector<double> garch_to_coords(const GarchParams& p, bool asymmetric) {
  const double s = p.persistence();
  std::vector<double> u{std::log(p.omega), logit(s)};
  if (asymmetric) {
    u.push_back(std::log(p.alpha / p.beta));
    u.push_back(std::log(0.5 * p.gamma / p.beta));
  } else {
    u.push_back(logit(p.alpha / s));
  }
  return u;
}

}  // namespace detail

/// Gaussian maximum-likelihood fit by simplex search in transformed coordinates,
/// started from `restarts` seeded points; the best result is polished once more.
/// asymmetric=false fits plain GARCH(1,1) with gamma fixed at 0.
inline GarchFit fit_garch(std::span<const double> returns, bool asymmetric,
                          const GarchFitOptions& opt = {}) {
  if (returns.empty()) throw Error(ErrorKind::EmptyInput, "no returns to fit");
  if (std::all_of(returns.begin(), returns.end(), [](double r) { return r == 0.0; }))
    throw Error(ErrorKind::DegenerateData, "all returns are zero; likelihood is unbounded");
  const double v0 = sample_variance(returns);
  if (!(v0 > 0.0))
    throw Error(ErrorKind::DegenerateData, "returns have zero sample variance");

  GarchFit fit;
  fit.initial_variance = v0;
  if (returns.size() < opt.soft_min_observations)
    fit.diagnostics.warnings.push_back("only " + std::to_string(returns.size()) +
                                       " observations; estimates may be unreliable");

  auto objective = [&](const std::vector<double>& u) {
    const auto p = detail::garch_from_coords(u, asymmetric);
    if (!p.feasible()) return std::numeric_limits<double>::infinity();
    return -garch_log_likelihood(p, returns, v0);
  };

  Engine eng(opt.seed);
  std::vector<std::vector<double>> starts;
  for (int k = 0; k < std::max(1, opt.restarts); ++k) {
    double persistence = 0.95, alpha_share = 0.06 / 0.95, gamma_share = 0.05;
    if (k > 0) {
      persistence = 0.70 + 0.29 * uniform_unit(eng);
      alpha_share = 0.02 + 0.25 * uniform_unit(eng);
      gamma_share = 0.01 + 0.15 * uniform_unit(eng);
    }
    GarchParams p;
    p.omega = v0 * (1.0 - persistence);
    if (asymmetric) {
      p.alpha = persistence * alpha_share;
      p.gamma = 2.0 * persistence * gamma_share;
      p.beta = persistence - p.alpha - 0.5 * p.gamma;
    } else {
      p.alpha = persistence * alpha_share;
      p.beta = persistence - p.alpha;
    }
    starts.push_back(detail::garch_to_coords(p, asymmetric));
  }

  SimplexOptions sopt;
  sopt.max_iterations = opt.max_iterations;
  sopt.initial_step = 0.5;
  SimplexResult best;
  for (const auto& s : starts) {
    auto r = nelder_mead(objective, s, sopt);
    if (r.value < best.value) best = std::move(r);
  }
  if (std::isfinite(best.value)) {
    sopt.initial_step = 0.05;
    auto polished = nelder_mead(objective, best.x, sopt);
    if (polished.value <= best.value) best = std::move(polished);
  }

  fit.params = detail::garch_from_coords(best.x, asymmetric);
  if (!asymmetric) fit.params.gamma = 0.0;
  fit.diagnostics.log_likelihood_or_sse = -best.value;
  fit.diagnostics.iterations = best.iterations;
  fit.diagnostics.converged = best.converged && std::isfinite(best.value);
  if (!fit.diagnostics.converged)
    fit.diagnostics.warnings.push_back("simplex search did not converge within " +
                                       std::to_string(opt.max_iterations) + " iterations");
  return fit;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const GarchParams& p) {
  j = nlohmann::json{{"omega", p.omega}, {"alpha", p.alpha}, {"beta", p.beta}, {"gamma", p.gamma}};
}

inline void from_json(const nlohmann::json& j, GarchParams& p) {
  j.at("omega").get_to(p.omega);
  j.at("alpha").get_to(p.alpha);
  j.at("beta").get_to(p.beta);
  p.gamma = j.value("gamma", 0.0);
}

inline void to_json(nlohmann::json& j, const HarParams& p) {
  j = nlohmann::json{{"intercept", p.intercept},
                     {"beta_daily", p.beta_daily},
                     {"beta_weekly", p.beta_weekly},
                     {"beta_monthly", p.beta_monthly}};
}

inline void from_json(const nlohmann::json& j, HarParams& p) {
  j.at("intercept").get_to(p.intercept);
  j.at("beta_daily").get_to(p.beta_daily);
  j.at("beta_weekly").get_to(p.beta_weekly);
  j.at("beta_monthly").get_to(p.beta_monthly);
  p.log_floor = kHarLogFloor;
}

}  // namespace volregime
