#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "volregime/error.hpp"
#include "volregime/marketdata.hpp"
#include "volregime/poolbuilder.hpp"
#include "volregime/rng.hpp"

namespace volregime {

enum class Strategy { Random, FixedPrior, LabelEstimate };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Random: return "random";
    case Strategy::FixedPrior: return "fixed_prior";
    case Strategy::LabelEstimate: return "label_estimate";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::Random, Strategy::FixedPrior, Strategy::LabelEstimate})
    if (s == to_string(v)) return v;
  throw Error(ErrorKind::Configuration, "unknown sampling strategy '" + std::string(s) + "'");
}

struct SamplerConfig {
  Strategy strategy = Strategy::LabelEstimate;
  std::size_t k = 5;
  /// Low-pool fraction for the fixed prior; unset means the pool's own low fraction.
  std::optional<double> alpha;
  double alpha_low = 0.8;
  double alpha_high = 0.2;
  std::size_t m = 3;
  double tau_prime = 0.0;
  std::uint64_t seed = 11;
};

/// Checks the configuration against a window length w.
inline void validate(const SamplerConfig& c, std::size_t w) {
  auto unit = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (c.alpha && !unit(*c.alpha))
    throw Error(ErrorKind::Configuration, "alpha must lie in [0,1]");
  if (!unit(c.alpha_low) || !unit(c.alpha_high))
    throw Error(ErrorKind::Configuration, "alpha_low and alpha_high must lie in [0,1]");
  if (c.strategy == Strategy::LabelEstimate && !(c.alpha_low > c.alpha_high))
    throw Error(ErrorKind::Configuration, "label_estimate sampling requires alpha_low > alpha_high");
  if (c.m == 0 || c.m >= w)
    throw Error(ErrorKind::Configuration, "m must satisfy 0 < m < w (m=" + std::to_string(c.m) +
                                              ", w=" + std::to_string(w) + ")");
}

struct RegimeEstimate {
  double signal = 0.0;
  Regime label = Regime::Low;
};

/// s_t = mean of the last m history variances; high iff s_t >= tau_prime.
/// Reads only the window's history, never its target.
inline RegimeEstimate estimate_regime(const WindowSample& window, std::size_t m, double tau_prime) {
  if (m == 0 || m > window.history.size())
    throw Error(ErrorKind::Precondition, "m must satisfy 0 < m <= w");
  const double s = recent_variance_mean(window, m);
  return {s, classify(s, tau_prime)};
}

/// Chosen pool positions plus bookkeeping for the report.
struct Selection {
  std::vector<std::size_t> indices;
  /// Draws that could not come from the intended source (moved to the other
  /// sub-pool, or missing because the pool is smaller than K).
  std::size_t shortfall = 0;
  std::optional<RegimeEstimate> estimate;
  double alpha_used = 0.0;
};

/// K positions uniformly without replacement; a pool smaller than K is returned whole.
inline Selection sample_random(const DemoPool& pool, std::size_t k, std::uint64_t seed) {
  Engine eng(seed);
  Selection sel;
  sel.indices = sample_without_replacement(pool.size(), k, eng);
  if (pool.size() < k) sel.shortfall = k - pool.size();
  return sel;
}

/// Number of low-regime draws, floor(alpha * K).
inline std::size_t low_quota(double alpha, std::size_t k) {
  return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(k) + 1e-9));
}

/// floor(alpha*K) draws from the low pool, the rest from the high pool. A
/// sub-pool that cannot fill its quota passes the deficit to the other one.
inline Selection sample_fixed_prior(const DemoPool& pool, std::size_t k, double alpha,
                                    std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Precondition, "alpha must lie in [0,1]");
  const auto low = pool.indices_of(Regime::Low);
  const auto high = pool.indices_of(Regime::High);
  std::size_t want_low = low_quota(alpha, k);
  std::size_t want_high = k - want_low;

  Selection sel;
  sel.alpha_used = alpha;
  if (want_low > low.size()) {
    const auto deficit = want_low - low.size();
    sel.shortfall += deficit;
    want_low = low.size();
    want_high += deficit;
  }
  if (want_high > high.size()) {
    const auto deficit = want_high - high.size();
    sel.shortfall += deficit;
    want_high = high.size();
    const auto room = low.size() - want_low;
    want_low += std::min(room, deficit);
  }

  Engine eng(seed);
  for (auto i : sample_without_replacement(low.size(), want_low, eng)) sel.indices.push_back(low[i]);
  for (auto i : sample_without_replacement(high.size(), want_high, eng))
    sel.indices.push_back(high[i]);
  return sel;
}

/// Fixed-prior sampling with alpha picked by the estimated regime of the window.
inline Selection sample_label_estimate(const DemoPool& pool, std::size_t k, const WindowSample& window,
                                       const SamplerConfig& config, std::uint64_t seed) {
  if (!(config.alpha_low > config.alpha_high))
    throw Error(ErrorKind::Configuration, "label_estimate sampling requires alpha_low > alpha_high");
  const auto est = estimate_regime(window, config.m, config.tau_prime);
  auto sel = sample_fixed_prior(pool, k,
                                est.label == Regime::Low ? config.alpha_low : config.alpha_high, seed);
  sel.estimate = est;
  return sel;
}

/// Per-query seed so that selections do not depend on evaluation order.
inline std::uint64_t query_seed(const SamplerConfig& config, const WindowSample& window) {
  return derive_seed(config.seed, window.end_index);
}

/// Dispatches on the configured strategy.
inline Selection select_demonstrations(const DemoPool& pool, const WindowSample& window,
                                       const SamplerConfig& config) {
  const auto seed = query_seed(config, window);
  switch (config.strategy) {
    case Strategy::Random: return sample_random(pool, config.k, seed);
    case Strategy::FixedPrior:
      return sample_fixed_prior(pool, config.k, config.alpha.value_or(pool.low_fraction()), seed);
    case Strategy::LabelEstimate: return sample_label_estimate(pool, config.k, window, config, seed);
  }
  return {};
}

}  // namespace volregime
