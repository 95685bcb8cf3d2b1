#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "volregime/error.hpp"
#include "volregime/marketdata.hpp"
#include "volregime/modelgateway.hpp"
#include "volregime/parallel.hpp"
#include "volregime/promptcodec.hpp"
#include "volregime/rng.hpp"

namespace volregime {

enum class Regime { Low, High };

inline const char* to_string(Regime r) { return r == Regime::High ? "high" : "low"; }

inline Regime parse_regime(std::string_view s) {
  if (s == "high") return Regime::High;
  if (s == "low") return Regime::Low;
  throw Error(ErrorKind::Validation, "unknown regime '" + std::string(s) + "'");
}

/// High iff the value reaches the threshold (ties are high).
inline Regime classify(double value, double threshold) {
  return value >= threshold ? Regime::High : Regime::Low;
}

/// One pool entry: the history prompt p_conc, the refined prediction that
/// serves as its answer (not the ground truth), and the regime of the true target.
struct Demonstration {
  std::string prompt_text;
  double refined_prediction = 0.0;
  Regime regime = Regime::Low;
  std::size_t source_index = 0;
  int iterations_run = 0;
  /// Refinement steps whose reply could not be parsed (value kept).
  int parse_skips = 0;
};

struct SkippedSample {
  std::size_t source_index = 0;
  std::string reason;
};

struct DemoPool {
  std::vector<Demonstration> demonstrations;
  double tau = 0.0;
  std::size_t requested_n = 0;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::string dataset;
  std::vector<SkippedSample> skipped;
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return demonstrations.size(); }

  std::vector<std::size_t> indices_of(Regime r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < demonstrations.size(); ++i)
      if (demonstrations[i].regime == r) out.push_back(i);
    return out;
  }

  /// Fraction of demonstrations labelled low; 0 for an empty pool.
  double low_fraction() const {
    if (demonstrations.empty()) return 0.0;
    return static_cast<double>(indices_of(Regime::Low).size()) /
           static_cast<double>(demonstrations.size());
  }
};

struct PoolOptions {
  std::size_t n = 500;
  int iterations = 3;
  double tau = 0.0;
  std::uint64_t seed = 7;
  /// Days averaged for the feedback hint.
  std::size_t hint_days = 3;
  std::string dataset;
};

/// Mean of the last m realized variances in the window.
inline double recent_variance_mean(const WindowSample& sample, std::size_t m) {
  if (m == 0 || m > sample.history.size())
    throw Error(ErrorKind::Precondition, "need 0 < m <= window length (m=" + std::to_string(m) +
                                             ", w=" + std::to_string(sample.history.size()) + ")");
  double sum = 0.0;
  for (std::size_t i = sample.history.size() - m; i < sample.history.size(); ++i)
    sum += sample.history[i].realized_variance;
  return sum / static_cast<double>(m);
}

struct RefineStep {
  double value = 0.0;
  /// Reply was unparseable; value is the input prediction unchanged.
  bool skipped = false;
};

/// One oracle-feedback step on a fresh prompt: the window's input lines
/// followed by feedback (truth, current prediction, its error, recent-average hint).
inline RefineStep refine_once(double current, const WindowSample& sample, ModelGateway& gateway,
                              std::size_t hint_days = 3) {
  const double truth = sample.target;
  const auto feedback = render_feedback(truth, current, std::abs(current - truth),
                                        recent_variance_mean(sample, hint_days));
  const auto reply = gateway.complete(concat({render_input(sample), feedback}));
  try {
    return {parse_forecast(reply.text).value, false};
  } catch (const ParseError&) {
    return {current, true};
  }
}

/// Initial prediction from p_input ⊕ p_query, then exactly `iterations`
/// refinement steps. Parse failure of the initial reply and gateway errors
/// propagate; the caller decides to skip the sample.
inline Demonstration build_demonstration(const WindowSample& sample, ModelGateway& gateway,
                                         int iterations, double tau, std::size_t hint_days = 3) {
  if (iterations < 0) throw Error(ErrorKind::Precondition, "iteration count must be >= 0");
  Demonstration d;
  const auto history_prompt = render_history_prompt(sample);
  d.prompt_text = history_prompt.text;
  d.refined_prediction = parse_forecast(gateway.complete(history_prompt).text).value;
  for (int j = 0; j < iterations; ++j) {
    const auto step = refine_once(d.refined_prediction, sample, gateway, hint_days);
    d.refined_prediction = step.value;
    d.parse_skips += step.skipped ? 1 : 0;
  }
  d.iterations_run = iterations;
  d.regime = classify(sample.target, tau);
  d.source_index = sample.end_index;
  return d;
}

/// Draws min(n, |train|) training samples uniformly without replacement and
/// turns each into a demonstration. Samples that fail are replaced by the
/// next unused sample of the same seeded permutation. Output is ordered by
/// source_index whatever the completion order.
inline DemoPool build_pool(std::span<const WindowSample> train, ModelGateway& gateway,
                           const PoolOptions& opt) {
  if (train.empty()) throw Error(ErrorKind::EmptyInput, "no training samples for the pool");
  if (opt.iterations < 0) throw Error(ErrorKind::Precondition, "iteration count must be >= 0");

  DemoPool pool;
  pool.tau = opt.tau;
  pool.requested_n = opt.n;
  pool.iterations = opt.iterations;
  pool.seed = opt.seed;
  pool.dataset = opt.dataset;
  const std::size_t target = std::min(opt.n, train.size());
  if (opt.n > train.size())
    pool.warnings.push_back("requested " + std::to_string(opt.n) + " demonstrations but only " +
                            std::to_string(train.size()) + " training samples exist");

  Engine eng(opt.seed);
  const auto order = permutation(train.size(), eng);
  std::size_t cursor = 0;
  while (pool.demonstrations.size() < target && cursor < order.size()) {
    const std::size_t batch = std::min(target - pool.demonstrations.size(), order.size() - cursor);
    std::vector<std::optional<Demonstration>> built(batch);
    std::vector<std::string> errors(batch);
    parallel_for(batch, gateway.max_in_flight(), [&](std::size_t i) {
      const auto& sample = train[order[cursor + i]];
      try {
        built[i] = build_demonstration(sample, gateway, opt.iterations, opt.tau, opt.hint_days);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < batch; ++i) {
      if (built[i])
        pool.demonstrations.push_back(std::move(*built[i]));
      else
        pool.skipped.push_back({train[order[cursor + i]].end_index, errors[i]});
    }
    cursor += batch;
  }
  if (pool.demonstrations.empty())
    throw Error(ErrorKind::PoolConstruction,
                "every demonstration failed" +
                    (pool.skipped.empty() ? std::string{} : "; first error: " + pool.skipped.front().reason));
  std::sort(pool.demonstrations.begin(), pool.demonstrations.end(),
            [](const Demonstration& a, const Demonstration& b) { return a.source_index < b.source_index; });
  if (pool.demonstrations.size() < target)
    pool.warnings.push_back("pool has " + std::to_string(pool.demonstrations.size()) + " of " +
                            std::to_string(target) + " demonstrations after skips");
  return pool;
}

// ---------------------------------------------------------------------------
// JSON Lines persistence: one header line, then one demonstration per line.

inline constexpr std::string_view kPoolFormat = "volregime-pool/1";

inline std::string pool_to_jsonl(const DemoPool& pool) {
  std::string out;
  nlohmann::ordered_json header{{"format", kPoolFormat},  {"tau", pool.tau},
                                {"n", pool.requested_n},   {"J", pool.iterations},
                                {"seed", pool.seed},       {"dataset", pool.dataset},
                                {"size", pool.size()}};
  out += header.dump() + '\n';
  for (const auto& d : pool.demonstrations) {
    nlohmann::ordered_json line{{"prompt_text", d.prompt_text},
                                {"refined_prediction", d.refined_prediction},
                                {"regime", to_string(d.regime)},
                                {"source_index", d.source_index},
                                {"iterations_run", d.iterations_run}};
    out += line.dump() + '\n';
  }
  return out;
}

inline DemoPool pool_from_jsonl(std::istream& in) {
  DemoPool pool;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        if (j.value("format", std::string{}) != kPoolFormat)
          throw ParseError("not a demonstration pool file", line_no);
        pool.tau = j.at("tau").get<double>();
        pool.requested_n = j.at("n").get<std::size_t>();
        pool.iterations = j.at("J").get<int>();
        pool.seed = j.at("seed").get<std::uint64_t>();
        pool.dataset = j.at("dataset").get<std::string>();
        have_header = true;
        continue;
      }
      Demonstration d;
      d.prompt_text = j.at("prompt_text").get<std::string>();
      d.refined_prediction = j.at("refined_prediction").get<double>();
      d.regime = parse_regime(j.at("regime").get<std::string>());
      d.source_index = j.at("source_index").get<std::size_t>();
      d.iterations_run = j.at("iterations_run").get<int>();
      pool.demonstrations.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), line_no);
  }
  if (!have_header) throw ParseError("empty pool file");
  return pool;
}

inline void write_pool(const DemoPool& pool, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << pool_to_jsonl(pool);
}

inline DemoPool read_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return pool_from_jsonl(in);
}

}  // namespace volregime
