#pragma once

#include <charconv>
#include <cmath>
#include <functional>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "volregime/baselines.hpp"
#include "volregime/error.hpp"
#include "volregime/marketdata.hpp"
#include "volregime/parallel.hpp"
#include "volregime/poolbuilder.hpp"
#include "volregime/promptcodec.hpp"

namespace volregime {

enum ForecastFlag : unsigned {
  kFlagNone = 0,
  kFlagClamped = 1u << 0,
  kFlagShortfall = 1u << 1,
  kFlagFallback = 1u << 2,
};

struct ForecastRecord {
  std::size_t end_index = 0;
  std::string method;
  double prediction = 0.0;
  double truth = 0.0;
  Regime regime_true = Regime::Low;
  unsigned flags = kFlagNone;
  /// Free-form provenance, e.g. chosen demonstration source indices.
  std::string audit;
};

struct MetricsReport {
  std::string method;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mae_low;
  std::optional<double> mae_high;
  std::size_t n_low = 0;
  std::size_t n_high = 0;
  std::size_t n_clamped = 0;
  std::size_t n_shortfall = 0;
  std::size_t n_fallback = 0;

  std::size_t count() const noexcept { return n_low + n_high; }
};

/// Overall and regime-wise errors of one method's records. The regime of each
/// record is taken from truth >= tau; an empty regime yields no value rather than 0.
inline MetricsReport compute_metrics(std::span<const ForecastRecord> records, double tau) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "no forecast records");
  MetricsReport rep;
  rep.method = records.front().method;
  double abs_low = 0.0, abs_high = 0.0, sq = 0.0;
  for (const auto& r : records) {
    if (r.method != rep.method)
      throw Error(ErrorKind::Validation,
                  "records mix methods '" + rep.method + "' and '" + r.method + "'");
    const double e = r.prediction - r.truth;
    sq += e * e;
    if (classify(r.truth, tau) == Regime::High) {
      abs_high += std::abs(e);
      ++rep.n_high;
    } else {
      abs_low += std::abs(e);
      ++rep.n_low;
    }
    rep.n_clamped += (r.flags & kFlagClamped) != 0;
    rep.n_shortfall += (r.flags & kFlagShortfall) != 0;
    rep.n_fallback += (r.flags & kFlagFallback) != 0;
  }
  if (rep.n_low) rep.mae_low = abs_low / static_cast<double>(rep.n_low);
  if (rep.n_high) rep.mae_high = abs_high / static_cast<double>(rep.n_high);
  const double n = static_cast<double>(records.size());
  // Overall MAE is assembled from the regime MAEs so the count-weighted identity holds exactly.
  rep.mae = (static_cast<double>(rep.n_low) * rep.mae_low.value_or(0.0) +
             static_cast<double>(rep.n_high) * rep.mae_high.value_or(0.0)) /
            n;
  // Rounding can put sqrt(mean sq) an ulp under the MAE when all errors are equal.
  rep.rmse = std::max(std::sqrt(sq / n), rep.mae);
  return rep;
}

/// What a method returns for one window.
struct Forecast {
  double value = 0.0;
  unsigned flags = kFlagNone;
  std::string audit;
};

using Forecaster = std::function<Forecast(const WindowSample&)>;

/// One record per test sample in chronological order. A sample whose
/// forecaster throws gets the rolling mean of its own window, flagged.
inline std::vector<ForecastRecord> run_backtest(std::span<const WindowSample> samples,
                                                const std::string& method,
                                                const Forecaster& forecaster, double tau,
                                                int workers = 1) {
  std::vector<ForecastRecord> records(samples.size());
  std::vector<std::string> failures(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    const auto& s = samples[i];
    auto& rec = records[i];
    rec.end_index = s.end_index;
    rec.method = method;
    rec.truth = s.target;
    rec.regime_true = classify(s.target, tau);
    try {
      auto f = forecaster(s);
      if (!std::isfinite(f.value)) throw Error(ErrorKind::Validation, "non-finite forecast");
      if (f.value < 0.0) {
        f.value = 0.0;
        f.flags |= kFlagClamped;
      }
      rec.prediction = f.value;
      rec.flags = f.flags;
      rec.audit = std::move(f.audit);
    } catch (const std::exception& e) {
      failures[i] = e.what();
      rec.prediction = rolling_mean_forecast(s);
      rec.flags = kFlagFallback;
      rec.audit = std::string("fallback: ") + e.what();
    }
  });
  if (!samples.empty() &&
      std::all_of(records.begin(), records.end(), [](const ForecastRecord& r) { return r.flags & kFlagFallback; }))
    throw Error(ErrorKind::Backtest, "method '" + method + "' failed on every sample; first error: " +
                                         failures.front());
  return records;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr double kDisplayScale = 1e4;

/// Display cell: value x 10^4 with two decimals; absent values show as "n/a".
inline std::string display_cell(std::optional<double> v) {
  if (!v) return "n/a";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *v * kDisplayScale, std::chars_format::fixed, 2);
  if (ec != std::errc{}) return "?";
  return std::string(buf, end);
}

struct ReportRow {
  std::string dataset;
  MetricsReport metrics;
};

inline std::string render_markdown(std::span<const ReportRow> rows) {
  if (rows.empty()) throw Error(ErrorKind::EmptyInput, "no reports to render");
  std::ostringstream out;
  out << "| Dataset | Method | MAE | RMSE | MAE_low | MAE_high | n_low | n_high |\n";
  out << "|---|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << "| " << r.dataset << " | " << m.method << " | " << display_cell(m.mae) << " | "
        << display_cell(m.rmse) << " | " << display_cell(m.mae_low) << " | "
        << display_cell(m.mae_high) << " | " << m.n_low << " | " << m.n_high << " |\n";
  }
  out << "\nValues are multiplied by 10^4.\n";
  return out.str();
}

inline constexpr std::string_view kMetricsCsvHeader =
    "dataset,method,mae,rmse,mae_low,mae_high,n_low,n_high";

/// Raw (unscaled) values at round-trip precision; absent regime metrics are empty fields.
inline std::string render_csv(std::span<const ReportRow> rows) {
  if (rows.empty()) throw Error(ErrorKind::EmptyInput, "no reports to render");
  auto opt = [](std::optional<double> v) { return v ? format_exact(*v) : std::string{}; };
  std::string out(kMetricsCsvHeader);
  out += '\n';
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out += r.dataset + ',' + m.method + ',' + format_exact(m.mae) + ',' + format_exact(m.rmse) +
           ',' + opt(m.mae_low) + ',' + opt(m.mae_high) + ',' + std::to_string(m.n_low) + ',' +
           std::to_string(m.n_high) + '\n';
  }
  return out;
}

inline std::vector<ReportRow> parse_metrics_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || detail::trim(line) != kMetricsCsvHeader)
    throw ParseError("missing metrics CSV header", 1);
  std::vector<ReportRow> rows;
  auto num = [&](std::string_view s, std::size_t ln) {
    double v = 0.0;
    if (!detail::parse_double(s, v)) throw ParseError("bad number '" + std::string(s) + "'", ln);
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = detail::trim(line);
    if (row.empty()) continue;
    const auto f = detail::split_csv(row);
    if (f.size() != 8) throw ParseError("expected 8 fields", line_no);
    ReportRow r;
    r.dataset = std::string(f[0]);
    r.metrics.method = std::string(f[1]);
    r.metrics.mae = num(f[2], line_no);
    r.metrics.rmse = num(f[3], line_no);
    if (!f[4].empty()) r.metrics.mae_low = num(f[4], line_no);
    if (!f[5].empty()) r.metrics.mae_high = num(f[5], line_no);
    r.metrics.n_low = static_cast<std::size_t>(num(f[6], line_no));
    r.metrics.n_high = static_cast<std::size_t>(num(f[7], line_no));
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Per-prediction log: one line per record with flags and audit trail.
inline std::string render_forecasts_csv(std::span<const ForecastRecord> records) {
  std::string out = "method,end_index,prediction,truth,regime,flags,audit\n";
  for (const auto& r : records) {
    std::string audit = r.audit;
    for (auto& c : audit)
      if (c == ',' || c == '\n') c = ';';
    out += r.method + ',' + std::to_string(r.end_index) + ',' + format_exact(r.prediction) + ',' +
           format_exact(r.truth) + ',' + to_string(r.regime_true) + ',' + std::to_string(r.flags) +
           ',' + audit + '\n';
  }
  return out;
}

}  // namespace volregime
