#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "volregime/error.hpp"

namespace volregime {

using Date = std::chrono::year_month_day;

/// Parses `YYYY-MM-DD`. Returns false on anything else, including invalid calendar days.
inline bool parse_date(std::string_view text, Date& out) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return false;
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [](std::string_view s, auto& v) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc{} && p == s.data() + s.size();
  };
  if (!num(text.substr(0, 4), y) || !num(text.substr(5, 2), m) || !num(text.substr(8, 2), d))
    return false;
  out = Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  return out.ok();
}

inline std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

struct PricePoint {
  Date date;
  double close = 0.0;
};

struct PriceSeries {
  std::vector<PricePoint> points;
  /// Set when the input rows were not in ascending date order and had to be sorted.
  bool reordered = false;

  std::size_t size() const noexcept { return points.size(); }
};

struct ReturnObservation {
  Date date;
  double log_return = 0.0;
  double realized_variance = 0.0;  // log_return * log_return
};

/// History x_t of w consecutive observations ending at end_index, and the
/// realized variance of the observation right after it.
struct WindowSample {
  std::size_t end_index = 0;
  std::vector<ReturnObservation> history;
  double target = 0.0;

  std::size_t target_index() const noexcept { return end_index + 1; }
  std::size_t start_index() const noexcept { return end_index + 1 - history.size(); }
};

struct SplitSpec {
  double train_fraction = 0.7;
  /// Largest target index that belongs to the training period.
  std::size_t boundary_index = 0;
};

struct Split {
  std::vector<WindowSample> train;
  std::vector<WindowSample> test;
  SplitSpec spec;
};

enum class SourceFormat { Auto, Stooq, DateClose };

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size() && !s.empty() && std::isfinite(out);
}

}  // namespace detail

/// Reads a daily close series from CSV text. Accepts the Stooq layout
/// `Date,Open,High,Low,Close,Volume` or the two-column layout `Date,Close`.
inline PriceSeries parse_prices(std::istream& in, SourceFormat format = SourceFormat::Auto) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string_view> header;
  std::string header_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) {
      header_line = std::string(detail::trim(line));
      break;
    }
  }
  if (header_line.empty()) throw Error(ErrorKind::EmptyInput, "price file has no header");
  header = detail::split_csv(header_line);
  for (auto& h : header) h = detail::trim(h);

  const bool is_stooq = header == std::vector<std::string_view>{"Date", "Open", "High", "Low",
                                                                "Close", "Volume"};
  const bool is_two = header == std::vector<std::string_view>{"Date", "Close"};
  if ((format == SourceFormat::Stooq && !is_stooq) ||
      (format == SourceFormat::DateClose && !is_two) ||
      (format == SourceFormat::Auto && !is_stooq && !is_two)) {
    throw ParseError("unrecognized header '" + header_line + "'", line_no);
  }
  const std::size_t close_col = is_stooq ? 4 : 1;

  PriceSeries series;
  while (std::getline(in, line)) {
    ++line_no;
    const auto row = detail::trim(line);
    if (row.empty()) continue;
    const auto fields = detail::split_csv(row);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no, std::string(row));
    PricePoint p;
    if (!parse_date(detail::trim(fields[0]), p.date))
      throw ParseError("bad date '" + std::string(fields[0]) + "'", line_no, std::string(row));
    if (!detail::parse_double(fields[close_col], p.close))
      throw ParseError("bad close '" + std::string(fields[close_col]) + "'", line_no,
                       std::string(row));
    if (!(p.close > 0.0))
      throw Error(ErrorKind::Validation, "line " + std::to_string(line_no) +
                                             ": close must be positive, got " +
                                             std::string(detail::trim(fields[close_col])));
    series.points.push_back(p);
  }

  auto by_date = [](const PricePoint& a, const PricePoint& b) { return a.date < b.date; };
  if (!std::is_sorted(series.points.begin(), series.points.end(), by_date)) {
    std::stable_sort(series.points.begin(), series.points.end(), by_date);
    series.reordered = true;
  }
  const auto dup = std::adjacent_find(series.points.begin(), series.points.end(),
                                      [](const PricePoint& a, const PricePoint& b) {
                                        return a.date == b.date;
                                      });
  if (dup != series.points.end())
    throw Error(ErrorKind::Validation, "duplicate date " + format_date(dup->date));
  return series;
}

inline PriceSeries load_prices(const std::string& path, SourceFormat format = SourceFormat::Auto) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return parse_prices(in, format);
}

/// r_t = ln(P_t / P_{t-1}), realized variance r_t^2. Output has one fewer entry than the input.
inline std::vector<ReturnObservation> compute_returns(const PriceSeries& prices) {
  if (prices.size() < 2)
    throw Error(ErrorKind::EmptyInput, "need at least 2 prices to form a return");
  std::vector<ReturnObservation> out;
  out.reserve(prices.size() - 1);
  for (std::size_t i = 1; i < prices.size(); ++i) {
    const double r = std::log(prices.points[i].close / prices.points[i - 1].close);
    out.push_back({prices.points[i].date, r, r * r});
  }
  return out;
}

/// All windows of length w with an available next-day target: sample i covers [i, i+w).
inline std::vector<WindowSample> build_windows(std::span<const ReturnObservation> returns,
                                               std::size_t w) {
  if (w == 0) throw Error(ErrorKind::Precondition, "window length must be positive");
  if (returns.size() < w + 1)
    throw Error(ErrorKind::EmptyInput, "need at least " + std::to_string(w + 1) +
                                           " observations for window length " +
                                           std::to_string(w) + ", got " +
                                           std::to_string(returns.size()));
  std::vector<WindowSample> out;
  out.reserve(returns.size() - w);
  for (std::size_t i = 0; i + w < returns.size(); ++i) {
    WindowSample s;
    s.end_index = i + w - 1;
    s.history.assign(returns.begin() + static_cast<std::ptrdiff_t>(i),
                     returns.begin() + static_cast<std::ptrdiff_t>(i + w));
    s.target = returns[i + w].realized_variance;
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {
// Fractions such as 0.7 or 0.8 are not exact in binary; without the slack
// floor(0.29 * 100) would give 28.
inline constexpr double kCountSlack = 1e-9;
}  // namespace detail

/// First floor(train_fraction * n) samples train, the rest test. No shuffling.
inline Split split_chronological(std::vector<WindowSample> samples, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error(ErrorKind::Precondition, "train_fraction must lie in (0,1), got " +
                                             std::to_string(train_fraction));
  if (samples.empty()) throw Error(ErrorKind::EmptyInput, "no samples to split");
  const auto n = samples.size();
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(n) + detail::kCountSlack));

  Split out;
  out.spec.train_fraction = train_fraction;
  out.spec.boundary_index = n_train > 0 ? samples[n_train - 1].target_index()
                                        : samples.front().end_index;
  out.train.assign(std::make_move_iterator(samples.begin()),
                   std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)));
  out.test.assign(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)),
                  std::make_move_iterator(samples.end()));
  return out;
}

/// Nearest-rank quantile: the ceil(q*n)-th smallest value (1-based), clamped to rank 1.
inline double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "quantile of empty set");
  if (!(q >= 0.0 && q <= 1.0))
    throw Error(ErrorKind::Precondition, "quantile level must lie in [0,1]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - detail::kCountSlack));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

/// Regime threshold tau from the training targets only.
inline double training_quantile(std::span<const WindowSample> train, double q) {
  if (train.empty()) throw Error(ErrorKind::EmptyInput, "empty training set");
  std::vector<double> targets;
  targets.reserve(train.size());
  for (const auto& s : train) targets.push_back(s.target);
  return nearest_rank_quantile(std::move(targets), q);
}

/// Realized variances of the returns, in order.
inline std::vector<double> variances_of(std::span<const ReturnObservation> obs) {
  std::vector<double> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(o.realized_variance);
  return out;
}

inline std::vector<double> log_returns_of(std::span<const ReturnObservation> obs) {
  std::vector<double> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(o.log_return);
  return out;
}

}  // namespace volregime
