#pragma once

#include <charconv>
#include <cmath>
#include <initializer_list>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "volregime/error.hpp"
#include "volregime/marketdata.hpp"

namespace volregime {

// Prompt templates, version 1. The same bytes live in resources/prompts/v1/;
// a unit test keeps the two copies identical.
namespace templates {
inline constexpr std::string_view kVersion = "v1";
inline constexpr std::string_view kInputLine = "day {i}: log_return={r}, realized_variance={v}";
inline constexpr std::string_view kQuery =
    "Task: predict the next day's realized variance (squared daily log return). Reply with a "
    "single number in scientific notation on the last line.";
inline constexpr std::string_view kFeedback =
    "Ground truth: {truth}. Your prediction: {pred}. Absolute error: {err}. Hint: consider "
    "adjusting toward the recent average realized variance {hint}. Provide a corrected "
    "prediction; reply with a single number on the last line.";
inline constexpr std::string_view kAnswer = "answer: {value}";
inline constexpr std::string_view kSystem =
    "You are a quantitative analyst forecasting daily financial volatility. Follow the reply "
    "format exactly.";
}  // namespace templates

enum class PromptKind { Input, Query, Feedback, Demonstration, Composite };

struct PromptText {
  std::string text;
  PromptKind kind = PromptKind::Composite;

  friend bool operator==(const PromptText&, const PromptText&) = default;
};

struct ParsedForecast {
  double value = 0.0;
  std::string raw_span;
  /// The reply's number was negative and has been clamped to zero.
  bool clamped = false;
};

/// Lowercase scientific notation with 6 significant digits and an unpadded
/// exponent: 1.23000e-4, -8.04861e-3, canonical zero 0.00000e0.
inline std::string format_number(double v) {
  if (v == 0.0) return "0.00000e0";  // also folds -0.0
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific, 5);
  if (ec != std::errc{}) throw Error(ErrorKind::Validation, "cannot format number");
  std::string s(buf, end);
  const auto e = s.find('e');
  std::string mantissa = s.substr(0, e);
  std::string_view exp(s.c_str() + e + 1);
  bool negative = false;
  if (!exp.empty() && (exp.front() == '+' || exp.front() == '-')) {
    negative = exp.front() == '-';
    exp.remove_prefix(1);
  }
  while (exp.size() > 1 && exp.front() == '0') exp.remove_prefix(1);
  return mantissa + (negative ? "e-" : "e") + std::string(exp);
}

/// Shortest decimal form that parses back to exactly `v`.
inline std::string format_exact(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw Error(ErrorKind::Validation, "cannot format number");
  return std::string(buf, end);
}

/// Replaces each `{name}` in `tmpl` by its value.
inline std::string fill_template(
    std::string_view tmpl,
    std::initializer_list<std::pair<std::string_view, std::string>> values) {
  std::string out;
  out.reserve(tmpl.size() + 32);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) throw Error(ErrorKind::Validation, "unterminated placeholder");
    out.append(tmpl.substr(pos, open - pos));
    const auto key = tmpl.substr(open + 1, close - open - 1);
    bool found = false;
    for (const auto& [k, v] : values) {
      if (k == key) {
        out.append(v);
        found = true;
        break;
      }
    }
    if (!found) throw Error(ErrorKind::Validation, "no value for placeholder {" + std::string(key) + "}");
    pos = close + 1;
  }
  return out;
}

/// p_input: one line per day of the window, oldest first, days numbered from 1.
inline PromptText render_input(std::span<const ReturnObservation> history) {
  std::string text;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) text += '\n';
    text += fill_template(templates::kInputLine,
                          {{"i", std::to_string(i + 1)},
                           {"r", format_number(history[i].log_return)},
                           {"v", format_number(history[i].realized_variance)}});
  }
  return {std::move(text), PromptKind::Input};
}

inline PromptText render_input(const WindowSample& window) { return render_input(window.history); }

inline PromptText render_query() { return {std::string(templates::kQuery), PromptKind::Query}; }

inline PromptText render_feedback(double truth, double prediction, double error, double hint) {
  const double recomputed = std::abs(prediction - truth);
  const double scale = std::max({std::abs(truth), std::abs(prediction), 1e-300});
  if (!(std::abs(error - recomputed) <= 1e-12 * scale))
    throw Error(ErrorKind::Validation, "feedback error " + format_exact(error) +
                                           " does not equal |prediction - truth| = " +
                                           format_exact(recomputed));
  return {fill_template(templates::kFeedback, {{"truth", format_number(truth)},
                                               {"pred", format_number(prediction)},
                                               {"err", format_number(error)},
                                               {"hint", format_number(hint)}}),
          PromptKind::Feedback};
}

/// `answer: {value}` at display precision.
inline std::string render_answer(double value) {
  return fill_template(templates::kAnswer, {{"value", format_number(value)}});
}

/// A demonstration block: the stored history prompt followed by its answer line.
inline PromptText render_demonstration(std::string_view prompt_text, double answer) {
  std::string text(prompt_text);
  text += '\n';
  text += render_answer(answer);
  return {std::move(text), PromptKind::Demonstration};
}

/// Joins parts with a blank line between them; the result is always Composite.
inline PromptText concat(std::span<const PromptText> parts) {
  if (parts.empty()) throw Error(ErrorKind::EmptyInput, "nothing to concatenate");
  std::string text = parts.front().text;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    text += "\n\n";
    text += parts[i].text;
  }
  return {std::move(text), PromptKind::Composite};
}

inline PromptText concat(std::initializer_list<PromptText> parts) {
  return concat(std::span<const PromptText>(parts.begin(), parts.size()));
}

/// p_conc = p_input ⊕ p_query for a window.
inline PromptText render_history_prompt(const WindowSample& window) {
  return concat({render_input(window), render_query()});
}

/// Extracts the last decimal or scientific-notation number in a model reply.
inline ParsedForecast parse_forecast(std::string_view reply) {
  static const std::regex number(R"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)");
  const std::string s(reply);
  std::smatch last;
  bool any = false;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), number); it != std::sregex_iterator();
       ++it) {
    last = *it;
    any = true;
  }
  if (!any) throw ParseError("no number in model reply", 0, s);

  ParsedForecast out;
  out.raw_span = last.str();
  std::string_view span = out.raw_span;
  if (span.front() == '+') span.remove_prefix(1);
  double v = 0.0;
  auto [p, ec] = std::from_chars(span.data(), span.data() + span.size(), v);
  if (ec != std::errc{} || !std::isfinite(v))
    throw ParseError("unparseable number '" + out.raw_span + "' in model reply", 0, s);
  if (v < 0.0) {
    v = 0.0;
    out.clamped = true;
  }
  out.value = v;
  return out;
}

}  // namespace volregime
