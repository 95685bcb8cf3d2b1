#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "volregime/error.hpp"
#include "volregime/marketdata.hpp"
#include "volregime/promptcodec.hpp"

namespace volregime {

struct ModelRequest {
  PromptText prompt;
  double temperature = 0.0;
  int max_reply_tokens = 64;
};

struct ModelReply {
  std::string text;
  std::chrono::milliseconds latency{0};
  int attempt = 1;
};

/// A forecaster behind a chat-style interface. Implementations must allow
/// concurrent complete() calls.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual ModelReply complete(const ModelRequest& request) = 0;
  virtual std::string describe() const = 0;
  /// True when complete() can reach the network.
  virtual bool remote() const { return false; }
};

// ---------------------------------------------------------------------------
// Deterministic mocks

enum class MockVariant { EchoLastVariance, CheatingOracle, Corrective, Constant };

inline std::string to_string(MockVariant v) {
  switch (v) {
    case MockVariant::EchoLastVariance: return "echo_last_variance";
    case MockVariant::CheatingOracle: return "cheating_oracle";
    case MockVariant::Corrective: return "corrective";
    case MockVariant::Constant: return "constant";
  }
  return "?";
}

inline MockVariant parse_mock_variant(std::string_view name) {
  for (auto v : {MockVariant::EchoLastVariance, MockVariant::CheatingOracle,
                 MockVariant::Corrective, MockVariant::Constant})
    if (to_string(v) == name) return v;
  throw Error(ErrorKind::Configuration, "unknown mock variant '" + std::string(name) + "'");
}

struct MockBehavior {
  MockVariant variant = MockVariant::EchoLastVariance;
  std::uint64_t seed = 0;
  /// Reply value for the constant variant.
  double constant_value = 1e-4;
};

/// Reply of a model that moves halfway from its previous prediction to the truth.
inline std::string mock_corrective(double previous, double truth) {
  return "answer: " + format_exact(previous + 0.5 * (truth - previous));
}

namespace detail {

/// The trailing block of consecutive `day N:` lines, i.e. the p_input of the
/// window being asked about; empty when the prompt has none.
inline std::string last_input_block(std::string_view prompt) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= prompt.size()) {
    const auto nl = prompt.find('\n', pos);
    const auto end = nl == std::string_view::npos ? prompt.size() : nl;
    lines.push_back(prompt.substr(pos, end - pos));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  std::size_t last = lines.size();
  for (std::size_t i = lines.size(); i-- > 0;) {
    if (lines[i].starts_with("day ")) {
      last = i;
      break;
    }
  }
  if (last == lines.size()) return {};
  std::size_t first = last;
  while (first > 0 && lines[first - 1].starts_with("day ")) --first;
  std::string out;
  for (std::size_t i = first; i <= last; ++i) {
    if (i > first) out += '\n';
    out.append(lines[i]);
  }
  return out;
}

inline std::optional<double> last_variance_in(std::string_view prompt) {
  constexpr std::string_view key = "realized_variance=";
  const auto at = prompt.rfind(key);
  if (at == std::string_view::npos) return std::nullopt;
  auto rest = prompt.substr(at + key.size());
  const auto stop = rest.find_first_of(",\n ");
  rest = rest.substr(0, stop);
  double v = 0.0;
  auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), v);
  if (ec != std::errc{}) return std::nullopt;
  return v;
}

struct FeedbackFields {
  double truth = 0.0;
  double prediction = 0.0;
};

inline std::optional<FeedbackFields> feedback_in(const std::string& prompt) {
  static const std::regex re(R"(Ground truth: ([^ ]+)\. Your prediction: ([^ ]+)\. )");
  std::smatch m;
  if (!std::regex_search(prompt, m, re)) return std::nullopt;
  FeedbackFields f;
  const auto a = m[1].str(), b = m[2].str();
  if (std::from_chars(a.data(), a.data() + a.size(), f.truth).ec != std::errc{} ||
      std::from_chars(b.data(), b.data() + b.size(), f.prediction).ec != std::errc{})
    return std::nullopt;
  return f;
}

}  // namespace detail

/// Offline stand-in for a language model. Replies are a pure function of
/// (behavior, prompt):
///  - echo_last_variance: the last realized variance quoted in the prompt;
///  - cheating_oracle: the true next-day variance of the prompt's window, looked
///    up in a table of known samples (test oracle only);
///  - corrective: on feedback prompts, the midpoint of prediction and truth;
///    otherwise behaves like echo_last_variance;
///  - constant: a fixed value.
/// Numbers in replies are written at full round-trip precision.
class MockModel final : public ModelBackend {
 public:
  explicit MockModel(MockBehavior behavior) : behavior_(behavior) {}

  /// Cheating oracle knowing the targets of `samples`.
  static std::shared_ptr<MockModel> cheating_oracle(std::span<const WindowSample> samples,
                                                    std::uint64_t seed = 0) {
    auto m = std::make_shared<MockModel>(MockBehavior{MockVariant::CheatingOracle, seed, 0.0});
    for (const auto& s : samples) m->truth_[render_input(s).text] = s.target;
    return m;
  }

  ModelReply complete(const ModelRequest& request) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return {respond(request.prompt.text), std::chrono::milliseconds{0}, 1};
  }

  std::string respond(const std::string& prompt) const {
    switch (behavior_.variant) {
      case MockVariant::Constant:
        return "answer: " + format_exact(behavior_.constant_value);
      case MockVariant::CheatingOracle: {
        const auto it = truth_.find(detail::last_input_block(prompt));
        if (it != truth_.end()) return "answer: " + format_exact(it->second);
        if (const auto f = detail::feedback_in(prompt)) return "answer: " + format_exact(f->truth);
        return "I cannot forecast.";
      }
      case MockVariant::Corrective:
        if (const auto f = detail::feedback_in(prompt))
          return mock_corrective(f->prediction, f->truth);
        [[fallthrough]];
      case MockVariant::EchoLastVariance:
        if (const auto v = detail::last_variance_in(prompt)) return "answer: " + format_exact(*v);
        return "I cannot forecast.";
    }
    return {};
  }

  std::string describe() const override { return "mock:" + to_string(behavior_.variant); }
  const MockBehavior& behavior() const noexcept { return behavior_; }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  MockBehavior behavior_;
  std::unordered_map<std::string, double> truth_;
  std::atomic<std::size_t> calls_{0};
};

/// Fails every request; stands in wherever model access must not happen.
class ForbiddingBackend final : public ModelBackend {
 public:
  ModelReply complete(const ModelRequest&) override {
    calls_.fetch_add(1);
    throw Error(ErrorKind::Configuration, "model access is forbidden in this context");
  }
  std::string describe() const override { return "forbidden"; }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Recording / replay

/// Forwards to `inner` and appends each (prompt, reply) pair to a JSON Lines file.
class RecordingBackend final : public ModelBackend {
 public:
  RecordingBackend(std::shared_ptr<ModelBackend> inner, std::string path)
      : inner_(std::move(inner)), path_(std::move(path)) {}

  ModelReply complete(const ModelRequest& request) override {
    auto reply = inner_->complete(request);
    const nlohmann::json line{{"prompt", request.prompt.text}, {"reply", reply.text}};
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(ErrorKind::Io, "cannot append to " + path_);
    out << line.dump() << '\n';
    return reply;
  }

  std::string describe() const override { return "record(" + inner_->describe() + ")"; }
  bool remote() const override { return inner_->remote(); }

 private:
  std::shared_ptr<ModelBackend> inner_;
  std::string path_;
  std::mutex mu_;
};

/// Serves replies recorded by RecordingBackend, matched on the exact prompt bytes.
class ReplayBackend final : public ModelBackend {
 public:
  explicit ReplayBackend(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Configuration, "cannot open replay file " + path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        replies_[j.at("prompt").get<std::string>()] = j.at("reply").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), n);
      }
    }
  }

  ModelReply complete(const ModelRequest& request) override {
    const auto it = replies_.find(request.prompt.text);
    if (it == replies_.end())
      throw Error(ErrorKind::Transport, "no recorded reply for prompt");
    return {it->second, std::chrono::milliseconds{0}, 1};
  }

  std::string describe() const override { return "replay"; }
  std::size_t size() const noexcept { return replies_.size(); }

 private:
  std::unordered_map<std::string, std::string> replies_;
};

// ---------------------------------------------------------------------------
// Remote chat-completion service

struct RemoteConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string credential_env = "VOLREGIME_API_KEY";
  std::chrono::seconds timeout{60};
  int max_retries = 3;
  std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds{1}, std::chrono::seconds{2},
                                                 std::chrono::seconds{4}};
};

class RemoteBackend final : public ModelBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  /// Reads the credential immediately; a missing one is a configuration error
  /// before any connection is attempted.
  explicit RemoteBackend(RemoteConfig config, Sleeper sleeper = {})
      : config_(std::move(config)), sleeper_(std::move(sleeper)) {
    const char* key = std::getenv(config_.credential_env.c_str());
    if (key == nullptr || *key == '\0')
      throw Error(ErrorKind::Configuration,
                  "environment variable " + config_.credential_env + " is not set");
    api_key_ = key;
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos)
      throw Error(ErrorKind::Configuration, "endpoint must be an absolute URL: " + config_.endpoint);
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    origin_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

  static nlohmann::json request_body(const RemoteConfig& config, const ModelRequest& request) {
    return {{"model", config.model},
            {"messages",
             nlohmann::json::array({{{"role", "system"}, {"content", templates::kSystem}},
                                    {{"role", "user"}, {"content", request.prompt.text}}})},
            {"temperature", request.temperature},
            {"max_tokens", request.max_reply_tokens}};
  }

  ModelReply complete(const ModelRequest& request) override {
    const auto body = request_body(config_, request).dump();
    const auto started = std::chrono::steady_clock::now();
    httplib::Client client(origin_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    const httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};

    std::string last_problem;
    int last_status = 0;
    const int attempts = 1 + std::max(0, config_.max_retries);
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      if (attempt > 1) {
        const auto i = static_cast<std::size_t>(attempt - 2);
        sleeper_(config_.backoff.empty() ? std::chrono::milliseconds{0}
                                         : config_.backoff[std::min(i, config_.backoff.size() - 1)]);
      }
      auto res = client.Post(path_, headers, body, "application/json");
      if (!res) {
        last_status = 0;
        last_problem = httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) {
        try {
          const auto j = nlohmann::json::parse(res->body);
          ModelReply reply;
          reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
          reply.attempt = attempt;
          reply.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
              std::chrono::steady_clock::now() - started);
          return reply;
        } catch (const nlohmann::json::exception& e) {
          throw ServiceError(res->status, std::string("malformed reply body: ") + e.what());
        }
      }
      last_status = res->status;
      last_problem = res->body.substr(0, 200);
      const bool transient = res->status == 408 || res->status == 429 || res->status >= 500;
      if (!transient) throw ServiceError(res->status, last_problem);
    }
    if (last_status != 0) throw ServiceError(last_status, last_problem);
    throw Error(ErrorKind::Transport, "giving up after " + std::to_string(attempts) +
                                          " attempts: " + last_problem);
  }

  std::string describe() const override { return "remote:" + config_.model; }
  bool remote() const override { return true; }

 private:
  RemoteConfig config_;
  Sleeper sleeper_;
  std::string api_key_;
  std::string origin_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Gateway

/// Uniform entry point for all model calls: fixes temperature at 0, caps the
/// number of requests in flight, and never alters prompt bytes.
class ModelGateway {
 public:
  explicit ModelGateway(std::shared_ptr<ModelBackend> backend, int max_in_flight = 4,
                        int max_reply_tokens = 64)
      : backend_(std::move(backend)),
        slots_(std::max(1, max_in_flight)),
        max_in_flight_(std::max(1, max_in_flight)),
        max_reply_tokens_(max_reply_tokens) {
    if (!backend_) throw Error(ErrorKind::Configuration, "no model backend configured");
  }

  ModelReply complete(const PromptText& prompt) {
    ModelRequest req{prompt, 0.0, max_reply_tokens_};
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};
    return backend_->complete(req);
  }

  int max_in_flight() const noexcept { return max_in_flight_; }
  const ModelBackend& backend() const noexcept { return *backend_; }

 private:
  std::shared_ptr<ModelBackend> backend_;
  std::counting_semaphore<> slots_;
  int max_in_flight_;
  int max_reply_tokens_;
};

}  // namespace volregime
