#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "volregime/modelgateway.hpp"

namespace vr = volregime;
namespace fs = std::filesystem;

namespace {

vr::WindowSample window_ending_with(double last_variance) {
  vr::WindowSample w;
  w.end_index = 2;
  w.history = {{vr::Date{}, 0.01, 1e-4}, {vr::Date{}, 0.02, 4e-4}, {vr::Date{}, 0.0173, last_variance}};
  w.target = 5e-4;
  return w;
}

double parsed(const vr::ModelReply& r) { return vr::parse_forecast(r.text).value; }

/// A local chat-completion endpoint scripted with a list of status codes.
class FakeService {
 public:
  explicit FakeService(std::vector<int> statuses) : statuses_(std::move(statuses)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto n = hits_.fetch_add(1);
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      const int status = statuses_[std::min<std::size_t>(n, statuses_.size() - 1)];
      res.status = status;
      if (status == 200) {
        const nlohmann::json reply{
            {"choices", nlohmann::json::array({{{"message", {{"role", "assistant"}, {"content", "answer: 2.5e-4"}}}}})}};
        res.set_content(reply.dump(), "application/json");
      } else {
        res.set_content("scripted failure", "text/plain");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeService() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
  int hits() const { return hits_.load(); }
  const std::string& last_body() const { return last_body_; }
  const std::string& last_auth() const { return last_auth_; }

 private:
  std::vector<int> statuses_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::string last_body_;
  std::string last_auth_;
};

vr::RemoteConfig local_config(const FakeService& svc) {
  vr::RemoteConfig c;
  c.endpoint = svc.endpoint();
  c.credential_env = "VOLREGIME_TEST_KEY";
  c.timeout = std::chrono::seconds(5);
  return c;
}

struct RecordedSleeps {
  std::vector<std::chrono::milliseconds> waits;
  vr::RemoteBackend::Sleeper sleeper() {
    return [this](std::chrono::milliseconds d) { waits.push_back(d); };
  }
};

fs::path temp_file(const std::string& name) {
  auto p = fs::temp_directory_path() / ("volregime_" + name + "_" + std::to_string(::getpid()));
  fs::remove(p);
  return p;
}

}  // namespace

TEST(MockModel, EchoLastVariance) {
  vr::MockModel m({vr::MockVariant::EchoLastVariance});
  const auto prompt = vr::render_history_prompt(window_ending_with(3e-4));
  EXPECT_EQ(parsed(m.complete({prompt})), 3e-4);
}

TEST(MockModel, ConstantAlwaysSameValue) {
  vr::MockModel m({vr::MockVariant::Constant, 0, 1e-4});
  EXPECT_EQ(parsed(m.complete({vr::render_query()})), 1e-4);
  EXPECT_EQ(parsed(m.complete({vr::render_history_prompt(window_ending_with(9e-4))})), 1e-4);
}

TEST(MockModel, CorrectiveMidpoint) {
  EXPECT_DOUBLE_EQ(vr::parse_forecast(vr::mock_corrective(4e-4, 2e-4)).value, 3e-4);
  EXPECT_EQ(vr::parse_forecast(vr::mock_corrective(2e-4, 2e-4)).value, 2e-4);
  EXPECT_EQ(vr::parse_forecast(vr::mock_corrective(0.0, 2e-4)).value, 1e-4);

  vr::MockModel m({vr::MockVariant::Corrective});
  const auto w = window_ending_with(3e-4);
  const auto prompt = vr::concat({vr::render_input(w), vr::render_feedback(2e-4, 4e-4, 2e-4, 1e-4)});
  EXPECT_DOUBLE_EQ(parsed(m.complete({prompt})), 3e-4);
}

TEST(MockModel, CheatingOracleLooksUpWindowTarget) {
  const std::vector<vr::WindowSample> samples{window_ending_with(3e-4), window_ending_with(7e-4)};
  auto m = vr::MockModel::cheating_oracle(samples);
  EXPECT_EQ(parsed(m->complete({vr::render_history_prompt(samples[0])})), samples[0].target);
  EXPECT_THROW(vr::parse_forecast(m->complete({vr::render_query()}).text), vr::ParseError);
}

TEST(MockModel, BitDeterministic) {
  for (auto v : {vr::MockVariant::EchoLastVariance, vr::MockVariant::Corrective, vr::MockVariant::Constant}) {
    vr::MockModel a({v, 3}), b({v, 3});
    const auto p = vr::render_history_prompt(window_ending_with(1.234567891e-4)).text;
    EXPECT_EQ(a.respond(p), b.respond(p));
    EXPECT_EQ(a.respond(p), a.respond(p));
  }
}

TEST(MockVariantNames, RoundTrip) {
  for (auto v : {vr::MockVariant::EchoLastVariance, vr::MockVariant::CheatingOracle,
                 vr::MockVariant::Corrective, vr::MockVariant::Constant})
    EXPECT_EQ(vr::parse_mock_variant(vr::to_string(v)), v);
  EXPECT_THROW(vr::parse_mock_variant("psychic"), vr::Error);
}

TEST(RemoteBackend, MissingCredentialIsConfigurationError) {
  ::unsetenv("VOLREGIME_TEST_MISSING_KEY");
  vr::RemoteConfig c;
  c.endpoint = "http://127.0.0.1:9/never";
  c.credential_env = "VOLREGIME_TEST_MISSING_KEY";
  try {
    vr::RemoteBackend backend(c);
    FAIL() << "expected a configuration error";
  } catch (const vr::Error& e) {
    EXPECT_EQ(e.kind(), vr::ErrorKind::Configuration);
    EXPECT_NE(std::string(e.what()).find("VOLREGIME_TEST_MISSING_KEY"), std::string::npos);
  }
}

TEST(RemoteBackend, WireFormatAndReplyExtraction) {
  ::setenv("VOLREGIME_TEST_KEY", "sk-test", 1);
  FakeService svc({200});
  vr::RemoteBackend backend(local_config(svc));
  const auto prompt = vr::render_history_prompt(window_ending_with(3e-4));
  const auto reply = backend.complete({prompt, 0.0, 64});
  EXPECT_EQ(reply.text, "answer: 2.5e-4");
  EXPECT_EQ(reply.attempt, 1);
  EXPECT_EQ(svc.last_auth(), "Bearer sk-test");

  const auto body = nlohmann::json::parse(svc.last_body());
  EXPECT_EQ(body.at("model"), "gpt-4o-mini");
  EXPECT_EQ(body.at("temperature"), 0.0);
  ASSERT_EQ(body.at("messages").size(), 2u);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["role"], "user");
  EXPECT_EQ(body["messages"][1]["content"], prompt.text);
}

TEST(RemoteBackend, RetriesTransientFailuresWithBackoff) {
  ::setenv("VOLREGIME_TEST_KEY", "sk-test", 1);
  FakeService svc({500, 429, 200});
  RecordedSleeps sleeps;
  vr::RemoteBackend backend(local_config(svc), sleeps.sleeper());
  const auto reply = backend.complete({vr::render_query()});
  EXPECT_EQ(reply.attempt, 3);
  EXPECT_EQ(svc.hits(), 3);
  ASSERT_EQ(sleeps.waits.size(), 2u);
  EXPECT_EQ(sleeps.waits[0], std::chrono::seconds(1));
  EXPECT_EQ(sleeps.waits[1], std::chrono::seconds(2));
}

TEST(RemoteBackend, ClientErrorIsNotRetried) {
  ::setenv("VOLREGIME_TEST_KEY", "sk-test", 1);
  FakeService svc({401});
  RecordedSleeps sleeps;
  vr::RemoteBackend backend(local_config(svc), sleeps.sleeper());
  try {
    backend.complete({vr::render_query()});
    FAIL() << "expected a service error";
  } catch (const vr::ServiceError& e) {
    EXPECT_EQ(e.status(), 401);
  }
  EXPECT_EQ(svc.hits(), 1);
  EXPECT_TRUE(sleeps.waits.empty());
}

TEST(RemoteBackend, ExhaustedRetriesReportLastStatusAndRespectCap) {
  ::setenv("VOLREGIME_TEST_KEY", "sk-test", 1);
  FakeService svc({503});
  RecordedSleeps sleeps;
  vr::RemoteBackend backend(local_config(svc), sleeps.sleeper());
  try {
    backend.complete({vr::render_query()});
    FAIL() << "expected a service error";
  } catch (const vr::ServiceError& e) {
    EXPECT_EQ(e.status(), 503);
  }
  EXPECT_EQ(svc.hits(), 4);  // one attempt plus three retries
  ASSERT_EQ(sleeps.waits.size(), 3u);
  EXPECT_EQ(sleeps.waits[2], std::chrono::seconds(4));
}

TEST(RemoteBackend, UnreachableEndpointIsTransportError) {
  ::setenv("VOLREGIME_TEST_KEY", "sk-test", 1);
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  vr::RemoteConfig c;
  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  c.credential_env = "VOLREGIME_TEST_KEY";
  c.max_retries = 1;
  c.timeout = std::chrono::seconds(1);
  RecordedSleeps sleeps;
  vr::RemoteBackend backend(c, sleeps.sleeper());
  try {
    backend.complete({vr::render_query()});
    FAIL() << "expected a transport error";
  } catch (const vr::Error& e) {
    EXPECT_EQ(e.kind(), vr::ErrorKind::Transport);
  }
  EXPECT_EQ(sleeps.waits.size(), 1u);
}

TEST(Gateway, SendsRenderedBytesUnchangedAndReplaysThem) {
  const auto path = temp_file("record.jsonl");
  auto inner = std::make_shared<vr::MockModel>(vr::MockBehavior{vr::MockVariant::EchoLastVariance});
  vr::ModelGateway gw(std::make_shared<vr::RecordingBackend>(inner, path.string()));
  const auto prompt = vr::render_history_prompt(window_ending_with(3e-4));
  const auto live = gw.complete(prompt);

  std::ifstream in(path);
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(nlohmann::json::parse(line).at("prompt").get<std::string>(), prompt.text);

  vr::ModelGateway replay(std::make_shared<vr::ReplayBackend>(path.string()));
  EXPECT_EQ(replay.complete(prompt).text, live.text);
  EXPECT_THROW(replay.complete(vr::render_query()), vr::Error);
  fs::remove(path);
}

TEST(Gateway, ForbiddingBackendRejectsEveryCall) {
  auto forbid = std::make_shared<vr::ForbiddingBackend>();
  vr::ModelGateway gw(forbid);
  EXPECT_THROW(gw.complete(vr::render_query()), vr::Error);
  EXPECT_EQ(forbid->calls(), 1u);
}

namespace {

class SlowCounting final : public vr::ModelBackend {
 public:
  vr::ModelReply complete(const vr::ModelRequest& req) override {
    const int now = ++active_;
    int seen = peak_.load();
    while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active_;
    EXPECT_EQ(req.temperature, 0.0);
    return {"answer: 1e-4"};
  }
  std::string describe() const override { return "slow"; }
  int peak() const { return peak_.load(); }

 private:
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

}  // namespace

TEST(Gateway, InFlightCapIsRespected) {
  auto slow = std::make_shared<SlowCounting>();
  vr::ModelGateway gw(slow, 2);
  std::vector<std::jthread> threads;
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&] {
      for (int j = 0; j < 3; ++j) gw.complete(vr::render_query());
    });
  threads.clear();
  EXPECT_LE(slow->peak(), 2);
  EXPECT_GE(slow->peak(), 1);
}
