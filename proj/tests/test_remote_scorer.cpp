#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "entfact/remote_scorer.hpp"

using namespace entfact;
using namespace std::chrono_literals;

namespace {

// Local scoring server whose behaviour is set per test.
class FakeServer {
 public:
  explicit FakeServer(std::function<void(const httplib::Request&, httplib::Response&, int call)> handler)
      : handler_(std::move(handler)) {
    server_.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard<std::mutex> lock(mu_);
        last_body_ = req.body;
      }
      handler_(req, res, calls_++);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int calls() const { return calls_; }
  std::string last_body() const {
    std::lock_guard<std::mutex> lock(mu_);
    return last_body_;
  }

 private:
  std::function<void(const httplib::Request&, httplib::Response&, int)> handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> calls_{0};
  mutable std::mutex mu_;
  std::string last_body_;
};

RemoteScorerConfig config(const std::string& url) {
  RemoteScorerConfig c;
  c.endpoint = url;
  c.timeout = 300ms;
  c.max_retries = 2;
  c.backoff = 5ms;
  return c;
}

struct Fixture {
  Tokens source{"Rain", "in", "Cardiff"};
  Tokens target{"Storm", "hit", "Cardiff", "Bay"};
  ScoreQuery q;
  Fixture() {
    q.source = std::span<const std::string>(source);
    q.target = target;
    q.span = {2, 2};
    q.mode = ScorerMode::Cmlm;
  }
};

}  // namespace

TEST(RemoteScorer, PassesStepScoresThrough) {
  FakeServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(R"({"step_logprobs":[-1.0,-0.5]})", "application/json");
  });
  Fixture f;
  EXPECT_EQ(RemoteScorer(config(srv.url())).score(f.q), (StepScores{-1.0, -0.5}));
  const auto body = nlohmann::json::parse(srv.last_body());
  EXPECT_EQ(body["mode"], "cmlm");
  EXPECT_EQ(body["source_tokens"], nlohmann::json(f.source));
  EXPECT_EQ(body["target_tokens"], nlohmann::json(f.target));
  EXPECT_EQ(body["span"]["start"], 2);
  EXPECT_EQ(body["span"]["length"], 2);
}

TEST(RemoteScorer, MlmRequestOmitsSource) {
  FakeServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(R"({"step_logprobs":[-2.0]})", "application/json");
  });
  Fixture f;
  f.q.mode = ScorerMode::Mlm;
  f.q.source.reset();
  f.q.span = {0, 1};
  RemoteScorer(config(srv.url())).score(f.q);
  EXPECT_FALSE(nlohmann::json::parse(srv.last_body()).contains("source_tokens"));
}

TEST(RemoteScorer, WrongLengthIsMalformed) {
  FakeServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.set_content(R"({"step_logprobs":[-1.0]})", "application/json");
  });
  Fixture f;
  EXPECT_THROW(RemoteScorer(config(srv.url())).score(f.q), MalformedResponseError);
}

TEST(RemoteScorer, NonJsonAndPositiveValuesAreMalformed) {
  Fixture f;
  EXPECT_THROW(parse_score_response("not json", f.q), MalformedResponseError);
  EXPECT_THROW(parse_score_response(R"({"step_logprobs":[0.5,-1]})", f.q), MalformedResponseError);
  EXPECT_THROW(parse_score_response(R"({"scores":[-1,-1]})", f.q), MalformedResponseError);
  EXPECT_THROW(parse_score_response(R"({"step_logprobs":["a","b"]})", f.q), MalformedResponseError);
}

TEST(RemoteScorer, RetriesServerErrorsThenSucceeds) {
  FakeServer srv([](const httplib::Request&, httplib::Response& res, int call) {
    if (call < 2) {
      res.status = 503;
      res.set_content(R"({"error":"busy"})", "application/json");
    } else {
      res.set_content(R"({"step_logprobs":[-1.0,-2.0]})", "application/json");
    }
  });
  Fixture f;
  EXPECT_EQ(RemoteScorer(config(srv.url())).score(f.q), (StepScores{-1.0, -2.0}));
  EXPECT_EQ(srv.calls(), 3);
}

TEST(RemoteScorer, PersistentServerErrorCarriesStatusAndMessage) {
  FakeServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 500;
    res.set_content(R"({"error":"model crashed"})", "application/json");
  });
  Fixture f;
  try {
    RemoteScorer(config(srv.url())).score(f.q);
    FAIL();
  } catch (const ServerError& e) {
    EXPECT_EQ(e.status, 500);
    EXPECT_NE(std::string(e.what()).find("model crashed"), std::string::npos);
  }
  EXPECT_EQ(srv.calls(), 3);
}

TEST(RemoteScorer, ClientErrorIsNotRetried) {
  FakeServer srv([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 400;
    res.set_content(R"({"error":"bad span"})", "application/json");
  });
  Fixture f;
  EXPECT_THROW(RemoteScorer(config(srv.url())).score(f.q), ServerError);
  EXPECT_EQ(srv.calls(), 1);
}

TEST(RemoteScorer, TimeoutBecomesTransportErrorAfterRetries) {
  FakeServer srv([](const httplib::Request&, httplib::Response& res, int) {
    std::this_thread::sleep_for(600ms);
    res.set_content(R"({"step_logprobs":[-1.0,-2.0]})", "application/json");
  });
  Fixture f;
  auto cfg = config(srv.url());
  cfg.timeout = 100ms;
  cfg.max_retries = 1;
  EXPECT_THROW(RemoteScorer(cfg).score(f.q), TransportError);
  EXPECT_EQ(srv.calls(), 2);
}

TEST(RemoteScorer, UnreachableEndpointIsTransportError) {
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  Fixture f;
  auto cfg = config("http://127.0.0.1:" + std::to_string(port));
  cfg.max_retries = 1;
  EXPECT_THROW(RemoteScorer(cfg).score(f.q), TransportError);
}

TEST(RemoteScorer, ConcurrentCallersShareTheClient) {
  FakeServer srv([](const httplib::Request&, httplib::Response& res, int) {
    std::this_thread::sleep_for(10ms);
    res.set_content(R"({"step_logprobs":[-1.0,-2.0]})", "application/json");
  });
  Fixture f;
  auto cfg = config(srv.url());
  cfg.max_connections = 2;
  RemoteScorer scorer(cfg);
  std::atomic<int> ok{0};
  std::vector<std::thread> ts;
  for (int i = 0; i < 6; ++i)
    ts.emplace_back([&] {
      if (scorer.score(f.q) == StepScores{-1.0, -2.0}) ++ok;
    });
  for (auto& t : ts) t.join();
  EXPECT_EQ(ok.load(), 6);
}

TEST(RemoteScorer, RequiresEndpoint) { EXPECT_THROW(RemoteScorer(RemoteScorerConfig{}), InputError); }
