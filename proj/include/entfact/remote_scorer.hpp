#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "entfact/error.hpp"
#include "entfact/scorer.hpp"

namespace entfact {

struct RemoteScorerConfig {
  // Base URL, e.g. "http://localhost:8080".
  std::string endpoint;
  std::chrono::milliseconds timeout{5000};
  // Additional attempts after the first one for transport failures and 5xx.
  int max_retries = 2;
  std::chrono::milliseconds backoff{100};
  // Upper bound on concurrent in-flight requests.
  int max_connections = 4;
};

// Environment variable consulted by the CLI when no endpoint flag is given.
inline constexpr const char* kScorerEndpointEnv = "ENTFACT_SCORER_URL";

// Body of POST /v1/score.
inline nlohmann::ordered_json score_request_json(const ScoreQuery& q) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(q.mode));
  if (q.source) j["source_tokens"] = Tokens(q.source->begin(), q.source->end());
  j["target_tokens"] = Tokens(q.target.begin(), q.target.end());
  j["span"] = {{"start", q.span.start}, {"length", q.span.length}};
  return j;
}

// Validates a 2xx body against the query it answers.
inline StepScores parse_score_response(const std::string& body, const ScoreQuery& q) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
  }
  auto it = j.is_object() ? j.find("step_logprobs") : j.end();
  if (it == j.end() || !it->is_array()) throw MalformedResponseError("response lacks step_logprobs array");
  if (it->size() != q.span.length)
    throw MalformedResponseError("step_logprobs has " + std::to_string(it->size()) +
                                 " values for a span of length " + std::to_string(q.span.length));
  StepScores out;
  for (const auto& v : *it) {
    if (!v.is_number()) throw MalformedResponseError("step_logprobs must hold numbers");
    const double x = v.get<double>();
    if (!std::isfinite(x) || x > 0.0) throw MalformedResponseError("step log-probability out of range");
    out.push_back(x);
  }
  return out;
}

class RemoteScorer : public Scorer {
 public:
  explicit RemoteScorer(RemoteScorerConfig cfg)
      : cfg_(std::move(cfg)),
        slots_(std::make_unique<std::counting_semaphore<>>(cfg_.max_connections > 0 ? cfg_.max_connections : 1)) {
    if (cfg_.endpoint.empty()) throw InputError("remote scorer: endpoint not configured");
    if (cfg_.max_retries < 0) throw InputError("remote scorer: max_retries must be >= 0");
  }

  const RemoteScorerConfig& config() const { return cfg_; }

  StepScores score(const ScoreQuery& q) const override {
    validate_query(q);
    const std::string body = score_request_json(q).dump();

    slots_->acquire();
    struct Release {
      std::counting_semaphore<>* s;
      ~Release() { s->release(); }
    } release{slots_.get()};

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(cfg_.backoff * (1 << (attempt - 1)));

      httplib::Client client(cfg_.endpoint);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());

      auto res = client.Post("/v1/score", body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 200 && res->status < 300) return parse_score_response(res->body, q);

      std::string message = res->body;
      try {
        auto j = nlohmann::json::parse(res->body);
        if (j.is_object() && j.contains("error") && j["error"].is_string()) message = j["error"];
      } catch (const nlohmann::json::exception&) {
      }
      // 4xx is the caller's fault; retrying cannot help.
      if (res->status < 500 || attempt == cfg_.max_retries) throw ServerError(res->status, message);
      last_error = "status " + std::to_string(res->status);
    }
    throw TransportError("remote scorer: " + cfg_.endpoint + " failed after " +
                         std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
  }

 private:
  RemoteScorerConfig cfg_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
};

}  // namespace entfact
