#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "entfact/error.hpp"
#include "entfact/random.hpp"
#include "entfact/text.hpp"

namespace entfact {

inline constexpr std::string_view kEosToken = "</s>";

// Per-action indicator of membership in the current source.
using SourceMask = std::vector<char>;

// Bigram policy with a copy bonus:
//
//   pi(a | prev, S) = softmax_a( theta[prev, a] + b * [a in S] )
//
// Actions are the vocabulary, whose last entry is the end sentinel. The same
// index doubles as the start-of-sequence context, so theta is A x A.
// Parameters are stored flat: theta row-major, then b.
class ToyPolicy {
 public:
  ToyPolicy() = default;

  // Zero parameters (uniform policy) over `words` plus the end sentinel.
  static ToyPolicy uniform(std::vector<std::string> words) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    words.erase(std::remove(words.begin(), words.end(), std::string(kEosToken)), words.end());
    ToyPolicy p;
    p.vocab_ = std::move(words);
    p.vocab_.emplace_back(kEosToken);
    p.reindex();
    p.params_.assign(p.vocab_.size() * p.vocab_.size() + 1, 0.0);
    return p;
  }

  static ToyPolicy from_parameters(std::vector<std::string> vocab, std::vector<double> params) {
    if (vocab.empty() || vocab.back() != kEosToken) throw InputError("policy: vocabulary must end with " + std::string(kEosToken));
    if (params.size() != vocab.size() * vocab.size() + 1)
      throw InputError("policy: expected " + std::to_string(vocab.size() * vocab.size() + 1) + " parameters, got " +
                       std::to_string(params.size()));
    ToyPolicy p;
    p.vocab_ = std::move(vocab);
    p.reindex();
    if (p.index_.size() != p.vocab_.size()) throw InputError("policy: duplicate vocabulary entry");
    p.params_ = std::move(params);
    return p;
  }

  std::size_t num_actions() const { return vocab_.size(); }
  std::size_t eos() const { return vocab_.size() - 1; }
  std::size_t bos() const { return eos(); }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<double>& parameters() const { return params_; }
  std::vector<double>& parameters() { return params_; }
  std::size_t num_parameters() const { return params_.size(); }
  std::size_t theta_index(std::size_t prev, std::size_t a) const { return prev * vocab_.size() + a; }
  std::size_t bonus_index() const { return params_.size() - 1; }
  double copy_bonus() const { return params_.back(); }

  std::optional<std::size_t> find(std::string_view w) const {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t action(std::string_view w) const {
    auto a = find(w);
    if (!a) throw InputError("policy: token '" + std::string(w) + "' is not in the vocabulary");
    return *a;
  }

  SourceMask source_mask(const Tokens& source) const {
    SourceMask m(vocab_.size(), 0);
    for (const auto& t : source)
      if (auto a = find(t); a && *a != eos()) m[*a] = 1;
    return m;
  }

  // Action ids of `tokens` followed by the end sentinel.
  std::vector<std::size_t> actions_of(const Tokens& tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size() + 1);
    for (const auto& t : tokens) out.push_back(action(t));
    out.push_back(eos());
    return out;
  }

  void probabilities(std::size_t prev, const SourceMask& mask, std::vector<double>& out) const {
    const std::size_t n = vocab_.size();
    out.resize(n);
    const double b = copy_bonus();
    const double* row = &params_[prev * n];
    double mx = -INFINITY;
    for (std::size_t a = 0; a < n; ++a) {
      out[a] = row[a] + (mask[a] ? b : 0.0);
      mx = std::max(mx, out[a]);
    }
    double z = 0.0;
    for (auto& v : out) {
      v = std::exp(v - mx);
      z += v;
    }
    for (auto& v : out) v /= z;
  }

  std::vector<double> probabilities(std::size_t prev, const SourceMask& mask) const {
    std::vector<double> p;
    probabilities(prev, mask, p);
    return p;
  }

  double log_prob(std::size_t prev, std::size_t a, const SourceMask& mask) const {
    const std::size_t n = vocab_.size();
    const double b = copy_bonus();
    const double* row = &params_[prev * n];
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j] + (mask[j] ? b : 0.0));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] + (mask[j] ? b : 0.0) - mx);
    return row[a] + (mask[a] ? b : 0.0) - mx - std::log(z);
  }

  // grad += scale * d log pi(a | prev, S) / d params, given pi(. | prev, S).
  void add_grad_log_prob(std::size_t prev, std::size_t a, const SourceMask& mask, const std::vector<double>& pi,
                         double scale, std::vector<double>& grad) const {
    const std::size_t n = vocab_.size();
    double* row = &grad[prev * n];
    double expected_in_src = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] -= scale * pi[j];
      if (mask[j]) expected_in_src += pi[j];
    }
    row[a] += scale;
    grad.back() += scale * ((mask[a] ? 1.0 : 0.0) - expected_in_src);
  }

  std::vector<double> grad_log_prob(std::size_t prev, std::size_t a, const SourceMask& mask) const {
    std::vector<double> g(params_.size(), 0.0);
    add_grad_log_prob(prev, a, mask, probabilities(prev, mask), 1.0, g);
    return g;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["vocab"] = vocab_;
    j["parameters"] = params_;
    return j;
  }

  static ToyPolicy from_json(const nlohmann::json& j) {
    try {
      return from_parameters(j.at("vocab").get<std::vector<std::string>>(),
                             j.at("parameters").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("policy: ") + e.what());
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << to_json().dump() << '\n';
  }

  static ToyPolicy load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ": " + e.what());
    }
  }

  bool operator==(const ToyPolicy& o) const { return vocab_ == o.vocab_ && params_ == o.params_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], i);
  }

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> params_;
};

// theta_slow <- theta_slow + tau (theta_fast - theta_slow).
inline void polyak_update(ToyPolicy& slow, const ToyPolicy& fast, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw InputError("polyak_update: tau must lie in (0, 1]");
  if (slow.vocab() != fast.vocab()) throw InputError("polyak_update: policies have different shapes");
  auto& s = slow.parameters();
  const auto& f = fast.parameters();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += tau * (f[i] - s[i]);
}

enum class DecodeMode { Greedy, Sample };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::Greedy;
  std::uint64_t seed = 0;
  std::size_t max_len = 20;
};

// Autoregressive decoding from the start context; stops at the end sentinel
// or after max_len tokens. Greedy ties go to the lowest action id.
inline Tokens generate(const ToyPolicy& policy, const Tokens& source, const DecodeOptions& opts, Rng* rng = nullptr) {
  Rng local(opts.seed);
  Rng& r = rng ? *rng : local;
  const auto mask = policy.source_mask(source);
  Tokens out;
  std::size_t prev = policy.bos();
  std::vector<double> pi;
  while (out.size() < opts.max_len) {
    policy.probabilities(prev, mask, pi);
    std::size_t a = 0;
    if (opts.mode == DecodeMode::Greedy) {
      a = static_cast<std::size_t>(std::max_element(pi.begin(), pi.end()) - pi.begin());
    } else {
      const double u = uniform_real(r);
      double c = 0.0;
      a = pi.size() - 1;
      for (std::size_t j = 0; j < pi.size(); ++j) {
        c += pi[j];
        if (u < c) {
          a = j;
          break;
        }
      }
    }
    if (a == policy.eos()) break;
    out.push_back(policy.vocab()[a]);
    prev = a;
  }
  return out;
}

}  // namespace entfact
