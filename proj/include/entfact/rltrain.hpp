#pragma once

#include <cmath>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "entfact/classifier.hpp"
#include "entfact/config.hpp"
#include "entfact/corpus.hpp"
#include "entfact/error.hpp"
#include "entfact/features.hpp"
#include "entfact/metrics.hpp"
#include "entfact/policy.hpp"
#include "entfact/random.hpp"
#include "entfact/scorer.hpp"

namespace entfact {

// Sorted summary vocabulary of a dataset.
inline std::vector<std::string> summary_vocabulary(const Dataset& data) {
  std::vector<std::string> words;
  for (const auto& ex : data) words.insert(words.end(), ex.summary.tokens.begin(), ex.summary.tokens.end());
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  return words;
}

namespace detail {

// A reference prepared for repeated teacher-forced passes.
struct Episode {
  SourceMask mask;
  std::vector<std::size_t> actions;
};

inline std::vector<Episode> prepare_episodes(const ToyPolicy& policy, const Dataset& data) {
  std::vector<Episode> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back({policy.source_mask(ex.document.tokens), policy.actions_of(ex.summary.tokens)});
  return out;
}

inline void check_finite_parameters(const ToyPolicy& p, std::size_t step, const char* what) {
  for (double v : p.parameters())
    if (!std::isfinite(v)) throw TrainingError(std::string(what) + ": non-finite parameter at step " + std::to_string(step));
}

// Fixed-size minibatches over seeded per-epoch permutations.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(std::min(batch, n)), rng_(seed) {}

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        shuffle(order_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Mean over references of sum_t log pi(a_t | s_t), end sentinel included.
inline double mean_log_likelihood(const ToyPolicy& policy, const Dataset& data) {
  if (data.empty()) throw InputError("mean_log_likelihood: empty dataset");
  double s = 0.0;
  for (const auto& ep : detail::prepare_episodes(policy, data)) {
    std::size_t prev = policy.bos();
    for (auto a : ep.actions) {
      s += policy.log_prob(prev, a, ep.mask);
      prev = a;
    }
  }
  return s / static_cast<double>(data.size());
}

struct MleConfig {
  std::size_t steps = 2000;
  double lr = 1.0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

// Minibatch gradient ascent on the teacher-forced log-likelihood of the
// references. Each step uses the batch mean gradient.
inline ToyPolicy mle_train(ToyPolicy policy, const Dataset& data, const MleConfig& cfg) {
  if (data.empty()) throw InputError("mle_train: empty dataset");
  if (cfg.batch_size == 0) throw InputError("mle_train: batch_size must be >= 1");
  const auto episodes = detail::prepare_episodes(policy, data);
  detail::BatchSampler sampler(episodes.size(), cfg.batch_size, cfg.seed);
  std::vector<double> grad(policy.num_parameters());
  std::vector<double> pi;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const auto batch = sampler.next();
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (auto i : batch) {
      const auto& ep = episodes[i];
      std::size_t prev = policy.bos();
      for (auto a : ep.actions) {
        policy.probabilities(prev, ep.mask, pi);
        loss -= std::log(pi[a]);
        policy.add_grad_log_prob(prev, a, ep.mask, pi, scale, grad);
        prev = a;
      }
    }
    if (!std::isfinite(loss)) throw TrainingError("mle_train: non-finite loss at step " + std::to_string(step));
    auto& p = policy.parameters();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] += cfg.lr * grad[j];
    detail::check_finite_parameters(policy, step, "mle_train");
  }
  return policy;
}

// ---------------------------------------------------------------------------
// Rewards and returns

struct RewardSpec {
  double r_nfe = 2.0;
  double gamma = 1.0;
};

struct Trajectory {
  Tokens source;
  // Reference tokens followed by the end sentinel.
  Tokens actions;
  std::vector<double> rewards;
  std::vector<double> returns;
};

inline nlohmann::ordered_json to_json(const Trajectory& t) {
  nlohmann::ordered_json j;
  j["source"] = t.source;
  j["actions"] = t.actions;
  j["rewards"] = t.rewards;
  j["returns"] = t.returns;
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.source = j.at("source").get<Tokens>();
  t.actions = j.at("actions").get<Tokens>();
  t.rewards = j.at("rewards").get<std::vector<double>>();
  t.returns = j.at("returns").get<std::vector<double>>();
  if (t.rewards.size() != t.actions.size() || t.returns.size() != t.actions.size())
    throw InputError("trajectory: actions, rewards and returns differ in length");
  return t;
}

inline void write_trajectories(std::ostream& out, const std::vector<Trajectory>& ts) {
  for (const auto& t : ts) out << to_json(t).dump() << '\n';
}

inline std::vector<Trajectory> read_trajectories(std::istream& in, const std::string& origin = "<stream>") {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trajectory_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// Q_t = r_t + gamma Q_{t+1}, computed right to left.
inline std::vector<double> returns(const std::vector<double>& rewards, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InputError("returns: gamma must lie in [0, 1]");
  std::vector<double> q(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    q[t] = acc;
  }
  return q;
}

// Scorers and factuality model used to judge reference entities.
struct ClassifierBundle {
  const Scorer* mlm = nullptr;
  const Scorer* posterior = nullptr;
  ScorerMode posterior_mode = ScorerMode::Cmlm;
  KnnModel factuality;
};

inline void check_bundle(const ClassifierBundle& b) {
  if (!b.mlm || !b.posterior) throw InputError("classifier bundle: scorers not set");
  if (b.factuality.task() != Task::Factuality)
    throw InputError("classifier bundle: model task is " + std::string(to_string(b.factuality.task())) +
                     ", expected factuality");
}

// Entity spans of a summary: the record's own, else the tagger's.
inline std::vector<EntityMention> summary_entities(const SummaryRecord& rec) {
  return rec.entities.empty() ? extract_entities(rec.tokens) : rec.entities;
}

// Per-token flag: inside an entity the factuality model calls non-factual.
inline std::vector<char> nonfactual_token_mask(const Example& ex, const ClassifierBundle& bundle) {
  Example tagged = ex;
  tagged.summary.entities = summary_entities(ex.summary);
  std::vector<char> mask(ex.summary.tokens.size(), 0);
  for (std::size_t i = 0; i < tagged.summary.entities.size(); ++i) {
    const auto f = entity_features(*bundle.mlm, *bundle.posterior, bundle.posterior_mode, tagged, i);
    if (bundle.factuality.predict(f).label != labels::kNonFactual) continue;
    const auto& m = tagged.summary.entities[i];
    for (std::size_t t = m.start; t < m.end(); ++t) mask[t] = 1;
  }
  return mask;
}

// Tokens inside entities predicted non-factual earn -r_nfe; every other
// action, the end sentinel included, earns its teacher-forced probability
// under the MLE policy.
inline std::vector<Trajectory> label_rewards(const Dataset& data, const ClassifierBundle& bundle,
                                             const ToyPolicy& mle_policy, const RewardSpec& spec) {
  check_bundle(bundle);
  if (!(spec.r_nfe >= 0.0)) throw InputError("label_rewards: r_nfe must be >= 0");
  std::vector<Trajectory> out;
  out.reserve(data.size());
  std::vector<double> pi;
  for (const auto& ex : data) {
    const auto penalized = nonfactual_token_mask(ex, bundle);
    const auto mask = mle_policy.source_mask(ex.document.tokens);
    const auto acts = mle_policy.actions_of(ex.summary.tokens);
    Trajectory tr;
    tr.source = ex.document.tokens;
    tr.actions = ex.summary.tokens;
    tr.actions.emplace_back(kEosToken);
    std::size_t prev = mle_policy.bos();
    for (std::size_t t = 0; t < acts.size(); ++t) {
      if (t < penalized.size() && penalized[t]) {
        tr.rewards.push_back(-spec.r_nfe);
      } else {
        mle_policy.probabilities(prev, mask, pi);
        tr.rewards.push_back(pi[acts[t]]);
      }
      prev = acts[t];
    }
    tr.returns = returns(tr.rewards, spec.gamma);
    out.push_back(std::move(tr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy gradient

// Source of the importance weight w_t = pi(a_t | s_t).
enum class WeightSource { Slow, Fast };

inline std::string_view to_string(WeightSource w) { return w == WeightSource::Slow ? "slow" : "fast"; }

inline WeightSource weight_source_from_string(std::string_view s) {
  if (s == "slow") return WeightSource::Slow;
  if (s == "fast") return WeightSource::Fast;
  throw InputError("weight source must be slow or fast, got '" + std::string(s) + "'");
}

namespace detail {

// grad += scale * sum_t w_t Q_t grad log pi(a_t | s_t), with w_t held
// constant. Returns sum_t w_t Q_t log pi(a_t | s_t).
inline double accumulate_pg(const ToyPolicy& policy, const ToyPolicy& weights, const SourceMask& mask,
                            const std::vector<std::size_t>& actions, const std::vector<double>& q, double scale,
                            std::vector<double>& grad, std::vector<double>& pi, std::vector<double>& pw) {
  double surrogate = 0.0;
  std::size_t prev = policy.bos();
  for (std::size_t t = 0; t < actions.size(); ++t) {
    const auto a = actions[t];
    policy.probabilities(prev, mask, pi);
    double w;
    if (&weights == &policy) {
      w = pi[a];
    } else {
      weights.probabilities(prev, mask, pw);
      w = pw[a];
    }
    const double c = w * q[t];
    if (!std::isfinite(c)) throw TrainingError("pg_gradient: non-finite term at position " + std::to_string(t));
    surrogate += c * std::log(pi[a]);
    if (c != 0.0) policy.add_grad_log_prob(prev, a, mask, pi, scale * c, grad);
    prev = a;
  }
  return surrogate;
}

}  // namespace detail

inline std::vector<double> pg_gradient(const ToyPolicy& policy, const ToyPolicy& slow, const Trajectory& tr,
                                       WeightSource weight = WeightSource::Slow) {
  if (tr.actions.size() != tr.returns.size())
    throw InputError("pg_gradient: returns and actions differ in length");
  if (slow.vocab() != policy.vocab()) throw InputError("pg_gradient: slow policy has a different shape");
  std::vector<std::size_t> acts;
  acts.reserve(tr.actions.size());
  for (const auto& t : tr.actions) acts.push_back(policy.action(t));
  std::vector<double> grad(policy.num_parameters(), 0.0), pi, pw;
  detail::accumulate_pg(policy, weight == WeightSource::Slow ? slow : policy, policy.source_mask(tr.source), acts,
                        tr.returns, 1.0, grad, pi, pw);
  return grad;
}

// ---------------------------------------------------------------------------
// Offline training

struct OfflineConfig {
  double r_nfe = 2.0;
  double gamma = 1.0;
  double tau = 0.01;
  std::size_t steps = 1000;
  double lr = 1.0;
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;
  WeightSource weight = WeightSource::Slow;
  // ENFS of greedy generations is measured every eval_every steps and at the
  // last step; 0 disables it.
  std::size_t eval_every = 100;
  std::size_t max_len = 20;
};

inline OfflineConfig offline_config_from(const KeyValues& kv, OfflineConfig cfg = {}) {
  for (const auto& [k, v] : kv) {
    if (k == "r_nfe") cfg.r_nfe = parse_real(v, k);
    else if (k == "gamma") cfg.gamma = parse_real(v, k);
    else if (k == "tau") cfg.tau = parse_real(v, k);
    else if (k == "steps") cfg.steps = parse_unsigned(v, k);
    else if (k == "lr") cfg.lr = parse_real(v, k);
    else if (k == "seed") cfg.seed = parse_unsigned(v, k);
    else if (k == "batch_size") cfg.batch_size = parse_unsigned(v, k);
    else if (k == "weight") cfg.weight = weight_source_from_string(v);
    else if (k == "eval_every") cfg.eval_every = parse_unsigned(v, k);
    else if (k == "max_len") cfg.max_len = parse_unsigned(v, k);
  }
  return cfg;
}

inline void validate(const OfflineConfig& c) {
  if (!(c.r_nfe >= 0.0)) throw InputError("r_nfe must be >= 0");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) throw InputError("gamma must lie in [0, 1]");
  if (!(c.tau > 0.0 && c.tau <= 1.0)) throw InputError("tau must lie in (0, 1]");
  if (!(c.lr > 0.0)) throw InputError("lr must be > 0");
  if (c.batch_size == 0) throw InputError("batch_size must be >= 1");
}

struct TrainLogEntry {
  std::size_t step = 0;
  double mean_return = 0.0;
  double loss_surrogate = 0.0;
  std::optional<double> enfs_eval;
  std::uint64_t seed = 0;
  bool operator==(const TrainLogEntry&) const = default;
};

inline nlohmann::ordered_json to_json(const TrainLogEntry& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["mean_return"] = e.mean_return;
  j["loss_surrogate"] = e.loss_surrogate;
  j["enfs_eval"] = e.enfs_eval ? nlohmann::ordered_json(*e.enfs_eval) : nlohmann::ordered_json(nullptr);
  j["seed"] = e.seed;
  return j;
}

inline void write_train_log(std::ostream& out, const std::vector<TrainLogEntry>& log) {
  for (const auto& e : log) out << to_json(e).dump() << '\n';
}

// Greedy (or sampled) summaries of `docs`, tagged with the corpus tagger.
inline Dataset generate_dataset(const ToyPolicy& policy, const std::vector<Document>& docs, const DecodeOptions& opts) {
  Dataset out;
  out.reserve(docs.size());
  Rng rng(opts.seed);
  for (const auto& d : docs) {
    Example ex;
    ex.document = d;
    ex.summary.doc_id = d.id;
    ex.summary.kind = SummaryKind::Generated;
    ex.summary.tokens = generate(policy, d.tokens, opts, &rng);
    ex.summary.entities = extract_entities(ex.summary.tokens);
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::optional<double> generation_enfs(const ToyPolicy& policy, const std::vector<Document>& docs,
                                             std::size_t max_len) {
  return metrics::enfs(generate_dataset(policy, docs, {DecodeMode::Greedy, 0, max_len}));
}

struct OfflineResult {
  ToyPolicy policy;
  ToyPolicy slow;
  std::vector<TrainLogEntry> log;
};

// Policy-gradient updates on minibatches of labelled reference trajectories,
// starting from `init`; the slow copy follows by Polyak averaging after each
// step. Trajectory returns must already be computed.
inline OfflineResult offline_train(const ToyPolicy& init, const std::vector<Trajectory>& trajectories,
                                   const std::vector<Document>& eval_docs, const OfflineConfig& cfg) {
  validate(cfg);
  if (trajectories.empty()) throw InputError("offline_train: no trajectories");
  struct Prepared {
    SourceMask mask;
    std::vector<std::size_t> actions;
    const std::vector<double>* q;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(trajectories.size());
  for (const auto& tr : trajectories) {
    if (tr.returns.size() != tr.actions.size()) throw InputError("offline_train: trajectory without returns");
    Prepared p{init.source_mask(tr.source), {}, &tr.returns};
    for (const auto& a : tr.actions) p.actions.push_back(init.action(a));
    prepared.push_back(std::move(p));
  }

  OfflineResult r{init, init, {}};
  detail::BatchSampler sampler(prepared.size(), cfg.batch_size, cfg.seed);
  std::vector<double> grad(init.num_parameters()), pi, pw;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const auto batch = sampler.next();
    const double scale = 1.0 / static_cast<double>(batch.size());
    TrainLogEntry e;
    e.step = step;
    e.seed = cfg.seed;
    const ToyPolicy& weights = cfg.weight == WeightSource::Slow ? r.slow : r.policy;
    for (auto i : batch) {
      const auto& p = prepared[i];
      e.mean_return += scale * (p.q->empty() ? 0.0 : p.q->front());
      e.loss_surrogate -= scale * detail::accumulate_pg(r.policy, weights, p.mask, p.actions, *p.q, scale, grad, pi, pw);
    }
    auto& params = r.policy.parameters();
    for (std::size_t j = 0; j < params.size(); ++j) params[j] += cfg.lr * grad[j];
    detail::check_finite_parameters(r.policy, step, "offline_train");
    polyak_update(r.slow, r.policy, cfg.tau);
    if (cfg.eval_every > 0 && !eval_docs.empty() && (step % cfg.eval_every == 0 || step == cfg.steps))
      e.enfs_eval = generation_enfs(r.policy, eval_docs, cfg.max_len);
    r.log.push_back(e);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Noise experiment

struct NoiseConfig {
  std::vector<double> ratios{0.0, 0.5, 1.0};
  // Training-set size for every ratio.
  std::size_t size = 600;
  MleConfig mle;
  DecodeOptions decode{DecodeMode::Sample, 7, 20};
  std::uint64_t seed = 1;
};

struct NoiseRow {
  double ratio = 0.0;
  std::size_t entities = 0;
  // Share of generated entities judged factual, in percent; absent when no
  // entity was generated.
  std::optional<double> knn_factual_pct;
  std::optional<double> overlap_factual_pct;
  // Mean ROUGE-1 F1 against the held-out references, in points.
  double rouge1 = 0.0;
};

// For each ratio: mix the pools, MLE-train a fresh policy, decode the held-out
// documents, and judge the generated entities by the factuality model and by
// plain source overlap.
inline std::vector<NoiseRow> noise_experiment(const Dataset& clean, const Dataset& noisy, const Dataset& heldout,
                                              const ClassifierBundle& bundle, const NoiseConfig& cfg) {
  check_bundle(bundle);
  if (heldout.empty()) throw InputError("noise_experiment: empty held-out set");
  std::vector<Document> docs;
  for (const auto& ex : heldout) docs.push_back(ex.document);
  std::vector<NoiseRow> out;
  for (double ratio : cfg.ratios) {
    const auto mixed = mix_datasets(clean, noisy, ratio, cfg.size, cfg.seed);
    const auto policy = mle_train(ToyPolicy::uniform(summary_vocabulary(mixed)), mixed, cfg.mle);
    const auto gen = generate_dataset(policy, docs, cfg.decode);
    NoiseRow row;
    row.ratio = ratio;
    std::size_t knn_factual = 0, overlap_factual = 0;
    double rouge = 0.0;
    for (std::size_t d = 0; d < gen.size(); ++d) {
      const auto& ex = gen[d];
      rouge += metrics::rouge1(ex.summary.tokens, heldout[d].summary.tokens);
      for (std::size_t i = 0; i < ex.summary.entities.size(); ++i) {
        const auto f = entity_features(*bundle.mlm, *bundle.posterior, bundle.posterior_mode, ex, i);
        ++row.entities;
        if (bundle.factuality.predict(f).label == labels::kFactual) ++knn_factual;
        if (f.overlap == 1) ++overlap_factual;
      }
    }
    row.rouge1 = 100.0 * rouge / static_cast<double>(gen.size());
    if (row.entities > 0) {
      row.knn_factual_pct = 100.0 * static_cast<double>(knn_factual) / static_cast<double>(row.entities);
      row.overlap_factual_pct = 100.0 * static_cast<double>(overlap_factual) / static_cast<double>(row.entities);
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace entfact
