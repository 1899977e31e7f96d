#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "entfact/corpus.hpp"
#include "entfact/error.hpp"
#include "entfact/text.hpp"

namespace entfact {

// MLM sees the masked target only, CMLM the masked target plus the source,
// CLM the source plus the target strictly left of each position.
enum class ScorerMode { Mlm, Cmlm, Clm };

inline std::string_view to_string(ScorerMode m) {
  switch (m) {
    case ScorerMode::Mlm: return "mlm";
    case ScorerMode::Cmlm: return "cmlm";
    case ScorerMode::Clm: return "clm";
  }
  return "";
}

inline ScorerMode scorer_mode_from_string(std::string_view s) {
  if (s == "mlm") return ScorerMode::Mlm;
  if (s == "cmlm") return ScorerMode::Cmlm;
  if (s == "clm") return ScorerMode::Clm;
  throw InputError("unknown scorer mode '" + std::string(s) + "'");
}

// Identifies an entity for scorers backed by precomputed values.
struct ScoreKey {
  std::string doc_id;
  std::size_t entity_index = 0;
  auto operator<=>(const ScoreKey&) const = default;
};

inline std::string describe(const ScoreKey& k) {
  return "(" + k.doc_id + ", " + std::to_string(k.entity_index) + ")";
}

struct ScoreQuery {
  std::optional<std::span<const std::string>> source;
  std::span<const std::string> target;
  TokenSpan span;
  ScorerMode mode = ScorerMode::Mlm;
  std::optional<ScoreKey> key;
};

// Natural-log probability of each entity token, in order.
using StepScores = std::vector<double>;

inline void validate_query(const ScoreQuery& q) {
  if (q.span.length == 0) throw InputError("score query: empty span");
  if (q.span.end() > q.target.size()) throw InputError("score query: span out of bounds");
  if (q.mode != ScorerMode::Mlm && (!q.source || q.source->empty()))
    throw InputError(std::string("score query: mode ") + std::string(to_string(q.mode)) +
                     " requires source tokens");
}

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual StepScores score(const ScoreQuery& query) const = 0;
};

// ---------------------------------------------------------------------------
// Count-based toy masked LM

// Trigram model over (previous token, token, next token) with additive
// smoothing that backs off to (previous token, token) and then to unigrams.
// Each level uses the level below as its smoothing prior:
//
//   P1(w)     = (c(w) + a) / (N + a|V|)
//   P2(w|p)   = (c(p,w) + a|V| P1(w)) / (c(p,.) + a|V|)
//   P3(w|p,n) = (c(p,w,n) + a|V| P2(w|p)) / (c(p,.,n) + a|V|)
//
// so every conditional sums to one over the vocabulary, and a context never
// seen in training reduces exactly to the level below.
class ToyMlm : public Scorer {
 public:
  using Id = std::size_t;
  static constexpr Id kMaskId = 0;
  static constexpr Id kUnkId = 1;
  static constexpr std::string_view kUnkToken = "<unk>";

  static ToyMlm train(const std::vector<Tokens>& corpus, double alpha) {
    if (!(alpha > 0.0)) throw InputError("train_toy_mlm: alpha must be > 0");
    if (corpus.empty()) throw InputError("train_toy_mlm: empty corpus");
    std::map<std::string, Id> sorted;
    for (const auto& seq : corpus)
      for (const auto& t : seq) sorted.emplace(t, 0);
    sorted.erase(std::string(kMaskToken));
    sorted.erase(std::string(kUnkToken));

    ToyMlm m;
    m.alpha_ = alpha;
    m.words_ = {std::string(kMaskToken), std::string(kUnkToken)};
    for (auto& [w, id] : sorted) {
      id = m.words_.size();
      m.words_.push_back(w);
    }
    for (Id i = 0; i < m.words_.size(); ++i) m.ids_.emplace(m.words_[i], i);
    const std::size_t v = m.words_.size();
    m.unigram_.assign(v, 0.0);
    m.bigram_ctx_.assign(v + 2, 0.0);

    for (const auto& seq : corpus) {
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const Id w = m.id(seq[i]);
        const Id p = i == 0 ? m.boundary_id() : m.id(seq[i - 1]);
        m.unigram_[w] += 1.0;
        m.total_ += 1.0;
        m.bigram_[m.bigram_key(p, w)] += 1.0;
        m.bigram_ctx_[p] += 1.0;
        if (i + 1 < seq.size()) {
          const Id n = m.id(seq[i + 1]);
          m.trigram_[m.trigram_key(p, n, w)] += 1.0;
          m.trigram_ctx_[m.context_key(p, n)] += 1.0;
        }
      }
    }
    return m;
  }

  std::size_t vocab_size() const { return words_.size(); }
  double alpha() const { return alpha_; }
  const std::vector<std::string>& words() const { return words_; }

  // Context-only ids: the sequence boundary (left of the first token) and
  // "no right context" (right of the last token).
  Id boundary_id() const { return words_.size(); }
  Id none_id() const { return words_.size() + 1; }

  bool knows(std::string_view w) const { return ids_.count(std::string(w)) > 0; }

  Id id(std::string_view w) const {
    auto it = ids_.find(std::string(w));
    return it == ids_.end() ? kUnkId : it->second;
  }

  double unigram(Id w) const {
    const double v = static_cast<double>(vocab_size());
    return (unigram_[w] + alpha_) / (total_ + alpha_ * v);
  }

  double bigram(Id w, Id prev) const {
    const double av = alpha_ * static_cast<double>(vocab_size());
    return (lookup(bigram_, bigram_key(prev, w)) + av * unigram(w)) / (bigram_ctx_[prev] + av);
  }

  // A masked or absent right neighbour carries no information, so those
  // contexts are the bigram distribution.
  double trigram(Id w, Id prev, Id next) const {
    if (next == none_id() || next == kMaskId) return bigram(w, prev);
    const double av = alpha_ * static_cast<double>(vocab_size());
    return (lookup(trigram_, trigram_key(prev, next, w)) + av * bigram(w, prev)) /
           (lookup(trigram_ctx_, context_key(prev, next)) + av);
  }

  // Left and right context ids of step `t` of `span`: the previously filled
  // token (or the boundary) and the first visible token right of the mask.
  std::pair<Id, Id> step_context(std::span<const std::string> target, TokenSpan span,
                                 std::size_t t) const {
    const std::size_t pos = span.start + t;
    const Id prev = pos == 0 ? boundary_id() : id(target[pos - 1]);
    const Id next = span.end() < target.size() ? id(target[span.end()]) : none_id();
    return {prev, next};
  }

  StepScores score(const ScoreQuery& q) const override {
    validate_query(q);
    if (q.mode != ScorerMode::Mlm)
      throw InputError("ToyMlm only scores in mlm mode; use ToyCmlm for conditional modes");
    StepScores out;
    out.reserve(q.span.length);
    for (std::size_t t = 0; t < q.span.length; ++t) {
      const auto [prev, next] = step_context(q.target, q.span, t);
      out.push_back(std::log(trigram(id(q.target[q.span.start + t]), prev, next)));
    }
    return out;
  }

 private:
  static double lookup(const std::unordered_map<std::uint64_t, double>& m, std::uint64_t k) {
    auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  }
  std::uint64_t ctx_radix() const { return words_.size() + 2; }
  std::uint64_t bigram_key(Id p, Id w) const { return p * ctx_radix() + w; }
  std::uint64_t context_key(Id p, Id n) const { return p * ctx_radix() + n; }
  std::uint64_t trigram_key(Id p, Id n, Id w) const {
    return context_key(p, n) * words_.size() + w;
  }

  double alpha_ = 1.0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, Id> ids_;
  std::vector<double> unigram_;
  double total_ = 0.0;
  std::unordered_map<std::uint64_t, double> bigram_;
  std::vector<double> bigram_ctx_;
  std::unordered_map<std::uint64_t, double> trigram_;
  std::unordered_map<std::uint64_t, double> trigram_ctx_;
};

// ---------------------------------------------------------------------------
// Toy conditional masked LM

// Mixture of a copy distribution over the source and the toy MLM:
//
//   CMLM: P(w | p, n, S) = l copy(w|S) + (1 - l) P3(w | p, n)
//   CLM:  P(w | p, S)    = l copy(w|S) + (1 - l) P2(w | p)
//
// with copy(w|S) = count of w in S / |S|, matched by exact string so that
// distinct out-of-vocabulary words are never merged. The mixing weight is capped at
// 1 - kMinLmWeight so that tokens absent from the source keep a smoothed,
// strictly positive probability even at l = 1.
class ToyCmlm : public Scorer {
 public:
  static constexpr double kMinLmWeight = 1e-9;
  static constexpr double kDefaultCopyWeight = 0.7;

  ToyCmlm(ToyMlm lm, double copy_weight) : lm_(std::move(lm)), copy_weight_(copy_weight) {
    if (!(copy_weight >= 0.0 && copy_weight <= 1.0))
      throw InputError("toy cmlm: copy weight must lie in [0, 1]");
  }

  static ToyCmlm train(const std::vector<std::pair<Tokens, Tokens>>& pairs, double alpha,
                       double copy_weight = kDefaultCopyWeight) {
    if (pairs.empty()) throw InputError("train_toy_cmlm: empty pairs");
    std::vector<Tokens> targets;
    targets.reserve(pairs.size());
    for (const auto& [src, tgt] : pairs) targets.push_back(tgt);
    return ToyCmlm(ToyMlm::train(targets, alpha), copy_weight);
  }

  const ToyMlm& lm() const { return lm_; }
  double copy_weight() const { return copy_weight_; }
  double effective_copy_weight() const { return std::min(copy_weight_, 1.0 - kMinLmWeight); }

  // copy(.|S) indexed by vocabulary id. Out-of-vocabulary source tokens keep
  // their mass, so the entries sum to the in-vocabulary share of S.
  std::vector<double> copy_distribution(std::span<const std::string> source) const {
    std::vector<double> dist(lm_.vocab_size(), 0.0);
    if (source.empty()) return dist;
    for (const auto& t : source)
      if (lm_.knows(t)) dist[lm_.id(t)] += 1.0;
    for (auto& d : dist) d /= static_cast<double>(source.size());
    return dist;
  }

  static double copy_probability(std::string_view w, std::span<const std::string> source) {
    if (source.empty()) return 0.0;
    const auto c = std::count(source.begin(), source.end(), w);
    return static_cast<double>(c) / static_cast<double>(source.size());
  }

  StepScores score(const ScoreQuery& q) const override {
    validate_query(q);
    if (q.mode == ScorerMode::Mlm) return lm_.score(q);
    const double l = effective_copy_weight();
    StepScores out;
    out.reserve(q.span.length);
    for (std::size_t t = 0; t < q.span.length; ++t) {
      const auto& tok = q.target[q.span.start + t];
      const auto w = lm_.id(tok);
      const auto [prev, next] = lm_.step_context(q.target, q.span, t);
      const double lm_p = q.mode == ScorerMode::Cmlm ? lm_.trigram(w, prev, next) : lm_.bigram(w, prev);
      out.push_back(std::log(l * copy_probability(tok, *q.source) + (1.0 - l) * lm_p));
    }
    return out;
  }

 private:
  ToyMlm lm_;
  double copy_weight_;
};

// ---------------------------------------------------------------------------
// File-backed scores

struct ScoreEntry {
  double log_prior = 0.0;
  double log_posterior = 0.0;
  std::optional<double> log_posterior_clm;
  bool operator==(const ScoreEntry&) const = default;
};

// Serves externally computed entity log-probabilities. The whole entity score
// is reported on the first step and the remaining steps carry 0, so sums
// (and therefore features) reproduce the stored values exactly.
class FileScorer : public Scorer {
 public:
  FileScorer() = default;
  explicit FileScorer(std::map<ScoreKey, ScoreEntry> entries) : entries_(std::move(entries)) {
    for (const auto& [k, e] : entries_) check_finite(k, e);
  }

  static FileScorer read(std::istream& in, const std::string& origin = "<stream>") {
    std::map<ScoreKey, ScoreEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = origin + ":" + std::to_string(line_no);
      try {
        auto j = nlohmann::json::parse(line);
        ScoreKey key{j.at("doc_id").get<std::string>(), j.at("entity_index").get<std::size_t>()};
        ScoreEntry e;
        e.log_prior = j.at("log_prior").get<double>();
        e.log_posterior = j.at("log_posterior").get<double>();
        if (auto it = j.find("log_posterior_clm"); it != j.end() && !it->is_null())
          e.log_posterior_clm = it->get<double>();
        check_finite(key, e);
        if (!entries.emplace(key, e).second)
          throw InputError("duplicate key " + describe(key));
      } catch (const nlohmann::json::exception& ex) {
        throw InputError(where + ": " + ex.what());
      } catch (const InputError& ex) {
        throw InputError(where + ": " + ex.what());
      }
    }
    return FileScorer(std::move(entries));
  }

  static FileScorer load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    return read(in, path);
  }

  void write(std::ostream& out) const {
    for (const auto& [k, e] : entries_) {
      nlohmann::ordered_json j;
      j["doc_id"] = k.doc_id;
      j["entity_index"] = k.entity_index;
      j["log_prior"] = e.log_prior;
      j["log_posterior"] = e.log_posterior;
      if (e.log_posterior_clm) j["log_posterior_clm"] = *e.log_posterior_clm;
      out << j.dump() << '\n';
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    write(out);
  }

  const std::map<ScoreKey, ScoreEntry>& entries() const { return entries_; }

  StepScores score(const ScoreQuery& q) const override {
    if (q.span.length == 0) throw InputError("score query: empty span");
    if (!q.key) throw ScorerError("file scorer: query carries no (doc_id, entity_index) key");
    auto it = entries_.find(*q.key);
    if (it == entries_.end()) throw ScorerError("file scorer: no scores for key " + describe(*q.key));
    double total = 0.0;
    switch (q.mode) {
      case ScorerMode::Mlm: total = it->second.log_prior; break;
      case ScorerMode::Cmlm: total = it->second.log_posterior; break;
      case ScorerMode::Clm:
        if (!it->second.log_posterior_clm)
          throw ScorerError("file scorer: no clm posterior for key " + describe(*q.key));
        total = *it->second.log_posterior_clm;
        break;
    }
    StepScores out(q.span.length, 0.0);
    out[0] = total;
    return out;
  }

 private:
  static void check_finite(const ScoreKey& k, const ScoreEntry& e) {
    const bool ok = std::isfinite(e.log_prior) && std::isfinite(e.log_posterior) &&
                    (!e.log_posterior_clm || std::isfinite(*e.log_posterior_clm));
    if (!ok) throw InputError("non-finite score for key " + describe(k));
    if (e.log_prior > 0 || e.log_posterior > 0 || (e.log_posterior_clm && *e.log_posterior_clm > 0))
      throw InputError("positive log-probability for key " + describe(k));
  }

  std::map<ScoreKey, ScoreEntry> entries_;
};

}  // namespace entfact
