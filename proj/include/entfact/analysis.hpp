#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "entfact/classifier.hpp"
#include "entfact/corpus.hpp"
#include "entfact/csv.hpp"
#include "entfact/error.hpp"
#include "entfact/features.hpp"
#include "entfact/scorer.hpp"
#include "entfact/text.hpp"

namespace entfact {

// log(posterior_a) - log(posterior_b).
inline double sigma(double posterior_a, double posterior_b) {
  if (!(posterior_a > 0.0 && posterior_a <= 1.0) || !(posterior_b > 0.0 && posterior_b <= 1.0))
    throw InputError("sigma: probabilities must lie in (0, 1]");
  return std::log(posterior_a) - std::log(posterior_b);
}

// ---------------------------------------------------------------------------
// TF-IDF retrieval

struct Retrieved {
  std::string doc_id;
  double similarity = 0.0;
};

// Raw term frequency times ln(N / df) over lowercased terms, L2-normalized.
// Punctuation-only tokens are not terms.
class TfidfIndex {
 public:
  explicit TfidfIndex(const std::vector<Document>& docs) {
    if (docs.empty()) throw InputError("tfidf: empty corpus");
    std::map<std::string, std::size_t> df;
    std::vector<std::map<std::string, double>> tfs;
    for (const auto& d : docs) {
      auto tf = term_counts(d.tokens);
      for (const auto& [term, c] : tf) ++df[term];
      tfs.push_back(std::move(tf));
      ids_.push_back(d.id);
    }
    const double n = static_cast<double>(docs.size());
    for (const auto& [term, c] : df) {
      term_ids_.emplace(term, idf_.size());
      idf_.push_back(std::log(n / static_cast<double>(c)));
    }
    for (const auto& tf : tfs) vectors_.push_back(weigh(tf));
  }

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  double idf(const std::string& term) const {
    auto it = term_ids_.find(to_lower(term));
    return it == term_ids_.end() ? 0.0 : idf_[it->second];
  }

  // Cosine similarity of the query to every indexed document, in index order.
  std::vector<double> similarities(const Tokens& query) const {
    const auto tf = term_counts(query);
    if (tf.empty()) throw InputError("tfidf: query has no terms");
    const auto q = weigh(tf);
    std::vector<double> out;
    out.reserve(vectors_.size());
    for (const auto& v : vectors_) {
      double dot = 0.0;
      auto a = q.begin();
      auto b = v.begin();
      while (a != q.end() && b != v.end()) {
        if (a->first < b->first) ++a;
        else if (b->first < a->first) ++b;
        else dot += (a++)->second * (b++)->second;
      }
      out.push_back(dot);
    }
    return out;
  }

  // k most similar documents, ties broken by doc id.
  std::vector<Retrieved> topk(const Tokens& query, std::size_t k) const {
    if (k > ids_.size())
      throw InputError("tfidf: k = " + std::to_string(k) + " exceeds corpus size " + std::to_string(ids_.size()));
    const auto sims = similarities(query);
    std::vector<std::size_t> order(ids_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (sims[x] != sims[y]) return sims[x] > sims[y];
      return ids_[x] < ids_[y];
    });
    std::vector<Retrieved> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back({ids_[order[i]], sims[order[i]]});
    return out;
  }

 private:
  using SparseVector = std::vector<std::pair<std::size_t, double>>;

  static bool is_term(const std::string& t) {
    return std::any_of(t.begin(), t.end(), [](char c) { return detail::is_word_char(static_cast<unsigned char>(c)); });
  }

  static std::map<std::string, double> term_counts(const Tokens& toks) {
    std::map<std::string, double> tf;
    for (const auto& t : toks)
      if (is_term(t)) tf[to_lower(t)] += 1.0;
    return tf;
  }

  // Sorted by term id; terms unknown to the index are dropped.
  SparseVector weigh(const std::map<std::string, double>& tf) const {
    SparseVector v;
    double norm = 0.0;
    for (const auto& [term, c] : tf) {
      auto it = term_ids_.find(term);
      if (it == term_ids_.end()) continue;
      const double w = c * idf_[it->second];
      if (w == 0.0) continue;
      v.emplace_back(it->second, w);
      norm += w * w;
    }
    std::sort(v.begin(), v.end());
    if (norm > 0.0)
      for (auto& [id, w] : v) w /= std::sqrt(norm);
    return v;
  }

  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> term_ids_;
  std::vector<double> idf_;
  std::vector<SparseVector> vectors_;
};

inline std::vector<Retrieved> retrieve_topk(const TfidfIndex& index, const Tokens& query, std::size_t k) {
  return index.topk(query, k);
}

// Case-insensitive contiguous occurrences of `entity` across `texts`.
inline std::size_t count_occurrences(std::span<const std::string> entity, const std::vector<Tokens>& texts) {
  std::size_t n = 0;
  for (const auto& t : texts) n += count_contiguous(entity, t);
  return n;
}

// ---------------------------------------------------------------------------
// Sigma report

struct SigmaThresholds {
  double high = 5.0;
  double low = 0.0;
};

inline std::string sigma_bucket(double s, const SigmaThresholds& th) {
  if (s >= th.high) return "high";
  if (s <= th.low) return "low";
  return "mid";
}

struct SigmaRecord {
  ScoreKey key;
  std::string entity;
  double log_posterior_a = 0.0;
  double log_posterior_b = 0.0;
  double sigma = 0.0;
  std::string bucket;
  std::size_t count_a = 0;
  std::size_t count_b = 0;
};

// A training corpus used for retrieval: documents are indexed, occurrences
// are counted in the paired summaries.
class RetrievalCorpus {
 public:
  explicit RetrievalCorpus(const Dataset& data) : index_(documents_of(data)) {
    for (const auto& ex : data) summaries_.emplace(ex.document.id, ex.summary.tokens);
  }

  std::size_t size() const { return index_.size(); }

  std::size_t occurrences(std::span<const std::string> entity, const Tokens& query, std::size_t k) const {
    std::vector<Tokens> texts;
    for (const auto& r : index_.topk(query, std::min(k, index_.size()))) texts.push_back(summaries_.at(r.doc_id));
    return count_occurrences(entity, texts);
  }

 private:
  static std::vector<Document> documents_of(const Dataset& data) {
    std::vector<Document> docs;
    for (const auto& ex : data) docs.push_back(ex.document);
    return docs;
  }

  TfidfIndex index_;
  std::map<std::string, Tokens> summaries_;
};

struct SigmaOptions {
  SigmaThresholds thresholds;
  std::size_t top_k = 10;
  ScorerMode mode = ScorerMode::Cmlm;
};

// One record per non-intrinsic entity of `data`, scored by both posterior
// models; occurrence counts come from each corpus's top-k neighbours of the
// entity's source document.
inline std::vector<SigmaRecord> sigma_report(const Dataset& data, const Scorer& posterior_a, const Scorer& posterior_b,
                                             const RetrievalCorpus* corpus_a, const RetrievalCorpus* corpus_b,
                                             const SigmaOptions& opts = {}) {
  std::vector<SigmaRecord> out;
  for (const auto& ex : data) {
    for (std::size_t i = 0; i < ex.summary.entities.size(); ++i) {
      const auto& m = ex.summary.entities[i];
      if (m.label == EntityClass::IntrinsicHallucination) continue;
      SigmaRecord r;
      r.key = {ex.document.id, i};
      r.entity = m.surface;
      const double pa = posterior_prob(posterior_a, ex.document, ex.summary, i, opts.mode);
      const double pb = posterior_prob(posterior_b, ex.document, ex.summary, i, opts.mode);
      r.log_posterior_a = std::log(pa);
      r.log_posterior_b = std::log(pb);
      r.sigma = sigma(pa, pb);
      r.bucket = sigma_bucket(r.sigma, opts.thresholds);
      const auto toks = mention_tokens(ex.summary, m);
      if (corpus_a) r.count_a = corpus_a->occurrences(toks, ex.document.tokens, opts.top_k);
      if (corpus_b) r.count_b = corpus_b->occurrences(toks, ex.document.tokens, opts.top_k);
      out.push_back(std::move(r));
    }
  }
  return out;
}

struct BucketMeans {
  std::string bucket;
  std::size_t entities = 0;
  std::optional<double> mean_count_a;
  std::optional<double> mean_count_b;
};

// Mean occurrence counts per bucket; an empty bucket has no means.
inline std::vector<BucketMeans> mean_occurrences(const std::vector<SigmaRecord>& records) {
  std::vector<BucketMeans> out;
  for (const char* b : {"high", "mid", "low"}) {
    BucketMeans m;
    m.bucket = b;
    double sa = 0.0, sb = 0.0;
    for (const auto& r : records) {
      if (r.bucket != b) continue;
      ++m.entities;
      sa += static_cast<double>(r.count_a);
      sb += static_cast<double>(r.count_b);
    }
    if (m.entities > 0) {
      m.mean_count_a = sa / static_cast<double>(m.entities);
      m.mean_count_b = sb / static_cast<double>(m.entities);
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_sigma_report(std::ostream& out, const std::vector<SigmaRecord>& records) {
  csv::write_row(out, {"entity", "sigma", "bucket", "count_A", "count_B"});
  for (const auto& r : records)
    csv::write_row(out, {r.entity, csv::format_double(r.sigma), r.bucket, std::to_string(r.count_a),
                         std::to_string(r.count_b)});
}

// ---------------------------------------------------------------------------
// Distribution export

// One CSV row per feature-table row, with the model's verdict. Gold labels
// are entity classes; confidence is for the predicted class.
inline void export_distribution(std::ostream& out, const FeatureTable& table, const KnnModel& model) {
  if (!table.available.contains(model.features()))
    throw InputError("export: model uses features the table does not provide");
  const auto names = class_names(model.task());
  csv::write_row(out, {"doc_id", "entity_index", "prior", "posterior", "overlap", "gold", "predicted", "confidence"});
  for (const auto& r : table.rows) {
    const auto p = model.predict(r.features);
    csv::write_row(out, {r.doc_id, std::to_string(r.entity_index), csv::format_double(r.features.prior),
                         csv::format_double(r.features.posterior), std::to_string(r.features.overlap),
                         r.label ? std::string(to_string(*r.label)) : std::string(),
                         names[static_cast<std::size_t>(p.label)],
                         csv::format_double(p.confidence[static_cast<std::size_t>(p.label)])});
  }
}

}  // namespace entfact
