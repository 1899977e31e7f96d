#pragma once

#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "entfact/corpus.hpp"
#include "entfact/csv.hpp"
#include "entfact/error.hpp"
#include "entfact/scorer.hpp"

namespace entfact {

struct FeatureVector {
  double prior = 0.0;
  double posterior = 0.0;
  int overlap = 0;
  bool operator==(const FeatureVector&) const = default;
};

// Which coordinates of a FeatureVector take part in distances.
struct FeatureSubset {
  bool prior = true;
  bool posterior = true;
  bool overlap = true;

  static FeatureSubset all() { return {}; }
  bool contains(const FeatureSubset& o) const {
    return (prior || !o.prior) && (posterior || !o.posterior) && (overlap || !o.overlap);
  }
  bool empty() const { return !prior && !posterior && !overlap; }
  bool operator==(const FeatureSubset&) const = default;
};

inline std::string to_string(const FeatureSubset& s) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(s.prior, "prior");
  add(s.posterior, "posterior");
  add(s.overlap, "overlap");
  return out;
}

inline FeatureSubset feature_subset_from_string(std::string_view s) {
  FeatureSubset out{false, false, false};
  if (s == "all") return FeatureSubset::all();
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto comma = s.find(',', pos);
    auto part = s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    if (part == "prior") out.prior = true;
    else if (part == "posterior") out.posterior = true;
    else if (part == "overlap") out.overlap = true;
    else throw InputError("unknown feature '" + std::string(part) + "'");
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw InputError("feature subset must not be empty");
  return out;
}

struct FeatureRow {
  std::string doc_id;
  std::size_t entity_index = 0;
  FeatureVector features;
  std::optional<EntityClass> label;
  bool operator==(const FeatureRow&) const = default;
};

struct FeatureTable {
  std::vector<FeatureRow> rows;
  FeatureSubset available = FeatureSubset::all();
  bool operator==(const FeatureTable&) const = default;
};

namespace detail {

inline ScoreQuery entity_query(const SummaryRecord& rec, std::size_t entity_index, ScorerMode mode,
                               const Document* doc) {
  const auto& m = rec.entities.at(entity_index);
  ScoreQuery q;
  q.target = rec.tokens;
  q.span = m.span();
  q.mode = mode;
  if (doc) q.source = std::span<const std::string>(doc->tokens);
  q.key = ScoreKey{rec.doc_id, entity_index};
  return q;
}

inline double chain_probability(const StepScores& steps) {
  return std::exp(std::accumulate(steps.begin(), steps.end(), 0.0));
}

}  // namespace detail

// exp of the summed MLM step log-probabilities; the span is masked so the
// context is the record without the entity.
inline double prior_prob(const Scorer& mlm, const SummaryRecord& rec, std::size_t entity_index) {
  return detail::chain_probability(
      mlm.score(detail::entity_query(rec, entity_index, ScorerMode::Mlm, nullptr)));
}

// Same chain rule under CMLM (default) or CLM conditioning on the source.
inline double posterior_prob(const Scorer& cmlm, const Document& doc, const SummaryRecord& rec,
                             std::size_t entity_index, ScorerMode mode = ScorerMode::Cmlm) {
  if (mode == ScorerMode::Mlm) throw InputError("posterior_prob: mode must be cmlm or clm");
  if (doc.id != rec.doc_id)
    throw InputError("posterior_prob: document '" + doc.id + "' does not match record '" + rec.doc_id + "'");
  return detail::chain_probability(cmlm.score(detail::entity_query(rec, entity_index, mode, &doc)));
}

// 1 iff the entity's tokens occur contiguously in the source.
inline int overlap(const Document& doc, const SummaryRecord& rec, const EntityMention& m) {
  return appears_in(mention_tokens(rec, m), doc.tokens) ? 1 : 0;
}

inline FeatureVector entity_features(const Scorer& mlm, const Scorer& posterior, ScorerMode mode,
                                     const Example& ex, std::size_t entity_index) {
  FeatureVector f;
  f.prior = prior_prob(mlm, ex.summary, entity_index);
  f.posterior = posterior_prob(posterior, ex.document, ex.summary, entity_index, mode);
  f.overlap = overlap(ex.document, ex.summary, ex.summary.entities[entity_index]);
  return f;
}

// One row per non-intrinsic entity, ordered by (doc_id, entity index).
inline FeatureTable build_feature_table(const Dataset& data, const Scorer& mlm, const Scorer& posterior,
                                        ScorerMode posterior_mode = ScorerMode::Cmlm) {
  std::vector<const Example*> order;
  order.reserve(data.size());
  for (const auto& ex : data) order.push_back(&ex);
  std::stable_sort(order.begin(), order.end(),
                   [](const Example* a, const Example* b) { return a->document.id < b->document.id; });

  FeatureTable table;
  for (const Example* ex : order) {
    for (std::size_t i = 0; i < ex->summary.entities.size(); ++i) {
      const auto& m = ex->summary.entities[i];
      if (m.label == EntityClass::IntrinsicHallucination) continue;
      FeatureRow row;
      row.doc_id = ex->document.id;
      row.entity_index = i;
      row.label = m.label;
      try {
        row.features = entity_features(mlm, posterior, posterior_mode, *ex, i);
      } catch (const ScorerError& e) {
        throw ScorerError("feature table: entity " + describe(ScoreKey{row.doc_id, i}) + ": " + e.what());
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

// CSV columns: doc_id, entity_index, prior, posterior, overlap, label.
inline void write_feature_table(std::ostream& out, const FeatureTable& t) {
  csv::write_row(out, {"doc_id", "entity_index", "prior", "posterior", "overlap", "label"});
  for (const auto& r : t.rows) {
    csv::write_row(out, {r.doc_id, std::to_string(r.entity_index), csv::format_double(r.features.prior),
                         csv::format_double(r.features.posterior), std::to_string(r.features.overlap),
                         r.label ? std::string(to_string(*r.label)) : std::string()});
  }
}

inline FeatureTable read_feature_table(std::istream& in, const std::string& origin = "<stream>") {
  const auto t = csv::read(in, origin);
  const char* names[] = {"doc_id", "entity_index", "prior", "posterior", "overlap", "label"};
  std::size_t col[6];
  for (int i = 0; i < 6; ++i) {
    col[i] = t.column(names[i]);
    if (col[i] == static_cast<std::size_t>(-1))
      throw InputError(origin + ": missing column '" + names[i] + "'");
  }
  FeatureTable out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    try {
      FeatureRow fr;
      fr.doc_id = row[col[0]];
      const auto idx = csv::parse_int(row[col[1]], "entity_index");
      if (idx < 0) throw InputError("negative entity_index");
      fr.entity_index = static_cast<std::size_t>(idx);
      fr.features.prior = csv::parse_double(row[col[2]], "prior");
      fr.features.posterior = csv::parse_double(row[col[3]], "posterior");
      const auto ov = csv::parse_int(row[col[4]], "overlap");
      if (ov != 0 && ov != 1) throw InputError("overlap must be 0 or 1");
      fr.features.overlap = static_cast<int>(ov);
      if (!(fr.features.prior > 0.0 && fr.features.prior <= 1.0) ||
          !(fr.features.posterior > 0.0 && fr.features.posterior <= 1.0))
        throw InputError("probabilities must lie in (0, 1]");
      if (!row[col[5]].empty()) fr.label = entity_class_from_string(row[col[5]]);
      out.rows.push_back(std::move(fr));
    } catch (const InputError& e) {
      // +2: header line and 1-based numbering
      throw InputError(origin + ": row " + std::to_string(r + 2) + ": " + e.what());
    }
  }
  return out;
}

inline void save_feature_table(const FeatureTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  write_feature_table(out, t);
}

inline FeatureTable load_feature_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read_feature_table(in, path);
}

}  // namespace entfact
