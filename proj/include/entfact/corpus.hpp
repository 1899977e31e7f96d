#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "entfact/error.hpp"
#include "entfact/random.hpp"
#include "entfact/text.hpp"

namespace entfact {

inline constexpr std::string_view kMaskToken = "<mask>";

enum class EntityClass {
  NonHallucinated,
  FactualHallucination,
  NonFactualHallucination,
  IntrinsicHallucination,
};

inline std::string_view to_string(EntityClass c) {
  switch (c) {
    case EntityClass::NonHallucinated: return "non_hallucinated";
    case EntityClass::FactualHallucination: return "factual_hallucination";
    case EntityClass::NonFactualHallucination: return "non_factual_hallucination";
    case EntityClass::IntrinsicHallucination: return "intrinsic_hallucination";
  }
  return "";
}

inline EntityClass entity_class_from_string(std::string_view s) {
  for (auto c : {EntityClass::NonHallucinated, EntityClass::FactualHallucination,
                 EntityClass::NonFactualHallucination, EntityClass::IntrinsicHallucination}) {
    if (to_string(c) == s) return c;
  }
  throw InputError("unknown entity label '" + std::string(s) + "'");
}

inline bool is_hallucinated(EntityClass c) {
  return c == EntityClass::FactualHallucination || c == EntityClass::NonFactualHallucination;
}

inline bool is_factual(EntityClass c) {
  return c == EntityClass::NonHallucinated || c == EntityClass::FactualHallucination;
}

struct TokenSpan {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t end() const { return start + length; }
  bool operator==(const TokenSpan&) const = default;
};

struct EntityMention {
  std::size_t start = 0;
  std::size_t length = 0;
  std::string surface;
  std::optional<EntityClass> label;

  TokenSpan span() const { return {start, length}; }
  std::size_t end() const { return start + length; }
  bool operator==(const EntityMention&) const = default;
};

struct Document {
  std::string id;
  Tokens tokens;
  bool operator==(const Document&) const = default;
};

enum class SummaryKind { Generated, Reference };

inline std::string_view to_string(SummaryKind k) {
  return k == SummaryKind::Generated ? "generated" : "reference";
}

struct SummaryRecord {
  std::string doc_id;
  Tokens tokens;
  SummaryKind kind = SummaryKind::Generated;
  std::vector<EntityMention> entities;
  bool operator==(const SummaryRecord&) const = default;
};

// A source document together with one summary of it; the unit of every
// dataset file.
struct Example {
  Document document;
  SummaryRecord summary;
  bool operator==(const Example&) const = default;
};

using Dataset = std::vector<Example>;

// Extrinsic-span annotation of one summary, as released for MEnt-style data.
struct MentSpanAnnotation {
  std::string doc_id;
  Tokens summary_tokens;
  std::vector<TokenSpan> extrinsic_spans;
  bool summary_factual = false;
};

inline std::span<const std::string> span_tokens(const Tokens& toks, TokenSpan s) {
  return std::span<const std::string>(toks).subspan(s.start, s.length);
}

inline std::span<const std::string> mention_tokens(const SummaryRecord& rec, const EntityMention& m) {
  return span_tokens(rec.tokens, m.span());
}

// Entity-in-source test shared by the overlap feature, the overlap baseline,
// MEnt filtering and the noisy/clean split.
inline bool appears_in(std::span<const std::string> entity_tokens, const Tokens& source) {
  return contains_contiguous(entity_tokens, source);
}

// Throws InputError when spans are out of range, empty, overlapping or
// unsorted, or when a surface disagrees with the covered tokens.
inline void validate_entities(const SummaryRecord& rec) {
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < rec.entities.size(); ++i) {
    const auto& m = rec.entities[i];
    const std::string where = "doc '" + rec.doc_id + "' entity " + std::to_string(i);
    if (m.length == 0) throw InputError(where + ": zero-length span");
    if (m.end() > rec.tokens.size()) throw InputError(where + ": span out of bounds");
    if (i > 0 && m.start < prev_end) throw InputError(where + ": overlapping or unsorted span");
    if (m.surface != join(mention_tokens(rec, m)))
      throw InputError(where + ": surface '" + m.surface + "' does not match tokens");
    prev_end = m.end();
  }
}

// ---------------------------------------------------------------------------
// Rule-based tagger

namespace detail {

inline constexpr std::array<std::string_view, 12> kMonths = {
    "january", "february", "march",     "april",   "may",      "june",
    "july",    "august",   "september", "october", "november", "december"};

// Capitalised function words that are not entities when they open a sentence.
inline constexpr std::array<std::string_view, 48> kInitialStopwords = {
    "a",     "an",    "the",   "this",  "that",  "these", "those", "he",    "she",   "it",
    "they",  "we",    "i",     "you",   "his",   "her",   "its",   "their", "our",   "my",
    "in",    "on",    "at",    "for",   "from",  "with",  "by",    "of",    "to",    "as",
    "and",   "but",   "or",    "if",    "when",  "while", "after", "before", "there", "here",
    "what",  "who",   "how",   "why",   "some",  "many",  "all",   "no"};

inline bool is_month(std::string_view tok) {
  const auto l = to_lower(tok);
  return std::find(kMonths.begin(), kMonths.end(), l) != kMonths.end();
}

inline bool is_capitalized(std::string_view tok) {
  return !tok.empty() && std::isupper(static_cast<unsigned char>(tok.front()));
}

inline bool is_sentence_end(std::string_view tok) { return tok == "." || tok == "!" || tok == "?"; }

inline bool is_initial_stopword(std::string_view tok) {
  const auto l = to_lower(tok);
  return std::find(kInitialStopwords.begin(), kInitialStopwords.end(), l) !=
         kInitialStopwords.end();
}

}  // namespace detail

// Maximal runs of capitalised tokens, standalone numerals, and
// number + month (+ year) dates. Labels are left unset.
inline std::vector<EntityMention> extract_entities(const Tokens& tokens) {
  using namespace detail;
  const std::size_t n = tokens.size();
  std::vector<bool> cap(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const bool sentence_initial = i == 0 || is_sentence_end(tokens[i - 1]);
    cap[i] = is_capitalized(tokens[i]) && !(sentence_initial && is_initial_stopword(tokens[i]));
  }

  std::vector<EntityMention> out;
  auto emit = [&](std::size_t start, std::size_t end) {
    EntityMention m;
    m.start = start;
    m.length = end - start;
    m.surface = join(std::span<const std::string>(tokens).subspan(start, end - start));
    out.push_back(std::move(m));
  };

  std::size_t i = 0;
  while (i < n) {
    if (is_numeric_token(tokens[i])) {
      std::size_t j = i + 1;
      if (j < n && is_month(tokens[j])) {
        ++j;
        if (j < n && is_numeric_token(tokens[j])) ++j;
      }
      emit(i, j);
      i = j;
    } else if (cap[i]) {
      std::size_t j = i + 1;
      while (j < n && cap[j]) ++j;
      // "December 2015", "December 15"
      if (j < n && is_month(tokens[j - 1]) && is_numeric_token(tokens[j])) ++j;
      emit(i, j);
      i = j;
    } else {
      ++i;
    }
  }
  return out;
}

// Replaces the mention's span with a single mask sentinel.
inline Tokens mask_entity(const SummaryRecord& rec, const EntityMention& m) {
  if (m.length == 0) throw InputError("mask_entity: zero-length span");
  if (m.end() > rec.tokens.size()) throw InputError("mask_entity: span out of bounds");
  Tokens out;
  out.reserve(rec.tokens.size() - m.length + 1);
  out.insert(out.end(), rec.tokens.begin(), rec.tokens.begin() + static_cast<std::ptrdiff_t>(m.start));
  out.emplace_back(kMaskToken);
  out.insert(out.end(), rec.tokens.begin() + static_cast<std::ptrdiff_t>(m.end()), rec.tokens.end());
  return out;
}

// Fills entities from the tagger for every record that has none.
inline void ensure_entities(Dataset& data) {
  for (auto& ex : data) {
    if (ex.summary.entities.empty()) ex.summary.entities = extract_entities(ex.summary.tokens);
  }
}

// ---------------------------------------------------------------------------
// Dataset transformations

// Converts summary-level span annotations into entity-level factuality labels.
// Factual entities become NonHallucinated when found in the source and
// FactualHallucination otherwise; entities inside an extrinsic span of a
// non-factual summary become NonFactualHallucination unless they occur in the
// source, in which case they are dropped. Partial overlap with a span counts
// as inside. A document annotated more than once yields records with ids
// "<doc_id>#<n>", numbered from 0 in input order.
inline Dataset convert_ment(const std::vector<MentSpanAnnotation>& annotations,
                            const std::vector<Document>& docs) {
  std::map<std::string, const Document*> by_id;
  for (const auto& d : docs) by_id[d.id] = &d;

  std::map<std::string, std::size_t> uses, seen;
  for (const auto& ann : annotations) ++uses[ann.doc_id];

  Dataset out;
  out.reserve(annotations.size());
  for (const auto& ann : annotations) {
    auto it = by_id.find(ann.doc_id);
    if (it == by_id.end()) throw InputError("convert_ment: unknown doc_id '" + ann.doc_id + "'");
    const Document& doc = *it->second;
    for (const auto& s : ann.extrinsic_spans) {
      if (s.length == 0 || s.end() > ann.summary_tokens.size())
        throw InputError("convert_ment: span out of bounds for doc '" + ann.doc_id + "'");
    }

    Example ex;
    ex.document = doc;
    if (uses[ann.doc_id] > 1) ex.document.id += "#" + std::to_string(seen[ann.doc_id]++);
    ex.summary.doc_id = ex.document.id;
    ex.summary.tokens = ann.summary_tokens;
    ex.summary.kind = SummaryKind::Generated;

    for (auto m : extract_entities(ann.summary_tokens)) {
      const auto toks = span_tokens(ann.summary_tokens, m.span());
      const bool in_source = appears_in(toks, doc.tokens);
      const auto factual_label =
          in_source ? EntityClass::NonHallucinated : EntityClass::FactualHallucination;
      if (ann.summary_factual) {
        m.label = factual_label;
      } else {
        const bool inside = std::any_of(
            ann.extrinsic_spans.begin(), ann.extrinsic_spans.end(),
            [&](const TokenSpan& s) { return m.start < s.end() && s.start < m.end(); });
        if (inside) {
          if (in_source) continue;
          m.label = EntityClass::NonFactualHallucination;
        } else {
          m.label = factual_label;
        }
      }
      ex.summary.entities.push_back(std::move(m));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline bool is_noisy(const Example& ex) {
  const auto& rec = ex.summary;
  return std::any_of(rec.entities.begin(), rec.entities.end(), [&](const EntityMention& m) {
    return !appears_in(mention_tokens(rec, m), ex.document.tokens);
  });
}

struct NoiseSplit {
  Dataset clean;
  Dataset noisy;
};

// A record is noisy iff at least one of its reference entities is missing
// from the source. Records without entities are clean.
inline NoiseSplit noise_split(const Dataset& data) {
  NoiseSplit out;
  for (const auto& ex : data) (is_noisy(ex) ? out.noisy : out.clean).push_back(ex);
  return out;
}

// round(size * noise_ratio) noisy records plus the rest clean, drawn without
// replacement and shuffled together.
inline Dataset mix_datasets(const Dataset& clean, const Dataset& noisy, double noise_ratio,
                            std::size_t size, std::uint64_t seed) {
  if (!(noise_ratio >= 0.0 && noise_ratio <= 1.0))
    throw InputError("mix_datasets: noise_ratio must lie in [0, 1]");
  const auto n_noisy = static_cast<std::size_t>(std::llround(static_cast<double>(size) * noise_ratio));
  const std::size_t n_clean = size - n_noisy;
  if (n_noisy > noisy.size())
    throw InputError("mix_datasets: noisy pool short by " + std::to_string(n_noisy - noisy.size()));
  if (n_clean > clean.size())
    throw InputError("mix_datasets: clean pool short by " + std::to_string(n_clean - clean.size()));

  Rng rng(seed);
  Dataset out;
  out.reserve(size);
  for (auto i : sample_indices(clean.size(), n_clean, rng)) out.push_back(clean[i]);
  for (auto i : sample_indices(noisy.size(), n_noisy, rng)) out.push_back(noisy[i]);
  shuffle(out, rng);
  return out;
}

}  // namespace entfact
