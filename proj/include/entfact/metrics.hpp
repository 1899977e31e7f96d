#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "entfact/corpus.hpp"
#include "entfact/error.hpp"
#include "entfact/text.hpp"

namespace entfact::metrics {

// ---------------------------------------------------------------------------
// Classification

struct ClassMetrics {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ClassificationReport {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

namespace detail {

inline void check_labels(std::span<const int> predicted, std::span<const int> gold, int num_classes) {
  if (predicted.size() != gold.size())
    throw InputError("metrics: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(gold.size()) + " gold labels");
  if (num_classes < 1) throw InputError("metrics: num_classes must be >= 1");
  for (auto v : {predicted, gold})
    for (int l : v)
      if (l < 0 || l >= num_classes) throw InputError("metrics: label " + std::to_string(l) + " out of range");
}

}  // namespace detail

inline double accuracy(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.size() != gold.size()) throw InputError("accuracy: length mismatch");
  if (gold.empty()) throw InputError("accuracy: no predictions");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predicted[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

// Precision/recall/F1 per class. A ratio with a zero denominator is 0, so a
// class absent from the gold labels has F1 = 0.
inline std::vector<ClassMetrics> per_class_prf(std::span<const int> predicted, std::span<const int> gold,
                                               int num_classes) {
  detail::check_labels(predicted, gold, num_classes);
  std::vector<ClassMetrics> out(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto& g = out[static_cast<std::size_t>(gold[i])];
    ++g.support;
    if (predicted[i] == gold[i]) {
      ++g.true_positives;
    } else {
      ++g.false_negatives;
      ++out[static_cast<std::size_t>(predicted[i])].false_positives;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  for (auto& c : out) {
    c.precision = ratio(c.true_positives, c.true_positives + c.false_positives);
    c.recall = ratio(c.true_positives, c.true_positives + c.false_negatives);
    c.f1 = c.precision + c.recall == 0.0 ? 0.0 : 2.0 * c.precision * c.recall / (c.precision + c.recall);
  }
  return out;
}

// Unweighted mean of per-class F1 over all num_classes classes.
inline double macro_f1(std::span<const int> predicted, std::span<const int> gold, int num_classes) {
  const auto pc = per_class_prf(predicted, gold, num_classes);
  double s = 0.0;
  for (const auto& c : pc) s += c.f1;
  return s / static_cast<double>(num_classes);
}

inline ClassificationReport classification_report(std::span<const int> predicted, std::span<const int> gold,
                                                  int num_classes) {
  ClassificationReport r;
  r.per_class = per_class_prf(predicted, gold, num_classes);
  r.accuracy = accuracy(predicted, gold);
  double s = 0.0;
  for (const auto& c : r.per_class) s += c.f1;
  r.macro_f1 = s / static_cast<double>(num_classes);
  return r;
}

// ---------------------------------------------------------------------------
// Summary-level scoring and correlation

// Lowest factual-class confidence among a summary's entities; 1.0 when the
// summary has none.
inline double summary_score(std::span<const double> factual_confidences) {
  if (factual_confidences.empty()) return 1.0;
  return *std::min_element(factual_confidences.begin(), factual_confidences.end());
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InputError("pearson: length mismatch");
  if (x.size() < 3) throw InputError("pearson: need at least 3 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw InputError("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

// Pearson correlation of the residuals of x and y after least-squares
// projection onto [1, covariates]. Constant covariate columns are already
// spanned by the intercept and are dropped; any remaining rank deficiency is
// an error.
inline double partial_pearson(std::span<const double> x, std::span<const double> y,
                              const std::vector<std::vector<double>>& covariates) {
  if (x.size() != y.size()) throw InputError("partial_pearson: length mismatch");
  const auto n = static_cast<Eigen::Index>(x.size());
  std::vector<const std::vector<double>*> kept;
  for (const auto& c : covariates) {
    if (c.size() != x.size()) throw InputError("partial_pearson: covariate length mismatch");
    const bool constant = std::all_of(c.begin(), c.end(), [&](double v) { return v == c.front(); });
    if (!constant) kept.push_back(&c);
  }
  const auto p = static_cast<Eigen::Index>(kept.size()) + 1;
  if (n <= p + 1) throw InputError("partial_pearson: too few points for the covariates");

  Eigen::MatrixXd design(n, p);
  design.col(0).setOnes();
  for (Eigen::Index j = 1; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) design(i, j) = (*kept[static_cast<std::size_t>(j - 1)])[static_cast<std::size_t>(i)];

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < p) throw InputError("partial_pearson: covariates are rank-deficient");

  Eigen::VectorXd vx(n), vy(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    vx(i) = x[static_cast<std::size_t>(i)];
    vy(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd rx = vx - design * qr.solve(vx);
  const Eigen::VectorXd ry = vy - design * qr.solve(vy);
  std::vector<double> ex(rx.data(), rx.data() + n), ey(ry.data(), ry.data() + n);
  return pearson(ex, ey);
}

// ---------------------------------------------------------------------------
// Summary statistics

// Percentage of summary entities whose tokens are absent from their source;
// nullopt when there are no entities.
inline std::optional<double> enfs(const Dataset& data) {
  std::size_t total = 0, missing = 0;
  for (const auto& ex : data) {
    for (const auto& m : ex.summary.entities) {
      ++total;
      if (!appears_in(mention_tokens(ex.summary, m), ex.document.tokens)) ++missing;
    }
  }
  if (total == 0) return std::nullopt;
  return 100.0 * static_cast<double>(missing) / static_cast<double>(total);
}

// Percentage of the summary's n-grams (counted with repetition) that do not
// occur in the document; nullopt when the summary is shorter than n.
inline std::optional<double> novel_ngrams(const Tokens& document, const Tokens& summary, std::size_t n) {
  if (n == 0) throw InputError("novel_ngrams: n must be >= 1");
  if (summary.size() < n) return std::nullopt;
  std::set<std::vector<std::string>> doc_grams;
  for (std::size_t i = 0; i + n <= document.size(); ++i)
    doc_grams.emplace(document.begin() + static_cast<std::ptrdiff_t>(i), document.begin() + static_cast<std::ptrdiff_t>(i + n));
  std::size_t total = 0, novel = 0;
  for (std::size_t i = 0; i + n <= summary.size(); ++i) {
    ++total;
    std::vector<std::string> g(summary.begin() + static_cast<std::ptrdiff_t>(i), summary.begin() + static_cast<std::ptrdiff_t>(i + n));
    if (!doc_grams.count(g)) ++novel;
  }
  return 100.0 * static_cast<double>(novel) / static_cast<double>(total);
}

namespace detail {

inline double f1_from(double hits, std::size_t cand_len, std::size_t ref_len) {
  if (hits == 0.0 || cand_len == 0) return 0.0;
  const double p = hits / static_cast<double>(cand_len);
  const double r = hits / static_cast<double>(ref_len);
  return 2.0 * p * r / (p + r);
}

}  // namespace detail

// Unigram-overlap F1 with clipped counts; no stemming or stopword removal.
inline double rouge1(const Tokens& candidate, const Tokens& reference) {
  if (reference.empty()) throw InputError("rouge1: empty reference");
  std::map<std::string, std::size_t> ref_counts;
  for (const auto& t : reference) ++ref_counts[t];
  double hits = 0;
  for (const auto& t : candidate) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      hits += 1;
    }
  }
  return detail::f1_from(hits, candidate.size(), reference.size());
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// LCS-based F1.
inline double rougeL(const Tokens& candidate, const Tokens& reference) {
  if (reference.empty()) throw InputError("rougeL: empty reference");
  return detail::f1_from(static_cast<double>(lcs_length(candidate, reference)), candidate.size(),
                         reference.size());
}

// P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs,
// computed from mid-ranks.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InputError("roc_auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) {
    if (l == 1) ++n_pos;
    else if (l == 0) ++n_neg;
    else throw InputError("roc_auc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) throw InputError("roc_auc: both classes must be present");
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += mid;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// ---------------------------------------------------------------------------
// Annotator agreement

// items x categories vote counts; every row sums to the number of annotators.
using AgreementMatrix = std::vector<std::vector<int>>;

namespace detail {

inline int annotators_per_item(const AgreementMatrix& m) {
  if (m.empty()) throw InputError("agreement: no items");
  const int n = std::accumulate(m.front().begin(), m.front().end(), 0);
  if (n < 2) throw InputError("agreement: need at least 2 annotators");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m.front().size()) throw InputError("agreement: ragged matrix");
    if (std::any_of(m[i].begin(), m[i].end(), [](int v) { return v < 0; }))
      throw InputError("agreement: negative count");
    if (std::accumulate(m[i].begin(), m[i].end(), 0) != n)
      throw InputError("agreement: row " + std::to_string(i) + " does not sum to " + std::to_string(n));
  }
  return n;
}

}  // namespace detail

// Fleiss' kappa. When chance agreement is 1 (every vote in one category) the
// observed agreement is perfect as well and kappa is reported as 1.
inline double fleiss_kappa(const AgreementMatrix& m) {
  const int n = detail::annotators_per_item(m);
  const double items = static_cast<double>(m.size());
  const std::size_t k = m.front().size();
  std::vector<double> p(k, 0.0);
  double p_bar = 0.0;
  for (const auto& row : m) {
    double sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sq += static_cast<double>(row[j]) * row[j];
      p[j] += row[j];
    }
    p_bar += (sq - n) / (static_cast<double>(n) * (n - 1));
  }
  p_bar /= items;
  double p_e = 0.0;
  for (auto& pj : p) {
    pj /= items * n;
    p_e += pj * pj;
  }
  if (p_e == 1.0) return 1.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

// Mean over items of the fraction of annotators voting with the majority.
inline double majority_mu(const AgreementMatrix& m) {
  const int n = detail::annotators_per_item(m);
  double s = 0.0;
  for (const auto& row : m) s += static_cast<double>(*std::max_element(row.begin(), row.end())) / n;
  return s / static_cast<double>(m.size());
}

}  // namespace entfact::metrics
