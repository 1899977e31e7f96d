#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance runner. They deliberately avoid the library's fast paths.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <numeric>
#include <optional>
#include <vector>

#include "entfact/classifier.hpp"
#include "entfact/policy.hpp"
#include "entfact/random.hpp"
#include "entfact/scorer.hpp"

namespace oracle {

// Count-table oracle written from the smoothing definitions, using strings
// instead of ids and no shared code with the model.
struct CountOracle {
  double alpha;
  std::map<std::string, double> uni;
  std::map<std::pair<std::string, std::string>, double> bi;
  std::map<std::string, double> bi_ctx;
  std::map<std::tuple<std::string, std::string, std::string>, double> tri;
  std::map<std::pair<std::string, std::string>, double> tri_ctx;
  double total = 0;
  double v = 0;

  CountOracle(const std::vector<entfact::Tokens>& corpus, double a, std::size_t vocab) : alpha(a), v(static_cast<double>(vocab)) {
    for (const auto& s : corpus)
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::string p = i == 0 ? "<bos>" : s[i - 1];
        uni[s[i]] += 1;
        total += 1;
        bi[{p, s[i]}] += 1;
        bi_ctx[p] += 1;
        if (i + 1 < s.size()) {
          tri[{p, s[i], s[i + 1]}] += 1;
          tri_ctx[{p, s[i + 1]}] += 1;
        }
      }
  }
  static double get(const auto& m, const auto& k) {
    auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  }
  double p1(const std::string& w) const { return (get(uni, w) + alpha) / (total + alpha * v); }
  double p2(const std::string& w, const std::string& p) const {
    return (get(bi, std::pair{p, w}) + alpha * v * p1(w)) / (get(bi_ctx, p) + alpha * v);
  }
  double p3(const std::string& w, const std::string& p, const std::string& n) const {
    return (get(tri, std::tuple{p, w, n}) + alpha * v * p2(w, p)) / (get(tri_ctx, std::pair{p, n}) + alpha * v);
  }
};

// Natural-log step probabilities of target[span] under the toy models,
// recomputed from raw counts. Step t sees the filled token on its left and
// the first token right of the span; copy counts are exact-string matches.
inline std::vector<double> chain_steps(const CountOracle& o, const entfact::Tokens& target, entfact::TokenSpan span,
                                       entfact::ScorerMode mode, const entfact::Tokens* source, double copy_weight) {
  std::vector<double> out;
  const bool has_next = span.start + span.length < target.size();
  for (std::size_t t = 0; t < span.length; ++t) {
    const std::size_t pos = span.start + t;
    const std::string& w = target[pos];
    const std::string p = pos == 0 ? "<bos>" : target[pos - 1];
    double lm = mode == entfact::ScorerMode::Clm || !has_next ? o.p2(w, p) : o.p3(w, p, target[span.start + span.length]);
    if (mode == entfact::ScorerMode::Mlm) {
      out.push_back(std::log(lm));
      continue;
    }
    double hits = 0;
    for (const auto& s : *source) hits += s == w ? 1.0 : 0.0;
    out.push_back(std::log(copy_weight * hits / static_cast<double>(source->size()) + (1.0 - copy_weight) * lm));
  }
  return out;
}

// Full stable sort of all distances, then a plain majority count.
inline entfact::Prediction knn(const std::vector<entfact::FeaturePoint>& pts, const std::vector<int>& labels,
                               const entfact::FeatureSubset& subset, std::size_t k, int classes,
                               const entfact::FeaturePoint& q, std::optional<std::size_t> exclude = std::nullopt,
                               entfact::TieBreak tie = entfact::TieBreak::Unsafe) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (!exclude || *exclude != i) idx.push_back(i);
  auto dist = [&](std::size_t i) {
    auto sq = [](double x) { return x * x; };
    double d = 0;
    if (subset.prior) d += sq(pts[i][0] - q[0]);
    if (subset.posterior) d += sq(pts[i][1] - q[1]);
    if (subset.overlap) d += sq(pts[i][2] - q[2]);
    return d;
  };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
  std::vector<int> votes(static_cast<std::size_t>(classes), 0);
  for (std::size_t j = 0; j < k; ++j) ++votes[static_cast<std::size_t>(labels[idx[j]])];
  entfact::Prediction p;
  int best = -1;
  for (int c = 0; c < classes; ++c) {
    const bool better = best < 0 || votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)] ||
                        (tie == entfact::TieBreak::Safe &&
                         votes[static_cast<std::size_t>(c)] == votes[static_cast<std::size_t>(best)]);
    if (better) best = c;
  }
  p.label = best;
  for (int c = 0; c < classes; ++c)
    p.confidence.push_back(static_cast<double>(votes[static_cast<std::size_t>(c)]) / static_cast<double>(k));
  return p;
}

// Random feature points drawn from a small grid so that distance ties occur.
inline std::vector<entfact::FeaturePoint> random_points(entfact::Rng& rng, std::size_t n) {
  std::vector<entfact::FeaturePoint> pts(n);
  for (auto& p : pts) {
    const bool coarse = entfact::uniform_index(rng, 2) == 0;
    for (int d = 0; d < 2; ++d)
      p[static_cast<std::size_t>(d)] = coarse ? static_cast<double>(entfact::uniform_index(rng, 5)) / 4.0
                                              : entfact::uniform_real(rng);
    p[2] = static_cast<double>(entfact::uniform_index(rng, 2));
  }
  return pts;
}

// Central finite differences of log pi(a | prev, S) over every parameter.
inline std::vector<double> fd_grad_log_prob(entfact::ToyPolicy policy, std::size_t prev, std::size_t a,
                                            const entfact::SourceMask& mask, double h) {
  std::vector<double> g(policy.num_parameters());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = policy.parameters()[i];
    policy.parameters()[i] = keep + h;
    const double up = policy.log_prob(prev, a, mask);
    policy.parameters()[i] = keep - h;
    const double down = policy.log_prob(prev, a, mask);
    policy.parameters()[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den_a = 0, den_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den_a += a[i] * a[i];
    den_b += b[i] * b[i];
  }
  const double den = std::max(std::sqrt(den_a), std::sqrt(den_b));
  return den == 0 ? std::sqrt(num) : std::sqrt(num) / den;
}

// Q_t summed term by term from the definition.
inline std::vector<double> returns_by_definition(const std::vector<double>& r, double gamma) {
  std::vector<double> q(r.size(), 0.0);
  for (std::size_t t = 0; t < r.size(); ++t) {
    double w = 1.0;
    for (std::size_t u = t; u < r.size(); ++u) {
      q[t] += w * r[u];
      w *= gamma;
    }
  }
  return q;
}

}  // namespace oracle
