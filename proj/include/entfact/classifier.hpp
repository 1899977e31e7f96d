#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "entfact/corpus.hpp"
#include "entfact/csv.hpp"
#include "entfact/error.hpp"
#include "entfact/features.hpp"
#include "entfact/metrics.hpp"

namespace entfact {

// Binary tasks use class 0 for the unsafe outcome (hallucinated /
// non-factual); the three-class view orders classes from least to most safe.
enum class Task { Hallucination, Factuality, ThreeClass };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::Hallucination: return "hallucination";
    case Task::Factuality: return "factuality";
    case Task::ThreeClass: return "three-class";
  }
  return "";
}

inline Task task_from_string(std::string_view s) {
  if (s == "hallucination") return Task::Hallucination;
  if (s == "factuality") return Task::Factuality;
  if (s == "three-class" || s == "three_class") return Task::ThreeClass;
  throw InputError("unknown task '" + std::string(s) + "'");
}

inline int num_classes(Task t) { return t == Task::ThreeClass ? 3 : 2; }

inline std::vector<std::string> class_names(Task t) {
  switch (t) {
    case Task::Hallucination: return {"hallucinated", "not_hallucinated"};
    case Task::Factuality: return {"non_factual", "factual"};
    case Task::ThreeClass: return {"non_factual_hallucination", "factual_hallucination", "non_hallucinated"};
  }
  return {};
}

namespace labels {
inline constexpr int kHallucinated = 0;
inline constexpr int kNotHallucinated = 1;
inline constexpr int kNonFactual = 0;
inline constexpr int kFactual = 1;
}  // namespace labels

// Task label of an entity class; intrinsic hallucinations have none.
inline std::optional<int> task_label(EntityClass c, Task t) {
  if (c == EntityClass::IntrinsicHallucination) return std::nullopt;
  switch (t) {
    case Task::Hallucination: return is_hallucinated(c) ? labels::kHallucinated : labels::kNotHallucinated;
    case Task::Factuality: return is_factual(c) ? labels::kFactual : labels::kNonFactual;
    case Task::ThreeClass:
      switch (c) {
        case EntityClass::NonFactualHallucination: return 0;
        case EntityClass::FactualHallucination: return 1;
        default: return 2;
      }
  }
  return std::nullopt;
}

// Which class wins a vote tie.
enum class TieBreak { Unsafe, Safe };

struct Prediction {
  int label = 0;
  // Fraction of the k neighbours in each class.
  std::vector<double> confidence;
  bool operator==(const Prediction&) const = default;
};

using FeaturePoint = std::array<double, 3>;

inline FeaturePoint to_point(const FeatureVector& f) {
  return {f.prior, f.posterior, static_cast<double>(f.overlap)};
}

inline double squared_distance(const FeaturePoint& a, const FeaturePoint& b, const FeatureSubset& s) {
  double d = 0.0;
  if (s.prior) d += (a[0] - b[0]) * (a[0] - b[0]);
  if (s.posterior) d += (a[1] - b[1]) * (a[1] - b[1]);
  if (s.overlap) d += (a[2] - b[2]) * (a[2] - b[2]);
  return d;
}

struct KnnOptions {
  std::size_t k = 20;
  Task task = Task::Factuality;
  FeatureSubset features = FeatureSubset::all();
  TieBreak tie_break = TieBreak::Unsafe;
};

class KnnModel {
 public:
  KnnModel() = default;

  const std::vector<FeaturePoint>& points() const { return points_; }
  const std::vector<int>& labels() const { return labels_; }
  const KnnOptions& options() const { return opts_; }
  std::size_t k() const { return opts_.k; }
  Task task() const { return opts_.task; }
  const FeatureSubset& features() const { return opts_.features; }
  std::size_t size() const { return points_.size(); }

  // Builds a model from labelled rows; intrinsic rows are skipped.
  static KnnModel fit(const FeatureTable& table, const KnnOptions& opts) {
    if (opts.features.empty()) throw InputError("knn_fit: empty feature subset");
    if (!table.available.contains(opts.features))
      throw InputError("knn_fit: table lacks features " + to_string(opts.features));
    KnnModel m;
    m.opts_ = opts;
    for (const auto& row : table.rows) {
      if (!row.label)
        throw InputError("knn_fit: unlabelled row " + describe(ScoreKey{row.doc_id, row.entity_index}));
      auto l = task_label(*row.label, opts.task);
      if (!l) continue;
      m.points_.push_back(to_point(row.features));
      m.labels_.push_back(*l);
    }
    m.check_k();
    return m;
  }

  static KnnModel from_points(std::vector<FeaturePoint> points, std::vector<int> labels, const KnnOptions& opts) {
    if (points.size() != labels.size()) throw InputError("knn: points/labels size mismatch");
    KnnModel m;
    m.opts_ = opts;
    m.points_ = std::move(points);
    m.labels_ = std::move(labels);
    for (int l : m.labels_)
      if (l < 0 || l >= num_classes(opts.task)) throw InputError("knn: label out of range");
    m.check_k();
    return m;
  }

  // Indices of the k nearest training points ordered by (distance, index),
  // optionally ignoring one training point.
  std::vector<std::size_t> neighbors(const FeaturePoint& q,
                                     std::optional<std::size_t> exclude = std::nullopt) const {
    const std::size_t avail = points_.size() - (exclude ? 1 : 0);
    if (opts_.k > avail) throw InputError("knn: k exceeds available training points");
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (exclude && *exclude == i) continue;
      cand.emplace_back(squared_distance(points_[i], q, opts_.features), i);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(opts_.k), cand.end());
    std::vector<std::size_t> out(opts_.k);
    for (std::size_t i = 0; i < opts_.k; ++i) out[i] = cand[i].second;
    return out;
  }

  Prediction vote(const std::vector<std::size_t>& nb) const {
    const int c = num_classes(opts_.task);
    std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
    for (auto i : nb) ++counts[static_cast<std::size_t>(labels_[i])];
    Prediction p;
    p.confidence.resize(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j)
      p.confidence[static_cast<std::size_t>(j)] =
          static_cast<double>(counts[static_cast<std::size_t>(j)]) / static_cast<double>(nb.size());
    if (opts_.tie_break == TieBreak::Unsafe) {
      p.label = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    } else {
      // last maximum
      p.label = 0;
      for (int j = 0; j < c; ++j)
        if (counts[static_cast<std::size_t>(j)] >= counts[static_cast<std::size_t>(p.label)]) p.label = j;
    }
    return p;
  }

  Prediction predict(const FeatureVector& x) const { return vote(neighbors(to_point(x))); }
  Prediction predict_point(const FeaturePoint& x) const { return vote(neighbors(x)); }

  // Prediction for training point i by the model fit on all other points.
  Prediction predict_leave_one_out(std::size_t i) const { return vote(neighbors(points_.at(i), i)); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = std::string(to_string(opts_.task));
    j["k"] = opts_.k;
    j["features"] = to_string(opts_.features);
    j["tie_break"] = opts_.tie_break == TieBreak::Unsafe ? "unsafe" : "safe";
    auto pts = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < points_.size(); ++i)
      pts.push_back({points_[i][0], points_[i][1], points_[i][2], labels_[i]});
    j["points"] = std::move(pts);
    return j;
  }

  static KnnModel from_json(const nlohmann::json& j) {
    try {
      KnnOptions o;
      o.task = task_from_string(j.at("task").get<std::string>());
      o.k = j.at("k").get<std::size_t>();
      o.features = feature_subset_from_string(j.at("features").get<std::string>());
      const auto tb = j.at("tie_break").get<std::string>();
      if (tb != "unsafe" && tb != "safe") throw InputError("tie_break must be unsafe or safe");
      o.tie_break = tb == "unsafe" ? TieBreak::Unsafe : TieBreak::Safe;
      std::vector<FeaturePoint> pts;
      std::vector<int> labs;
      for (const auto& p : j.at("points")) {
        pts.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
        labs.push_back(p.at(3).get<int>());
      }
      return from_points(std::move(pts), std::move(labs), o);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("knn model: ") + e.what());
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << to_json().dump(1) << '\n';
  }

  static KnnModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(path + ": " + e.what());
    }
  }

 private:
  void check_k() const {
    if (opts_.k < 1) throw InputError("knn: k must be >= 1");
    if (opts_.k > points_.size())
      throw InputError("knn: k = " + std::to_string(opts_.k) + " exceeds " + std::to_string(points_.size()) +
                       " training rows");
  }

  KnnOptions opts_;
  std::vector<FeaturePoint> points_;
  std::vector<int> labels_;
};

inline KnnModel knn_fit(const FeatureTable& table, const KnnOptions& opts) { return KnnModel::fit(table, opts); }

inline Prediction knn_predict(const KnnModel& model, const FeatureVector& x) { return model.predict(x); }

struct LooResult {
  std::vector<int> gold;
  std::vector<int> predicted;
  std::vector<Prediction> predictions;
  metrics::ClassificationReport report;
};

// Leave-one-out evaluation: each labelled row is predicted by a model built
// from every other row.
inline LooResult loo_eval(const FeatureTable& table, const KnnOptions& opts) {
  KnnModel all;
  try {
    all = KnnModel::fit(table, KnnOptions{1, opts.task, opts.features, opts.tie_break});
  } catch (const InputError& e) {
    throw InputError(std::string("loo_eval: ") + e.what());
  }
  if (all.size() < opts.k + 1)
    throw InputError("loo_eval: need at least k+1 = " + std::to_string(opts.k + 1) + " rows, have " +
                     std::to_string(all.size()));
  const auto model = KnnModel::from_points(all.points(), all.labels(), opts);
  LooResult r;
  r.gold = model.labels();
  for (std::size_t i = 0; i < model.size(); ++i) {
    r.predictions.push_back(model.predict_leave_one_out(i));
    r.predicted.push_back(r.predictions.back().label);
  }
  r.report = metrics::classification_report(r.predicted, r.gold, num_classes(opts.task));
  return r;
}

// Fits on `train` and scores every labelled row of `test`.
inline LooResult holdout_eval(const FeatureTable& train, const FeatureTable& test, const KnnOptions& opts) {
  const auto model = KnnModel::fit(train, opts);
  LooResult r;
  for (const auto& row : test.rows) {
    if (!row.label) throw InputError("holdout_eval: unlabelled test row");
    auto l = task_label(*row.label, opts.task);
    if (!l) continue;
    r.gold.push_back(*l);
    r.predictions.push_back(model.predict(row.features));
    r.predicted.push_back(r.predictions.back().label);
  }
  r.report = metrics::classification_report(r.predicted, r.gold, num_classes(opts.task));
  return r;
}

// ---------------------------------------------------------------------------
// Baselines

struct BaselineLabels {
  int hallucination = labels::kNotHallucinated;
  int factuality = labels::kFactual;
  bool operator==(const BaselineLabels&) const = default;
};

// Entities missing from the source are both hallucinated and non-factual.
inline BaselineLabels baseline_overlap(int overlap_bit) {
  if (overlap_bit == 0) return {labels::kHallucinated, labels::kNonFactual};
  return {labels::kNotHallucinated, labels::kFactual};
}

inline BaselineLabels baseline_overlap(const Document& doc, const SummaryRecord& rec, const EntityMention& m) {
  return baseline_overlap(overlap(doc, rec, m));
}

// Non-factual iff missing from the source and prior > posterior. The
// hallucination call is gated on overlap alone.
inline BaselineLabels baseline_lm(double prior, double posterior, int overlap_bit) {
  BaselineLabels out;
  out.hallucination = overlap_bit == 0 ? labels::kHallucinated : labels::kNotHallucinated;
  out.factuality = overlap_bit == 0 && prior > posterior ? labels::kNonFactual : labels::kFactual;
  return out;
}

// ---------------------------------------------------------------------------
// Batch classification

struct EntityPrediction {
  std::string doc_id;
  std::size_t entity_index = 0;
  Prediction hallucination;
  Prediction factuality;
};

inline std::vector<EntityPrediction> classify_dataset(const KnnModel& model_h, const KnnModel& model_f,
                                                      const FeatureTable& table) {
  if (model_h.task() != Task::Hallucination) throw InputError("classify: first model is not a hallucination model");
  if (model_f.task() != Task::Factuality) throw InputError("classify: second model is not a factuality model");
  for (const auto* m : {&model_h, &model_f}) {
    if (!table.available.contains(m->features()))
      throw InputError("classify: model uses features " + to_string(m->features()) + " but table provides " +
                       to_string(table.available));
  }
  std::vector<EntityPrediction> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows)
    out.push_back({row.doc_id, row.entity_index, model_h.predict(row.features), model_f.predict(row.features)});
  return out;
}

// CSV columns: doc_id, entity_index, task, label, confidence. The confidence
// is for the hallucinated class on hallucination rows and for the factual
// class on factuality rows.
inline void write_predictions(std::ostream& out, const std::vector<EntityPrediction>& preds) {
  csv::write_row(out, {"doc_id", "entity_index", "task", "label", "confidence"});
  const auto hn = class_names(Task::Hallucination);
  const auto fn = class_names(Task::Factuality);
  for (const auto& p : preds) {
    csv::write_row(out, {p.doc_id, std::to_string(p.entity_index), "hallucination",
                         hn[static_cast<std::size_t>(p.hallucination.label)],
                         csv::format_double(p.hallucination.confidence[labels::kHallucinated])});
    csv::write_row(out, {p.doc_id, std::to_string(p.entity_index), "factuality",
                         fn[static_cast<std::size_t>(p.factuality.label)],
                         csv::format_double(p.factuality.confidence[labels::kFactual])});
  }
}

struct PredictionRow {
  std::string doc_id;
  std::size_t entity_index = 0;
  Task task = Task::Factuality;
  int label = 0;
  double confidence = 0.0;
};

inline std::vector<PredictionRow> read_predictions(std::istream& in, const std::string& origin = "<stream>") {
  const auto t = csv::read(in, origin);
  const char* names[] = {"doc_id", "entity_index", "task", "label", "confidence"};
  std::size_t col[5];
  for (int i = 0; i < 5; ++i) {
    col[i] = t.column(names[i]);
    if (col[i] == static_cast<std::size_t>(-1)) throw InputError(origin + ": missing column '" + names[i] + "'");
  }
  std::vector<PredictionRow> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    try {
      PredictionRow p;
      p.doc_id = row[col[0]];
      p.entity_index = static_cast<std::size_t>(csv::parse_int(row[col[1]], "entity_index"));
      p.task = task_from_string(row[col[2]]);
      const auto names_for = class_names(p.task);
      auto it = std::find(names_for.begin(), names_for.end(), row[col[3]]);
      if (it == names_for.end()) throw InputError("unknown label '" + row[col[3]] + "'");
      p.label = static_cast<int>(it - names_for.begin());
      p.confidence = csv::parse_double(row[col[4]], "confidence");
      out.push_back(std::move(p));
    } catch (const InputError& e) {
      throw InputError(origin + ": row " + std::to_string(r + 2) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace entfact
