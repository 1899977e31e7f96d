#include <gtest/gtest.h>

#include <sstream>

#include "entfact/classifier.hpp"
#include "entfact/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace entfact;

namespace {

FeatureRow row(std::string id, double prior, double posterior, int ov, EntityClass c) {
  return {std::move(id), 0, {prior, posterior, ov}, c};
}

KnnOptions opts(std::size_t k, Task t = Task::Factuality, FeatureSubset s = FeatureSubset::all()) {
  KnnOptions o;
  o.k = k;
  o.task = t;
  o.features = s;
  return o;
}

FeatureTable two_point_table() {
  FeatureTable t;
  t.rows = {row("a", 0.1, 0.1, 0, EntityClass::NonFactualHallucination), row("b", 0.9, 0.9, 1, EntityClass::NonHallucinated)};
  return t;
}

FeatureTable random_table(Rng& rng, std::size_t n) {
  const EntityClass classes[] = {EntityClass::NonHallucinated, EntityClass::FactualHallucination,
                                 EntityClass::NonFactualHallucination};
  FeatureTable t;
  const auto pts = oracle::random_points(rng, n);
  for (std::size_t i = 0; i < n; ++i)
    t.rows.push_back({"d" + std::to_string(i), 0, {pts[i][0], pts[i][1], static_cast<int>(pts[i][2])},
                      classes[uniform_index(rng, 3)]});
  return t;
}

}  // namespace

TEST(TaskLabel, BinaryAndThreeClassViews) {
  EXPECT_EQ(task_label(EntityClass::FactualHallucination, Task::Hallucination), labels::kHallucinated);
  EXPECT_EQ(task_label(EntityClass::NonHallucinated, Task::Hallucination), labels::kNotHallucinated);
  EXPECT_EQ(task_label(EntityClass::FactualHallucination, Task::Factuality), labels::kFactual);
  EXPECT_EQ(task_label(EntityClass::NonFactualHallucination, Task::Factuality), labels::kNonFactual);
  EXPECT_EQ(task_label(EntityClass::NonFactualHallucination, Task::ThreeClass), 0);
  EXPECT_EQ(task_label(EntityClass::FactualHallucination, Task::ThreeClass), 1);
  EXPECT_EQ(task_label(EntityClass::NonHallucinated, Task::ThreeClass), 2);
  EXPECT_FALSE(task_label(EntityClass::IntrinsicHallucination, Task::Factuality).has_value());
}

TEST(KnnFit, StoresEveryLabelledPoint) {
  Rng rng(1);
  const auto t = random_table(rng, 100);
  EXPECT_EQ(knn_fit(t, opts(20)).size(), 100u);
}

TEST(KnnFit, RejectsBadK) {
  Rng rng(1);
  const auto t = random_table(rng, 10);
  EXPECT_THROW(knn_fit(t, opts(0)), InputError);
  EXPECT_THROW(knn_fit(t, opts(11)), InputError);
  EXPECT_NO_THROW(knn_fit(t, opts(10)));
}

TEST(KnnFit, RejectsUnlabelledRowsAndSkipsIntrinsic) {
  auto t = two_point_table();
  t.rows.push_back(row("c", 0.5, 0.5, 0, EntityClass::IntrinsicHallucination));
  EXPECT_EQ(knn_fit(t, opts(1)).size(), 2u);
  t.rows.push_back({"d", 0, {0.5, 0.5, 0}, std::nullopt});
  EXPECT_THROW(knn_fit(t, opts(1)), InputError);
}

TEST(KnnPredict, IdentityQueryWithKOne) {
  const auto m = knn_fit(two_point_table(), opts(1));
  const auto p = knn_predict(m, {0.9, 0.9, 1});
  EXPECT_EQ(p.label, labels::kFactual);
  EXPECT_EQ(p.confidence[labels::kFactual], 1.0);
}

TEST(KnnPredict, HandComputedNearestPoint) {
  const auto m = knn_fit(two_point_table(), opts(1));
  EXPECT_EQ(knn_predict(m, {0.2, 0.15, 0}).label, labels::kNonFactual);
}

TEST(KnnPredict, VoteTieGoesToUnsafeClass) {
  const auto f = knn_fit(two_point_table(), opts(2));
  const auto p = knn_predict(f, {0.5, 0.5, 0});
  EXPECT_EQ(p.label, labels::kNonFactual);
  EXPECT_EQ(p.confidence, (std::vector<double>{0.5, 0.5}));
  const auto h = knn_fit(two_point_table(), opts(2, Task::Hallucination));
  EXPECT_EQ(knn_predict(h, {0.5, 0.5, 0}).label, labels::kHallucinated);
  auto safe = opts(2);
  safe.tie_break = TieBreak::Safe;
  EXPECT_EQ(knn_predict(knn_fit(two_point_table(), safe), {0.5, 0.5, 0}).label, labels::kFactual);
}

TEST(KnnPredict, DistanceTiesResolvedByTrainingIndex) {
  FeatureTable t;
  t.rows = {row("a", 0.5, 0.5, 0, EntityClass::NonHallucinated), row("b", 0.5, 0.5, 0, EntityClass::NonFactualHallucination)};
  const auto m = knn_fit(t, opts(1));
  EXPECT_EQ(m.neighbors({0.5, 0.5, 0}), (std::vector<std::size_t>{0}));
  EXPECT_EQ(knn_predict(m, {0.5, 0.5, 0}).label, labels::kFactual);
}

TEST(KnnPredict, SubsetWithoutOverlapIgnoresThatCoordinate) {
  FeatureTable t;
  t.rows = {row("a", 0.5, 0.5, 1, EntityClass::NonHallucinated), row("b", 0.52, 0.52, 0, EntityClass::NonFactualHallucination)};
  const auto all = knn_fit(t, opts(1));
  const auto no_overlap = knn_fit(t, opts(1, Task::Factuality, feature_subset_from_string("prior,posterior")));
  const FeatureVector q{0.5, 0.5, 0};
  EXPECT_EQ(knn_predict(all, q).label, labels::kNonFactual);
  EXPECT_EQ(knn_predict(no_overlap, q).label, labels::kFactual);
}

TEST(KnnPredict, MatchesFullSortOracle) {
  Rng rng(77);
  const std::size_t ks[] = {1, 5, 20};
  const Task tasks[] = {Task::Hallucination, Task::Factuality, Task::ThreeClass};
  for (int trial = 0; trial < 40; ++trial) {
    const auto n = 25 + uniform_index(rng, 150);
    const auto t = random_table(rng, n);
    const auto task = tasks[uniform_index(rng, 3)];
    const auto k = ks[uniform_index(rng, 3)];
    FeatureSubset s{uniform_index(rng, 2) == 0, true, uniform_index(rng, 2) == 0};
    auto o = opts(k, task, s);
    o.tie_break = uniform_index(rng, 2) ? TieBreak::Safe : TieBreak::Unsafe;
    const auto m = knn_fit(t, o);
    for (const auto& q : oracle::random_points(rng, 30)) {
      const auto expect = oracle::knn(m.points(), m.labels(), s, k, num_classes(task), q, std::nullopt, o.tie_break);
      const auto got = m.predict_point(q);
      ASSERT_EQ(got.label, expect.label);
      ASSERT_EQ(got.confidence, expect.confidence);
    }
  }
}

TEST(KnnPredict, ConfidencesSumToOneAndLabelIsMaximal) {
  Rng rng(8);
  const auto t = random_table(rng, 60);
  const auto m = knn_fit(t, opts(5, Task::ThreeClass));
  for (const auto& q : oracle::random_points(rng, 50)) {
    const auto p = m.predict_point(q);
    double s = 0;
    for (double c : p.confidence) s += c;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(p.confidence[static_cast<std::size_t>(p.label)], *std::max_element(p.confidence.begin(), p.confidence.end()));
  }
}

TEST(KnnPredict, DroppingOverlapOnlyMattersWhenNeighbourSetsDiffer) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_table(rng, 80);
    const auto all = knn_fit(t, opts(5));
    const auto reduced = knn_fit(t, opts(5, Task::Factuality, feature_subset_from_string("prior,posterior")));
    for (const auto& q : oracle::random_points(rng, 20)) {
      auto a = all.neighbors(q), b = reduced.neighbors(q);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (a == b) {
        EXPECT_EQ(all.predict_point(q), reduced.predict_point(q));
      }
    }
  }
}

TEST(LooEval, SeparatedClustersAreAllCorrect) {
  FeatureTable t;
  for (int i = 0; i < 5; ++i) {
    t.rows.push_back(row("n" + std::to_string(i), 0.01 * i, 0.01 * i, 0, EntityClass::NonFactualHallucination));
    t.rows.push_back(row("f" + std::to_string(i), 0.9 + 0.01 * i, 0.9, 1, EntityClass::NonHallucinated));
  }
  const auto r = loo_eval(t, opts(1));
  EXPECT_EQ(r.report.accuracy, 1.0);
  EXPECT_EQ(r.report.macro_f1, 1.0);
}

TEST(LooEval, DuplicatedPointsWithKOne) {
  Rng rng(4);
  auto base = random_table(rng, 40);
  FeatureTable t;
  for (auto r : base.rows) {
    r.features.prior = uniform_real(rng);
    r.features.posterior = uniform_real(rng);
    t.rows.push_back(r);
    t.rows.push_back(r);
  }
  EXPECT_EQ(loo_eval(t, opts(1, Task::ThreeClass)).report.accuracy, 1.0);
}

TEST(LooEval, MatchesOracleExcludingEachRow) {
  Rng rng(31);
  const auto t = random_table(rng, 90);
  const auto o = opts(5);
  const auto r = loo_eval(t, o);
  const auto m = knn_fit(t, o);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto e = oracle::knn(m.points(), m.labels(), o.features, o.k, 2, m.points()[i], i);
    EXPECT_EQ(r.predictions[i].label, e.label);
    EXPECT_EQ(r.predictions[i].confidence, e.confidence);
  }
}

TEST(LooEval, AblationGridAndThreeClassReport) {
  Rng rng(3);
  const auto t = random_table(rng, 60);
  std::vector<double> f1s;
  for (const char* s : {"all", "prior,posterior", "posterior,overlap", "prior,overlap"})
    f1s.push_back(loo_eval(t, opts(5, Task::Factuality, feature_subset_from_string(s))).report.macro_f1);
  EXPECT_EQ(f1s.size(), 4u);
  const auto three = loo_eval(t, opts(5, Task::ThreeClass));
  EXPECT_EQ(three.report.per_class.size(), 3u);
}

TEST(LooEval, NeedsMoreRowsThanK) {
  EXPECT_THROW(loo_eval(two_point_table(), opts(2)), InputError);
  EXPECT_NO_THROW(loo_eval(two_point_table(), opts(1)));
}

TEST(KnnSeparation, AbsentLowPosteriorEntitiesAreFlaggedMoreOften) {
  synthetic::WorldConfig cfg;
  cfg.pairs = 800;
  const auto train = synthetic::generate_world(cfg);
  const auto lab = synthetic::generate_labelled(cfg, 21, "lab");
  const auto mlm = ToyMlm::train(train.world_corpus, 0.1);
  const auto cmlm = ToyCmlm::train(synthetic::training_pairs(train.pairs), 0.1);
  const auto table = build_feature_table(lab.pairs, mlm, cmlm);
  double median = 0;
  {
    std::vector<double> post;
    for (const auto& r : table.rows) post.push_back(r.features.posterior);
    std::nth_element(post.begin(), post.begin() + static_cast<std::ptrdiff_t>(post.size() / 2), post.end());
    median = post[post.size() / 2];
  }
  for (std::size_t k : {1u, 5u, 20u}) {
    const auto m = knn_fit(table, opts(k));
    std::size_t absent = 0, absent_nf = 0, present = 0, present_nf = 0;
    for (const auto& r : table.rows) {
      const bool nf = m.predict(r.features).label == labels::kNonFactual;
      if (r.features.overlap == 0 && r.features.posterior < median) {
        ++absent;
        absent_nf += nf;
      } else if (r.features.overlap == 1) {
        ++present;
        present_nf += nf;
      }
    }
    ASSERT_GT(absent, 0u);
    ASSERT_GT(present, 0u);
    EXPECT_GT(static_cast<double>(absent_nf) / absent, static_cast<double>(present_nf) / present) << "k=" << k;
  }
}

TEST(Baselines, OverlapRule) {
  EXPECT_EQ(baseline_overlap(1), (BaselineLabels{labels::kNotHallucinated, labels::kFactual}));
  EXPECT_EQ(baseline_overlap(0), (BaselineLabels{labels::kHallucinated, labels::kNonFactual}));
  Document doc{"d", {"sales", "rose", "to", "1,250"}};
  SummaryRecord rec{"d", {"1,251", "units"}, SummaryKind::Generated, {}};
  EXPECT_EQ(baseline_overlap(doc, rec, {0, 1, "1,251", {}}).factuality, labels::kNonFactual);
}

TEST(Baselines, LmRule) {
  EXPECT_EQ(baseline_lm(0.6, 0.3, 0), (BaselineLabels{labels::kHallucinated, labels::kNonFactual}));
  EXPECT_EQ(baseline_lm(0.1, 0.9, 0), (BaselineLabels{labels::kHallucinated, labels::kFactual}));
  EXPECT_EQ(baseline_lm(0.9, 0.1, 1), (BaselineLabels{labels::kNotHallucinated, labels::kFactual}));
}

TEST(ClassifyDataset, ShapesAndDeterminism) {
  Rng rng(6);
  const auto train = random_table(rng, 50);
  const auto h = knn_fit(train, opts(5, Task::Hallucination));
  const auto f = knn_fit(train, opts(5, Task::Factuality));
  EXPECT_TRUE(classify_dataset(h, f, FeatureTable{}).empty());
  FeatureTable one;
  one.rows.push_back({"q", 2, {0.3, 0.3, 0}, std::nullopt});
  const auto preds = classify_dataset(h, f, one);
  ASSERT_EQ(preds.size(), 1u);
  std::ostringstream a, b;
  write_predictions(a, preds);
  write_predictions(b, classify_dataset(h, f, one));
  EXPECT_EQ(a.str(), b.str());
  std::istringstream in(a.str());
  const auto rows = read_predictions(in);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].task, Task::Hallucination);
  EXPECT_EQ(rows[1].task, Task::Factuality);
  EXPECT_EQ(rows[1].confidence, preds[0].factuality.confidence[labels::kFactual]);
}

TEST(ClassifyDataset, RejectsSubsetMismatchAndSwappedModels) {
  Rng rng(6);
  const auto train = random_table(rng, 50);
  const auto h = knn_fit(train, opts(5, Task::Hallucination));
  const auto f = knn_fit(train, opts(5, Task::Factuality));
  FeatureTable partial;
  partial.available = feature_subset_from_string("prior,posterior");
  EXPECT_THROW(classify_dataset(h, f, partial), InputError);
  EXPECT_THROW(classify_dataset(f, h, FeatureTable{}), InputError);
}

TEST(KnnModel, JsonRoundTrip) {
  Rng rng(10);
  const auto t = random_table(rng, 30);
  auto o = opts(3, Task::ThreeClass, feature_subset_from_string("posterior,overlap"));
  o.tie_break = TieBreak::Safe;
  const auto m = knn_fit(t, o);
  testutil::TempDir dir("knn");
  m.save(dir.file("m.json"));
  const auto back = KnnModel::load(dir.file("m.json"));
  EXPECT_EQ(back.points(), m.points());
  EXPECT_EQ(back.labels(), m.labels());
  EXPECT_EQ(back.k(), 3u);
  EXPECT_EQ(back.task(), Task::ThreeClass);
  EXPECT_EQ(back.features(), o.features);
  EXPECT_EQ(back.options().tie_break, TieBreak::Safe);
}
