#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "entfact/corpus.hpp"
#include "entfact/random.hpp"
#include "test_util.hpp"

using namespace entfact;
using testutil::make_example;

namespace {

std::vector<std::pair<std::size_t, std::size_t>> spans(const std::vector<EntityMention>& ms) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& m : ms) out.emplace_back(m.start, m.length);
  return out;
}

using SpanList = std::vector<std::pair<std::size_t, std::size_t>>;

}  // namespace

TEST(ExtractEntities, CapitalizedRuns) {
  const auto ms = extract_entities({"Tian", "Tian", "visited", "Edinburgh", "Zoo"});
  EXPECT_EQ(spans(ms), (SpanList{{0, 2}, {3, 2}}));
  EXPECT_EQ(ms[0].surface, "Tian Tian");
  EXPECT_EQ(ms[1].surface, "Edinburgh Zoo");
  EXPECT_FALSE(ms[0].label.has_value());
}

TEST(ExtractEntities, NothingInLowercaseText) { EXPECT_TRUE(extract_entities({"the", "cat", "sat"}).empty()); }

TEST(ExtractEntities, NumberMonthDate) {
  EXPECT_EQ(spans(extract_entities({"on", "15", "December"})), (SpanList{{1, 2}}));
  EXPECT_EQ(spans(extract_entities({"on", "15", "December", "2015", "."})), (SpanList{{1, 3}}));
  EXPECT_EQ(spans(extract_entities({"in", "December", "2015"})), (SpanList{{1, 2}}));
}

TEST(ExtractEntities, SentenceInitialStopwordSkipped) {
  EXPECT_EQ(spans(extract_entities({"The", "BBC", "said", ".", "It", "rained", "in", "Wales"})),
            (SpanList{{1, 1}, {7, 1}}));
}

TEST(ExtractEntities, StandaloneNumeral) {
  EXPECT_EQ(spans(extract_entities({"about", "300", "people"})), (SpanList{{1, 1}}));
}

TEST(ExtractEntities, SpansSortedAndDisjointOnRandomInput) {
  const Tokens pool{"The", "a", "Paris", "3", "May", "2020", ".", "BBC", "said", "it", "John", "Smith"};
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    Tokens toks;
    const auto n = 1 + uniform_index(rng, 15);
    for (std::size_t i = 0; i < n; ++i) toks.push_back(pool[uniform_index(rng, pool.size())]);
    const auto ms = extract_entities(toks);
    SummaryRecord rec{"x", toks, SummaryKind::Generated, ms};
    EXPECT_NO_THROW(validate_entities(rec));
  }
}

TEST(MaskEntity, ReplacesSpanWithSingleSentinel) {
  SummaryRecord rec{"d", {"a", "B", "C", "d"}, SummaryKind::Generated, {}};
  EXPECT_EQ(mask_entity(rec, {1, 2, "B C", std::nullopt}), (Tokens{"a", "<mask>", "d"}));
  SummaryRecord rec2{"d", {"X", "y"}, SummaryKind::Generated, {}};
  EXPECT_EQ(mask_entity(rec2, {0, 1, "X", std::nullopt}), (Tokens{"<mask>", "y"}));
}

TEST(MaskEntity, RejectsBadSpans) {
  SummaryRecord rec{"d", {"a", "b"}, SummaryKind::Generated, {}};
  EXPECT_THROW(mask_entity(rec, {0, 0, "", std::nullopt}), InputError);
  EXPECT_THROW(mask_entity(rec, {1, 2, "b", std::nullopt}), InputError);
}

TEST(MaskEntity, LengthAndReconstructionProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    Tokens toks;
    const auto n = 1 + uniform_index(rng, 10);
    for (std::size_t i = 0; i < n; ++i) toks.push_back("t" + std::to_string(i));
    const auto start = uniform_index(rng, n);
    const auto len = 1 + uniform_index(rng, n - start);
    SummaryRecord rec{"d", toks, SummaryKind::Generated, {}};
    EntityMention m{start, len, "", std::nullopt};
    const auto masked = mask_entity(rec, m);
    ASSERT_EQ(masked.size(), n - len + 1);
    Tokens rebuilt(masked.begin(), masked.begin() + static_cast<std::ptrdiff_t>(start));
    rebuilt.insert(rebuilt.end(), toks.begin() + static_cast<std::ptrdiff_t>(start),
                   toks.begin() + static_cast<std::ptrdiff_t>(start + len));
    rebuilt.insert(rebuilt.end(), masked.begin() + static_cast<std::ptrdiff_t>(start + 1), masked.end());
    EXPECT_EQ(rebuilt, toks);
  }
}

TEST(ValidateEntities, RejectsOverlapAndSurfaceMismatch) {
  SummaryRecord rec{"d", {"A", "B", "C"}, SummaryKind::Reference, {{0, 2, "A B", {}}, {1, 1, "B", {}}}};
  EXPECT_THROW(validate_entities(rec), InputError);
  rec.entities = {{0, 1, "Z", {}}};
  EXPECT_THROW(validate_entities(rec), InputError);
  rec.entities = {{0, 1, "A", {}}, {2, 1, "C", {}}};
  EXPECT_NO_THROW(validate_entities(rec));
}

TEST(AppearsIn, ContiguousCaseInsensitive) {
  const Tokens src{"the", "european", "commission", "met"};
  EXPECT_TRUE(appears_in(Tokens{"European", "Commission"}, src));
  EXPECT_FALSE(appears_in(Tokens{"Commission", "European"}, src));
  EXPECT_FALSE(appears_in(Tokens{"Jean-Claude"}, src));
}

// --- MEnt conversion -------------------------------------------------------

TEST(ConvertMent, FactualSummaryLabelsEveryEntityFactual) {
  std::vector<Document> docs{{"d1", {"Rain", "hit", "Cardiff", "."}}};
  std::vector<MentSpanAnnotation> anns{{"d1", {"Storm", "reached", "Cardiff", "and", "Swansea"}, {}, true}};
  const auto out = convert_ment(anns, docs);
  ASSERT_EQ(out.size(), 1u);
  const auto& es = out[0].summary.entities;
  ASSERT_EQ(es.size(), 3u);
  for (const auto& e : es) EXPECT_TRUE(is_factual(*e.label));
  EXPECT_EQ(es[1].surface, "Cardiff");
  EXPECT_EQ(*es[1].label, EntityClass::NonHallucinated);
  EXPECT_EQ(*es[2].label, EntityClass::FactualHallucination);
}

TEST(ConvertMent, EntityInsideSpanAbsentFromSourceIsNonFactual) {
  std::vector<Document> docs{{"d1", {"Rain", "hit", "the", "coast", "."}}};
  std::vector<MentSpanAnnotation> anns{{"d1", {"rain", "hit", "Cardiff", "today"}, {{2, 2}}, false}};
  const auto out = convert_ment(anns, docs);
  ASSERT_EQ(out[0].summary.entities.size(), 1u);
  EXPECT_EQ(*out[0].summary.entities[0].label, EntityClass::NonFactualHallucination);
}

TEST(ConvertMent, RepeatedDocumentsGetNumberedIds) {
  std::vector<Document> docs{{"d1", {"Rain", "."}}, {"d2", {"Sun", "."}}};
  std::vector<MentSpanAnnotation> anns{
      {"d1", {"Rain", "."}, {}, true}, {"d2", {"Sun", "."}, {}, true}, {"d1", {"Hail", "."}, {}, true}};
  const auto out = convert_ment(anns, docs);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].document.id, "d1#0");
  EXPECT_EQ(out[1].document.id, "d2");
  EXPECT_EQ(out[2].document.id, "d1#1");
  for (const auto& ex : out) EXPECT_EQ(ex.summary.doc_id, ex.document.id);
  EXPECT_EQ(out[2].document.tokens, docs[0].tokens);
}

TEST(ConvertMent, EntityInsideSpanPresentInSourceIsDropped) {
  std::vector<Document> docs{{"d1", {"Rain", "hit", "Cardiff", "."}}};
  std::vector<MentSpanAnnotation> anns{{"d1", {"rain", "hit", "Cardiff", "on", "Monday"}, {{2, 3}}, false}};
  const auto out = convert_ment(anns, docs);
  ASSERT_EQ(out[0].summary.entities.size(), 1u);
  EXPECT_EQ(out[0].summary.entities[0].surface, "Monday");
  EXPECT_EQ(*out[0].summary.entities[0].label, EntityClass::NonFactualHallucination);
}

TEST(ConvertMent, UnknownDocIdNamesTheId) {
  std::vector<MentSpanAnnotation> anns{{"missing-7", {"A"}, {}, true}};
  try {
    convert_ment(anns, {});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("missing-7"), std::string::npos);
  }
}

TEST(ConvertMent, NeverIntrinsicNeverInSourceInsideSpan) {
  const Tokens vocab{"Paris", "Rome", "Ann", "Bob", "met", "in", "3", "May", "the", "."};
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    Tokens src, sum;
    for (int i = 0; i < 8; ++i) src.push_back(vocab[uniform_index(rng, vocab.size())]);
    for (int i = 0; i < 6; ++i) sum.push_back(vocab[uniform_index(rng, vocab.size())]);
    std::vector<TokenSpan> sp;
    if (uniform_index(rng, 2)) sp.push_back({uniform_index(rng, 3), 1 + uniform_index(rng, 3)});
    std::vector<MentSpanAnnotation> anns{{"d", sum, sp, uniform_index(rng, 3) == 0}};
    const auto out = convert_ment(anns, {{"d", src}});
    for (const auto& m : out[0].summary.entities) {
      ASSERT_TRUE(m.label.has_value());
      EXPECT_NE(*m.label, EntityClass::IntrinsicHallucination);
      bool inside = false;
      for (const auto& s : sp) inside = inside || (m.start < s.end() && s.start < m.end());
      if (inside && !anns[0].summary_factual) {
        EXPECT_FALSE(appears_in(mention_tokens(out[0].summary, m), src));
      }
    }
  }
}

// --- noise split and mixing ------------------------------------------------

TEST(NoiseSplit, Rules) {
  auto noisy = make_example("n", {"rain", "fell"}, {"Cardiff", "rain"}, {{0, 1, "Cardiff", {}}});
  auto clean = make_example("c", {"rain", "in", "Cardiff"}, {"Cardiff", "rain"}, {{0, 1, "Cardiff", {}}});
  auto empty = make_example("e", {"rain"}, {"rain"}, {});
  const auto s = noise_split({noisy, clean, empty});
  ASSERT_EQ(s.noisy.size(), 1u);
  EXPECT_EQ(s.noisy[0].document.id, "n");
  ASSERT_EQ(s.clean.size(), 2u);
}

TEST(NoiseSplit, PartitionProperty) {
  Rng rng(2);
  const Tokens vocab{"A", "B", "c", "d"};
  Dataset data;
  for (int i = 0; i < 200; ++i) {
    Tokens src, sum;
    for (int j = 0; j < 4; ++j) src.push_back(vocab[uniform_index(rng, 4)]);
    for (int j = 0; j < 3; ++j) sum.push_back(vocab[uniform_index(rng, 4)]);
    auto ex = make_example("x" + std::to_string(i), src, sum, extract_entities(sum));
    data.push_back(ex);
  }
  const auto s = noise_split(data);
  EXPECT_EQ(s.clean.size() + s.noisy.size(), data.size());
  std::set<std::string> ids;
  for (const auto& e : s.clean) ids.insert(e.document.id);
  for (const auto& e : s.noisy) EXPECT_FALSE(ids.count(e.document.id));
}

namespace {
Dataset pool(const std::string& prefix, int n) {
  Dataset d;
  for (int i = 0; i < n; ++i) d.push_back(make_example(prefix + std::to_string(i), {"x"}, {"x"}));
  return d;
}
std::size_t count_prefix(const Dataset& d, char p) {
  return static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [&](const Example& e) { return e.document.id[0] == p; }));
}
}  // namespace

TEST(MixDatasets, Endpoints) {
  const auto clean = pool("c", 20), noisy = pool("n", 20);
  EXPECT_EQ(count_prefix(mix_datasets(clean, noisy, 0.0, 10, 1), 'c'), 10u);
  EXPECT_EQ(count_prefix(mix_datasets(clean, noisy, 1.0, 10, 1), 'n'), 10u);
  const auto half = mix_datasets(clean, noisy, 0.5, 10, 1);
  EXPECT_EQ(count_prefix(half, 'c'), 5u);
  EXPECT_EQ(count_prefix(half, 'n'), 5u);
}

TEST(MixDatasets, SeededAndShortfallReported) {
  const auto clean = pool("c", 20), noisy = pool("n", 3);
  EXPECT_EQ(mix_datasets(clean, noisy, 0.1, 20, 4), mix_datasets(clean, noisy, 0.1, 20, 4));
  try {
    mix_datasets(clean, noisy, 0.5, 10, 1);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("short by 2"), std::string::npos);
  }
  EXPECT_THROW(mix_datasets(clean, noisy, 1.5, 10, 1), InputError);
}
