#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "qeref/align.hpp"
#include "test_util.hpp"

namespace qeref {
namespace {

using testing::Cats;
using testing::TempDir;

// Straightforward string-keyed EM used as an independent reference.
std::map<std::string, std::map<std::string, double>> reference_em(const Bitext& bitext, int iterations) {
  std::map<std::string, std::map<std::string, double>> t;
  const std::string null(kNullToken);
  for (const auto& [src, tgt] : bitext)
    for (const auto& f : tgt) {
      t[null][f] = 0;
      for (const auto& e : src) t[e][f] = 0;
    }
  for (auto& [e, row] : t)
    for (auto& [f, p] : row) p = 1.0 / static_cast<double>(row.size());
  for (int it = 0; it < iterations; ++it) {
    std::map<std::string, std::map<std::string, double>> counts;
    std::map<std::string, double> totals;
    for (const auto& [src, tgt] : bitext) {
      std::vector<std::string> given{null};
      given.insert(given.end(), src.begin(), src.end());
      for (const auto& f : tgt) {
        double z = 0;
        for (const auto& e : given) z += t[e][f];
        for (const auto& e : given) {
          counts[e][f] += t[e][f] / z;
          totals[e] += t[e][f] / z;
        }
      }
    }
    for (auto& [e, row] : t)
      for (auto& [f, p] : row) p = counts[e][f] / totals[e];
  }
  return t;
}

TEST(TrainLexTable, TwoPairCorpusMatchesReferenceEm) {
  Bitext b{{{"a", "b"}, {"x", "y"}}, {{"a"}, {"x"}}};
  auto lex = train_lex_table(b, 10);
  auto ref = reference_em(b, 10);
  EXPECT_GT(lex.forward.prob("x", "a"), lex.forward.prob("y", "a"));
  for (const auto& [e, row] : ref)
    for (const auto& [f, p] : row) EXPECT_NEAR(lex.forward.prob(f, e), p, 1e-12) << e << "->" << f;
}

TEST(TrainLexTable, SinglePairSingleIteration) {
  auto lex = train_lex_table({{{"a"}, {"x"}}}, 1);
  EXPECT_DOUBLE_EQ(lex.forward.prob("x", "a"), 1.0);
  EXPECT_DOUBLE_EQ(lex.backward.prob("a", "x"), 1.0);
}

TEST(TrainLexTable, BijectiveLexiconArgmax) {
  auto data = testing::make_bijective_bitext(300, 20, 0.0, 17);
  auto lex = train_lex_table(testing::to_bitext(data.pairs), 10);
  for (int k = 0; k < 20; ++k) {
    const auto* row = lex.forward.row("w" + std::to_string(k));
    ASSERT_NE(row, nullptr);
    auto best = std::max_element(row->begin(), row->end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    EXPECT_EQ(best->first, "x" + std::to_string(k));
  }
}

TEST(TrainLexTable, RowsAreNormalizedAndLikelihoodNonDecreasing) {
  auto data = testing::make_bijective_bitext(120, 20, 0.1, 4);
  LexTrainingTrace trace;
  auto lex = train_lex_table(testing::to_bitext(data.pairs), 8, 0, &trace);
  ASSERT_EQ(trace.forward_log_likelihood.size(), 9u);
  for (const auto* ll : {&trace.forward_log_likelihood, &trace.backward_log_likelihood})
    for (std::size_t k = 1; k < ll->size(); ++k) EXPECT_GE((*ll)[k], (*ll)[k - 1] - 1e-9);
  for (const auto* table : {&lex.forward, &lex.backward})
    for (const auto& [given, row] : table->rows()) {
      double sum = 0;
      for (const auto& [t, p] : row) sum += p;
      EXPECT_NEAR(sum, 1.0, 1e-9) << given;
    }
}

TEST(TrainLexTable, Errors) {
  EXPECT_THROW(train_lex_table({}, 5), EmptyCorpus);
  EXPECT_THROW(train_lex_table({{{"a"}, {"x"}}}, 0), Error);
}

TEST(TrainLexTable, SaveLoadRoundTrip) {
  TempDir dir;
  auto lex = train_lex_table({{{"a", "b"}, {"x", "y"}}, {{"a"}, {"x"}}}, 3);
  lex.save(dir.file("lex"));
  EXPECT_EQ(LexTable::load(dir.file("lex")), lex);
  auto first = testing::slurp(dir.file("lex.fwd.tsv"));
  EXPECT_NE(first.find("a\tx\t"), std::string::npos);
}

TEST(NativeLexScorer, NormalizesWithNullShare) {
  LexTable lex;
  lex.forward.set("a", "x", 0.9);
  lex.forward.set("a", "y", 0.05);
  lex.forward.set("a", "z", 0.05);
  NativeLexScorer scorer(lex);
  SentencePair p{"s", {"a"}, {"x", "y"}, std::nullopt};
  auto d = scorer.score(make_query(p, Direction::SourceToMt, 0));
  ASSERT_EQ(d.p_start.size(), 3u);
  EXPECT_NEAR(d.p_start[0], 0.05, 1e-12);
  EXPECT_NEAR(d.p_start[1], 0.9, 1e-12);
  EXPECT_NEAR(d.p_start[2], 0.05, 1e-12);
  EXPECT_EQ(d.p_start, d.p_end);
  EXPECT_NO_THROW(d.validate());
}

TEST(NativeLexScorer, UnknownWordIsNull) {
  NativeLexScorer scorer(LexTable{});
  SentencePair p{"s", {"oov"}, {"x", "y"}, std::nullopt};
  auto d = scorer.score(make_query(p, Direction::SourceToMt, 0));
  EXPECT_EQ(d.p_start, (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(FileAdapterScorer, VerbatimAndMissing) {
  FileAdapterScorer a;
  SpanDistribution d{{0.1, 0.6, 0.3}, {0.2, 0.2, 0.6}};
  a.add("7", Direction::MtToSource, 1, d);
  SentencePair p{"7", {"s0", "s1"}, {"t0", "t1"}, std::nullopt};
  EXPECT_EQ(a.score(make_query(p, Direction::MtToSource, 1)), d);
  EXPECT_THROW(a.score(make_query(p, Direction::MtToSource, 0)), MissingPrecomputedEntry);
  EXPECT_THROW(a.score(make_query(p, Direction::SourceToMt, 1)), MissingPrecomputedEntry);
}

TEST(FileAdapterScorer, LoadsJsonLinesAndSkipsHeader) {
  TempDir dir;
  SpanDistribution d{{0.25, 0.75}, {0.5, 0.5}};
  testing::write_file(dir.file("a.jsonl"), adapter_header("mt words").dump() + "\n" +
                                               adapter_record("0", Direction::SourceToMt, 0, d).dump() + "\n\n");
  auto a = FileAdapterScorer::load(dir.file("a.jsonl"));
  EXPECT_EQ(a.size(), 1u);
  SentencePair p{"0", {"s"}, {"t"}, std::nullopt};
  EXPECT_EQ(a.score(make_query(p, Direction::SourceToMt, 0)), d);
  EXPECT_THROW(FileAdapterScorer::load(dir.file("missing.jsonl")), IOFailure);
  testing::write_file(dir.file("bad.jsonl"), R"({"id":"0","direction":"src2mt","index":0,"p_start":[0.5,0.4],"p_end":[0.5,0.5]})");
  EXPECT_THROW(FileAdapterScorer::load(dir.file("bad.jsonl")), Error);
}

TEST(SpanQuery, MarksExactlyOneWord) {
  SentencePair p{"s", {"a", "b", "c"}, {"x"}, std::nullopt};
  auto q = make_query(p, Direction::SourceToMt, 1);
  EXPECT_EQ(q.marked_sentence, (Tokens{"a", "[MARK]", "b", "[MARK]", "c"}));
  EXPECT_EQ(q.marked_word(), "b");
  q.marked_sentence = {"a", "b"};
  EXPECT_THROW(q.marked_word(), Error);
  EXPECT_THROW(make_query(p, Direction::SourceToMt, 3), IndexOutOfRange);
}

// Enumerates every legal span explicitly.
std::vector<double> covering_mass_by_enumeration(const SpanDistribution& d) {
  const std::size_t len = d.positions();
  std::vector<double> out(len + 1, 0.0);
  out[0] = d.p_start[0] * d.p_end[0];
  for (std::size_t a = 1; a <= len; ++a)
    for (std::size_t b = a; b <= len; ++b)
      for (std::size_t p = a; p <= b; ++p) out[p] += d.p_start[a] * d.p_end[b];
  return out;
}

TEST(PairProbabilities, TwoPositionExample) {
  SpanDistribution d{{0.0, 0.7, 0.3}, {0.0, 0.6, 0.4}};
  auto probs = pair_probabilities(d);
  EXPECT_NEAR(probs[1], 0.70, 1e-12);
  EXPECT_NEAR(probs[2], 0.40, 1e-12);
  EXPECT_EQ(probs[0], 0.0);
}

TEST(PairProbabilities, PointMasses) {
  auto probs = pair_probabilities(SpanDistribution::point(3, 0));
  EXPECT_EQ(probs, (std::vector<double>{0, 1, 0, 0}));
  probs = pair_probabilities(SpanDistribution::point(3, std::nullopt));
  EXPECT_EQ(probs, (std::vector<double>{1, 0, 0, 0}));
}

SpanDistribution random_distribution(std::mt19937_64& rng, std::size_t len) {
  auto vec = [&] {
    std::vector<double> v(len + 1);
    double s = 0;
    for (auto& x : v) s += x = uniform01(rng) * (rng() % 4 == 0 ? 0.0 : 1.0) + 1e-3;
    for (auto& x : v) x /= s;
    return v;
  };
  return {vec(), vec()};
}

TEST(PairProbabilities, MatchesEnumerationAndLengthIdentity) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t len = 1 + rng() % 7;
    auto d = random_distribution(rng, len);
    auto fast = pair_probabilities(d);
    auto slow = covering_mass_by_enumeration(d);
    double sum_single = 0, sum_len = 0;
    for (std::size_t p = 0; p <= len; ++p) {
      EXPECT_NEAR(fast[p], slow[p], 1e-12);
      EXPECT_LE(fast[p], 1.0);
      EXPECT_GE(fast[p], 0.0);
      if (p) sum_single += fast[p];
    }
    for (std::size_t a = 1; a <= len; ++a)
      for (std::size_t b = a; b <= len; ++b) sum_len += d.p_start[a] * d.p_end[b] * static_cast<double>(b - a + 1);
    EXPECT_NEAR(sum_single, sum_len, 1e-12);
  }
}

TEST(BestSpan, TiesPreferSmallestStartThenEnd) {
  SpanDistribution d{{0.0, 0.5, 0.5}, {0.0, 0.5, 0.5}};
  auto s = best_span(d);
  ASSERT_TRUE(s);
  EXPECT_EQ(*s, (WordSpan{0, 0}));
  SpanDistribution n{{0.8, 0.2}, {0.8, 0.2}};
  EXPECT_FALSE(best_span(n));
  SpanDistribution span{{0.0, 0.9, 0.1, 0.0}, {0.0, 0.0, 0.1, 0.9}};
  EXPECT_EQ(*best_span(span), (WordSpan{0, 2}));
}

TEST(SpanLoss, AnalyticCases) {
  SpanDistribution certain{{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
  EXPECT_NEAR(span_loss(certain, WordSpan{0, 1}), 0.0, 1e-12);
  SpanDistribution half{{0.0, 0.5, 0.5}, {0.0, 0.5, 0.5}};
  EXPECT_NEAR(span_loss(half, WordSpan{0, 0}), std::log(2.0), 1e-9);
  SpanDistribution quarter{{0.0, 1.0, 0.0}, {0.75, 0.25, 0.0}};
  EXPECT_NEAR(span_loss(quarter, WordSpan{0, 0}), 0.5 * std::log(4.0), 1e-9);
  EXPECT_NEAR(span_loss(quarter, std::nullopt, LossMode::Clamped), -0.5 * (std::log(1e-12) + std::log(0.75)), 1e-9);
}

TEST(SpanLoss, ZeroProbabilityIsFlagged) {
  SpanDistribution d{{0.0, 1.0, 0.0}, {0.0, 1.0, 0.0}};
  EXPECT_THROW(span_loss(d, WordSpan{1, 1}), InfiniteLoss);
  EXPECT_NEAR(span_loss(d, WordSpan{1, 1}, LossMode::Clamped), -std::log(1e-12), 1e-9);
  EXPECT_THROW(span_loss(d, WordSpan{0, 2}), IndexOutOfRange);
}

TEST(Symmetrize, ThresholdBoundary) {
  ProbMatrix fwd(1, 2), bwd(2, 1);
  fwd(0, 0) = 0.5;
  bwd(0, 0) = 0.35;
  fwd(0, 1) = 0.3;
  bwd(1, 0) = 0.45;
  auto links = symmetrize(fwd, bwd, 0.4);
  ASSERT_EQ(links.size(), 1u);
  EXPECT_EQ(links[0].mt, 0u);
  EXPECT_DOUBLE_EQ(links[0].mean_prob, 0.425);
}

TEST(Symmetrize, StrictComparisonAndNullAlignment) {
  ProbMatrix fwd(2, 1, 0.4), bwd(1, 2, 0.4);
  EXPECT_TRUE(symmetrize(fwd, bwd, 0.4).empty());
  fwd(0, 0) = bwd(0, 0) = 0.9;
  auto links = symmetrize(fwd, bwd, 0.4);
  ASSERT_EQ(links.size(), 1u);
  EXPECT_EQ(links[0].src, 0u);  // source word 1 appears in no link
  EXPECT_THROW(symmetrize(ProbMatrix(2, 1), ProbMatrix(2, 1)), LengthMismatch);
}

TEST(Symmetrize, MonotoneInThreshold) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng() % 6, n = 1 + rng() % 6;
    ProbMatrix fwd(m, n), bwd(n, m);
    for (auto& v : fwd.data) v = uniform01(rng);
    for (auto& v : bwd.data) v = uniform01(rng);
    auto prev = index_pairs(symmetrize(fwd, bwd, 0.0));
    for (double th = 0.05; th <= 1.0001; th += 0.05) {
      auto cur = index_pairs(symmetrize(fwd, bwd, th));
      EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
      prev = cur;
    }
    EXPECT_TRUE(prev.empty());
  }
}

TEST(ExtractExtendedAlignment, BijectiveLexiconDiagonalWithOovNull) {
  auto data = testing::make_bijective_bitext(300, 20, 0.0, 9);
  NativeLexScorer scorer(train_lex_table(testing::to_bitext(data.pairs), 10));
  SentencePair p{"t", {"w3", "w7", "w11", "unseen"}, {"x3", "x7", "x11"}, std::nullopt};
  auto links = extract_extended_alignment(p, scorer, scorer);
  // Expected from the lexicon: w<k> <-> x<k>.
  std::vector<IndexPair> expected;
  for (std::size_t i = 0; i < p.m(); ++i)
    for (std::size_t j = 0; j < p.n(); ++j)
      if (p.source[i].substr(1) == p.mt[j].substr(1) && p.source[i][0] == 'w') expected.emplace_back(i, j);
  EXPECT_EQ(index_pairs(links), expected);
}

TEST(ExtractExtendedAlignment, CatsAdapter) {
  Cats f;
  auto adapter = f.align_adapter();
  auto links = extract_extended_alignment(f.pair, adapter, adapter);
  EXPECT_EQ(index_pairs(links), f.links);
  for (std::size_t i : {5u, 6u})
    for (const auto& l : links) EXPECT_NE(l.src, i);
  for (const auto& l : links) EXPECT_NE(l.mt, 4u);
  EXPECT_TRUE(extract_extended_alignment(f.pair, adapter, adapter, 1.0).empty());
}

TEST(ExtractExtendedAlignment, IndependentOfCorpusOrderAndThreads) {
  auto data = testing::make_bijective_bitext(60, 20, 0.1, 2);
  NativeLexScorer scorer(train_lex_table(testing::to_bitext(data.pairs), 5));
  QECorpus c;
  for (const auto& p : data.pairs) c.entries.push_back({p, {}, {}, {}, {}});
  auto forward = extract_extended_alignment(c, scorer, scorer, 0.4, 1);
  std::reverse(c.entries.begin(), c.entries.end());
  auto backward = extract_extended_alignment(c, scorer, scorer, 0.4, 4);
  std::reverse(backward.begin(), backward.end());
  ASSERT_EQ(forward.size(), backward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) EXPECT_EQ(forward[i], backward[i]);
}

TEST(ExtractExtendedAlignment, PropagatesScorerErrors) {
  Cats f;
  FileAdapterScorer empty;
  EXPECT_THROW(extract_extended_alignment(f.pair, empty, empty), MissingPrecomputedEntry);
}

}  // namespace
}  // namespace qeref
