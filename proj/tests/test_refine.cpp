#include <gtest/gtest.h>

#include "qeref/corpus.hpp"
#include "qeref/refine.hpp"
#include "test_util.hpp"

namespace qeref {
namespace {

using O = OriginalTag;
using R = RefinedTag;

TEST(Refine, Cats) {
  testing::Cats f;
  CorrespondenceSet c;
  for (const auto& l : f.word_links()) c.add(l);
  for (auto [s, g] : f.gap_links) c.add(SourceGapLink{s, g, 1.0});
  auto refined = refine(f.original, c);
  EXPECT_EQ(refined, f.expected_refined());
}

TEST(Refine, AllOkStaysOk) {
  OriginalTags t = uniform_tags(3, 3, O::OK);
  std::vector<AlignmentLink> links{AlignmentLink::make(0, 0, 1, 1), AlignmentLink::make(1, 2, 0.9, 0.8)};
  EXPECT_EQ(refine_word_tags(t, links), uniform_tags(3, 3, R::OK));
}

TEST(Refine, BadSourceFlipsLinkedOkMt) {
  OriginalTags t = uniform_tags(1, 1, O::OK);
  t.source[0] = O::BAD;
  auto r = refine_word_tags(t, {AlignmentLink::make(0, 0, 1, 1)});
  EXPECT_EQ(r.source[0], R::REP);
  EXPECT_EQ(r.mt_words[0], R::REP);
}

TEST(Refine, ManyToManyAndOneStep) {
  // s0 BAD links t0 and t1; t1 also links s1, which stays OK (no cascade).
  OriginalTags t = uniform_tags(2, 2, O::OK);
  t.source[0] = O::BAD;
  std::vector<AlignmentLink> links{AlignmentLink::make(0, 0, 1, 1), AlignmentLink::make(0, 1, 1, 1),
                                   AlignmentLink::make(1, 1, 1, 1)};
  auto r = refine_word_tags(t, links);
  EXPECT_EQ(r.source, (std::vector<R>{R::REP, R::OK}));
  EXPECT_EQ(r.mt_words, (std::vector<R>{R::REP, R::REP}));
}

TEST(Refine, RejectsOutOfRangeLinks) {
  OriginalTags t = uniform_tags(1, 1, O::OK);
  EXPECT_THROW(refine_word_tags(t, {AlignmentLink::make(1, 0, 1, 1)}), IndexOutOfRange);
  EXPECT_THROW(assign_gap_tags({{0, 3, 1.0}}, 2), IndexOutOfRange);
}

TEST(AssignGapTags, Examples) {
  EXPECT_EQ(assign_gap_tags({{5, 3, 1.0}}, 4), (std::vector<R>{R::OK, R::OK, R::OK, R::INS, R::OK}));
  EXPECT_EQ(assign_gap_tags({}, 2), (std::vector<R>{R::OK, R::OK, R::OK}));
  EXPECT_EQ(assign_gap_tags({{1, 2, 1.0}, {4, 2, 0.6}}, 3), (std::vector<R>{R::OK, R::OK, R::INS, R::OK}));
}

// Rule table written per word: an unlinked word keeps its own tag (BAD becomes
// INS or DEL by side); a linked word is REP when it or any partner was BAD.
RefinedTags oracle(const OriginalTags& t, const std::vector<IndexPair>& links) {
  RefinedTags r;
  for (std::size_t i = 0; i < t.source.size(); ++i) {
    bool linked = false, touched = t.source[i] == O::BAD;
    for (auto [s, m] : links)
      if (s == i) linked = true, touched = touched || t.mt_words[m] == O::BAD;
    r.source.push_back(!linked ? (t.source[i] == O::BAD ? R::INS : R::OK) : (touched ? R::REP : R::OK));
  }
  for (std::size_t j = 0; j < t.mt_words.size(); ++j) {
    bool linked = false, touched = t.mt_words[j] == O::BAD;
    for (auto [s, m] : links)
      if (m == j) linked = true, touched = touched || t.source[s] == O::BAD;
    r.mt_words.push_back(!linked ? (t.mt_words[j] == O::BAD ? R::DEL : R::OK) : (touched ? R::REP : R::OK));
  }
  r.gaps.assign(t.mt_words.size() + 1, R::OK);
  return r;
}

TEST(Refine, ExhaustiveSmallInstancesMatchOracle) {
  std::size_t cases = 0;
  for (std::size_t m = 1; m <= 3; ++m)
    for (std::size_t n = 1; n <= 3; ++n)
      for (unsigned tags = 0; tags < (1u << (m + n)); ++tags)
        for (unsigned subset = 0; subset < (1u << (m * n)); ++subset) {
          OriginalTags t = uniform_tags(m, n, O::OK);
          for (std::size_t i = 0; i < m; ++i)
            if (tags >> i & 1u) t.source[i] = O::BAD;
          for (std::size_t j = 0; j < n; ++j)
            if (tags >> (m + j) & 1u) t.mt_words[j] = O::BAD;
          std::vector<IndexPair> pairs;
          std::vector<AlignmentLink> links;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              if (subset >> (i * n + j) & 1u) {
                pairs.emplace_back(i, j);
                links.push_back(AlignmentLink::make(i, j, 1, 1));
              }
          auto got = refine_word_tags(t, links);
          ASSERT_EQ(got, oracle(t, pairs)) << "m=" << m << " n=" << n << " tags=" << tags << " links=" << subset;
          EXPECT_NO_THROW(check_refined_placement(got));

          // Degenerating gives back the input plus exactly the one-step flips.
          OriginalTags flipped = t;
          for (auto [i, j] : pairs)
            if (t.source[i] == O::BAD || t.mt_words[j] == O::BAD) flipped.source[i] = flipped.mt_words[j] = O::BAD;
          auto back = degenerate_tags(got);
          ASSERT_EQ(back.source, flipped.source);
          ASSERT_EQ(back.mt_words, flipped.mt_words);
          ++cases;
        }
  EXPECT_EQ(cases, 37448u);
}

}  // namespace
}  // namespace qeref
