#include <gtest/gtest.h>

#include <random>

#include "qeref/corpus.hpp"
#include "test_util.hpp"

namespace qeref {
namespace {

using testing::Cats;
using testing::TempDir;
using testing::write_file;

TEST(ParseQeCorpus, DeinterleavesMtTags) {
  TempDir dir;
  write_file(dir.file("src"), "x y\n");
  write_file(dir.file("mt"), "a b\n");
  write_file(dir.file("src_tags"), "OK BAD\n");
  write_file(dir.file("mt_tags"), "OK OK OK BAD OK\n");
  auto c = parse_qe_corpus({dir.file("src"), dir.file("mt"), dir.file("src_tags"), dir.file("mt_tags"), std::nullopt});
  ASSERT_EQ(c.size(), 1u);
  const auto& tags = *c.entries[0].original;
  EXPECT_EQ(tags.mt_words, (std::vector{OriginalTag::OK, OriginalTag::BAD}));
  EXPECT_EQ(tags.gaps, (std::vector{OriginalTag::OK, OriginalTag::OK, OriginalTag::OK}));
  EXPECT_EQ(tags.source, (std::vector{OriginalTag::OK, OriginalTag::BAD}));
  EXPECT_EQ(c.entries[0].pair.id, "0");
}

TEST(ParseQeCorpus, EvenPositionsAreGaps) {
  TempDir dir;
  write_file(dir.file("src"), "x\n");
  write_file(dir.file("mt"), "a b\n");
  write_file(dir.file("mt_tags"), "OK OK BAD OK OK\n");
  write_file(dir.file("src_tags"), "OK\n");
  auto c = parse_qe_corpus({dir.file("src"), dir.file("mt"), dir.file("src_tags"), dir.file("mt_tags"), std::nullopt});
  const auto& tags = *c.entries[0].original;
  EXPECT_EQ(tags.mt_words, (std::vector{OriginalTag::OK, OriginalTag::OK}));
  EXPECT_EQ(tags.gaps, (std::vector{OriginalTag::OK, OriginalTag::BAD, OriginalTag::OK}));
}

TEST(ParseQeCorpus, WrongMtTagCountReportsLine) {
  TempDir dir;
  write_file(dir.file("src"), "x\nx y\n");
  write_file(dir.file("mt"), "a\na b\n");
  write_file(dir.file("src_tags"), "OK\nOK OK\n");
  write_file(dir.file("mt_tags"), "OK OK OK\nOK OK BAD OK\n");
  try {
    parse_qe_corpus({dir.file("src"), dir.file("mt"), dir.file("src_tags"), dir.file("mt_tags"), std::nullopt});
    FAIL();
  } catch (const TagCountMismatch& e) {
    EXPECT_EQ(e.line_no(), 2u);
  }
}

TEST(ParseQeCorpus, WrongSourceTagCount) {
  TempDir dir;
  write_file(dir.file("src"), "x y\n");
  write_file(dir.file("mt"), "a\n");
  write_file(dir.file("src_tags"), "OK\n");
  write_file(dir.file("mt_tags"), "OK OK OK\n");
  EXPECT_THROW(parse_qe_corpus({dir.file("src"), dir.file("mt"), dir.file("src_tags"), dir.file("mt_tags"), std::nullopt}),
               TagCountMismatch);
}

TEST(ParseQeCorpus, EntryPerLineWithPe) {
  TempDir dir;
  write_file(dir.file("src"), "a\nb c\nd\n");
  write_file(dir.file("mt"), "x\ny z\nw\n");
  write_file(dir.file("pe"), "x\ny\nw v\n");
  auto c = parse_qe_corpus({dir.file("src"), dir.file("mt"), std::nullopt, std::nullopt, dir.file("pe")});
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(*c.entries[2].pair.pe, (Tokens{"w", "v"}));
  EXPECT_FALSE(c.entries[0].original);
}

TEST(ParseQeCorpus, MissingFileIsIOFailure) {
  EXPECT_THROW(parse_qe_corpus({"/nonexistent/src", "/nonexistent/mt", std::nullopt, std::nullopt, std::nullopt}),
               IOFailure);
}

TEST(ParseQeCorpus, RejectsMarkToken) {
  TempDir dir;
  write_file(dir.file("src"), "a [MARK] b\n");
  write_file(dir.file("mt"), "x\n");
  EXPECT_THROW(parse_qe_corpus({dir.file("src"), dir.file("mt"), std::nullopt, std::nullopt, std::nullopt}),
               InvalidSentence);
}

TEST(Pharaoh, ParsesPairs) {
  EXPECT_EQ(parse_pharaoh("0-0 1-2"), (std::vector<IndexPair>{{0, 0}, {1, 2}}));
  EXPECT_TRUE(parse_pharaoh("").empty());
  EXPECT_EQ(parse_pharaoh("1-2 0-0 1-2"), (std::vector<IndexPair>{{0, 0}, {1, 2}}));
}

TEST(Pharaoh, MalformedTokenPosition) {
  try {
    parse_pharaoh("0-0 1-x");
    FAIL();
  } catch (const MalformedToken& e) {
    EXPECT_EQ(e.position(), 1u);
  }
  EXPECT_THROW(parse_pharaoh("12"), MalformedToken);
  EXPECT_THROW(parse_pharaoh("-1-2"), MalformedToken);
}

TEST(SourceGap, ParsesAndFormats) {
  EXPECT_EQ(parse_source_gap("3-g5 0-g0"), (std::vector<IndexPair>{{0, 0}, {3, 5}}));
  EXPECT_EQ(format_source_gap({{0, 0}, {3, 5}}), "0-g0 3-g5");
  EXPECT_THROW(parse_source_gap("3-5"), MalformedToken);
  EXPECT_EQ(format_pharaoh({{0, 1}, {2, 2}}), "0-1 2-2");
}

QECorpus cats_refined_corpus() {
  Cats f;
  QEEntry e;
  e.pair = f.pair;
  e.refined = f.expected_refined();
  CorrespondenceSet cs;
  cs.add(AlignmentLink::make(3, 2, 0.9, 0.85));
  cs.add(SourceGapLink{5, 4, 0.75});
  cs.add(SourceGapLink{6, 4, 0.625});
  e.correspondences = cs;
  QECorpus c;
  c.entries.push_back(e);
  return c;
}

TEST(RefinedJsonl, MarksReplacementAtWhite) {
  TempDir dir;
  write_refined_jsonl(cats_refined_corpus(), dir.file("out.jsonl"));
  auto line = read_lines(dir.file("out.jsonl")).at(0);
  auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["source_tags"][3], "REP");
  EXPECT_EQ(j["mt_word_tags"][2], "REP");
  EXPECT_EQ(j["gap_tags"][4], "INS");
  EXPECT_EQ(j["alignment"], nlohmann::json::parse("[[3,2]]"));
  EXPECT_EQ(j["source_gap"], nlohmann::json::parse("[[5,4],[6,4]]"));
  for (const char* key : {"id", "source_tags", "mt_word_tags", "gap_tags", "alignment", "source_gap"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(RefinedJsonl, EmptyCorrespondences) {
  auto c = cats_refined_corpus();
  c.entries[0].correspondences = CorrespondenceSet{};
  EXPECT_NE(refined_entry_json(c.entries[0]).dump().find("\"alignment\":[]"), std::string::npos);
}

TEST(RefinedJsonl, RoundTrip) {
  TempDir dir;
  auto c = cats_refined_corpus();
  QEEntry second = c.entries[0];
  second.pair.id = "second";
  second.correspondences = CorrespondenceSet({AlignmentLink::make(0, 0, 1.0 / 3.0, 0.1)}, {});
  c.entries.push_back(second);
  write_refined_jsonl(c, dir.file("rt.jsonl"));
  EXPECT_EQ(read_refined_jsonl(dir.file("rt.jsonl")), c);
}

TEST(Degenerate, Projection) {
  using R = RefinedTag;
  using O = OriginalTag;
  RefinedTags r{{R::OK, R::REP, R::INS}, {R::OK, R::DEL}, {R::OK, R::INS, R::OK}};
  auto o = degenerate_tags(r);
  EXPECT_EQ(o.source, (std::vector{O::OK, O::BAD, O::BAD}));
  EXPECT_EQ(o.mt_words, (std::vector{O::OK, O::BAD}));
  EXPECT_EQ(o.gaps, (std::vector{O::OK, O::BAD, O::OK}));
  auto ok = uniform_tags(2, 2, R::OK);
  EXPECT_EQ(degenerate_tags(ok), uniform_tags(2, 2, O::OK));
}

TEST(Degenerate, IdempotentAndSurjective) {
  // Re-lifting BAD to any operation tag and degenerating again is a fixed point.
  std::mt19937_64 rng(3);
  bool saw_ok = false, saw_bad = false;
  for (int trial = 0; trial < 200; ++trial) {
    RefinedTags r;
    for (int i = 0; i < 5; ++i) r.source.push_back(kRefinedTags[rng() % 3]);
    auto once = degenerate_tags(r);
    RefinedTags lifted;
    for (auto t : once.source) lifted.source.push_back(t == OriginalTag::BAD ? RefinedTag::REP : RefinedTag::OK);
    EXPECT_EQ(degenerate_tags(lifted), once);
    for (auto t : once.source) (t == OriginalTag::OK ? saw_ok : saw_bad) = true;
  }
  EXPECT_TRUE(saw_ok && saw_bad);
}

SentencePair pe_pair(Tokens pe, std::size_t m) {
  SentencePair p;
  p.id = "pe";
  for (std::size_t i = 0; i < m; ++i) p.source.push_back("s" + std::to_string(i));
  p.mt = pe;
  p.pe = pe;
  return p;
}

// First seed whose random drops equal `want`.
std::optional<GapPseudoExample> drop_exactly(const SentencePair& p, const std::vector<IndexPair>& align,
                                             std::vector<std::size_t> want) {
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    auto ex = generate_gap_pseudo(p, align, 0.5, seed);
    if (!ex) continue;
    std::vector<std::size_t> got;
    for (const auto& d : ex->dropped) got.push_back(d.pe_index);
    if (got == want) return ex;
  }
  return std::nullopt;
}

TEST(GapPseudo, InteriorDrop) {
  auto p = pe_pair({"a", "b", "c"}, 2);
  auto ex = drop_exactly(p, {{1, 1}}, {1});
  ASSERT_TRUE(ex);
  EXPECT_EQ(ex->pair.mt, (Tokens{"a", "c"}));
  ASSERT_EQ(ex->gold_gap_links.size(), 1u);
  EXPECT_EQ(ex->gold_gap_links[0].src, 1u);
  EXPECT_EQ(ex->gold_gap_links[0].gap, 1u);
}

TEST(GapPseudo, BoundaryDrop) {
  auto p = pe_pair({"a", "b", "c"}, 1);
  auto ex = drop_exactly(p, {{0, 0}}, {0});
  ASSERT_TRUE(ex);
  EXPECT_EQ(ex->pair.mt, (Tokens{"b", "c"}));
  ASSERT_EQ(ex->gold_gap_links.size(), 1u);
  EXPECT_EQ(ex->gold_gap_links[0].gap, 0u);
}

TEST(GapPseudo, AdjacentDropsMerge) {
  auto p = pe_pair({"a", "b", "c", "d"}, 3);
  auto ex = drop_exactly(p, {{1, 1}, {2, 2}}, {1, 2});
  ASSERT_TRUE(ex);
  EXPECT_EQ(ex->pair.mt, (Tokens{"a", "d"}));
  ASSERT_EQ(ex->gold_gap_links.size(), 2u);
  EXPECT_EQ(ex->gold_gap_links[0].src, 1u);
  EXPECT_EQ(ex->gold_gap_links[0].gap, 1u);
  EXPECT_EQ(ex->gold_gap_links[1].src, 2u);
  EXPECT_EQ(ex->gold_gap_links[1].gap, 1u);
  EXPECT_EQ(reinsert_dropped(*ex), *p.pe);
}

TEST(GapPseudo, NoAlignedWordsThrows) {
  auto p = pe_pair({"a", "b"}, 1);
  EXPECT_THROW(generate_gap_pseudo(p, {}, 0.5, 1), NoAlignedWords);
}

TEST(GapPseudo, PreconditionsChecked) {
  auto p = pe_pair({"a", "b"}, 1);
  EXPECT_THROW(generate_gap_pseudo(p, {{0, 0}}, 0.0, 1), Error);
  EXPECT_THROW(generate_gap_pseudo(p, {{0, 0}}, 1.0, 1), Error);
  EXPECT_THROW(generate_gap_pseudo(p, {{0, 5}}, 0.5, 1), IndexOutOfRange);
  p.pe.reset();
  EXPECT_THROW(generate_gap_pseudo(p, {{0, 0}}, 0.5, 1), Error);
}

TEST(GapPseudo, ReinsertionReconstructsPeForAllSeeds) {
  std::mt19937_64 rng(5);
  int generated = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const std::size_t len = 2 + rng() % 10, m = 1 + rng() % 6;
    Tokens pe;
    for (std::size_t k = 0; k < len; ++k) pe.push_back("p" + std::to_string(rng() % 5));
    auto p = pe_pair(pe, m);
    std::vector<IndexPair> align;
    for (std::size_t k = 0; k < len; ++k)
      if (rng() % 3) align.emplace_back(rng() % m, k);
    if (align.empty()) continue;
    auto ex = generate_gap_pseudo(p, align, 0.3, seed);
    EXPECT_EQ(generate_gap_pseudo(p, align, 0.3, seed), ex) << "not deterministic";
    if (!ex) continue;
    ++generated;
    EXPECT_EQ(reinsert_dropped(*ex), pe);
    auto gaps = dropped_gaps(*ex);
    for (std::size_t d = 0; d < ex->dropped.size(); ++d)
      for (auto s : ex->dropped[d].source_indices) {
        bool found = false;
        for (const auto& l : ex->gold_gap_links) found = found || (l.src == s && l.gap == gaps[d]);
        EXPECT_TRUE(found);
      }
  }
  EXPECT_GT(generated, 100);
}

}  // namespace
}  // namespace qeref
