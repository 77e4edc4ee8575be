#pragma once

// Source-gap correspondences. A source word is aligned to an MT gap through
// the two-word window around it: window k is (t_{k-1}, t_k), with [BOS] and
// [EOS] standing in past the sentence edges.

#include <memory>
#include <string>
#include <vector>

#include "qeref/align.hpp"
#include "qeref/core.hpp"
#include "qeref/corpus.hpp"
#include "qeref/parallel.hpp"

namespace qeref {

struct GapWindow {
  std::size_t gap_index = 0;
  Token left;
  Token right;
  friend bool operator==(const GapWindow&, const GapWindow&) = default;
};

inline GapWindow gap_window(std::size_t gap_index, const Tokens& mt) {
  if (gap_index > mt.size()) throw IndexOutOfRange("gap", gap_index, mt.size() + 1);
  return {gap_index, gap_index == 0 ? Token(kBosToken) : mt[gap_index - 1],
          gap_index == mt.size() ? Token(kEosToken) : mt[gap_index]};
}

// Window tokens are tagged with their side so that "x before the gap" and
// "x after the gap" are different observations.
inline Token left_context(const Token& t) { return "L:" + t; }
inline Token right_context(const Token& t) { return "R:" + t; }

// Scores window k for source word w as t(L:left_k | w) + t(R:right_k | w); the
// NULL score is the unexplained mass max(0, 1 - sum_k score_k). Same vector for
// start and end.
class NativeGapScorer final : public SpanScorer {
 public:
  explicit NativeGapScorer(TranslationTable table) : table_(std::make_shared<const TranslationTable>(std::move(table))) {}

  SpanDistribution score(const SpanQuery& query) const override {
    if (query.direction != Direction::SourceToGap) throw Error("gap scorer only answers src2gap queries");
    const Token& word = query.marked_word();
    const std::size_t windows = query.context.size() + 1;
    std::vector<double> q(windows + 1, 0.0);
    double sum = 0.0;
    for (std::size_t k = 0; k < windows; ++k) {
      auto w = gap_window(k, query.context);
      q[k + 1] = table_->prob(left_context(w.left), word) + table_->prob(right_context(w.right), word);
      sum += q[k + 1];
    }
    q[0] = std::max(0.0, 1.0 - sum);
    const double total = sum + q[0];
    for (auto& p : q) p /= total;
    return {q, q};
  }

  const TranslationTable& table() const noexcept { return *table_; }

 private:
  std::shared_ptr<const TranslationTable> table_;
};

// Learns t(window token | source word) from the gold links of pseudo examples
// with the lexical EM trainer; each link contributes the pair
// ([source word], [L:left, R:right]). Zero iterations leaves the uniform start.
inline NativeGapScorer train_gap_scorer(const std::vector<GapPseudoExample>& examples, int iterations,
                                        std::uint64_t /*seed*/ = 0) {
  Bitext bitext;
  for (const auto& ex : examples)
    for (const auto& link : ex.gold_gap_links) {
      auto w = gap_window(link.gap, ex.pair.mt);
      bitext.push_back({{ex.pair.source.at(link.src)}, {left_context(w.left), right_context(w.right)}});
    }
  if (bitext.empty()) throw EmptyCorpus();
  return NativeGapScorer(train_translation_table(bitext, iterations));
}

// Queries every source word (independently of any predicted tags) and keeps
// (i, k) iff the covering probability of window k exceeds the threshold.
inline std::vector<SourceGapLink> extract_source_gap(const SentencePair& pair, const SpanScorer& scorer,
                                                     double threshold = kDefaultAlignThreshold) {
  auto probs = directional_probabilities(pair, scorer, Direction::SourceToGap);
  std::vector<SourceGapLink> links;
  for (std::size_t i = 0; i < probs.rows; ++i)
    for (std::size_t k = 0; k < probs.cols; ++k)
      if (probs(i, k) > threshold) links.push_back({i, k, probs(i, k)});
  return links;
}

inline std::vector<std::vector<SourceGapLink>> extract_source_gap(const QECorpus& corpus, const SpanScorer& scorer,
                                                                  double threshold, unsigned threads = 1) {
  std::vector<std::vector<SourceGapLink>> out(corpus.size());
  parallel_for(corpus.size(), threads,
               [&](std::size_t i) { out[i] = extract_source_gap(corpus.entries[i].pair, scorer, threshold); });
  return out;
}

// Adapter records that reproduce a set of gold links: a point mass on the
// window when a source word has one gold gap, an even split over two gaps
// (each then covers 1/2, the windows between them 1/4), NULL otherwise.
// More than two gaps per source word cannot be encoded as one span
// distribution that passes a 0.4 threshold exactly; those throw.
inline FileAdapterScorer oracle_gap_adapter(const SentencePair& pair, const std::vector<SourceGapLink>& gold) {
  FileAdapterScorer adapter;
  const std::size_t windows = pair.n() + 1;
  std::vector<std::vector<std::size_t>> gaps_of(pair.m());
  for (const auto& l : gold) gaps_of.at(l.src).push_back(l.gap);
  for (std::size_t i = 0; i < pair.m(); ++i) {
    auto& g = gaps_of[i];
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    SpanDistribution d;
    if (g.empty()) {
      d = SpanDistribution::point(windows, std::nullopt);
    } else if (g.size() == 1) {
      d = SpanDistribution::point(windows, g[0]);
    } else if (g.size() == 2) {
      std::vector<double> v(windows + 1, 0.0);
      v[g[0] + 1] = v[g[1] + 1] = 0.5;
      d = {v, v};
    } else {
      throw Error("oracle adapter supports at most two gaps per source word");
    }
    adapter.add(pair.id, Direction::SourceToGap, i, std::move(d));
  }
  return adapter;
}

}  // namespace qeref
