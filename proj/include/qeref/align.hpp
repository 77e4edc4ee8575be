#pragma once

// Extended word alignment as cross-lingual span prediction.
//
// Every word of one side is queried in turn: the query sentence carries the
// word wrapped in [MARK] tokens and a scorer returns start/end distributions
// over the other side's positions plus a reserved NULL position. Per-word
// probabilities are the summed mass of the spans covering a position; the two
// directions are symmetrized by mean probability against a threshold (0.4).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "qeref/core.hpp"
#include "qeref/corpus.hpp"
#include "qeref/parallel.hpp"

namespace qeref {

inline constexpr double kDefaultAlignThreshold = 0.4;
inline constexpr double kLossEpsilon = 1e-12;

enum class Direction { SourceToMt, MtToSource, SourceToGap };

inline std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::SourceToMt: return "src2mt";
    case Direction::MtToSource: return "mt2src";
    case Direction::SourceToGap: return "src2gap";
  }
  return "?";
}

inline Direction parse_direction(std::string_view s) {
  if (s == "src2mt") return Direction::SourceToMt;
  if (s == "mt2src") return Direction::MtToSource;
  if (s == "src2gap") return Direction::SourceToGap;
  throw Error("unknown direction '" + std::string(s) + "'");
}

class InvalidDistribution : public Error {
 public:
  using Error::Error;
};

class MissingPrecomputedEntry : public Error {
 public:
  MissingPrecomputedEntry(const std::string& id, Direction d, std::size_t index)
      : Error("no precomputed distribution for (id=" + id + ", direction=" + std::string(to_string(d)) +
              ", index=" + std::to_string(index) + ")") {}
};

class InfiniteLoss : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Queries and distributions

struct SpanQuery {
  std::string sentence_id;
  Direction direction = Direction::SourceToMt;
  std::size_t word_index = 0;
  Tokens marked_sentence;  // query side, queried word wrapped in [MARK] ... [MARK]
  Tokens context;          // answer side

  // The queried word; throws unless exactly one word is marked.
  const Token& marked_word() const {
    std::vector<std::size_t> marks;
    for (std::size_t i = 0; i < marked_sentence.size(); ++i)
      if (marked_sentence[i] == kMarkToken) marks.push_back(i);
    if (marks.size() != 2 || marks[1] != marks[0] + 2)
      throw Error("span query must mark exactly one word");
    return marked_sentence[marks[0] + 1];
  }

  // Answer positions: context words, or the n+1 gap windows for gap queries.
  std::size_t answer_positions() const {
    return direction == Direction::SourceToGap ? context.size() + 1 : context.size();
  }
};

inline Tokens mark_word(const Tokens& sentence, std::size_t index) {
  if (index >= sentence.size()) throw IndexOutOfRange("marked word", index, sentence.size());
  Tokens out;
  out.reserve(sentence.size() + 2);
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (i == index) out.emplace_back(kMarkToken);
    out.push_back(sentence[i]);
    if (i == index) out.emplace_back(kMarkToken);
  }
  return out;
}

inline SpanQuery make_query(const SentencePair& pair, Direction d, std::size_t index) {
  const bool from_source = d != Direction::MtToSource;
  const Tokens& query_side = from_source ? pair.source : pair.mt;
  const Tokens& answer_side = from_source ? pair.mt : pair.source;
  return {pair.id, d, index, mark_word(query_side, index), answer_side};
}

// Slot 0 of each vector is NULL, slot p+1 is answer position p.
struct SpanDistribution {
  std::vector<double> p_start;
  std::vector<double> p_end;

  std::size_t positions() const noexcept { return p_start.empty() ? 0 : p_start.size() - 1; }

  void validate(double tol = 1e-9) const {
    if (p_start.empty() || p_start.size() != p_end.size())
      throw InvalidDistribution("start/end vectors must be non-empty and of equal length");
    for (const auto* v : {&p_start, &p_end}) {
      double sum = 0.0;
      for (double p : *v) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidDistribution("probability outside [0,1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > tol) throw InvalidDistribution("distribution sums to " + std::to_string(sum));
    }
  }

  // All mass on one position, or on NULL when pos is empty.
  static SpanDistribution point(std::size_t positions, std::optional<std::size_t> pos) {
    std::vector<double> v(positions + 1, 0.0);
    v.at(pos ? *pos + 1 : 0) = 1.0;
    return {v, v};
  }

  friend bool operator==(const SpanDistribution&, const SpanDistribution&) = default;
};

struct WordSpan {
  std::size_t first = 0;  // inclusive, 0-based
  std::size_t last = 0;   // inclusive
  friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

// prob(p) = sum over spans a <= p <= b of p_start(a) * p_end(b), which factors
// into (start mass at or before p) * (end mass at or after p).
// prob(NULL) = p_start(NULL) * p_end(NULL). Same slot layout as the input.
inline std::vector<double> pair_probabilities(const SpanDistribution& dist) {
  const std::size_t len = dist.positions();
  std::vector<double> out(len + 1, 0.0);
  out[0] = dist.p_start[0] * dist.p_end[0];
  std::vector<double> end_suffix(len + 2, 0.0);
  for (std::size_t p = len; p >= 1; --p) end_suffix[p] = end_suffix[p + 1] + dist.p_end[p];
  double start_prefix = 0.0;
  for (std::size_t p = 1; p <= len; ++p) {
    start_prefix += dist.p_start[p];
    out[p] = std::min(1.0, start_prefix * end_suffix[p]);
  }
  return out;
}

// Most probable span; nullopt means NULL. Ties go to the smallest start, then
// the smallest end, with NULL ordered first.
inline std::optional<WordSpan> best_span(const SpanDistribution& dist) {
  const std::size_t len = dist.positions();
  double best = dist.p_start[0] * dist.p_end[0];
  std::optional<WordSpan> arg;
  for (std::size_t a = 1; a <= len; ++a)
    for (std::size_t b = a; b <= len; ++b) {
      double s = dist.p_start[a] * dist.p_end[b];
      if (s > best) {
        best = s;
        arg = WordSpan{a - 1, b - 1};
      }
    }
  return arg;
}

enum class LossMode { Strict, Clamped };

// -1/2 [log p_start(j) + log p_end(k)] for the gold span (j,k); a NULL gold uses
// the NULL slot for both endpoints. Strict mode throws InfiniteLoss on a zero
// gold probability, Clamped mode floors probabilities at 1e-12.
inline double span_loss(const SpanDistribution& dist, const std::optional<WordSpan>& gold,
                        LossMode mode = LossMode::Strict) {
  std::size_t j = 0, k = 0;
  if (gold) {
    if (gold->first > gold->last || gold->last >= dist.positions())
      throw IndexOutOfRange("gold span end", gold->last, dist.positions());
    j = gold->first + 1;
    k = gold->last + 1;
  }
  double ps = dist.p_start.at(j), pe = dist.p_end.at(k);
  if (mode == LossMode::Strict && (ps <= 0.0 || pe <= 0.0)) throw InfiniteLoss("gold endpoint has probability 0");
  ps = std::max(ps, kLossEpsilon);
  pe = std::max(pe, kLossEpsilon);
  return -0.5 * (std::log(ps) + std::log(pe));
}

// ---------------------------------------------------------------------------
// Lexical translation tables

// t(target | given) for observed (given, target) pairs; kNullToken is the
// empty given word.
class TranslationTable {
 public:
  using Row = std::map<std::string, double, std::less<>>;

  double prob(std::string_view target, std::string_view given) const {
    auto r = rows_.find(given);
    if (r == rows_.end()) return 0.0;
    auto it = r->second.find(target);
    return it == r->second.end() ? 0.0 : it->second;
  }

  void set(const std::string& given, const std::string& target, double p) { rows_[given][target] = p; }

  const Row* row(std::string_view given) const {
    auto r = rows_.find(given);
    return r == rows_.end() ? nullptr : &r->second;
  }

  const std::map<std::string, Row, std::less<>>& rows() const noexcept { return rows_; }
  bool empty() const noexcept { return rows_.empty(); }

  void write(std::ostream& out) const {
    out << std::setprecision(17);
    for (const auto& [given, row] : rows_)
      for (const auto& [target, p] : row) out << given << '\t' << target << '\t' << p << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("cannot write '" + path + "'");
    write(out);
  }

  static TranslationTable load(const std::string& path) {
    TranslationTable t;
    std::size_t line_no = 0;
    for (const auto& line : read_lines(path)) {
      ++line_no;
      if (line.empty()) continue;
      auto a = line.find('\t');
      auto b = a == std::string::npos ? a : line.find('\t', a + 1);
      if (b == std::string::npos) throw Error(path + ":" + std::to_string(line_no) + ": expected src\\ttgt\\tprob");
      t.set(line.substr(0, a), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1)));
    }
    return t;
  }

  friend bool operator==(const TranslationTable&, const TranslationTable&) = default;

 private:
  std::map<std::string, Row, std::less<>> rows_;
};

struct LexTable {
  TranslationTable forward;   // t(mt word | source word)
  TranslationTable backward;  // t(source word | mt word)

  void save(const std::string& prefix) const {
    forward.save(prefix + ".fwd.tsv");
    backward.save(prefix + ".bwd.tsv");
  }
  static LexTable load(const std::string& prefix) {
    return {TranslationTable::load(prefix + ".fwd.tsv"), TranslationTable::load(prefix + ".bwd.tsv")};
  }

  const TranslationTable& table(Direction d) const {
    if (d == Direction::SourceToMt) return forward;
    if (d == Direction::MtToSource) return backward;
    throw Error("lexical table has no " + std::string(to_string(d)) + " direction");
  }

  friend bool operator==(const LexTable&, const LexTable&) = default;
};

using Bitext = std::vector<std::pair<Tokens, Tokens>>;

// Expectation-maximization for lexical translation probabilities
// t(target | given) with an extra NULL given word per sentence. Starts uniform
// over co-occurring targets. When trace is non-null it receives the corpus
// log-likelihood before the first and after every iteration
// (iterations + 1 values); EM guarantees the sequence is non-decreasing.
inline TranslationTable train_translation_table(const Bitext& bitext, int iterations,
                                                std::vector<double>* trace = nullptr) {
  if (bitext.empty()) throw EmptyCorpus();
  if (iterations < 0) throw Error("iterations must be non-negative");

  std::unordered_map<std::string, std::uint32_t> given_ids{{std::string(kNullToken), 0}}, target_ids;
  std::vector<std::string> given_words{std::string(kNullToken)}, target_words;
  auto intern = [](auto& ids, auto& words, const std::string& w) {
    auto [it, fresh] = ids.emplace(w, static_cast<std::uint32_t>(words.size()));
    if (fresh) words.push_back(w);
    return it->second;
  };
  std::vector<std::vector<std::uint32_t>> given(bitext.size()), target(bitext.size());
  for (std::size_t s = 0; s < bitext.size(); ++s) {
    given[s].push_back(0);
    for (const auto& w : bitext[s].first) given[s].push_back(intern(given_ids, given_words, w));
    for (const auto& w : bitext[s].second) target[s].push_back(intern(target_ids, target_words, w));
  }

  auto key = [](std::uint32_t e, std::uint32_t f) { return (static_cast<std::uint64_t>(e) << 32) | f; };
  std::unordered_map<std::uint64_t, double> prob;
  std::vector<std::vector<std::uint32_t>> targets_of(given_words.size());
  for (std::size_t s = 0; s < bitext.size(); ++s)
    for (auto e : given[s])
      for (auto f : target[s])
        if (prob.emplace(key(e, f), 0.0).second) targets_of[e].push_back(f);
  for (std::uint32_t e = 0; e < targets_of.size(); ++e)
    for (auto f : targets_of[e]) prob[key(e, f)] = 1.0 / static_cast<double>(targets_of[e].size());

  auto log_likelihood = [&] {
    double ll = 0.0;
    for (std::size_t s = 0; s < bitext.size(); ++s)
      for (auto f : target[s]) {
        double denom = 0.0;
        for (auto e : given[s]) denom += prob[key(e, f)];
        ll += std::log(denom / static_cast<double>(given[s].size()));
      }
    return ll;
  };

  if (trace) trace->assign(1, log_likelihood());
  std::unordered_map<std::uint64_t, double> counts;
  std::vector<double> totals(given_words.size());
  for (int it = 0; it < iterations; ++it) {
    for (auto& [k, c] : counts) c = 0.0;
    std::fill(totals.begin(), totals.end(), 0.0);
    for (std::size_t s = 0; s < bitext.size(); ++s)
      for (auto f : target[s]) {
        double denom = 0.0;
        for (auto e : given[s]) denom += prob[key(e, f)];
        for (auto e : given[s]) {
          double c = prob[key(e, f)] / denom;
          counts[key(e, f)] += c;
          totals[e] += c;
        }
      }
    for (std::uint32_t e = 0; e < targets_of.size(); ++e)
      for (auto f : targets_of[e]) prob[key(e, f)] = counts[key(e, f)] / totals[e];
    if (trace) trace->push_back(log_likelihood());
  }

  TranslationTable table;
  for (std::uint32_t e = 0; e < targets_of.size(); ++e)
    for (auto f : targets_of[e]) table.set(given_words[e], target_words[f], prob[key(e, f)]);
  return table;
}

struct LexTrainingTrace {
  std::vector<double> forward_log_likelihood;
  std::vector<double> backward_log_likelihood;
};

// Both directions over (source, mt) pairs. Seed is accepted for interface
// symmetry; the uniform start makes training deterministic without it.
inline LexTable train_lex_table(const Bitext& bitext, int iterations, std::uint64_t /*seed*/ = 0,
                                LexTrainingTrace* trace = nullptr) {
  if (iterations < 1) throw Error("iterations must be >= 1");
  Bitext reversed;
  reversed.reserve(bitext.size());
  for (const auto& [s, t] : bitext) reversed.emplace_back(t, s);
  LexTable lex;
  lex.forward = train_translation_table(bitext, iterations, trace ? &trace->forward_log_likelihood : nullptr);
  lex.backward = train_translation_table(reversed, iterations, trace ? &trace->backward_log_likelihood : nullptr);
  return lex;
}

inline Bitext bitext_of(const QECorpus& corpus) {
  Bitext out;
  out.reserve(corpus.size());
  for (const auto& e : corpus.entries) out.emplace_back(e.pair.source, e.pair.mt);
  return out;
}

// ---------------------------------------------------------------------------
// Scorers

class SpanScorer {
 public:
  virtual ~SpanScorer() = default;
  virtual SpanDistribution score(const SpanQuery& query) const = 0;
};

// Normalizes t(context_j | marked word) over the context words plus NULL. The
// NULL score is the translation mass the context leaves unexplained,
// max(0, 1 - sum_j t(context_j | word)). Single-word spans only: p_start and
// p_end are the same vector.
class NativeLexScorer final : public SpanScorer {
 public:
  explicit NativeLexScorer(std::shared_ptr<const LexTable> table) : table_(std::move(table)) {}
  explicit NativeLexScorer(LexTable table) : table_(std::make_shared<const LexTable>(std::move(table))) {}

  SpanDistribution score(const SpanQuery& query) const override {
    const auto& table = table_->table(query.direction);
    const Token& word = query.marked_word();
    std::vector<double> q(query.context.size() + 1, 0.0);
    double sum = 0.0;
    for (std::size_t j = 0; j < query.context.size(); ++j) {
      q[j + 1] = table.prob(query.context[j], word);
      sum += q[j + 1];
    }
    q[0] = std::max(0.0, 1.0 - sum);
    const double total = sum + q[0];
    for (auto& p : q) p /= total;
    return {q, q};
  }

  const LexTable& table() const noexcept { return *table_; }

 private:
  std::shared_ptr<const LexTable> table_;
};

// Precomputed distributions read from JSON lines, one record per
// (id, direction, index):
//   {"id": "...", "direction": "src2mt", "index": 3, "p_start": [...], "p_end": [...]}
// Array slot 0 is NULL (answer position -1), slot p+1 is answer position p.
// Lines holding a "header" object are documentation and are skipped.
class FileAdapterScorer final : public SpanScorer {
 public:
  using Key = std::tuple<std::string, Direction, std::size_t>;

  FileAdapterScorer() = default;

  static FileAdapterScorer load(const std::string& path) {
    std::ifstream probe(path);
    if (!probe) throw IOFailure("adapter file '" + path + "' not found");
    FileAdapterScorer s;
    std::size_t line_no = 0;
    for (const auto& line : read_lines(path)) {
      ++line_no;
      if (split_tokens(line).empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        if (j.contains("header")) continue;
        SpanDistribution d{j.at("p_start").get<std::vector<double>>(), j.at("p_end").get<std::vector<double>>()};
        d.validate();
        s.add(j.at("id").get<std::string>(), parse_direction(j.at("direction").get<std::string>()),
              j.at("index").get<std::size_t>(), std::move(d));
      } catch (const std::exception& e) {
        throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return s;
  }

  void add(std::string id, Direction d, std::size_t index, SpanDistribution dist) {
    entries_[Key{std::move(id), d, index}] = std::move(dist);
  }

  SpanDistribution score(const SpanQuery& query) const override {
    auto it = entries_.find(Key{query.sentence_id, query.direction, query.word_index});
    if (it == entries_.end()) throw MissingPrecomputedEntry(query.sentence_id, query.direction, query.word_index);
    if (it->second.positions() != query.answer_positions())
      throw InvalidDistribution("precomputed distribution for sentence " + query.sentence_id + " has " +
                                std::to_string(it->second.positions()) + " positions, expected " +
                                std::to_string(query.answer_positions()));
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }

  // Header line, then one record per entry in key order.
  void save(const std::string& path) const;

 private:
  std::map<Key, SpanDistribution> entries_;
};

inline nlohmann::json adapter_record(const std::string& id, Direction d, std::size_t index,
                                     const SpanDistribution& dist) {
  return {{"id", id},
          {"direction", std::string(to_string(d))},
          {"index", index},
          {"p_start", dist.p_start},
          {"p_end", dist.p_end}};
}

inline nlohmann::json adapter_header(std::string_view answer_positions) {
  return {{"header",
           {{"format", "qeref-span-adapter"},
            {"answer_positions", answer_positions},
            {"null_position", -1},
            {"layout", "array slot 0 = NULL (position -1); slot p+1 = answer position p"}}}};
}

inline void FileAdapterScorer::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write '" + path + "'");
  out << adapter_header("src2mt: mt words; mt2src: source words; src2gap: mt gaps").dump() << '\n';
  for (const auto& [key, dist] : entries_)
    out << adapter_record(std::get<0>(key), std::get<1>(key), std::get<2>(key), dist).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Symmetrization and extraction

// Row-major probability matrix.
struct ProbMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  ProbMatrix() = default;
  ProbMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// fwd is m x n (source i -> mt j), bwd is n x m (mt j -> source i). A link
// (i,j) is kept iff (fwd(i,j) + bwd(j,i)) / 2 > threshold.
inline std::vector<AlignmentLink> symmetrize(const ProbMatrix& fwd, const ProbMatrix& bwd,
                                             double threshold = kDefaultAlignThreshold) {
  if (fwd.rows != bwd.cols || fwd.cols != bwd.rows)
    throw LengthMismatch("backward matrix", fwd.rows * fwd.cols, bwd.rows * bwd.cols);
  std::vector<AlignmentLink> links;
  for (std::size_t i = 0; i < fwd.rows; ++i)
    for (std::size_t j = 0; j < fwd.cols; ++j) {
      auto link = AlignmentLink::make(i, j, fwd(i, j), bwd(j, i));
      if (link.mean_prob > threshold) links.push_back(link);
    }
  return links;
}

// Per-position probabilities for every word of one side, one row per queried
// word, NULL dropped.
inline ProbMatrix directional_probabilities(const SentencePair& pair, const SpanScorer& scorer, Direction d) {
  const std::size_t rows = d == Direction::MtToSource ? pair.n() : pair.m();
  const std::size_t cols = d == Direction::MtToSource ? pair.m() : (d == Direction::SourceToGap ? pair.n() + 1 : pair.n());
  ProbMatrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    auto dist = scorer.score(make_query(pair, d, i));
    dist.validate();
    if (dist.positions() != cols)
      throw InvalidDistribution("scorer returned " + std::to_string(dist.positions()) + " positions, expected " +
                                std::to_string(cols));
    auto probs = pair_probabilities(dist);
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = probs[j + 1];
  }
  return out;
}

inline std::vector<AlignmentLink> extract_extended_alignment(const SentencePair& pair, const SpanScorer& fwd,
                                                             const SpanScorer& bwd,
                                                             double threshold = kDefaultAlignThreshold) {
  return symmetrize(directional_probabilities(pair, fwd, Direction::SourceToMt),
                    directional_probabilities(pair, bwd, Direction::MtToSource), threshold);
}

inline std::vector<std::vector<AlignmentLink>> extract_extended_alignment(const QECorpus& corpus,
                                                                          const SpanScorer& fwd,
                                                                          const SpanScorer& bwd,
                                                                          double threshold, unsigned threads = 1) {
  std::vector<std::vector<AlignmentLink>> out(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    out[i] = extract_extended_alignment(corpus.entries[i].pair, fwd, bwd, threshold);
  });
  return out;
}

}  // namespace qeref
