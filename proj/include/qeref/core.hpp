#pragma once

// Domain types shared by every stage of the refined word-level QE pipeline.
//
// Index conventions (0-based everywhere):
//   source words  s_0 .. s_{m-1}
//   MT words      t_0 .. t_{n-1}
//   MT gaps       g_0 .. g_n, where g_k sits immediately before t_k
//                 (g_0 precedes the first word, g_n follows the last one).

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace qeref {

using Token = std::string;
using Tokens = std::vector<Token>;

// Reserved tokens. None of them may appear inside a corpus.
inline constexpr std::string_view kMarkToken = "[MARK]";
inline constexpr std::string_view kNullToken = "[NULL]";
inline constexpr std::string_view kBosToken = "[BOS]";
inline constexpr std::string_view kEosToken = "[EOS]";

inline bool is_reserved_token(std::string_view tok) {
  return tok == kMarkToken || tok == kNullToken || tok == kBosToken || tok == kEosToken;
}

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LengthMismatch : public Error {
 public:
  LengthMismatch(std::string kind, std::size_t expected, std::size_t actual)
      : Error("length mismatch in " + kind + ": expected " + std::to_string(expected) +
              ", got " + std::to_string(actual)),
        kind_(std::move(kind)),
        expected_(expected),
        actual_(actual) {}

  const std::string& kind() const noexcept { return kind_; }
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::string kind_;
  std::size_t expected_;
  std::size_t actual_;
};

class IndexOutOfRange : public Error {
 public:
  IndexOutOfRange(const std::string& what, std::size_t index, std::size_t bound)
      : Error(what + " index " + std::to_string(index) + " out of range (bound " +
              std::to_string(bound) + ")") {}
};

class InvalidSentence : public Error {
 public:
  using Error::Error;
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("corpus is empty") {}
};

class DegenerateLabels : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Tags

enum class OriginalTag : unsigned char { OK, BAD };
enum class RefinedTag : unsigned char { OK, REP, INS, DEL };

inline constexpr std::array<OriginalTag, 2> kOriginalTags{OriginalTag::OK, OriginalTag::BAD};
inline constexpr std::array<RefinedTag, 4> kRefinedTags{RefinedTag::OK, RefinedTag::REP,
                                                        RefinedTag::INS, RefinedTag::DEL};

inline std::string_view to_string(OriginalTag t) { return t == OriginalTag::OK ? "OK" : "BAD"; }

inline std::string_view to_string(RefinedTag t) {
  switch (t) {
    case RefinedTag::OK: return "OK";
    case RefinedTag::REP: return "REP";
    case RefinedTag::INS: return "INS";
    case RefinedTag::DEL: return "DEL";
  }
  return "?";
}

template <typename Tag>
Tag parse_tag(std::string_view s);

template <>
inline OriginalTag parse_tag<OriginalTag>(std::string_view s) {
  if (s == "OK") return OriginalTag::OK;
  if (s == "BAD") return OriginalTag::BAD;
  throw Error("unknown original tag '" + std::string(s) + "'");
}

template <>
inline RefinedTag parse_tag<RefinedTag>(std::string_view s) {
  if (s == "OK") return RefinedTag::OK;
  if (s == "REP") return RefinedTag::REP;
  if (s == "INS") return RefinedTag::INS;
  if (s == "DEL") return RefinedTag::DEL;
  throw Error("unknown refined tag '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Sentences

struct SentencePair {
  std::string id;
  Tokens source;
  Tokens mt;
  std::optional<Tokens> pe;

  std::size_t m() const noexcept { return source.size(); }
  std::size_t n() const noexcept { return mt.size(); }
  std::size_t gap_count() const noexcept { return mt.size() + 1; }

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

inline Tokens split_tokens(std::string_view line) {
  Tokens out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < line.size() && !(line[j] == ' ' || line[j] == '\t' || line[j] == '\r' || line[j] == '\n')) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join_tokens(const Tokens& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

inline void validate_tokens(const Tokens& toks, const std::string& kind) {
  if (toks.empty()) throw InvalidSentence(kind + " sentence is empty");
  for (const auto& t : toks) {
    if (t.empty()) throw InvalidSentence(kind + " contains an empty token");
    if (t.find_first_of(" \t\r\n") != std::string::npos)
      throw InvalidSentence(kind + " token '" + t + "' contains whitespace");
    if (is_reserved_token(t)) throw InvalidSentence(kind + " contains reserved token " + t);
  }
}

inline void validate_pair(const SentencePair& pair) {
  validate_tokens(pair.source, "source");
  validate_tokens(pair.mt, "mt");
  if (pair.pe) validate_tokens(*pair.pe, "pe");
}

// ---------------------------------------------------------------------------
// Tag assignments

template <typename Tag>
struct TagAssignment {
  std::vector<Tag> source;   // length m
  std::vector<Tag> mt_words; // length n
  std::vector<Tag> gaps;     // length n + 1

  friend bool operator==(const TagAssignment&, const TagAssignment&) = default;
};

using OriginalTags = TagAssignment<OriginalTag>;
using RefinedTags = TagAssignment<RefinedTag>;

// Placement constraints for refined tags: no DEL on source words, no INS on
// MT words, gaps carry only OK/INS.
inline void check_refined_placement(const RefinedTags& tags) {
  for (auto t : tags.source)
    if (t == RefinedTag::DEL) throw Error("DEL tag on a source word");
  for (auto t : tags.mt_words)
    if (t == RefinedTag::INS) throw Error("INS tag on an MT word");
  for (auto t : tags.gaps)
    if (t != RefinedTag::OK && t != RefinedTag::INS) throw Error("gap tag must be OK or INS");
}

// Checks all five lengths against the pair. Which sequence is wrong is named
// by LengthMismatch::kind(): "source", "mt", "source_tags", "mt_word_tags" or "gap".
template <typename Tag>
void validate_pair(const SentencePair& pair, const TagAssignment<Tag>& tags) {
  if (pair.source.empty()) throw LengthMismatch("source", 1, 0);
  if (pair.mt.empty()) throw LengthMismatch("mt", 1, 0);
  if (tags.source.size() != pair.m()) throw LengthMismatch("source_tags", pair.m(), tags.source.size());
  if (tags.mt_words.size() != pair.n()) throw LengthMismatch("mt_word_tags", pair.n(), tags.mt_words.size());
  if (tags.gaps.size() != pair.n() + 1) throw LengthMismatch("gap", pair.n() + 1, tags.gaps.size());
  if constexpr (std::is_same_v<Tag, RefinedTag>) check_refined_placement(tags);
}

template <typename Tag>
TagAssignment<Tag> uniform_tags(std::size_t m, std::size_t n, Tag t) {
  return {std::vector<Tag>(m, t), std::vector<Tag>(n, t), std::vector<Tag>(n + 1, t)};
}

// WMT convention: g_0, t_0, g_1, t_1, ..., t_{n-1}, g_n.
template <typename Tag>
std::vector<Tag> interleave_mt(const TagAssignment<Tag>& tags) {
  std::vector<Tag> out;
  out.reserve(tags.mt_words.size() * 2 + 1);
  for (std::size_t k = 0; k < tags.mt_words.size(); ++k) {
    out.push_back(tags.gaps.at(k));
    out.push_back(tags.mt_words[k]);
  }
  out.push_back(tags.gaps.at(tags.mt_words.size()));
  return out;
}

// Inverse of interleave_mt; the input must have odd length 2n+1.
template <typename Tag>
std::pair<std::vector<Tag>, std::vector<Tag>> deinterleave_mt(const std::vector<Tag>& seq) {
  if (seq.size() % 2 == 0) throw LengthMismatch("mt_tags", seq.size() + 1, seq.size());
  std::vector<Tag> words, gaps;
  for (std::size_t i = 0; i < seq.size(); ++i) (i % 2 == 0 ? gaps : words).push_back(seq[i]);
  return {std::move(words), std::move(gaps)};
}

// ---------------------------------------------------------------------------
// Correspondences

struct AlignmentLink {
  std::size_t src = 0;
  std::size_t mt = 0;
  double fwd_prob = 1.0;
  double bwd_prob = 1.0;
  double mean_prob = 1.0;

  static AlignmentLink make(std::size_t src, std::size_t mt, double fwd, double bwd) {
    return {src, mt, fwd, bwd, (fwd + bwd) / 2.0};
  }

  friend bool operator==(const AlignmentLink&, const AlignmentLink&) = default;
};

struct SourceGapLink {
  std::size_t src = 0;
  std::size_t gap = 0;
  double prob = 1.0;

  friend bool operator==(const SourceGapLink&, const SourceGapLink&) = default;
};

// Word links and source-gap links, each kept sorted by index pair and free
// of duplicates. Any word absent from word_links is null-aligned.
class CorrespondenceSet {
 public:
  CorrespondenceSet() = default;
  CorrespondenceSet(std::vector<AlignmentLink> words, std::vector<SourceGapLink> gaps) {
    for (const auto& l : words) add(l);
    for (const auto& l : gaps) add(l);
  }

  // Later duplicates are ignored.
  bool add(const AlignmentLink& l) {
    auto it = std::lower_bound(words_.begin(), words_.end(), l, word_less);
    if (it != words_.end() && it->src == l.src && it->mt == l.mt) return false;
    words_.insert(it, l);
    return true;
  }
  bool add(const SourceGapLink& l) {
    auto it = std::lower_bound(gaps_.begin(), gaps_.end(), l, gap_less);
    if (it != gaps_.end() && it->src == l.src && it->gap == l.gap) return false;
    gaps_.insert(it, l);
    return true;
  }

  const std::vector<AlignmentLink>& word_links() const noexcept { return words_; }
  const std::vector<SourceGapLink>& gap_links() const noexcept { return gaps_; }

  void set_gap_links(std::vector<SourceGapLink> gaps) {
    gaps_.clear();
    for (const auto& l : gaps) add(l);
  }

  bool empty() const noexcept { return words_.empty() && gaps_.empty(); }

  void validate(const SentencePair& pair) const {
    for (const auto& l : words_) {
      if (l.src >= pair.m()) throw IndexOutOfRange("alignment source", l.src, pair.m());
      if (l.mt >= pair.n()) throw IndexOutOfRange("alignment mt", l.mt, pair.n());
      for (double p : {l.fwd_prob, l.bwd_prob, l.mean_prob})
        if (!(p >= 0.0 && p <= 1.0)) throw Error("alignment probability outside [0,1]");
    }
    for (const auto& l : gaps_) {
      if (l.src >= pair.m()) throw IndexOutOfRange("source-gap source", l.src, pair.m());
      if (l.gap > pair.n()) throw IndexOutOfRange("source-gap gap", l.gap, pair.n() + 1);
      if (!(l.prob >= 0.0 && l.prob <= 1.0)) throw Error("source-gap probability outside [0,1]");
    }
  }

  friend bool operator==(const CorrespondenceSet&, const CorrespondenceSet&) = default;

 private:
  static bool word_less(const AlignmentLink& a, const AlignmentLink& b) {
    return std::pair(a.src, a.mt) < std::pair(b.src, b.mt);
  }
  static bool gap_less(const SourceGapLink& a, const SourceGapLink& b) {
    return std::pair(a.src, a.gap) < std::pair(b.src, b.gap);
  }

  std::vector<AlignmentLink> words_;
  std::vector<SourceGapLink> gaps_;
};

using IndexPair = std::pair<std::size_t, std::size_t>;

inline std::vector<IndexPair> index_pairs(const std::vector<AlignmentLink>& links) {
  std::vector<IndexPair> out;
  out.reserve(links.size());
  for (const auto& l : links) out.emplace_back(l.src, l.mt);
  return out;
}

inline std::vector<IndexPair> index_pairs(const std::vector<SourceGapLink>& links) {
  std::vector<IndexPair> out;
  out.reserve(links.size());
  for (const auto& l : links) out.emplace_back(l.src, l.gap);
  return out;
}

}  // namespace qeref
