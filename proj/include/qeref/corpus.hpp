#pragma once

// File formats and corpus-level transformations:
//   * plain-text corpora, one pre-tokenized sentence per line
//   * WMT-style tag files (MT tags interleaved gap,word,...,word,gap)
//   * Pharaoh `i-j` alignments and `i-gK` source-gap links
//   * refined JSON-lines output
//   * pseudo source-gap training data built by dropping PE words

#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "qeref/core.hpp"

namespace qeref {

class IOFailure : public Error {
 public:
  using Error::Error;
};

class TagCountMismatch : public Error {
 public:
  TagCountMismatch(std::string file, std::size_t line_no, std::size_t expected, std::size_t actual)
      : Error(file + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected) +
              " tags, got " + std::to_string(actual)),
        line_no_(line_no) {}
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

class MalformedToken : public Error {
 public:
  MalformedToken(std::size_t position, const std::string& token)
      : Error("malformed alignment token '" + token + "' at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class NoAlignedWords : public Error {
 public:
  using Error::Error;
};

struct QEEntry {
  SentencePair pair;
  std::optional<OriginalTags> original;
  std::optional<RefinedTags> refined;
  std::optional<CorrespondenceSet> correspondences;
  std::optional<std::vector<IndexPair>> source_pe_alignment;

  friend bool operator==(const QEEntry&, const QEEntry&) = default;
};

struct QECorpus {
  std::vector<QEEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  friend bool operator==(const QECorpus&, const QECorpus&) = default;
};

// ---------------------------------------------------------------------------
// Plain text

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOFailure("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IOFailure("write failed for '" + path + "'");
}

template <typename Tag>
std::vector<Tag> parse_tag_line(std::string_view line) {
  std::vector<Tag> out;
  for (const auto& tok : split_tokens(line)) out.push_back(parse_tag<Tag>(tok));
  return out;
}

template <typename Tag>
std::string format_tags(const std::vector<Tag>& tags) {
  std::string out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i) out += ' ';
    out += to_string(tags[i]);
  }
  return out;
}

struct CorpusPaths {
  std::string source;
  std::string mt;
  std::optional<std::string> source_tags;
  std::optional<std::string> mt_tags;
  std::optional<std::string> pe;
};

inline std::vector<Tokens> read_tokenized(const std::string& path) {
  std::vector<Tokens> out;
  for (const auto& l : read_lines(path)) out.push_back(split_tokens(l));
  return out;
}

// Sentence ids are the 0-based line numbers. Tag files are optional; when both
// are given the entry carries original tags.
inline QECorpus parse_qe_corpus(const CorpusPaths& paths) {
  auto src = read_tokenized(paths.source);
  auto mt = read_tokenized(paths.mt);
  if (src.size() != mt.size()) throw LengthMismatch("mt lines", src.size(), mt.size());
  std::optional<std::vector<Tokens>> pe;
  if (paths.pe) {
    pe = read_tokenized(*paths.pe);
    if (pe->size() != src.size()) throw LengthMismatch("pe lines", src.size(), pe->size());
  }
  std::optional<std::vector<std::string>> stags, mtags;
  if (paths.source_tags) {
    stags = read_lines(*paths.source_tags);
    if (stags->size() != src.size()) throw LengthMismatch("source tag lines", src.size(), stags->size());
  }
  if (paths.mt_tags) {
    mtags = read_lines(*paths.mt_tags);
    if (mtags->size() != src.size()) throw LengthMismatch("mt tag lines", src.size(), mtags->size());
  }

  QECorpus corpus;
  corpus.entries.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    QEEntry e;
    e.pair.id = std::to_string(i);
    e.pair.source = std::move(src[i]);
    e.pair.mt = std::move(mt[i]);
    if (pe) e.pair.pe = std::move((*pe)[i]);
    try {
      validate_pair(e.pair);
    } catch (const InvalidSentence& err) {
      throw InvalidSentence("line " + std::to_string(i + 1) + ": " + err.what());
    }
    if (stags && mtags) {
      OriginalTags tags;
      tags.source = parse_tag_line<OriginalTag>((*stags)[i]);
      if (tags.source.size() != e.pair.m())
        throw TagCountMismatch(*paths.source_tags, i + 1, e.pair.m(), tags.source.size());
      auto seq = parse_tag_line<OriginalTag>((*mtags)[i]);
      if (seq.size() != 2 * e.pair.n() + 1)
        throw TagCountMismatch(*paths.mt_tags, i + 1, 2 * e.pair.n() + 1, seq.size());
      std::tie(tags.mt_words, tags.gaps) = deinterleave_mt(seq);
      e.original = std::move(tags);
    }
    corpus.entries.push_back(std::move(e));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Pharaoh and source-gap formats

namespace detail {

inline std::optional<std::size_t> parse_index(std::string_view s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  std::size_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

inline std::vector<IndexPair> parse_pairs(std::string_view line, std::string_view second_prefix) {
  std::set<IndexPair> pairs;
  std::size_t pos = 0;
  for (const auto& tok : split_tokens(line)) {
    auto dash = tok.find('-');
    std::optional<std::size_t> a, b;
    if (dash != std::string::npos) {
      a = parse_index(std::string_view(tok).substr(0, dash));
      auto rest = std::string_view(tok).substr(dash + 1);
      if (rest.substr(0, second_prefix.size()) == second_prefix)
        b = parse_index(rest.substr(second_prefix.size()));
    }
    if (!a || !b) throw MalformedToken(pos, tok);
    pairs.emplace(*a, *b);
    ++pos;
  }
  return {pairs.begin(), pairs.end()};
}

inline std::string format_pairs(const std::vector<IndexPair>& pairs, std::string_view second_prefix) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(pairs[i].first);
    out += '-';
    out += second_prefix;
    out += std::to_string(pairs[i].second);
  }
  return out;
}

}  // namespace detail

// "0-0 1-2" -> {(0,0),(1,2)}; duplicates collapse, result sorted.
inline std::vector<IndexPair> parse_pharaoh(std::string_view line) { return detail::parse_pairs(line, ""); }

// "3-g5" -> {(3,5)}.
inline std::vector<IndexPair> parse_source_gap(std::string_view line) { return detail::parse_pairs(line, "g"); }

inline std::string format_pharaoh(const std::vector<IndexPair>& pairs) { return detail::format_pairs(pairs, ""); }
inline std::string format_source_gap(const std::vector<IndexPair>& pairs) { return detail::format_pairs(pairs, "g"); }

inline std::vector<std::vector<IndexPair>> read_pharaoh_file(const std::string& path) {
  std::vector<std::vector<IndexPair>> out;
  std::size_t line_no = 0;
  for (const auto& l : read_lines(path)) {
    ++line_no;
    try {
      out.push_back(parse_pharaoh(l));
    } catch (const MalformedToken& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<std::vector<IndexPair>> read_source_gap_file(const std::string& path) {
  std::vector<std::vector<IndexPair>> out;
  std::size_t line_no = 0;
  for (const auto& l : read_lines(path)) {
    ++line_no;
    try {
      out.push_back(parse_source_gap(l));
    } catch (const MalformedToken& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// Gold correspondences from index pairs carry probability 1.
inline CorrespondenceSet correspondences_from_pairs(const std::vector<IndexPair>& words,
                                                    const std::vector<IndexPair>& gaps) {
  CorrespondenceSet cs;
  for (auto [i, j] : words) cs.add(AlignmentLink::make(i, j, 1.0, 1.0));
  for (auto [i, k] : gaps) cs.add(SourceGapLink{i, k, 1.0});
  return cs;
}

// ---------------------------------------------------------------------------
// Refined JSON lines
//
// Required keys: id, source_tags, mt_word_tags, gap_tags, alignment, source_gap.
// The token arrays and link probabilities are written as well so that reading
// a file back reproduces the corpus exactly.

namespace detail {

template <typename Tag>
nlohmann::json tags_json(const std::vector<Tag>& tags) {
  auto arr = nlohmann::json::array();
  for (auto t : tags) arr.push_back(std::string(to_string(t)));
  return arr;
}

template <typename Tag>
std::vector<Tag> tags_from_json(const nlohmann::json& arr) {
  std::vector<Tag> out;
  for (const auto& v : arr) out.push_back(parse_tag<Tag>(v.get<std::string>()));
  return out;
}

}  // namespace detail

inline nlohmann::json refined_entry_json(const QEEntry& e) {
  using nlohmann::json;
  if (!e.refined) throw Error("entry " + e.pair.id + " has no refined tags");
  json j = json::object();
  j["id"] = e.pair.id;
  j["source"] = e.pair.source;
  j["mt"] = e.pair.mt;
  j["source_tags"] = detail::tags_json(e.refined->source);
  j["mt_word_tags"] = detail::tags_json(e.refined->mt_words);
  j["gap_tags"] = detail::tags_json(e.refined->gaps);
  json align = json::array(), align_probs = json::array(), gaps = json::array(), gap_probs = json::array();
  if (e.correspondences) {
    for (const auto& l : e.correspondences->word_links()) {
      align.push_back({l.src, l.mt});
      align_probs.push_back({l.fwd_prob, l.bwd_prob});
    }
    for (const auto& l : e.correspondences->gap_links()) {
      gaps.push_back({l.src, l.gap});
      gap_probs.push_back(l.prob);
    }
  }
  j["alignment"] = std::move(align);
  j["alignment_probs"] = std::move(align_probs);
  j["source_gap"] = std::move(gaps);
  j["source_gap_probs"] = std::move(gap_probs);
  return j;
}

inline QEEntry refined_entry_from_json(const nlohmann::json& j) {
  QEEntry e;
  e.pair.id = j.at("id").get<std::string>();
  if (j.contains("source")) e.pair.source = j.at("source").get<Tokens>();
  if (j.contains("mt")) e.pair.mt = j.at("mt").get<Tokens>();
  RefinedTags tags;
  tags.source = detail::tags_from_json<RefinedTag>(j.at("source_tags"));
  tags.mt_words = detail::tags_from_json<RefinedTag>(j.at("mt_word_tags"));
  tags.gaps = detail::tags_from_json<RefinedTag>(j.at("gap_tags"));
  e.refined = std::move(tags);

  CorrespondenceSet cs;
  const auto& align = j.at("alignment");
  const auto* align_probs = j.contains("alignment_probs") ? &j.at("alignment_probs") : nullptr;
  for (std::size_t k = 0; k < align.size(); ++k) {
    double f = 1.0, b = 1.0;
    if (align_probs) {
      f = align_probs->at(k).at(0).get<double>();
      b = align_probs->at(k).at(1).get<double>();
    }
    cs.add(AlignmentLink::make(align[k].at(0).get<std::size_t>(), align[k].at(1).get<std::size_t>(), f, b));
  }
  const auto& gaps = j.at("source_gap");
  const auto* gap_probs = j.contains("source_gap_probs") ? &j.at("source_gap_probs") : nullptr;
  for (std::size_t k = 0; k < gaps.size(); ++k) {
    double p = gap_probs ? gap_probs->at(k).get<double>() : 1.0;
    cs.add(SourceGapLink{gaps[k].at(0).get<std::size_t>(), gaps[k].at(1).get<std::size_t>(), p});
  }
  e.correspondences = std::move(cs);
  return e;
}

inline void write_refined_jsonl(const QECorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write '" + path + "'");
  for (const auto& e : corpus.entries) out << refined_entry_json(e).dump() << '\n';
  if (!out) throw IOFailure("write failed for '" + path + "'");
}

inline QECorpus read_refined_jsonl(const std::string& path) {
  QECorpus corpus;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (split_tokens(line).empty()) continue;
    try {
      corpus.entries.push_back(refined_entry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Tag degeneration: OK stays OK, every operation tag becomes BAD.

inline OriginalTag degenerate(RefinedTag t) { return t == RefinedTag::OK ? OriginalTag::OK : OriginalTag::BAD; }

inline std::vector<OriginalTag> degenerate(const std::vector<RefinedTag>& tags) {
  std::vector<OriginalTag> out;
  out.reserve(tags.size());
  for (auto t : tags) out.push_back(degenerate(t));
  return out;
}

inline OriginalTags degenerate_tags(const RefinedTags& refined) {
  return {degenerate(refined.source), degenerate(refined.mt_words), degenerate(refined.gaps)};
}

// ---------------------------------------------------------------------------
// Pseudo source-gap data

struct DroppedWord {
  std::size_t pe_index = 0;
  Token token;
  std::vector<std::size_t> source_indices;

  friend bool operator==(const DroppedWord&, const DroppedWord&) = default;
};

struct GapPseudoExample {
  SentencePair pair;  // mt is the reduced PE
  std::vector<SourceGapLink> gold_gap_links;
  std::vector<DroppedWord> dropped;

  friend bool operator==(const GapPseudoExample&, const GapPseudoExample&) = default;
};

inline constexpr double kDefaultDropRate = 0.15;

// Uniform double in [0,1) from the top 53 bits; identical on every platform,
// unlike the standard distributions.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Each PE word aligned to at least one source word is dropped independently
// with probability drop_rate. Returns nullopt when nothing was dropped or when
// every PE word would be dropped. Throws NoAlignedWords when no PE word has an
// aligned source word.
inline std::optional<GapPseudoExample> generate_gap_pseudo(const SentencePair& pair,
                                                           const std::vector<IndexPair>& source_pe_alignment,
                                                           double drop_rate, std::uint64_t seed) {
  if (!pair.pe) throw Error("pseudo gap generation needs a PE sentence");
  if (!(drop_rate > 0.0 && drop_rate < 1.0)) throw Error("drop_rate must lie in (0,1)");
  const Tokens& pe = *pair.pe;

  std::vector<std::vector<std::size_t>> sources_of(pe.size());
  for (auto [s, p] : source_pe_alignment) {
    if (s >= pair.m()) throw IndexOutOfRange("source-PE source", s, pair.m());
    if (p >= pe.size()) throw IndexOutOfRange("source-PE target", p, pe.size());
    sources_of[p].push_back(s);
  }
  bool any_aligned = false;
  for (auto& v : sources_of) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    any_aligned = any_aligned || !v.empty();
  }
  if (!any_aligned) throw NoAlignedWords("sentence " + pair.id + " has no aligned PE words");

  std::mt19937_64 rng(seed);
  GapPseudoExample ex;
  ex.pair.id = pair.id;
  ex.pair.source = pair.source;
  std::set<std::pair<std::size_t, std::size_t>> links;
  for (std::size_t p = 0; p < pe.size(); ++p) {
    if (sources_of[p].empty()) {
      ex.pair.mt.push_back(pe[p]);
      continue;
    }
    if (uniform01(rng) < drop_rate) {
      // Gap index in the reduced sentence = number of words kept so far, so
      // adjacent drops land in the same gap.
      std::size_t gap = ex.pair.mt.size();
      for (auto s : sources_of[p]) links.emplace(s, gap);
      ex.dropped.push_back({p, pe[p], sources_of[p]});
    } else {
      ex.pair.mt.push_back(pe[p]);
    }
  }
  if (ex.dropped.empty() || ex.pair.mt.empty()) return std::nullopt;
  for (auto [s, g] : links) ex.gold_gap_links.push_back({s, g, 1.0});
  return ex;
}

// Gap of each dropped word in the reduced sentence.
inline std::vector<std::size_t> dropped_gaps(const GapPseudoExample& ex) {
  std::vector<std::size_t> gaps;
  gaps.reserve(ex.dropped.size());
  for (std::size_t d = 0; d < ex.dropped.size(); ++d) gaps.push_back(ex.dropped[d].pe_index - d);
  return gaps;
}

// Re-inserts the dropped words at their gaps; the result equals the original PE.
inline Tokens reinsert_dropped(const GapPseudoExample& ex) {
  auto gaps = dropped_gaps(ex);
  Tokens out;
  std::size_t d = 0;
  for (std::size_t k = 0; k <= ex.pair.mt.size(); ++k) {
    while (d < ex.dropped.size() && gaps[d] == k) out.push_back(ex.dropped[d++].token);
    if (k < ex.pair.mt.size()) out.push_back(ex.pair.mt[k]);
  }
  return out;
}

// Corpus-level generation. Entry i uses seed ^ i, so the output does not depend
// on processing order. Unusable sentences are skipped.
inline std::vector<GapPseudoExample> generate_gap_pseudo_corpus(const QECorpus& corpus, double drop_rate,
                                                                std::uint64_t seed) {
  std::vector<GapPseudoExample> out;
  for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
    const auto& e = corpus.entries[i];
    if (!e.pair.pe || !e.source_pe_alignment) continue;
    try {
      if (auto ex = generate_gap_pseudo(e.pair, *e.source_pe_alignment, drop_rate, seed ^ i)) out.push_back(std::move(*ex));
    } catch (const NoAlignedWords&) {
    }
  }
  return out;
}

}  // namespace qeref
