#pragma once

// Refinement of original OK/BAD tags into OK/REP/INS/DEL using extended word
// alignment, and gap tags from source-gap correspondences.

#include <vector>

#include "qeref/core.hpp"

namespace qeref {

namespace detail {

inline void check_links(const OriginalTags& tags, const std::vector<AlignmentLink>& links) {
  for (const auto& l : links) {
    if (l.src >= tags.source.size()) throw IndexOutOfRange("alignment source", l.src, tags.source.size());
    if (l.mt >= tags.mt_words.size()) throw IndexOutOfRange("alignment mt", l.mt, tags.mt_words.size());
  }
}

}  // namespace detail

// An OK word linked to an originally BAD word becomes BAD. One step only: a
// word flipped here does not flip its own other partners.
inline OriginalTags propagate_bad(const OriginalTags& original, const std::vector<AlignmentLink>& links) {
  detail::check_links(original, links);
  OriginalTags out = original;
  for (const auto& l : links) {
    if (original.source[l.src] == OriginalTag::BAD || original.mt_words[l.mt] == OriginalTag::BAD) {
      out.source[l.src] = OriginalTag::BAD;
      out.mt_words[l.mt] = OriginalTag::BAD;
    }
  }
  return out;
}

// After propagation: a BAD word with a link is REP, a null-aligned BAD source
// word is INS, a null-aligned BAD MT word is DEL, everything else OK. Gap tags
// come back OK (see assign_gap_tags).
inline RefinedTags refine_word_tags(const OriginalTags& original, const std::vector<AlignmentLink>& links) {
  const OriginalTags bad = propagate_bad(original, links);
  std::vector<bool> src_linked(original.source.size(), false), mt_linked(original.mt_words.size(), false);
  for (const auto& l : links) {
    src_linked[l.src] = true;
    mt_linked[l.mt] = true;
  }
  RefinedTags out;
  out.source.reserve(bad.source.size());
  for (std::size_t i = 0; i < bad.source.size(); ++i) {
    if (bad.source[i] == OriginalTag::OK) out.source.push_back(RefinedTag::OK);
    else out.source.push_back(src_linked[i] ? RefinedTag::REP : RefinedTag::INS);
  }
  out.mt_words.reserve(bad.mt_words.size());
  for (std::size_t j = 0; j < bad.mt_words.size(); ++j) {
    if (bad.mt_words[j] == OriginalTag::OK) out.mt_words.push_back(RefinedTag::OK);
    else out.mt_words.push_back(mt_linked[j] ? RefinedTag::REP : RefinedTag::DEL);
  }
  out.gaps.assign(original.mt_words.size() + 1, RefinedTag::OK);
  return out;
}

// Gap k is INS iff some source word links to it. Source tags are untouched.
inline std::vector<RefinedTag> assign_gap_tags(const std::vector<SourceGapLink>& gap_links, std::size_t n) {
  std::vector<RefinedTag> gaps(n + 1, RefinedTag::OK);
  for (const auto& l : gap_links) {
    if (l.gap > n) throw IndexOutOfRange("gap", l.gap, n + 1);
    gaps[l.gap] = RefinedTag::INS;
  }
  return gaps;
}

// Word refinement and gap assignment are independent passes.
inline RefinedTags refine(const OriginalTags& original, const CorrespondenceSet& correspondences) {
  RefinedTags out = refine_word_tags(original, correspondences.word_links());
  out.gaps = assign_gap_tags(correspondences.gap_links(), original.mt_words.size());
  return out;
}

}  // namespace qeref
