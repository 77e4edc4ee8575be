#pragma once

// Metrics: MCC over binary confusion counts, one-vs-rest P/R/F1, the
// reference-weighted mean F1 over refined tags, correspondence P/R/F1 and
// ROC/AUC.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qeref/core.hpp"

namespace qeref {

// BAD is the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  void add(OriginalTag pred, OriginalTag ref) {
    const bool p = pred == OriginalTag::BAD, r = ref == OriginalTag::BAD;
    if (p && r) ++tp;
    else if (p) ++fp;
    else if (r) ++fn;
    else ++tn;
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(const std::vector<OriginalTag>& pred, const std::vector<OriginalTag>& ref) {
  if (pred.size() != ref.size()) throw LengthMismatch("predicted tags", ref.size(), pred.size());
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) c.add(pred[i], ref[i]);
  return c;
}

// Zero whenever a margin of the confusion matrix is empty.
inline double mcc(const ConfusionCounts& c) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

// ---------------------------------------------------------------------------
// Per-class scores

template <typename Tag>
struct ClassScore {
  Tag cls{};
  std::size_t tp = 0;
  std::size_t pred_count = 0;
  std::size_t ref_count = 0;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> f1;  // undefined when the class occurs in neither sequence
};

// One-vs-rest scores. Precision is 0 for a class that is never predicted,
// recall 0 for a class absent from the reference.
template <typename Tag>
std::vector<ClassScore<Tag>> per_class_prf(const std::vector<Tag>& pred, const std::vector<Tag>& ref,
                                           const std::vector<Tag>& classes) {
  if (pred.size() != ref.size()) throw LengthMismatch("predicted tags", ref.size(), pred.size());
  std::vector<ClassScore<Tag>> out;
  for (Tag c : classes) {
    ClassScore<Tag> s;
    s.cls = c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      s.pred_count += pred[i] == c;
      s.ref_count += ref[i] == c;
      s.tp += pred[i] == c && ref[i] == c;
    }
    if (s.pred_count) s.precision = static_cast<double>(s.tp) / static_cast<double>(s.pred_count);
    if (s.ref_count) s.recall = static_cast<double>(s.tp) / static_cast<double>(s.ref_count);
    if (s.pred_count || s.ref_count)
      s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    out.push_back(s);
  }
  return out;
}

// sum_c (ref share of c) * F1_c.
template <typename Tag>
double weighted_mean_f1(const std::vector<Tag>& pred, const std::vector<Tag>& ref, const std::vector<Tag>& classes) {
  auto scores = per_class_prf(pred, ref, classes);
  if (ref.empty()) return 1.0;
  double total = 0.0;
  for (const auto& s : scores)
    if (s.ref_count) total += static_cast<double>(s.ref_count) / static_cast<double>(ref.size()) * *s.f1;
  return total;
}

enum class Side { Source, Mt };

inline std::string_view to_string(Side s) { return s == Side::Source ? "source" : "mt"; }

inline const std::vector<RefinedTag>& refined_classes(Side side) {
  static const std::vector<RefinedTag> source{RefinedTag::OK, RefinedTag::REP, RefinedTag::INS};
  static const std::vector<RefinedTag> mt{RefinedTag::OK, RefinedTag::REP, RefinedTag::DEL, RefinedTag::INS};
  return side == Side::Source ? source : mt;
}

// The sequence a side is scored over: source words, or the interleaved MT
// sequence g_0, t_0, g_1, ..., t_{n-1}, g_n.
template <typename Tag>
std::vector<Tag> side_sequence(const TagAssignment<Tag>& tags, Side side) {
  return side == Side::Source ? tags.source : interleave_mt(tags);
}

inline double weighted_mean_f1(const RefinedTags& pred, const RefinedTags& ref, Side side) {
  return weighted_mean_f1(side_sequence(pred, side), side_sequence(ref, side), refined_classes(side));
}

// ---------------------------------------------------------------------------
// Correspondences

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline PRF prf_from_counts(std::size_t correct, std::size_t predicted, std::size_t gold) {
  if (predicted == 0 && gold == 0) return {1.0, 1.0, 1.0};
  PRF r;
  r.precision = predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0;
  r.recall = gold ? static_cast<double>(correct) / static_cast<double>(gold) : 1.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

struct LinkCounts {
  std::size_t correct = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  LinkCounts& operator+=(const LinkCounts& o) {
    correct += o.correct;
    predicted += o.predicted;
    gold += o.gold;
    return *this;
  }
  PRF prf() const { return prf_from_counts(correct, predicted, gold); }
};

// Word links and gap links are scored jointly as one unweighted union.
inline LinkCounts link_counts(const CorrespondenceSet& pred, const CorrespondenceSet& gold) {
  auto count = [](std::vector<IndexPair> p, std::vector<IndexPair> g) {
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
    std::vector<IndexPair> both;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(both));
    return LinkCounts{both.size(), p.size(), g.size()};
  };
  LinkCounts c = count(index_pairs(pred.word_links()), index_pairs(gold.word_links()));
  c += count(index_pairs(pred.gap_links()), index_pairs(gold.gap_links()));
  return c;
}

// Empty prediction and empty gold score 1/1/1; an empty prediction against a
// non-empty gold scores 0/0/0.
inline PRF alignment_prf(const CorrespondenceSet& pred, const CorrespondenceSet& gold) {
  return link_counts(pred, gold).prf();
}

// ---------------------------------------------------------------------------
// ROC / AUC

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // predict BAD iff prob >= threshold; +inf for the origin
};

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Sweeps every distinct probability from high to low; tied scores move the
// curve diagonally, which makes the trapezoidal area equal the Mann-Whitney
// statistic with ties counted 1/2.
inline RocResult roc_auc(const std::vector<double>& probs, const std::vector<OriginalTag>& labels) {
  if (probs.size() != labels.size()) throw LengthMismatch("labels", probs.size(), labels.size());
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), OriginalTag::BAD));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw DegenerateLabels("ROC needs both OK and BAD labels");

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

  RocResult r;
  r.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double thr = probs[order[k]];
    while (k < order.size() && probs[order[k]] == thr) {
      (labels[order[k]] == OriginalTag::BAD ? tp : fp)++;
      ++k;
    }
    RocPoint p{static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos), thr};
    const auto& prev = r.points.back();
    r.auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
    r.points.push_back(p);
  }
  return r;
}

inline std::string roc_csv(const RocResult& roc) {
  std::ostringstream out;
  out.precision(17);
  out << "fpr,tpr,threshold\n";
  for (const auto& p : roc.points) {
    out << p.fpr << ',' << p.tpr << ',';
    if (std::isinf(p.threshold)) out << "inf";
    else out << p.threshold;
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Report

struct OriginalSideEval {
  ConfusionCounts counts;
  double mcc = 0.0;
  std::optional<RocResult> roc;
};

struct RefinedSideEval {
  std::vector<ClassScore<RefinedTag>> classes;
  double weighted_f1 = 0.0;
};

struct EvalReport {
  std::size_t sentences = 0;
  std::optional<double> threshold;
  std::optional<OriginalSideEval> source_original;
  std::optional<OriginalSideEval> mt_words_original;
  std::optional<OriginalSideEval> mt_original;  // words and gaps, interleaved
  std::optional<RefinedSideEval> source_refined;
  std::optional<RefinedSideEval> mt_refined;
  std::optional<PRF> correspondences;
};

inline RefinedSideEval evaluate_refined_side(const std::vector<RefinedTag>& pred, const std::vector<RefinedTag>& ref,
                                             Side side) {
  return {per_class_prf(pred, ref, refined_classes(side)), weighted_mean_f1(pred, ref, refined_classes(side))};
}

namespace detail {

inline nlohmann::json original_json(const OriginalSideEval& e) {
  nlohmann::json j{{"tp", e.counts.tp}, {"fp", e.counts.fp}, {"tn", e.counts.tn}, {"fn", e.counts.fn}, {"mcc", e.mcc}};
  if (e.roc) j["auc"] = e.roc->auc;
  return j;
}

inline nlohmann::json refined_json(const RefinedSideEval& e) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& c : e.classes) {
    nlohmann::json cj{{"precision", c.precision}, {"recall", c.recall}, {"ref_count", c.ref_count},
                      {"pred_count", c.pred_count}};
    cj["f1"] = c.f1 ? nlohmann::json(*c.f1) : nlohmann::json(nullptr);
    classes[std::string(to_string(c.cls))] = std::move(cj);
  }
  return {{"weighted_mean_f1", e.weighted_f1}, {"classes", std::move(classes)}};
}

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = nlohmann::json::object();
  j["sentences"] = r.sentences;
  if (r.threshold) j["threshold"] = *r.threshold;
  nlohmann::json orig = nlohmann::json::object();
  if (r.source_original) orig["source"] = detail::original_json(*r.source_original);
  if (r.mt_words_original) orig["mt_words"] = detail::original_json(*r.mt_words_original);
  if (r.mt_original) orig["mt"] = detail::original_json(*r.mt_original);
  if (!orig.empty()) j["original"] = std::move(orig);
  nlohmann::json ref = nlohmann::json::object();
  if (r.source_refined) ref["source"] = detail::refined_json(*r.source_refined);
  if (r.mt_refined) ref["mt"] = detail::refined_json(*r.mt_refined);
  if (!ref.empty()) j["refined"] = std::move(ref);
  if (r.correspondences)
    j["correspondences"] = {{"precision", r.correspondences->precision},
                            {"recall", r.correspondences->recall},
                            {"f1", r.correspondences->f1}};
  return j;
}

// Aligned-column text rendering of the report.
inline std::string to_table(const EvalReport& r) {
  std::vector<std::vector<std::string>> rows{{"metric", "value"}};
  rows.push_back({"sentences", std::to_string(r.sentences)});
  if (r.threshold) rows.push_back({"threshold", detail::fmt4(*r.threshold)});
  auto orig = [&](const char* name, const std::optional<OriginalSideEval>& e) {
    if (!e) return;
    rows.push_back({std::string(name) + " MCC", detail::fmt4(e->mcc)});
    if (e->roc) rows.push_back({std::string(name) + " AUC", detail::fmt4(e->roc->auc)});
  };
  orig("source", r.source_original);
  orig("mt words", r.mt_words_original);
  orig("mt (words+gaps)", r.mt_original);
  auto refined = [&](const char* name, const std::optional<RefinedSideEval>& e) {
    if (!e) return;
    rows.push_back({std::string(name) + " weighted mean F1", detail::fmt4(e->weighted_f1)});
    for (const auto& c : e->classes)
      rows.push_back({std::string(name) + " F1 " + std::string(to_string(c.cls)), c.f1 ? detail::fmt4(*c.f1) : "-"});
  };
  refined("source", r.source_refined);
  refined("mt", r.mt_refined);
  if (r.correspondences) {
    rows.push_back({"correspondence P", detail::fmt4(r.correspondences->precision)});
    rows.push_back({"correspondence R", detail::fmt4(r.correspondences->recall)});
    rows.push_back({"correspondence F1", detail::fmt4(r.correspondences->f1)});
  }
  std::size_t width = 0;
  for (const auto& row : rows) width = std::max(width, row[0].size());
  std::string out;
  for (const auto& row : rows) {
    out += row[0];
    out.append(width - row[0].size() + 2, ' ');
    out += row[1];
    out += '\n';
  }
  return out;
}

}  // namespace qeref
