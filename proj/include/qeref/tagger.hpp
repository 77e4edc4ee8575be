#pragma once

// Original OK/BAD tag prediction as regression: every word gets a probability
// of being BAD, a threshold turns probabilities into tags, and the threshold
// itself is tuned on a development set to maximize source MCC + MT MCC.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qeref/align.hpp"
#include "qeref/core.hpp"
#include "qeref/corpus.hpp"
#include "qeref/eval.hpp"
#include "qeref/parallel.hpp"

namespace qeref {

inline constexpr double kProbEpsilon = 1e-12;

struct TagProbabilities {
  std::vector<double> source;    // p(BAD) per source word
  std::vector<double> mt_words;  // p(BAD) per MT word

  void validate(const SentencePair& pair) const {
    if (source.size() != pair.m()) throw LengthMismatch("source_probs", pair.m(), source.size());
    if (mt_words.size() != pair.n()) throw LengthMismatch("mt_word_probs", pair.n(), mt_words.size());
    for (const auto* v : {&source, &mt_words})
      for (double p : *v)
        if (!(p >= 0.0 && p <= 1.0)) throw Error("tag probability outside [0,1]");
  }

  friend bool operator==(const TagProbabilities&, const TagProbabilities&) = default;
};

// Mean binary cross entropy over the m + n word tags (gaps excluded), BAD = 1.
// Probabilities are clamped to [1e-12, 1 - 1e-12].
inline double tag_bce_loss(const TagProbabilities& probs, const OriginalTags& refs) {
  if (probs.source.size() != refs.source.size())
    throw LengthMismatch("source_probs", refs.source.size(), probs.source.size());
  if (probs.mt_words.size() != refs.mt_words.size())
    throw LengthMismatch("mt_word_probs", refs.mt_words.size(), probs.mt_words.size());
  auto term = [](double p, OriginalTag y) {
    p = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
    return y == OriginalTag::BAD ? -std::log(p) : -std::log(1.0 - p);
  };
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.source.size(); ++i) sum += term(probs.source[i], refs.source[i]);
  for (std::size_t j = 0; j < probs.mt_words.size(); ++j) sum += term(probs.mt_words[j], refs.mt_words[j]);
  const auto count = probs.source.size() + probs.mt_words.size();
  return count ? sum / static_cast<double>(count) : 0.0;
}

// BAD iff prob > tau. Gap tags come back OK; the caller owns the gap policy.
inline OriginalTags apply_threshold(const TagProbabilities& probs, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error("threshold must lie in [0,1]");
  auto cut = [tau](const std::vector<double>& v) {
    std::vector<OriginalTag> out;
    out.reserve(v.size());
    for (double p : v) out.push_back(p > tau ? OriginalTag::BAD : OriginalTag::OK);
    return out;
  };
  return {cut(probs.source), cut(probs.mt_words), std::vector<OriginalTag>(probs.mt_words.size() + 1, OriginalTag::OK)};
}

// ---------------------------------------------------------------------------
// Threshold search

struct ThresholdResult {
  double tau = 0.5;
  double objective = 0.0;  // source MCC + MT word MCC
  double source_mcc = 0.0;
  double mt_mcc = 0.0;
  bool degenerate = false;
};

using DevExample = std::pair<TagProbabilities, OriginalTags>;

namespace detail {

// Probabilities sorted ascending with a running count of BAD labels, so the
// confusion counts for any tau are one binary search away.
class SortedSide {
 public:
  void add(double p, OriginalTag y) { items_.emplace_back(p, y == OriginalTag::BAD); }

  void finish() {
    std::sort(items_.begin(), items_.end());
    bad_prefix_.assign(items_.size() + 1, 0);
    for (std::size_t i = 0; i < items_.size(); ++i) bad_prefix_[i + 1] = bad_prefix_[i] + items_[i].second;
  }

  ConfusionCounts counts(double tau) const {
    auto le = static_cast<std::size_t>(
        std::upper_bound(items_.begin(), items_.end(), std::pair(tau, true)) - items_.begin());
    const std::size_t bad_total = bad_prefix_.back(), bad_le = bad_prefix_[le];
    ConfusionCounts c;
    c.fn = bad_le;
    c.tn = le - bad_le;
    c.tp = bad_total - bad_le;
    c.fp = (items_.size() - le) - c.tp;
    return c;
  }

  bool has_both_classes() const {
    return bad_prefix_.back() > 0 && bad_prefix_.back() < items_.size();
  }

  const std::vector<std::pair<double, bool>>& items() const { return items_; }

 private:
  std::vector<std::pair<double, bool>> items_;
  std::vector<std::size_t> bad_prefix_;
};

}  // namespace detail

// Candidates: {0, 1} and the midpoints between consecutive distinct
// probabilities pooled over both sides. Confusion counts are pooled over the
// whole dev set per side. Ties go to the smallest tau. When neither side has
// both labels the search is meaningless: tau = 0.5 with degenerate = true.
inline ThresholdResult optimize_threshold(const std::vector<DevExample>& dev) {
  if (dev.empty()) throw EmptyCorpus();
  detail::SortedSide src, mt;
  std::vector<double> pooled;
  for (const auto& [probs, refs] : dev) {
    if (probs.source.size() != refs.source.size())
      throw LengthMismatch("source_probs", refs.source.size(), probs.source.size());
    if (probs.mt_words.size() != refs.mt_words.size())
      throw LengthMismatch("mt_word_probs", refs.mt_words.size(), probs.mt_words.size());
    for (std::size_t i = 0; i < probs.source.size(); ++i) src.add(probs.source[i], refs.source[i]);
    for (std::size_t j = 0; j < probs.mt_words.size(); ++j) mt.add(probs.mt_words[j], refs.mt_words[j]);
    pooled.insert(pooled.end(), probs.source.begin(), probs.source.end());
    pooled.insert(pooled.end(), probs.mt_words.begin(), probs.mt_words.end());
  }
  src.finish();
  mt.finish();

  ThresholdResult best;
  if (!src.has_both_classes() && !mt.has_both_classes()) {
    best.degenerate = true;
    best.source_mcc = mcc(src.counts(0.5));
    best.mt_mcc = mcc(mt.counts(0.5));
    best.objective = best.source_mcc + best.mt_mcc;
    return best;
  }

  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());
  std::vector<double> candidates{0.0, 1.0};
  for (std::size_t k = 0; k + 1 < pooled.size(); ++k) candidates.push_back((pooled[k] + pooled[k + 1]) / 2.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  bool first = true;
  for (double tau : candidates) {
    const double s = mcc(src.counts(tau)), t = mcc(mt.counts(tau));
    if (first || s + t > best.objective + 1e-12) {
      best = {tau, s + t, s, t, false};
      first = false;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Scorers

struct TagContext {
  const LexTable* lex = nullptr;
  const std::vector<AlignmentLink>* links = nullptr;
};

class TagScorer {
 public:
  virtual ~TagScorer() = default;
  virtual TagProbabilities bad_probabilities(const SentencePair& pair, const TagContext& ctx) const = 0;
};

class MissingTagProbabilities : public Error {
 public:
  explicit MissingTagProbabilities(const std::string& id) : Error("no precomputed tag probabilities for id " + id) {}
};

// JSON lines: {"id": "...", "source_probs": [...], "mt_word_probs": [...]}.
class FileAdapterTagger final : public TagScorer {
 public:
  static FileAdapterTagger load(const std::string& path) {
    std::ifstream probe(path);
    if (!probe) throw IOFailure("tagger adapter file '" + path + "' not found");
    FileAdapterTagger t;
    std::size_t line_no = 0;
    for (const auto& line : read_lines(path)) {
      ++line_no;
      if (split_tokens(line).empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        if (j.contains("header")) continue;
        t.add(j.at("id").get<std::string>(),
              {j.at("source_probs").get<std::vector<double>>(), j.at("mt_word_probs").get<std::vector<double>>()});
      } catch (const std::exception& e) {
        throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return t;
  }

  void add(std::string id, TagProbabilities probs) { entries_[std::move(id)] = std::move(probs); }

  TagProbabilities bad_probabilities(const SentencePair& pair, const TagContext&) const override {
    auto it = entries_.find(pair.id);
    if (it == entries_.end()) throw MissingTagProbabilities(pair.id);
    it->second.validate(pair);
    return it->second;
  }

 private:
  std::map<std::string, TagProbabilities> entries_;
};

inline nlohmann::json tag_probabilities_record(const std::string& id, const TagProbabilities& p) {
  return {{"id", id}, {"source_probs", p.source}, {"mt_word_probs", p.mt_words}};
}

// ---------------------------------------------------------------------------
// Native logistic tagger

inline constexpr std::size_t kFeatureCount = 9;
inline constexpr std::array<const char*, kFeatureCount> kFeatureNames{
    "max_lex_prob", "has_link", "len_1", "len_2_4", "len_5_plus", "rel_position", "freq_oov", "freq_rare", "freq_frequent"};
inline constexpr std::size_t kRareCount = 3;  // seen fewer than 3 times = rare

using FeatureRow = std::array<double, kFeatureCount>;

inline std::size_t utf8_length(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

// Weights act on standardized features (x - mean) / scale; mean and scale come
// from the training corpus.
struct SideWeights {
  double bias = 0.0;
  FeatureRow weights{};
  FeatureRow mean{};
  FeatureRow scale{1, 1, 1, 1, 1, 1, 1, 1, 1};

  FeatureRow standardize(const FeatureRow& x) const {
    FeatureRow out{};
    for (std::size_t k = 0; k < kFeatureCount; ++k) out[k] = (x[k] - mean[k]) / scale[k];
    return out;
  }

  double probability(const FeatureRow& x) const {
    double z = bias;
    const auto u = standardize(x);
    for (std::size_t k = 0; k < kFeatureCount; ++k) z += weights[k] * u[k];
    return 1.0 / (1.0 + std::exp(-z));
  }
  friend bool operator==(const SideWeights&, const SideWeights&) = default;
};

class NativeTagger final : public TagScorer {
 public:
  SideWeights source;
  SideWeights mt;
  std::map<std::string, std::size_t, std::less<>> source_counts;
  std::map<std::string, std::size_t, std::less<>> mt_counts;

  // Feature rows for both sides. Needs a lexical table; links may be absent.
  std::pair<std::vector<FeatureRow>, std::vector<FeatureRow>> features(const SentencePair& pair,
                                                                       const TagContext& ctx) const {
    if (!ctx.lex) throw Error("native tagger needs a lexical table");
    std::vector<bool> src_linked(pair.m(), false), mt_linked(pair.n(), false);
    if (ctx.links)
      for (const auto& l : *ctx.links) {
        src_linked.at(l.src) = true;
        mt_linked.at(l.mt) = true;
      }
    auto side = [&](const Tokens& toks, const Tokens& other, const TranslationTable& table,
                    const std::vector<bool>& linked, const auto& counts) {
      std::vector<FeatureRow> rows;
      rows.reserve(toks.size());
      for (std::size_t i = 0; i < toks.size(); ++i) {
        FeatureRow x{};
        for (const auto& o : other) x[0] = std::max(x[0], table.prob(o, toks[i]));
        x[1] = linked[i] ? 1.0 : 0.0;
        const auto len = utf8_length(toks[i]);
        x[len <= 1 ? 2 : (len <= 4 ? 3 : 4)] = 1.0;
        x[5] = (static_cast<double>(i) + 0.5) / static_cast<double>(toks.size());
        auto it = counts.find(toks[i]);
        const std::size_t c = it == counts.end() ? 0 : it->second;
        x[c == 0 ? 6 : (c < kRareCount ? 7 : 8)] = 1.0;
        rows.push_back(x);
      }
      return rows;
    };
    return {side(pair.source, pair.mt, ctx.lex->forward, src_linked, source_counts),
            side(pair.mt, pair.source, ctx.lex->backward, mt_linked, mt_counts)};
  }

  TagProbabilities bad_probabilities(const SentencePair& pair, const TagContext& ctx) const override {
    auto [fs, fm] = features(pair, ctx);
    TagProbabilities out;
    for (const auto& x : fs) out.source.push_back(source.probability(x));
    for (const auto& x : fm) out.mt_words.push_back(mt.probability(x));
    return out;
  }

  nlohmann::json to_json() const {
    auto side = [](const SideWeights& w) {
      nlohmann::json weights = nlohmann::json::object();
      nlohmann::json mean = nlohmann::json::object(), scale = nlohmann::json::object();
      for (std::size_t k = 0; k < kFeatureCount; ++k) {
        weights[kFeatureNames[k]] = w.weights[k];
        mean[kFeatureNames[k]] = w.mean[k];
        scale[kFeatureNames[k]] = w.scale[k];
      }
      return nlohmann::json{{"bias", w.bias}, {"weights", weights}, {"mean", mean}, {"scale", scale}};
    };
    return {{"features", kFeatureNames},
            {"rare_count", kRareCount},
            {"source", side(source)},
            {"mt", side(mt)},
            {"source_counts", source_counts},
            {"mt_counts", mt_counts}};
  }

  static NativeTagger from_json(const nlohmann::json& j) {
    auto side = [](const nlohmann::json& s) {
      SideWeights w;
      w.bias = s.at("bias").get<double>();
      for (std::size_t k = 0; k < kFeatureCount; ++k) {
        w.weights[k] = s.at("weights").at(kFeatureNames[k]).get<double>();
        w.mean[k] = s.at("mean").at(kFeatureNames[k]).get<double>();
        w.scale[k] = s.at("scale").at(kFeatureNames[k]).get<double>();
        if (!(w.scale[k] > 0.0)) throw Error("tagger feature scale must be positive");
      }
      return w;
    };
    NativeTagger t;
    t.source = side(j.at("source"));
    t.mt = side(j.at("mt"));
    for (const auto& [k, v] : j.at("source_counts").items()) t.source_counts[k] = v.get<std::size_t>();
    for (const auto& [k, v] : j.at("mt_counts").items()) t.mt_counts[k] = v.get<std::size_t>();
    return t;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("cannot write '" + path + "'");
    out << to_json().dump(2) << '\n';
  }

  static NativeTagger load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOFailure("cannot open '" + path + "'");
    return from_json(nlohmann::json::parse(in));
  }

  friend bool operator==(const NativeTagger& a, const NativeTagger& b) {
    return a.source == b.source && a.mt == b.mt && a.source_counts == b.source_counts && a.mt_counts == b.mt_counts;
  }
};

struct TaggerTrainingOptions {
  int epochs = 50;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;  // zero initialization makes training seed-independent
};

// Full-batch gradient descent from all-zero weights. The objective is the
// summed word BCE of a sentence, averaged over sentences. links[i] are the word links of
// entry i (may be empty). When loss_trace is non-null it receives the
// training loss before the first and after every epoch.
inline NativeTagger train_native_tagger(const QECorpus& corpus, const std::vector<std::vector<AlignmentLink>>& links,
                                        const LexTable& lex, const TaggerTrainingOptions& opts = {},
                                        std::vector<double>* loss_trace = nullptr) {
  if (corpus.entries.empty()) throw EmptyCorpus();
  if (links.size() != corpus.size()) throw LengthMismatch("alignment lines", corpus.size(), links.size());
  NativeTagger tagger;
  for (const auto& e : corpus.entries) {
    if (!e.original) throw Error("training entry " + e.pair.id + " has no original tags");
    for (const auto& t : e.pair.source) ++tagger.source_counts[t];
    for (const auto& t : e.pair.mt) ++tagger.mt_counts[t];
  }

  struct Sample {
    FeatureRow x;
    double y;
  };
  std::vector<Sample> src_samples, mt_samples;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& e = corpus.entries[i];
    auto [fs, fm] = tagger.features(e.pair, {&lex, &links[i]});
    for (std::size_t k = 0; k < fs.size(); ++k) src_samples.push_back({fs[k], e.original->source.at(k) == OriginalTag::BAD ? 1.0 : 0.0});
    for (std::size_t k = 0; k < fm.size(); ++k) mt_samples.push_back({fm[k], e.original->mt_words.at(k) == OriginalTag::BAD ? 1.0 : 0.0});
  }

  // Standardize each side; constant features keep scale 1 and end up all zero.
  auto fit_scaling = [](std::vector<Sample>& samples, SideWeights& w) {
    if (samples.empty()) return;
    const double count = static_cast<double>(samples.size());
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      double mean = 0.0, var = 0.0;
      for (const auto& s : samples) mean += s.x[k];
      mean /= count;
      for (const auto& s : samples) var += (s.x[k] - mean) * (s.x[k] - mean);
      const double sd = std::sqrt(var / count);
      w.mean[k] = mean;
      w.scale[k] = sd > 1e-12 ? sd : 1.0;
    }
  };
  fit_scaling(src_samples, tagger.source);
  fit_scaling(mt_samples, tagger.mt);

  const double sentences = static_cast<double>(corpus.size());
  auto side_loss = [&](const std::vector<Sample>& samples, const SideWeights& w) {
    double sum = 0.0;
    for (const auto& s : samples) {
      const double p = std::clamp(w.probability(s.x), kProbEpsilon, 1.0 - kProbEpsilon);
      sum += s.y > 0.5 ? -std::log(p) : -std::log(1.0 - p);
    }
    return sum / sentences;
  };
  auto loss = [&] { return side_loss(src_samples, tagger.source) + side_loss(mt_samples, tagger.mt); };
  auto step = [&](const std::vector<Sample>& samples, SideWeights& w) {
    double gb = 0.0;
    FeatureRow gw{};
    for (const auto& s : samples) {
      const double r = w.probability(s.x) - s.y;
      const auto u = w.standardize(s.x);
      gb += r;
      for (std::size_t k = 0; k < kFeatureCount; ++k) gw[k] += r * u[k];
    }
    w.bias -= opts.learning_rate * gb / sentences;
    for (std::size_t k = 0; k < kFeatureCount; ++k) w.weights[k] -= opts.learning_rate * gw[k] / sentences;
  };

  if (loss_trace) loss_trace->assign(1, loss());
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    step(src_samples, tagger.source);
    step(mt_samples, tagger.mt);
    if (loss_trace) loss_trace->push_back(loss());
  }
  return tagger;
}

inline std::vector<TagProbabilities> score_corpus(const QECorpus& corpus, const TagScorer& scorer, const LexTable* lex,
                                                  const std::vector<std::vector<AlignmentLink>>* links,
                                                  unsigned threads = 1) {
  std::vector<TagProbabilities> out(corpus.size());
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    TagContext ctx{lex, links ? &links->at(i) : nullptr};
    out[i] = scorer.bad_probabilities(corpus.entries[i].pair, ctx);
    out[i].validate(corpus.entries[i].pair);
  });
  return out;
}

}  // namespace qeref
