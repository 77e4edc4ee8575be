#pragma once

// End-to-end driver: align -> tag -> refine -> gapcorr -> eval, configured by a
// small TOML-style file.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qeref/align.hpp"
#include "qeref/core.hpp"
#include "qeref/corpus.hpp"
#include "qeref/eval.hpp"
#include "qeref/gapcorr.hpp"
#include "qeref/refine.hpp"
#include "qeref/tagger.hpp"

namespace qeref {

inline constexpr std::string_view kVersion = "0.3.0";

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A failure inside one pipeline stage; the CLI maps it to exit code 2.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Config
//
// Subset of TOML: [section] headers, key = value lines, # comments. Values are
// double-quoted strings, numbers or true/false. Keys are flattened to
// "section.key".

class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config c;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto where = [&] { return origin + ":" + std::to_string(line_no) + ": "; };
      line = strip_comment(line);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) throw ConfigError(where() + "bad section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where() + "expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError(where() + "empty key");
      c.values_[section.empty() ? key : section + "." + key] = parse_value(trim(line.substr(eq + 1)), where());
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("config file '" + path + "' not found");
    std::stringstream ss;
    ss << in.rdbuf();
    Config c = parse(ss.str(), path);
    c.base_dir_ = std::filesystem::absolute(path).parent_path().string();
    return c;
  }

  // "section.key=value" from the command line; the value uses config syntax
  // but bare words are taken as strings.
  void set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = trim(assignment.substr(0, eq)), raw = trim(assignment.substr(eq + 1));
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    try {
      values_[key] = parse_value(raw, "");
    } catch (const ConfigError&) {
      values_[key] = raw;
    }
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      double d = std::stod(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " must be a number, got '" + *v + "'");
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      long long n = std::stoll(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      return n;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " must be an integer, got '" + *v + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true") return true;
    if (*v == "false") return false;
    throw ConfigError("config key " + key + " must be true or false, got '" + *v + "'");
  }

  // Relative paths are resolved against the config file's directory.
  std::optional<std::string> get_path(const std::string& key) const {
    auto v = get(key);
    if (!v || v->empty()) return std::nullopt;
    return resolve(*v);
  }

  std::string resolve(const std::string& p) const {
    std::filesystem::path path(p);
    if (path.is_absolute() || base_dir_.empty()) return path.string();
    return (std::filesystem::path(base_dir_) / path).lexically_normal().string();
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  }

  static std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
      if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
  }

  static std::string parse_value(const std::string& raw, const std::string& where) {
    if (raw.empty()) throw ConfigError(where + "missing value");
    if (raw.front() == '"') {
      if (raw.size() < 2 || raw.back() != '"') throw ConfigError(where + "unterminated string");
      std::string out;
      for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
        if (raw[i] == '\\' && i + 2 < raw.size()) {
          const char n = raw[++i];
          out += n == 'n' ? '\n' : (n == 't' ? '\t' : n);
        } else {
          out += raw[i];
        }
      }
      return out;
    }
    if (raw == "true" || raw == "false") return raw;
    char* end = nullptr;
    std::strtod(raw.c_str(), &end);
    if (end && *end == '\0') return raw;
    throw ConfigError(where + "value '" + raw + "' is not a string, number or boolean");
  }

  std::map<std::string, std::string> values_;
  std::string base_dir_;
};

// ---------------------------------------------------------------------------
// Scorer choice: "native" or "adapter:<path>". An adapter path may contain
// "{split}", which expands to train, dev or test.

struct ScorerChoice {
  bool native = true;
  std::string adapter_path;

  static ScorerChoice parse(const std::string& value, const Config& config, const std::string& key) {
    if (value == "native") return {};
    constexpr std::string_view prefix = "adapter:";
    if (value.rfind(prefix, 0) == 0 && value.size() > prefix.size())
      return {false, config.resolve(value.substr(prefix.size()))};
    throw ConfigError("config key " + key + " must be 'native' or 'adapter:<path>', got '" + value + "'");
  }

  std::string path_for(const std::string& split) const {
    std::string p = adapter_path;
    for (auto pos = p.find("{split}"); pos != std::string::npos; pos = p.find("{split}"))
      p.replace(pos, 7, split);
    return p;
  }
};

struct SplitPaths {
  CorpusPaths corpus;
  std::optional<std::string> source_pe_alignment;
  std::optional<std::string> gold_alignment;
  std::optional<std::string> gold_source_gap;
};

struct PipelineOptions {
  std::optional<SplitPaths> train, dev;
  SplitPaths test;

  ScorerChoice align_scorer;
  double align_threshold = kDefaultAlignThreshold;
  int align_iterations = 10;

  ScorerChoice tag_scorer;
  bool optimize_threshold = true;
  double fixed_threshold = 0.5;
  TaggerTrainingOptions tagger;

  ScorerChoice gap_scorer;
  double gap_threshold = kDefaultAlignThreshold;
  int gap_iterations = 10;
  double drop_rate = kDefaultDropRate;

  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool gaps_all_ok = false;
  std::string output_dir = "qeref-out";

  // Settings precedence: config file, then QEREF_SEED, then explicit overrides
  // applied by the caller.
  static PipelineOptions from_config(const Config& c) {
    PipelineOptions o;
    auto split = [&](const std::string& name) -> std::optional<SplitPaths> {
      auto src = c.get_path(name + ".source");
      auto mt = c.get_path(name + ".mt");
      if (!src && !mt) return std::nullopt;
      if (!src || !mt) throw ConfigError("split [" + name + "] needs both source and mt");
      SplitPaths s;
      s.corpus = {*src, *mt, c.get_path(name + ".source_tags"), c.get_path(name + ".mt_tags"), c.get_path(name + ".pe")};
      s.source_pe_alignment = c.get_path(name + ".source_pe_alignment");
      s.gold_alignment = c.get_path(name + ".gold_alignment");
      s.gold_source_gap = c.get_path(name + ".gold_source_gap");
      return s;
    };
    o.train = split("train");
    o.dev = split("dev");
    auto test = split("test");
    if (!test) throw ConfigError("config needs a [test] split with source and mt");
    o.test = *test;

    o.align_scorer = ScorerChoice::parse(c.get_string("align.scorer", "native"), c, "align.scorer");
    o.align_threshold = c.get_double("align.threshold", o.align_threshold);
    o.align_iterations = static_cast<int>(c.get_int("align.iterations", o.align_iterations));

    o.tag_scorer = ScorerChoice::parse(c.get_string("tagger.scorer", "native"), c, "tagger.scorer");
    const std::string thr = c.get_string("tagger.threshold", "optimize");
    if (thr == "optimize") {
      o.optimize_threshold = true;
    } else {
      o.optimize_threshold = false;
      o.fixed_threshold = c.get_double("tagger.threshold", 0.5);
      if (!(o.fixed_threshold >= 0.0 && o.fixed_threshold <= 1.0))
        throw ConfigError("tagger.threshold must lie in [0,1] or be 'optimize'");
    }
    o.tagger.epochs = static_cast<int>(c.get_int("tagger.epochs", o.tagger.epochs));
    o.tagger.learning_rate = c.get_double("tagger.learning_rate", o.tagger.learning_rate);

    o.gap_scorer = ScorerChoice::parse(c.get_string("gaps.scorer", "native"), c, "gaps.scorer");
    o.gap_threshold = c.get_double("gaps.threshold", o.gap_threshold);
    o.gap_iterations = static_cast<int>(c.get_int("gaps.iterations", o.gap_iterations));
    o.drop_rate = c.get_double("gaps.drop_rate", o.drop_rate);

    o.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
    if (const char* env = std::getenv("QEREF_SEED"); env && *env) {
      try {
        o.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("QEREF_SEED is not an unsigned integer: '") + env + "'");
      }
    }
    const auto threads = c.get_int("threads", 1);
    if (threads < 1) throw ConfigError("threads must be >= 1");
    o.threads = static_cast<unsigned>(threads);
    o.gaps_all_ok = c.get_bool("gaps_all_ok", false);
    if (auto out = c.get_path("output")) o.output_dir = *out;
    return o;
  }
};

// ---------------------------------------------------------------------------
// Model bundle: what the service needs to analyze new sentences natively.

struct ModelBundle {
  std::optional<LexTable> lex;
  std::optional<NativeTagger> tagger;
  std::optional<TranslationTable> gaps;
  double threshold = 0.5;
  double align_threshold = kDefaultAlignThreshold;
  double gap_threshold = kDefaultAlignThreshold;

  void save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    const std::filesystem::path d(dir);
    if (lex) lex->save((d / "lex").string());
    if (tagger) tagger->save((d / "tagger.json").string());
    if (gaps) gaps->save((d / "gaps.tsv").string());
    nlohmann::json meta{{"version", kVersion},
                        {"threshold", threshold},
                        {"align_threshold", align_threshold},
                        {"gap_threshold", gap_threshold}};
    std::ofstream out(d / "meta.json", std::ios::binary);
    if (!out) throw IOFailure("cannot write bundle metadata in '" + dir + "'");
    out << meta.dump(2) << '\n';
  }

  static ModelBundle load(const std::string& dir) {
    const std::filesystem::path d(dir);
    std::ifstream in(d / "meta.json");
    if (!in) throw IOFailure("model bundle '" + dir + "' has no meta.json");
    auto meta = nlohmann::json::parse(in);
    ModelBundle b;
    b.threshold = meta.at("threshold").get<double>();
    b.align_threshold = meta.value("align_threshold", kDefaultAlignThreshold);
    b.gap_threshold = meta.value("gap_threshold", kDefaultAlignThreshold);
    if (std::filesystem::exists(d / "lex.fwd.tsv")) b.lex = LexTable::load((d / "lex").string());
    if (std::filesystem::exists(d / "tagger.json")) b.tagger = NativeTagger::load((d / "tagger.json").string());
    if (std::filesystem::exists(d / "gaps.tsv")) b.gaps = TranslationTable::load((d / "gaps.tsv").string());
    return b;
  }
};

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineResult {
  QECorpus test;  // refined tags and predicted correspondences filled in
  std::vector<TagProbabilities> probabilities;
  ThresholdResult threshold;
  std::optional<EvalReport> report;
  ModelBundle bundle;
};

namespace detail {

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

inline QECorpus load_split(const SplitPaths& s) {
  QECorpus c = parse_qe_corpus(s.corpus);
  if (s.source_pe_alignment) {
    auto a = read_pharaoh_file(*s.source_pe_alignment);
    if (a.size() != c.size()) throw LengthMismatch("source-PE alignment lines", c.size(), a.size());
    for (std::size_t i = 0; i < c.size(); ++i) c.entries[i].source_pe_alignment = std::move(a[i]);
  }
  return c;
}

inline std::optional<std::vector<CorrespondenceSet>> load_gold_correspondences(const SplitPaths& s, const QECorpus& c) {
  if (!s.gold_alignment) return std::nullopt;
  auto words = read_pharaoh_file(*s.gold_alignment);
  if (words.size() != c.size()) throw LengthMismatch("gold alignment lines", c.size(), words.size());
  std::vector<std::vector<IndexPair>> gaps(c.size());
  if (s.gold_source_gap) {
    gaps = read_source_gap_file(*s.gold_source_gap);
    if (gaps.size() != c.size()) throw LengthMismatch("gold source-gap lines", c.size(), gaps.size());
  }
  std::vector<CorrespondenceSet> out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    out.push_back(correspondences_from_pairs(words[i], gaps[i]));
    out.back().validate(c.entries[i].pair);
  }
  return out;
}

inline void append_side(std::vector<double>& probs, std::vector<OriginalTag>& labels, const std::vector<double>& p,
                        const std::vector<OriginalTag>& y) {
  probs.insert(probs.end(), p.begin(), p.end());
  labels.insert(labels.end(), y.begin(), y.end());
}

inline OriginalSideEval original_side(const std::vector<OriginalTag>& pred, const std::vector<OriginalTag>& gold,
                                      const std::vector<double>* probs) {
  OriginalSideEval e;
  e.counts = confusion(pred, gold);
  e.mcc = mcc(e.counts);
  if (probs) {
    try {
      e.roc = roc_auc(*probs, gold);
    } catch (const DegenerateLabels&) {
    }
  }
  return e;
}

}  // namespace detail

inline EvalReport evaluate_corpus(const QECorpus& predicted, const std::vector<TagProbabilities>& probs,
                                  const QECorpus& gold_tags,
                                  const std::optional<std::vector<CorrespondenceSet>>& gold_links,
                                  std::optional<double> threshold) {
  if (predicted.size() != gold_tags.size()) throw LengthMismatch("gold sentences", predicted.size(), gold_tags.size());
  EvalReport r;
  r.sentences = predicted.size();
  r.threshold = threshold;

  std::vector<OriginalTag> pred_src, gold_src, pred_mtw, gold_mtw, pred_mt, gold_mt;
  std::vector<double> prob_src, prob_mtw;
  std::vector<RefinedTag> rpred_src, rgold_src, rpred_mt, rgold_mt;
  LinkCounts links;
  bool have_original = true;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& e = predicted.entries[i];
    const auto& g = gold_tags.entries[i];
    if (!g.original) {
      have_original = false;
      continue;
    }
    const OriginalTags pred = degenerate_tags(*e.refined);
    // Word tags come from the thresholded probabilities, before refinement.
    const OriginalTags thresholded = apply_threshold(probs[i], *threshold);
    detail::append_side(prob_src, gold_src, probs[i].source, g.original->source);
    detail::append_side(prob_mtw, gold_mtw, probs[i].mt_words, g.original->mt_words);
    pred_src.insert(pred_src.end(), thresholded.source.begin(), thresholded.source.end());
    pred_mtw.insert(pred_mtw.end(), thresholded.mt_words.begin(), thresholded.mt_words.end());
    OriginalTags pooled = thresholded;
    pooled.gaps = pred.gaps;
    auto pm = interleave_mt(pooled), gm = interleave_mt(*g.original);
    pred_mt.insert(pred_mt.end(), pm.begin(), pm.end());
    gold_mt.insert(gold_mt.end(), gm.begin(), gm.end());

    if (gold_links) {
      const RefinedTags gold_refined = refine(*g.original, (*gold_links)[i]);
      rpred_src.insert(rpred_src.end(), e.refined->source.begin(), e.refined->source.end());
      rgold_src.insert(rgold_src.end(), gold_refined.source.begin(), gold_refined.source.end());
      auto a = interleave_mt(*e.refined), b = interleave_mt(gold_refined);
      rpred_mt.insert(rpred_mt.end(), a.begin(), a.end());
      rgold_mt.insert(rgold_mt.end(), b.begin(), b.end());
      links += link_counts(*e.correspondences, (*gold_links)[i]);
    }
  }
  if (have_original && !gold_src.empty()) {
    r.source_original = detail::original_side(pred_src, gold_src, &prob_src);
    r.mt_words_original = detail::original_side(pred_mtw, gold_mtw, &prob_mtw);
    r.mt_original = detail::original_side(pred_mt, gold_mt, nullptr);
  }
  if (gold_links && have_original) {
    r.source_refined = evaluate_refined_side(rpred_src, rgold_src, Side::Source);
    r.mt_refined = evaluate_refined_side(rpred_mt, rgold_mt, Side::Mt);
    r.correspondences = links.prf();
  }
  return r;
}

inline PipelineResult run_pipeline(const PipelineOptions& o) {
  PipelineResult result;
  ModelBundle& bundle = result.bundle;
  bundle.align_threshold = o.align_threshold;
  bundle.gap_threshold = o.gap_threshold;

  const bool need_train = o.align_scorer.native || o.tag_scorer.native || o.gap_scorer.native;
  QECorpus train, dev, test;
  detail::stage("load", [&] {
    test = detail::load_split(o.test);
    if (test.entries.empty()) throw EmptyCorpus();
    if (o.train) train = detail::load_split(*o.train);
    if (o.dev) dev = detail::load_split(*o.dev);
    if (need_train && train.entries.empty()) throw Error("native scorers need a non-empty [train] split");
    if (o.optimize_threshold && dev.entries.empty()) throw Error("threshold = optimize needs a [dev] split with tags");
  });
  const auto gold_links = detail::stage("load", [&] { return detail::load_gold_correspondences(o.test, test); });

  // align
  std::shared_ptr<const SpanScorer> align_test, align_train;
  std::vector<std::vector<AlignmentLink>> test_links, train_links;
  detail::stage("align", [&] {
    if (o.align_scorer.native) {
      Bitext bitext = bitext_of(train);
      for (const auto* c : {&dev, &test})
        for (const auto& e : c->entries) bitext.emplace_back(e.pair.source, e.pair.mt);
      bundle.lex = train_lex_table(bitext, o.align_iterations, o.seed);
      align_test = align_train = std::make_shared<NativeLexScorer>(*bundle.lex);
    } else {
      align_test = std::make_shared<FileAdapterScorer>(FileAdapterScorer::load(o.align_scorer.path_for("test")));
      if (o.tag_scorer.native)
        align_train = std::make_shared<FileAdapterScorer>(FileAdapterScorer::load(o.align_scorer.path_for("train")));
    }
    test_links = extract_extended_alignment(test, *align_test, *align_test, o.align_threshold, o.threads);
    if (o.tag_scorer.native)
      train_links = extract_extended_alignment(train, *align_train, *align_train, o.align_threshold, o.threads);
  });

  // tag
  std::vector<TagProbabilities> dev_probs;
  detail::stage("tag", [&] {
    std::shared_ptr<const TagScorer> dev_scorer, test_scorer;
    const LexTable* lex = nullptr;
    LexTable tagger_lex;
    std::vector<std::vector<AlignmentLink>> dev_links;
    if (o.tag_scorer.native) {
      if (!bundle.lex) {
        // Adapter alignment still needs lexical features for the native tagger.
        Bitext bitext = bitext_of(train);
        for (const auto* c : {&dev, &test})
          for (const auto& e : c->entries) bitext.emplace_back(e.pair.source, e.pair.mt);
        bundle.lex = train_lex_table(bitext, o.align_iterations, o.seed);
      }
      lex = &*bundle.lex;
      bundle.tagger = train_native_tagger(train, train_links, *lex, o.tagger);
      test_scorer = dev_scorer = std::make_shared<NativeTagger>(*bundle.tagger);
      if (!dev.entries.empty()) {
        const SpanScorer* dev_align = align_test.get();
        std::shared_ptr<const SpanScorer> dev_adapter;
        if (!o.align_scorer.native) {
          dev_adapter = std::make_shared<FileAdapterScorer>(FileAdapterScorer::load(o.align_scorer.path_for("dev")));
          dev_align = dev_adapter.get();
        }
        dev_links = extract_extended_alignment(dev, *dev_align, *dev_align, o.align_threshold, o.threads);
      }
    } else {
      test_scorer = std::make_shared<FileAdapterTagger>(FileAdapterTagger::load(o.tag_scorer.path_for("test")));
      if (o.optimize_threshold)
        dev_scorer = std::make_shared<FileAdapterTagger>(FileAdapterTagger::load(o.tag_scorer.path_for("dev")));
    }
    if (o.optimize_threshold) {
      dev_probs = score_corpus(dev, *dev_scorer, lex, dev_links.empty() ? nullptr : &dev_links, o.threads);
      std::vector<DevExample> examples;
      for (std::size_t i = 0; i < dev.size(); ++i) {
        if (!dev.entries[i].original) throw Error("dev sentence " + dev.entries[i].pair.id + " has no tags");
        examples.emplace_back(dev_probs[i], *dev.entries[i].original);
      }
      result.threshold = optimize_threshold(examples);
    } else {
      result.threshold = {};
      result.threshold.tau = o.fixed_threshold;
    }
    result.probabilities = score_corpus(test, *test_scorer, lex, &test_links, o.threads);
  });
  bundle.threshold = result.threshold.tau;

  // refine
  detail::stage("refine", [&] {
    for (std::size_t i = 0; i < test.size(); ++i) {
      auto& e = test.entries[i];
      const OriginalTags predicted = apply_threshold(result.probabilities[i], result.threshold.tau);
      e.refined = refine_word_tags(predicted, test_links[i]);
      CorrespondenceSet cs;
      for (const auto& l : test_links[i]) cs.add(l);
      e.correspondences = std::move(cs);
    }
  });

  // gapcorr
  detail::stage("gapcorr", [&] {
    std::shared_ptr<const SpanScorer> gap_scorer;
    if (o.gap_scorer.native) {
      auto examples = generate_gap_pseudo_corpus(train, o.drop_rate, o.seed);
      if (examples.empty())
        throw Error("no pseudo gap examples; the [train] split needs pe and source_pe_alignment");
      auto native = train_gap_scorer(examples, o.gap_iterations, o.seed);
      bundle.gaps = native.table();
      gap_scorer = std::make_shared<NativeGapScorer>(std::move(native));
    } else {
      gap_scorer = std::make_shared<FileAdapterScorer>(FileAdapterScorer::load(o.gap_scorer.path_for("test")));
    }
    auto gap_links = extract_source_gap(test, *gap_scorer, o.gap_threshold, o.threads);
    for (std::size_t i = 0; i < test.size(); ++i) {
      auto& e = test.entries[i];
      e.correspondences->set_gap_links(gap_links[i]);
      e.refined->gaps = o.gaps_all_ok ? std::vector<RefinedTag>(e.pair.n() + 1, RefinedTag::OK)
                                      : assign_gap_tags(gap_links[i], e.pair.n());
      check_refined_placement(*e.refined);
    }
  });

  // eval
  detail::stage("eval", [&] {
    bool any_gold = false;
    for (const auto& e : test.entries) any_gold = any_gold || e.original.has_value();
    if (any_gold) result.report = evaluate_corpus(test, result.probabilities, test, gold_links, result.threshold.tau);
  });

  result.test = std::move(test);
  return result;
}

// Writes refined.jsonl, probabilities.jsonl, report.json, report.txt, ROC CSVs
// and the model bundle under out_dir.
inline void write_pipeline_outputs(const PipelineResult& r, const std::string& out_dir) {
  detail::stage("output", [&] {
    const std::filesystem::path d(out_dir);
    std::filesystem::create_directories(d);
    QECorpus out = r.test;
    write_refined_jsonl(out, (d / "refined.jsonl").string());
    std::vector<std::string> prob_lines;
    for (std::size_t i = 0; i < r.test.size(); ++i)
      prob_lines.push_back(tag_probabilities_record(r.test.entries[i].pair.id, r.probabilities[i]).dump());
    write_lines((d / "probabilities.jsonl").string(), prob_lines);

    nlohmann::json thr{{"tau", r.threshold.tau},
                       {"objective", r.threshold.objective},
                       {"source_mcc", r.threshold.source_mcc},
                       {"mt_mcc", r.threshold.mt_mcc},
                       {"degenerate", r.threshold.degenerate}};
    nlohmann::json report = r.report ? to_json(*r.report) : nlohmann::json::object();
    report["threshold_search"] = thr;
    std::ofstream(d / "report.json", std::ios::binary) << report.dump(2) << '\n';
    if (r.report) {
      std::ofstream(d / "report.txt", std::ios::binary) << to_table(*r.report);
      if (r.report->source_original && r.report->source_original->roc)
        std::ofstream(d / "roc_source.csv", std::ios::binary) << roc_csv(*r.report->source_original->roc);
      if (r.report->mt_words_original && r.report->mt_words_original->roc)
        std::ofstream(d / "roc_mt.csv", std::ios::binary) << roc_csv(*r.report->mt_words_original->roc);
    }
    r.bundle.save((d / "model").string());
  });
}

}  // namespace qeref
