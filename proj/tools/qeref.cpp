// qeref command-line driver.
//
// Exit codes: 0 success, 1 usage or input error, 2 pipeline stage failure.

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "qeref/pipeline.hpp"
#include "qeref/service.hpp"

using namespace qeref;

namespace {

struct InputFiles {
  std::string source, mt, source_tags, mt_tags;

  void add(CLI::App* cmd, bool tags_required) {
    cmd->add_option("--source", source, "source sentences, one per line")->required()->check(CLI::ExistingFile);
    cmd->add_option("--mt", mt, "MT sentences, one per line")->required()->check(CLI::ExistingFile);
    auto* st = cmd->add_option("--source-tags", source_tags, "source OK/BAD tags")->check(CLI::ExistingFile);
    auto* mtt = cmd->add_option("--mt-tags", mt_tags, "interleaved MT gap/word tags")->check(CLI::ExistingFile);
    if (tags_required) {
      st->required();
      mtt->required();
    }
  }

  QECorpus load() const {
    CorpusPaths p{source, mt, std::nullopt, std::nullopt, std::nullopt};
    if (!source_tags.empty() && !mt_tags.empty()) {
      p.source_tags = source_tags;
      p.mt_tags = mt_tags;
    }
    return parse_qe_corpus(p);
  }
};

std::vector<std::vector<AlignmentLink>> links_from_file(const std::string& path, const QECorpus& c) {
  auto pairs = read_pharaoh_file(path);
  if (pairs.size() != c.size()) throw LengthMismatch("alignment lines", c.size(), pairs.size());
  std::vector<std::vector<AlignmentLink>> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CorrespondenceSet cs = correspondences_from_pairs(pairs[i], {});
    cs.validate(c.entries[i].pair);
    out[i] = cs.word_links();
  }
  return out;
}

std::vector<TagProbabilities> probs_from_file(const std::string& path, const QECorpus& c) {
  auto adapter = FileAdapterTagger::load(path);
  return score_corpus(c, adapter, nullptr, nullptr);
}

void write_probs(const std::string& path, const QECorpus& c, const std::vector<TagProbabilities>& probs) {
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < c.size(); ++i) lines.push_back(tag_probabilities_record(c.entries[i].pair.id, probs[i]).dump());
  write_lines(path, lines);
}

std::vector<std::vector<IndexPair>> pharaoh_lines_of(const std::vector<std::vector<AlignmentLink>>& links) {
  std::vector<std::vector<IndexPair>> out;
  for (const auto& l : links) out.push_back(index_pairs(l));
  return out;
}

void write_pharaoh_file(const std::string& path, const std::vector<std::vector<IndexPair>>& lines) {
  std::vector<std::string> text;
  for (const auto& l : lines) text.push_back(format_pharaoh(l));
  write_lines(path, text);
}

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qeref: word-level QE with refined REP/INS/DEL tags"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // train-aligner
  auto* ta = app.add_subcommand("train-aligner", "train lexical translation tables with EM");
  InputFiles ta_in;
  int ta_iters = 10;
  std::string ta_out;
  ta_in.add(ta, false);
  ta->add_option("--iterations", ta_iters, "EM iterations")->check(CLI::PositiveNumber);
  ta->add_option("--out", ta_out, "output prefix (writes PREFIX.fwd.tsv and PREFIX.bwd.tsv)")->required();

  // align
  auto* al = app.add_subcommand("align", "extract extended word alignment (Pharaoh output)");
  InputFiles al_in;
  std::string al_lex, al_adapter, al_out;
  double al_threshold = kDefaultAlignThreshold;
  unsigned al_threads = 1;
  al_in.add(al, false);
  auto* al_lex_opt = al->add_option("--lex", al_lex, "lexical table prefix");
  auto* al_adp_opt = al->add_option("--adapter", al_adapter, "precomputed span distributions (JSON lines)");
  al_lex_opt->excludes(al_adp_opt);
  al->add_option("--threshold", al_threshold, "keep links with mean probability above this");
  al->add_option("--threads", al_threads)->check(CLI::PositiveNumber);
  al->add_option("--out", al_out, "Pharaoh output file")->required();

  // train-tagger
  auto* tt = app.add_subcommand("train-tagger", "train the native logistic tagger");
  InputFiles tt_in;
  std::string tt_lex, tt_align, tt_out;
  TaggerTrainingOptions tt_opts;
  tt_in.add(tt, true);
  tt->add_option("--lex", tt_lex, "lexical table prefix")->required();
  tt->add_option("--alignment", tt_align, "word alignment of the training pairs (Pharaoh)")->check(CLI::ExistingFile);
  tt->add_option("--epochs", tt_opts.epochs)->check(CLI::NonNegativeNumber);
  tt->add_option("--learning-rate", tt_opts.learning_rate)->check(CLI::PositiveNumber);
  tt->add_option("--out", tt_out, "tagger JSON")->required();

  // tag
  auto* tg = app.add_subcommand("tag", "predict BAD probabilities (JSON lines)");
  InputFiles tg_in;
  std::string tg_lex, tg_tagger, tg_adapter, tg_align, tg_out;
  unsigned tg_threads = 1;
  tg_in.add(tg, false);
  tg->add_option("--lex", tg_lex, "lexical table prefix (native tagger)");
  auto* tg_tag_opt = tg->add_option("--tagger", tg_tagger, "native tagger JSON");
  auto* tg_adp_opt = tg->add_option("--adapter", tg_adapter, "precomputed probabilities (JSON lines)");
  tg_tag_opt->excludes(tg_adp_opt);
  tg->add_option("--alignment", tg_align, "word alignment (Pharaoh)")->check(CLI::ExistingFile);
  tg->add_option("--threads", tg_threads)->check(CLI::PositiveNumber);
  tg->add_option("--out", tg_out)->required();

  // optimize-threshold
  auto* ot = app.add_subcommand("optimize-threshold", "pick tau maximizing source MCC + MT word MCC on dev");
  InputFiles ot_in;
  std::string ot_probs;
  ot_in.add(ot, true);
  ot->add_option("--probs", ot_probs, "probabilities (JSON lines from `tag`)")->required()->check(CLI::ExistingFile);

  // pseudo-gaps
  auto* pg = app.add_subcommand("pseudo-gaps", "make source-gap training data by dropping PE words");
  std::string pg_source, pg_pe, pg_align, pg_out;
  double pg_rate = kDefaultDropRate;
  std::uint64_t pg_seed = 0;
  pg->add_option("--source", pg_source)->required()->check(CLI::ExistingFile);
  pg->add_option("--pe", pg_pe, "post-edited sentences")->required()->check(CLI::ExistingFile);
  pg->add_option("--alignment", pg_align, "source-PE alignment (Pharaoh)")->required()->check(CLI::ExistingFile);
  pg->add_option("--drop-rate", pg_rate)->check(CLI::Range(0.0, 1.0));
  pg->add_option("--seed", pg_seed);
  pg->add_option("--out", pg_out, "output prefix (.src, .mt, .src-gap)")->required();

  // train-gaps
  auto* tgp = app.add_subcommand("train-gaps", "train the native source-gap scorer");
  std::string tgp_source, tgp_mt, tgp_links, tgp_out;
  int tgp_iters = 10;
  tgp->add_option("--source", tgp_source)->required()->check(CLI::ExistingFile);
  tgp->add_option("--mt", tgp_mt, "reduced sentences")->required()->check(CLI::ExistingFile);
  tgp->add_option("--source-gap", tgp_links, "gold source-gap links (i-gK)")->required()->check(CLI::ExistingFile);
  tgp->add_option("--iterations", tgp_iters)->check(CLI::NonNegativeNumber);
  tgp->add_option("--out", tgp_out, "gap table TSV")->required();

  // refine
  auto* rf = app.add_subcommand("refine", "turn OK/BAD tags into OK/REP/INS/DEL (refined JSON lines)");
  InputFiles rf_in;
  std::string rf_probs, rf_align, rf_gaps, rf_gap_table, rf_out;
  double rf_tau = 0.5, rf_gap_threshold = kDefaultAlignThreshold;
  bool rf_all_ok = false;
  rf_in.add(rf, false);
  rf->add_option("--probs", rf_probs, "probabilities to threshold (else --source-tags/--mt-tags are refined)")
      ->check(CLI::ExistingFile);
  rf->add_option("--threshold", rf_tau)->check(CLI::Range(0.0, 1.0));
  rf->add_option("--alignment", rf_align, "word alignment (Pharaoh)")->required()->check(CLI::ExistingFile);
  auto* rf_gap_opt = rf->add_option("--source-gap", rf_gaps, "source-gap links (i-gK)")->check(CLI::ExistingFile);
  auto* rf_tab_opt = rf->add_option("--gap-table", rf_gap_table, "native gap table to extract links with")
                         ->check(CLI::ExistingFile);
  rf_gap_opt->excludes(rf_tab_opt);
  rf->add_option("--gap-threshold", rf_gap_threshold);
  rf->add_flag("--gaps-all-ok", rf_all_ok, "leave every gap tag OK");
  rf->add_option("--out", rf_out)->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score refined predictions against gold refined tags");
  std::string ev_pred, ev_gold, ev_out;
  ev->add_option("--pred", ev_pred, "predicted refined JSON lines")->required()->check(CLI::ExistingFile);
  ev->add_option("--gold", ev_gold, "gold refined JSON lines")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "write the JSON report here");

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "run align, tag, refine, gapcorr and eval from a config file");
  std::string pl_config, pl_out;
  std::vector<std::string> pl_sets;
  std::optional<std::uint64_t> pl_seed;
  std::optional<unsigned> pl_threads;
  bool pl_all_ok = false;
  pl->add_option("--config", pl_config)->required()->check(CLI::ExistingFile);
  pl->add_option("--set", pl_sets, "override a config key, e.g. --set tagger.threshold=0.3");
  pl->add_option("--seed", pl_seed);
  pl->add_option("--threads", pl_threads)->check(CLI::PositiveNumber);
  pl->add_flag("--gaps-all-ok", pl_all_ok, "set every MT gap tag to OK");
  pl->add_option("--out", pl_out, "output directory");

  // serve
  auto* sv = app.add_subcommand("serve", "serve /api/analyze, /api/edit and /api/health");
  std::string sv_model, sv_adapters, sv_host = "127.0.0.1";
  int sv_port = 8080;
  bool sv_all_ok = false;
  auto* sv_model_opt = sv->add_option("--model", sv_model, "model bundle directory (pipeline output/model)");
  auto* sv_adp_opt = sv->add_option("--adapters", sv_adapters, "adapter directory (align.jsonl, tags.jsonl, gaps.jsonl)");
  sv_model_opt->excludes(sv_adp_opt);
  sv->add_option("--host", sv_host);
  sv->add_option("--port", sv_port)->check(CLI::Range(0, 65535));
  sv->add_flag("--gaps-all-ok", sv_all_ok);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ta) {
      auto c = ta_in.load();
      train_lex_table(bitext_of(c), ta_iters).save(ta_out);
    } else if (*al) {
      auto c = al_in.load();
      std::vector<std::vector<AlignmentLink>> links;
      if (!al_adapter.empty()) {
        auto a = FileAdapterScorer::load(al_adapter);
        links = extract_extended_alignment(c, a, a, al_threshold, al_threads);
      } else if (!al_lex.empty()) {
        NativeLexScorer s(LexTable::load(al_lex));
        links = extract_extended_alignment(c, s, s, al_threshold, al_threads);
      } else {
        throw Error("align needs --lex or --adapter");
      }
      write_pharaoh_file(al_out, pharaoh_lines_of(links));
    } else if (*tt) {
      auto c = tt_in.load();
      auto lex = LexTable::load(tt_lex);
      auto links = tt_align.empty() ? std::vector<std::vector<AlignmentLink>>(c.size()) : links_from_file(tt_align, c);
      train_native_tagger(c, links, lex, tt_opts).save(tt_out);
    } else if (*tg) {
      auto c = tg_in.load();
      std::vector<TagProbabilities> probs;
      if (!tg_adapter.empty()) {
        probs = score_corpus(c, FileAdapterTagger::load(tg_adapter), nullptr, nullptr, tg_threads);
      } else {
        if (tg_tagger.empty() || tg_lex.empty()) throw Error("tag needs --adapter, or --tagger with --lex");
        auto lex = LexTable::load(tg_lex);
        auto tagger = NativeTagger::load(tg_tagger);
        auto links = tg_align.empty() ? std::vector<std::vector<AlignmentLink>>(c.size()) : links_from_file(tg_align, c);
        probs = score_corpus(c, tagger, &lex, &links, tg_threads);
      }
      write_probs(tg_out, c, probs);
    } else if (*ot) {
      auto c = ot_in.load();
      auto probs = probs_from_file(ot_probs, c);
      std::vector<DevExample> dev;
      for (std::size_t i = 0; i < c.size(); ++i) dev.emplace_back(probs[i], *c.entries[i].original);
      auto r = optimize_threshold(dev);
      if (r.degenerate) std::cerr << "warning: dev labels are degenerate; using tau 0.5\n";
      std::cout << nlohmann::json{{"tau", r.tau},
                                  {"objective", r.objective},
                                  {"source_mcc", r.source_mcc},
                                  {"mt_mcc", r.mt_mcc},
                                  {"degenerate", r.degenerate}}
                       .dump(2)
                << '\n';
    } else if (*pg) {
      QECorpus c = parse_qe_corpus({pg_source, pg_pe, std::nullopt, std::nullopt, pg_pe});
      auto align = read_pharaoh_file(pg_align);
      if (align.size() != c.size()) throw LengthMismatch("alignment lines", c.size(), align.size());
      for (std::size_t i = 0; i < c.size(); ++i) c.entries[i].source_pe_alignment = align[i];
      auto examples = generate_gap_pseudo_corpus(c, pg_rate, pg_seed);
      std::vector<std::string> src, mt, gaps;
      for (const auto& ex : examples) {
        src.push_back(join_tokens(ex.pair.source));
        mt.push_back(join_tokens(ex.pair.mt));
        gaps.push_back(format_source_gap(index_pairs(ex.gold_gap_links)));
      }
      write_lines(pg_out + ".src", src);
      write_lines(pg_out + ".mt", mt);
      write_lines(pg_out + ".src-gap", gaps);
      std::cerr << examples.size() << " pseudo examples from " << c.size() << " sentences\n";
    } else if (*tgp) {
      QECorpus c = parse_qe_corpus({tgp_source, tgp_mt, std::nullopt, std::nullopt, std::nullopt});
      auto links = read_source_gap_file(tgp_links);
      if (links.size() != c.size()) throw LengthMismatch("source-gap lines", c.size(), links.size());
      std::vector<GapPseudoExample> examples;
      for (std::size_t i = 0; i < c.size(); ++i) {
        GapPseudoExample ex;
        ex.pair = c.entries[i].pair;
        correspondences_from_pairs({}, links[i]).validate(ex.pair);
        for (auto [s, g] : links[i]) ex.gold_gap_links.push_back({s, g, 1.0});
        examples.push_back(std::move(ex));
      }
      train_gap_scorer(examples, tgp_iters).table().save(tgp_out);
    } else if (*rf) {
      auto c = rf_in.load();
      auto links = links_from_file(rf_align, c);
      std::vector<OriginalTags> original(c.size());
      if (!rf_probs.empty()) {
        auto probs = probs_from_file(rf_probs, c);
        for (std::size_t i = 0; i < c.size(); ++i) original[i] = apply_threshold(probs[i], rf_tau);
      } else {
        for (std::size_t i = 0; i < c.size(); ++i) {
          if (!c.entries[i].original) throw Error("refine needs --probs or --source-tags/--mt-tags");
          original[i] = *c.entries[i].original;
        }
      }
      std::vector<std::vector<SourceGapLink>> gap_links(c.size());
      if (!rf_gaps.empty()) {
        auto pairs = read_source_gap_file(rf_gaps);
        if (pairs.size() != c.size()) throw LengthMismatch("source-gap lines", c.size(), pairs.size());
        for (std::size_t i = 0; i < c.size(); ++i) gap_links[i] = correspondences_from_pairs({}, pairs[i]).gap_links();
      } else if (!rf_gap_table.empty()) {
        NativeGapScorer s(TranslationTable::load(rf_gap_table));
        gap_links = extract_source_gap(c, s, rf_gap_threshold);
      }
      for (std::size_t i = 0; i < c.size(); ++i) {
        auto& e = c.entries[i];
        CorrespondenceSet cs;
        for (const auto& l : links[i]) cs.add(l);
        cs.set_gap_links(gap_links[i]);
        cs.validate(e.pair);
        e.refined = refine(original[i], cs);
        if (rf_all_ok) e.refined->gaps.assign(e.pair.n() + 1, RefinedTag::OK);
        e.correspondences = std::move(cs);
      }
      write_refined_jsonl(c, rf_out);
    } else if (*ev) {
      auto pred = read_refined_jsonl(ev_pred);
      auto gold = read_refined_jsonl(ev_gold);
      if (pred.size() != gold.size()) throw LengthMismatch("predicted sentences", gold.size(), pred.size());
      EvalReport r;
      r.sentences = pred.size();
      std::vector<RefinedTag> ps, gs, pm, gm;
      std::vector<OriginalTag> ops, ogs, opm, ogm;
      LinkCounts links;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto& p = pred.entries[i];
        const auto& g = gold.entries[i];
        if (p.pair.id != g.pair.id) throw Error("sentence " + std::to_string(i) + ": ids differ (" + p.pair.id + " vs " + g.pair.id + ")");
        ps.insert(ps.end(), p.refined->source.begin(), p.refined->source.end());
        gs.insert(gs.end(), g.refined->source.begin(), g.refined->source.end());
        auto a = interleave_mt(*p.refined), b = interleave_mt(*g.refined);
        pm.insert(pm.end(), a.begin(), a.end());
        gm.insert(gm.end(), b.begin(), b.end());
        auto dp = degenerate_tags(*p.refined), dg = degenerate_tags(*g.refined);
        ops.insert(ops.end(), dp.source.begin(), dp.source.end());
        ogs.insert(ogs.end(), dg.source.begin(), dg.source.end());
        opm.insert(opm.end(), dp.mt_words.begin(), dp.mt_words.end());
        ogm.insert(ogm.end(), dg.mt_words.begin(), dg.mt_words.end());
        links += link_counts(*p.correspondences, *g.correspondences);
      }
      OriginalSideEval s, m;
      s.counts = confusion(ops, ogs);
      s.mcc = mcc(s.counts);
      m.counts = confusion(opm, ogm);
      m.mcc = mcc(m.counts);
      r.source_original = s;
      r.mt_words_original = m;
      r.source_refined = evaluate_refined_side(ps, gs, Side::Source);
      r.mt_refined = evaluate_refined_side(pm, gm, Side::Mt);
      r.correspondences = links.prf();
      if (!ev_out.empty()) std::ofstream(ev_out, std::ios::binary) << to_json(r).dump(2) << '\n';
      std::cout << to_table(r);
    } else if (*pl) {
      Config config = Config::load(pl_config);
      for (const auto& s : pl_sets) config.set_override(s);
      PipelineOptions opts = PipelineOptions::from_config(config);
      if (pl_seed) opts.seed = *pl_seed;
      if (pl_threads) opts.threads = *pl_threads;
      if (pl_all_ok) opts.gaps_all_ok = true;
      if (!pl_out.empty()) opts.output_dir = pl_out;
      auto result = run_pipeline(opts);
      write_pipeline_outputs(result, opts.output_dir);
      if (result.threshold.degenerate) std::cerr << "warning: dev labels are degenerate; using tau 0.5\n";
      if (result.report) std::cout << to_table(*result.report);
      std::cout << "outputs written to " << opts.output_dir << '\n';
    } else if (*sv) {
      AnalyzerModel model;
      if (!sv_model.empty()) model = AnalyzerModel::from_bundle(ModelBundle::load(sv_model));
      else if (!sv_adapters.empty()) model = AnalyzerModel::from_adapter_dir(sv_adapters);
      else throw Error("serve needs --model or --adapters");
      model.gaps_all_ok = sv_all_ok;
      Analyzer analyzer(std::move(model));
      httplib::Server server;
      mount(server, analyzer);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::cerr << "listening on http://" << sv_host << ':' << sv_port << '\n';
      if (!server.listen(sv_host, sv_port)) throw Error("cannot listen on " + sv_host + ":" + std::to_string(sv_port));
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
