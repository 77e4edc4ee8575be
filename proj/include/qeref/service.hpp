#pragma once

// HTTP+JSON analysis service. Handlers are plain functions from a request
// body to (status, JSON) so they can be exercised without a socket; serve()
// mounts them on an httplib server.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "qeref/pipeline.hpp"

namespace qeref {

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

// Immutable once built; safe to share between request threads.
struct AnalyzerModel {
  std::shared_ptr<const SpanScorer> align_fwd;
  std::shared_ptr<const SpanScorer> align_bwd;
  std::shared_ptr<const TagScorer> tagger;
  std::shared_ptr<const SpanScorer> gaps;  // null: every gap stays OK
  std::shared_ptr<const LexTable> lex;
  double threshold = 0.5;
  double align_threshold = kDefaultAlignThreshold;
  double gap_threshold = kDefaultAlignThreshold;
  bool gaps_all_ok = false;

  static AnalyzerModel from_bundle(const ModelBundle& b) {
    if (!b.lex || !b.tagger) throw Error("model bundle needs a lexical table and a tagger");
    AnalyzerModel m;
    m.lex = std::make_shared<const LexTable>(*b.lex);
    m.align_fwd = m.align_bwd = std::make_shared<const NativeLexScorer>(*b.lex);
    m.tagger = std::make_shared<const NativeTagger>(*b.tagger);
    if (b.gaps) m.gaps = std::make_shared<const NativeGapScorer>(*b.gaps);
    m.threshold = b.threshold;
    m.align_threshold = b.align_threshold;
    m.gap_threshold = b.gap_threshold;
    return m;
  }

  // align.jsonl and tags.jsonl are required, gaps.jsonl and meta.json
  // (threshold, align_threshold, gap_threshold) optional.
  static AnalyzerModel from_adapter_dir(const std::string& dir) {
    const std::filesystem::path d(dir);
    AnalyzerModel m;
    m.align_fwd = m.align_bwd = std::make_shared<const FileAdapterScorer>(FileAdapterScorer::load((d / "align.jsonl").string()));
    m.tagger = std::make_shared<const FileAdapterTagger>(FileAdapterTagger::load((d / "tags.jsonl").string()));
    if (std::filesystem::exists(d / "gaps.jsonl"))
      m.gaps = std::make_shared<const FileAdapterScorer>(FileAdapterScorer::load((d / "gaps.jsonl").string()));
    if (std::ifstream in(d / "meta.json"); in) {
      auto meta = nlohmann::json::parse(in);
      m.threshold = meta.value("threshold", m.threshold);
      m.align_threshold = meta.value("align_threshold", m.align_threshold);
      m.gap_threshold = meta.value("gap_threshold", m.gap_threshold);
    }
    return m;
  }
};

namespace detail {

inline HttpReply error_reply(int status, const std::string& message, const std::string& stage = "") {
  nlohmann::json body{{"error", message}};
  if (!stage.empty()) body["stage"] = stage;
  return {status, std::move(body)};
}

template <typename Tag>
nlohmann::json tag_names(const std::vector<Tag>& tags) {
  auto arr = nlohmann::json::array();
  for (auto t : tags) arr.push_back(std::string(to_string(t)));
  return arr;
}

inline std::optional<nlohmann::json> parse_object(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

}  // namespace detail

class Analyzer {
 public:
  explicit Analyzer(AnalyzerModel model) : model_(std::move(model)) {}

  HttpReply health() const { return {200, {{"status", "ok"}, {"version", kVersion}}}; }

  // {source, mt[, id]} -> tokens, refined tags, links and probabilities.
  HttpReply analyze(const std::string& body) const {
    auto req = detail::parse_object(body);
    if (!req) return detail::error_reply(400, "body must be a JSON object");
    // An absent text field is an empty sentence (422), a non-string one is malformed.
    for (const char* key : {"source", "mt", "id"})
      if (req->contains(key) && !(*req)[key].is_string())
        return detail::error_reply(400, std::string("field '") + key + "' must be a string");

    SentencePair pair{req->value("id", std::string("0")), split_tokens(req->value("source", std::string())),
                      split_tokens(req->value("mt", std::string())), std::nullopt};
    try {
      validate_pair(pair);
    } catch (const InvalidSentence& e) {
      return detail::error_reply(422, e.what());
    }
    try {
      return {200, run(pair)};
    } catch (const StageError& e) {
      return detail::error_reply(500, e.what(), e.stage());
    }
  }

  // {op, mt | session, mt_index | gap_index, payload} -> updated MT. With a
  // session key the result is remembered and "mt" may be omitted next time.
  HttpReply edit(const std::string& body) {
    auto req = detail::parse_object(body);
    if (!req) return detail::error_reply(400, "body must be a JSON object");
    if (!req->contains("op") || !(*req)["op"].is_string()) return detail::error_reply(400, "field 'op' must be a string");
    const std::string op = (*req)["op"];
    if (op != "REP" && op != "INS" && op != "DEL") return detail::error_reply(400, "op must be REP, INS or DEL");

    std::optional<std::string> session;
    if (req->contains("session")) {
      if (!(*req)["session"].is_string()) return detail::error_reply(400, "field 'session' must be a string");
      session = (*req)["session"].get<std::string>();
    }
    Tokens mt;
    if (req->contains("mt")) {
      const auto& v = (*req)["mt"];
      if (v.is_string()) mt = split_tokens(v.get<std::string>());
      else if (v.is_array() && std::all_of(v.begin(), v.end(), [](const auto& t) { return t.is_string(); }))
        mt = v.get<Tokens>();
      else return detail::error_reply(400, "field 'mt' must be a string or an array of strings");
    } else if (session) {
      std::lock_guard lock(sessions_mutex_);
      auto it = sessions_.find(*session);
      if (it == sessions_.end()) return detail::error_reply(422, "unknown session '" + *session + "'");
      mt = it->second;
    } else {
      return detail::error_reply(400, "field 'mt' is required without a session");
    }

    auto index_field = [&](const char* name) -> std::optional<long long> {
      if (!req->contains(name) || !(*req)[name].is_number_integer()) return std::nullopt;
      return (*req)[name].get<long long>();
    };
    Tokens payload;
    if (op != "DEL") {
      if (!req->contains("payload") || !(*req)["payload"].is_string())
        return detail::error_reply(400, "op " + op + " needs a string 'payload'");
      payload = split_tokens((*req)["payload"].get<std::string>());
      if (payload.empty()) return detail::error_reply(422, "payload is empty");
    }
    if (op == "INS") {
      auto k = index_field("gap_index");
      if (!k) return detail::error_reply(400, "INS needs an integer 'gap_index'");
      if (*k < 0 || static_cast<std::size_t>(*k) > mt.size())
        return detail::error_reply(422, "gap_index " + std::to_string(*k) + " outside 0.." + std::to_string(mt.size()));
      mt.insert(mt.begin() + *k, payload.begin(), payload.end());
    } else {
      auto j = index_field("mt_index");
      if (!j) return detail::error_reply(400, op + " needs an integer 'mt_index'");
      if (*j < 0 || static_cast<std::size_t>(*j) >= mt.size())
        return detail::error_reply(422, "mt_index " + std::to_string(*j) + " outside 0.." +
                                            std::to_string(static_cast<long long>(mt.size()) - 1));
      mt.erase(mt.begin() + *j);
      if (op == "REP") mt.insert(mt.begin() + *j, payload.begin(), payload.end());
    }
    if (session) {
      std::lock_guard lock(sessions_mutex_);
      sessions_[*session] = mt;
    }
    return {200, {{"mt", mt}, {"text", join_tokens(mt)}}};
  }

  const AnalyzerModel& model() const noexcept { return model_; }

 private:
  nlohmann::json run(const SentencePair& pair) const {
    const auto links = detail::stage("align", [&] {
      return extract_extended_alignment(pair, *model_.align_fwd, *model_.align_bwd, model_.align_threshold);
    });
    const auto probs = detail::stage("tag", [&] {
      auto p = model_.tagger->bad_probabilities(pair, {model_.lex.get(), &links});
      p.validate(pair);
      return p;
    });
    RefinedTags refined = detail::stage("refine", [&] {
      return refine_word_tags(apply_threshold(probs, model_.threshold), links);
    });
    std::vector<SourceGapLink> gap_links;
    detail::stage("gapcorr", [&] {
      if (model_.gaps) gap_links = extract_source_gap(pair, *model_.gaps, model_.gap_threshold);
      if (!model_.gaps_all_ok) refined.gaps = assign_gap_tags(gap_links, pair.n());
    });

    nlohmann::json word_links = nlohmann::json::array(), gaps = nlohmann::json::array();
    for (const auto& l : links) word_links.push_back({{"src", l.src}, {"mt", l.mt}, {"prob", l.mean_prob}});
    for (const auto& l : gap_links) gaps.push_back({{"src", l.src}, {"gap", l.gap}, {"prob", l.prob}});
    return {{"id", pair.id},
            {"tokens", {{"source", pair.source}, {"mt", pair.mt}}},
            {"tags",
             {{"source", detail::tag_names(refined.source)},
              {"mt_words", detail::tag_names(refined.mt_words)},
              {"gaps", detail::tag_names(refined.gaps)}}},
            {"word_links", std::move(word_links)},
            {"gap_links", std::move(gaps)},
            {"probabilities", {{"source", probs.source}, {"mt_words", probs.mt_words}}},
            {"threshold", model_.threshold}};
  }

  AnalyzerModel model_;
  std::mutex sessions_mutex_;
  std::map<std::string, Tokens> sessions_;
};

inline void mount(httplib::Server& server, Analyzer& analyzer) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get("/api/health", [&analyzer, send](const httplib::Request&, httplib::Response& res) {
    send(res, analyzer.health());
  });
  server.Post("/api/analyze", [&analyzer, send](const httplib::Request& req, httplib::Response& res) {
    send(res, analyzer.analyze(req.body));
  });
  server.Post("/api/edit", [&analyzer, send](const httplib::Request& req, httplib::Response& res) {
    send(res, analyzer.edit(req.body));
  });
}

}  // namespace qeref
