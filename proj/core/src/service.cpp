#include "kwdial/service.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "kwdial/checkpoint.hpp"
#include "kwdial/error.hpp"
#include "kwdial/text.hpp"

namespace kwdial {

using json = nlohmann::ordered_json;

namespace {

HttpResponse reply(int status, const json& body) { return {status, body.dump()}; }

HttpResponse fail(int status, const std::string& kind, const std::string& message) {
  json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  return reply(status, j);
}

std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::stringstream ss(path.substr(0, path.find('?')));
  std::string part;
  while (std::getline(ss, part, '/')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::int64_t epoch_seconds(std::chrono::system_clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::seconds>(t.time_since_epoch()).count();
}

}  // namespace

std::shared_ptr<const LoadedModel> load_model(const std::filesystem::path& checkpoint, std::string name) {
  auto ck = load_checkpoint(checkpoint);
  auto m = std::make_shared<LoadedModel>();
  m->name = name.empty() ? checkpoint.stem().string() : std::move(name);
  m->cls = ModelClass::parse(ck.meta.model_class);
  m->model = Transformer<float>(ck.config, std::move(ck.params));
  m->vocab = std::move(ck.vocab);
  return m;
}

struct Service::Server {
  httplib::Server http;
};

Service::Service(ServiceConfig config) : config_(std::move(config)), rng_(config_.seed) {
  config_.response_decode.validate();
  config_.suggest.decode.validate();
  if (!config_.persist.empty()) replay();
}

Service::~Service() { stop(); }

void Service::set_models(ServiceModels models) {
  if (!models.response || !models.predictor || !models.base || !models.table) {
    throw ConfigError("service needs response, predictor and base models plus an embedding table");
  }
  std::lock_guard lock(mu_);
  models_ = std::make_shared<const ServiceModels>(std::move(models));
}

bool Service::ready() const { return models() != nullptr; }

std::shared_ptr<const ServiceModels> Service::models() const {
  std::lock_guard lock(mu_);
  return models_;
}

std::chrono::system_clock::time_point Service::now() const {
  return config_.clock ? config_.clock() : std::chrono::system_clock::now();
}

std::size_t Service::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::string Service::fresh_id() {
  // caller holds mu_
  for (;;) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng_()));
    if (!sessions_.count(buf)) return buf;
  }
}

void Service::persist_line(const std::string& line) {
  // caller holds mu_
  if (config_.persist.empty()) return;
  std::ofstream out(config_.persist, std::ios::app | std::ios::binary);
  out << line << "\n";
  if (!out) throw IoError("cannot append to session log " + config_.persist.string());
}

void Service::replay() {
  std::ifstream in(config_.persist, std::ios::binary);
  if (!in) return;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError(config_.persist.string() + ": " + e.what(), n);
    }
    const auto id = j.at("id").get<std::string>();
    const auto t = std::chrono::system_clock::time_point(std::chrono::seconds(j.at("t").get<std::int64_t>()));
    const auto event = j.at("event").get<std::string>();
    if (event == "create") {
      auto s = std::make_shared<Session>();
      s->id = id;
      s->created = s->last_active = t;
      sessions_[id] = s;
    } else if (event == "append") {
      auto it = sessions_.find(id);
      if (it == sessions_.end()) continue;
      it->second->history.push_back({j.at("speaker").get<std::string>(), j.at("text").get<std::string>()});
      it->second->last_active = t;
    }
  }
}

void Service::evict(std::chrono::system_clock::time_point t) {
  // caller holds mu_
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (t - it->second->last_active > config_.ttl) {
      it = sessions_.erase(it);
    } else {
      ++it;
    }
  }
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) {
  std::lock_guard lock(mu_);
  evict(now());
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void Service::append(Session& s, const std::string& speaker, const std::string& text) {
  const auto t = now();
  s.history.push_back({speaker, text});
  s.last_active = t;
  std::lock_guard lock(mu_);
  json j;
  j["event"] = "append";
  j["id"] = s.id;
  j["t"] = epoch_seconds(t);
  j["speaker"] = speaker;
  j["text"] = text;
  persist_line(j.dump());
}

std::vector<std::vector<TokenId>> Service::context(const Session& s, const Vocabulary& vocab) const {
  std::vector<std::vector<TokenId>> out;
  const std::size_t first = s.history.size() > kMaxContextTurns ? s.history.size() - kMaxContextTurns : 0;
  for (std::size_t i = first; i < s.history.size(); ++i) out.push_back(vocab.tokenize(s.history[i].text));
  return out;
}

HttpResponse Service::health() const {
  auto m = models();
  json j;
  j["status"] = m ? "ok" : "loading";
  j["models"] = json::array();
  auto add = [&](const char* role, const std::shared_ptr<const LoadedModel>& lm, bool optional) {
    if (optional && m && !lm) return;
    j["models"].push_back({{"name", role}, {"checkpoint", lm ? lm->name : ""}, {"loaded", lm != nullptr}});
  };
  add("response", m ? m->response : nullptr, false);
  add("multi_response", m ? m->multi_response : nullptr, true);
  add("predictor", m ? m->predictor : nullptr, false);
  add("base", m ? m->base : nullptr, false);
  return reply(200, j);
}

HttpResponse Service::create_session() {
  if (!ready()) return fail(503, "unavailable", "models are not loaded");
  std::lock_guard lock(mu_);
  const auto t = now();
  evict(t);
  auto s = std::make_shared<Session>();
  s->id = fresh_id();
  s->created = s->last_active = t;
  sessions_[s->id] = s;
  persist_line(json{{"event", "create"}, {"id", s->id}, {"t", epoch_seconds(t)}}.dump());
  return reply(201, json{{"session_id", s->id}});
}

HttpResponse Service::get_session(Session& s) {
  json j;
  j["session_id"] = s.id;
  j["created_at"] = epoch_seconds(s.created);
  j["last_active"] = epoch_seconds(s.last_active);
  j["history"] = json::array();
  for (const auto& t : s.history) j["history"].push_back({{"speaker", t.speaker}, {"text", t.text}});
  return reply(200, j);
}

HttpResponse Service::suggest(Session& s, const std::string& body) {
  auto m = models();
  if (!m) return fail(503, "unavailable", "models are not loaded");
  auto j = json::parse(body);
  if (!j.is_object() || !j.contains("partner_utterance") || !j["partner_utterance"].is_string()) {
    return fail(422, "invalid", "partner_utterance must be a string");
  }
  const auto utterance = trim(j["partner_utterance"].get<std::string>());
  if (utterance.empty()) return fail(422, "invalid", "partner_utterance is empty");
  append(s, "partner", utterance);

  auto gen = generative_suggest(context(s, m->predictor->vocab), m->predictor->model, m->predictor->vocab,
                                config_.suggest);
  auto ext = extractive_suggest(context(s, m->base->vocab), m->base->model, m->base->vocab, config_.suggest,
                                *m->table);
  json out;
  out["keywords"] = json::array();
  for (const auto& k : merge_suggestions(gen, ext)) {
    out["keywords"].push_back({{"text", k.text}, {"source", to_string(k.source)}, {"score", k.score}});
  }
  return reply(200, out);
}

HttpResponse Service::respond(Session& s, const std::string& body) {
  auto m = models();
  if (!m) return fail(503, "unavailable", "models are not loaded");
  auto j = json::parse(body);
  if (!j.is_object() || !j.contains("keywords") || !j["keywords"].is_array()) {
    return fail(422, "invalid", "keywords must be an array of strings");
  }
  std::vector<std::string> keywords;
  for (const auto& k : j["keywords"]) {
    if (!k.is_string() || trim(k.get<std::string>()).empty()) {
      return fail(422, "invalid", "keywords must be non-empty strings");
    }
    keywords.push_back(join_words(split_words(k.get<std::string>())));
  }
  if (keywords.empty() || keywords.size() > kMaxKeywords) {
    return fail(422, "invalid", "between 1 and 3 keywords are required");
  }
  int num = 3;
  if (j.contains("num")) {
    if (!j["num"].is_number_integer()) return fail(422, "invalid", "num must be an integer");
    num = j["num"].get<int>();
  }
  if (num < 1 || num > config_.response_decode.beams) {
    return fail(422, "invalid", "num must be between 1 and " + std::to_string(config_.response_decode.beams));
  }

  const auto& lm = (keywords.size() > 1 && m->multi_response) ? *m->multi_response : *m->response;
  std::vector<TokenId> kw_ids;
  const std::size_t take = lm.cls.input == KeywordInput::multi ? keywords.size() : 1;
  for (std::size_t i = 0; i < take; ++i) {
    for (const auto& w : split_words(keywords[i])) {
      if (lm.vocab.contains(w)) kw_ids.push_back(lm.vocab.id(w));
    }
  }
  TransformerSession session(lm.model, context(s, lm.vocab), kw_ids, config_.response_decode.max_new_tokens);
  auto gens = decode(session, config_.response_decode);

  json out;
  out["model"] = lm.name;
  out["responses"] = json::array();
  std::set<std::string> seen;
  for (const auto& g : gens) {
    auto text = lm.vocab.detokenize(g.tokens);
    if (text.empty() || !seen.insert(text).second) continue;
    out["responses"].push_back({{"text", text}, {"score", g.score}, {"group", g.group}});
    if (static_cast<int>(out["responses"].size()) == num) break;
  }
  out["degenerate"] = static_cast<int>(out["responses"].size()) < num;
  return reply(200, out);
}

HttpResponse Service::commit(Session& s, const std::string& body) {
  auto j = json::parse(body);
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    return fail(422, "invalid", "text must be a string");
  }
  const auto text = trim(j["text"].get<std::string>());
  if (text.empty()) return fail(422, "invalid", "text is empty");
  append(s, "user", text);
  return reply(200, json{{"ok", true}, {"history_length", s.history.size()}});
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    const auto seg = segments(path);
    if (seg.size() < 2 || seg[0] != "v1") return fail(404, "not_found", "no route for " + path);
    if (seg[1] == "health" && seg.size() == 2) {
      if (method != "GET") return fail(405, "method_not_allowed", method + " " + path);
      return health();
    }
    if (seg[1] != "sessions" || seg.size() > 4) return fail(404, "not_found", "no route for " + path);
    if (seg.size() == 2) {
      if (method != "POST") return fail(405, "method_not_allowed", method + " " + path);
      return create_session();
    }
    const std::string action = seg.size() == 4 ? seg[3] : "";
    static const std::set<std::string> actions = {"", "keywords", "responses", "commit"};
    if (!actions.count(action)) return fail(404, "not_found", "no route for " + path);
    if (method != (action.empty() ? "GET" : "POST")) return fail(405, "method_not_allowed", method + " " + path);

    auto s = find(seg[2]);
    if (!s) return fail(404, "not_found", "unknown session " + seg[2]);
    std::lock_guard lock(s->mu);
    if (action.empty()) return get_session(*s);
    if (action == "keywords") return suggest(*s, body);
    if (action == "responses") return respond(*s, body);
    return commit(*s, body);
  } catch (const nlohmann::json::exception& e) {
    return fail(400, "bad_request", std::string("malformed JSON body: ") + e.what());
  } catch (const Error& e) {
    return fail(500, e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail(500, "internal", e.what());
  }
}

bool Service::serve(const std::string& host, int port) {
  {
    std::lock_guard lock(mu_);
    server_ = std::make_unique<Server>();
  }
  auto& http = server_->http;
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  http.Get(R"(/v1/.*)", route);
  http.Post(R"(/v1/.*)", route);
  if (!config_.static_dir.empty()) http.set_mount_point("/", config_.static_dir.string());
  return http.listen(host, port);
}

void Service::stop() {
  std::lock_guard lock(mu_);
  if (server_) server_->http.stop();
}

}  // namespace kwdial
