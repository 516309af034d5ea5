#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kwdial/embeddings.hpp"
#include "kwdial/keywords.hpp"
#include "kwdial/model.hpp"
#include "kwdial/model_class.hpp"
#include "kwdial/vocab.hpp"

namespace kwdial {

struct LoadedModel {
  std::string name;
  Transformer<float> model;
  Vocabulary vocab;
  ModelClass cls;
};

// Reads a checkpoint and its model class from the metadata.
std::shared_ptr<const LoadedModel> load_model(const std::filesystem::path& checkpoint, std::string name = {});

struct ServiceModels {
  std::shared_ptr<const LoadedModel> response;        // keyword-conditioned responder
  std::shared_ptr<const LoadedModel> multi_response;  // optional, used for 2-3 keywords
  std::shared_ptr<const LoadedModel> predictor;       // kw_pred
  std::shared_ptr<const LoadedModel> base;            // no_kw, for extractive suggestions
  std::shared_ptr<const EmbeddingTable> table;
};

struct ServiceConfig {
  DecodeConfig response_decode = [] {
    DecodeConfig d;
    d.strategy = DecodeStrategy::diverse_beam;
    return d;
  }();
  SuggestConfig suggest;
  std::chrono::seconds ttl{24 * 3600};
  std::filesystem::path persist;     // append-only JSON-lines session log; empty = memory only
  std::filesystem::path static_dir;  // optional files served under /
  std::uint64_t seed = 0;
  std::function<std::chrono::system_clock::time_point()> clock;  // defaults to system_clock::now
};

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

class Service {
 public:
  explicit Service(ServiceConfig config = {});
  ~Service();

  void set_models(ServiceModels models);
  bool ready() const;

  // Transport-independent request handler; serve() routes through it.
  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);

  // Blocks until stop() is called. Returns false when the port cannot be bound.
  bool serve(const std::string& host, int port);
  void stop();
  std::size_t session_count() const;

 private:
  struct Turn {
    std::string speaker;  // "partner" or "user"
    std::string text;
  };
  struct Session {
    std::string id;
    std::vector<Turn> history;
    std::chrono::system_clock::time_point created, last_active;
    std::mutex mu;
  };

  HttpResponse create_session();
  HttpResponse get_session(Session& s);
  HttpResponse suggest(Session& s, const std::string& body);
  HttpResponse respond(Session& s, const std::string& body);
  HttpResponse commit(Session& s, const std::string& body);
  HttpResponse health() const;

  std::shared_ptr<Session> find(const std::string& id);
  void evict(std::chrono::system_clock::time_point now);
  std::chrono::system_clock::time_point now() const;
  void append(Session& s, const std::string& speaker, const std::string& text);
  void persist_line(const std::string& line);
  void replay();
  std::string fresh_id();
  std::vector<std::vector<TokenId>> context(const Session& s, const Vocabulary& vocab) const;
  std::shared_ptr<const ServiceModels> models() const;

  ServiceConfig config_;
  mutable std::mutex mu_;  // guards sessions_, models_, rng_ and the persistence file
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::shared_ptr<const ServiceModels> models_;
  std::mt19937_64 rng_;
  struct Server;
  std::unique_ptr<Server> server_;
};

}  // namespace kwdial
