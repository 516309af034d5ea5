#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "kwdial/checkpoint.hpp"
#include "kwdial/corpus.hpp"
#include "kwdial/embeddings.hpp"
#include "kwdial/error.hpp"
#include "kwdial/eval.hpp"
#include "kwdial/keywords.hpp"
#include "kwdial/service.hpp"
#include "kwdial/text.hpp"
#include "kwdial/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace kwdial::cli {

namespace {

std::string fixed(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::vector<std::vector<TokenId>> read_context(const std::string& path, const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> out;
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read context file " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) out.push_back(vocab.tokenize(line));
  }
  if (out.size() > kMaxContextTurns) out.erase(out.begin(), out.end() - kMaxContextTurns);
  return out;
}

std::vector<DialogExample> load_split(const std::string& data, const std::string& split, const Vocabulary& vocab) {
  auto records = read_records(fs::path(data) / (split + ".jsonl"));
  return encode_records(records, vocab);
}

PoolLookup pool_lookup(PoolSource source, const std::string& embeddings, const std::string& synonyms,
                       const Vocabulary& vocab) {
  auto in_vocab = [&vocab](std::string_view w) { return vocab.contains(w); };
  if (source == PoolSource::embeddings) {
    if (embeddings.empty()) throw ConfigError("this model class needs --embeddings");
    auto table = std::make_shared<EmbeddingTable>(load_table(embeddings));
    return [table, in_vocab](const std::string& k) { return nearest_neighbors(k, kDefaultPoolSize, *table, in_vocab); };
  }
  if (source == PoolSource::lexicon) {
    if (synonyms.empty()) throw ConfigError("this model class needs --synonyms");
    auto lex = std::make_shared<SynonymLexicon>(load_synonyms(synonyms));
    return [lex, in_vocab](const std::string& k) { return lex->pool(k, kDefaultPoolSize, in_vocab); };
  }
  return {};
}

struct Loaded {
  Checkpoint ck;
  Transformer<float> model;
};

Loaded load(const std::string& path) {
  Loaded l{load_checkpoint(path), {}};
  l.model = Transformer<float>(l.ck.config, l.ck.params);
  return l;
}

EvalRow evaluate_checkpoint(const std::string& name, const Loaded& m, const EvalArgs& a, const Common& c,
                            const EmbeddingTable& table, const Transformer<float>* ref,
                            std::vector<std::string>* generations, std::string* fingerprint) {
  auto test = load_split(a.data, a.split, m.ck.vocab);
  if (fingerprint && fingerprint->empty()) *fingerprint = corpus_fingerprint(test);
  EvalConfig ec;
  ec.decode.strategy = DecodeStrategy::nucleus;
  ec.decode.top_p = a.top_p;
  ec.decode.seed = c.seed;
  ec.decode.max_new_tokens = a.max_new_tokens;
  ec.limit = a.limit;
  ec.threads = c.threads();
  auto pools = [&table](const std::string& k) { return nearest_neighbors(k, kDefaultPoolSize, table); };
  return evaluate_model(name, m.model, ModelClass::parse(m.ck.meta.model_class), test, m.ck.vocab, ec, table,
                        ref, pools, generations);
}

std::string eval_config_json(const EvalArgs& a, const Common& c) {
  json j;
  j["split"] = a.split;
  j["decode"] = "nucleus";
  j["top_p"] = a.top_p;
  j["max_new_tokens"] = a.max_new_tokens;
  j["seed"] = c.seed;
  j["limit"] = a.limit;
  return j.dump();
}

}  // namespace

int Common::threads() const {
  if (deterministic) return 1;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

DecodeConfig DecodeArgs::config(std::uint64_t seed) const {
  DecodeConfig d;
  if (strategy == "beam") {
    d.strategy = DecodeStrategy::diverse_beam;
  } else if (strategy == "nucleus") {
    d.strategy = DecodeStrategy::nucleus;
  } else if (strategy == "greedy") {
    d.strategy = DecodeStrategy::greedy;
  } else {
    throw ConfigError("unknown decoding strategy " + strategy);
  }
  d.beams = beams;
  d.groups = groups;
  d.diversity_penalty = penalty;
  d.top_p = top_p;
  d.max_new_tokens = max_new_tokens;
  d.seed = seed;
  d.validate();
  return d;
}

int prepare(const PrepareArgs& a, const Common& c) {
  ParseStats stats;
  auto train = parse_corpus(a.train, &stats);
  if (a.max_dialogs && train.size() > a.max_dialogs) train.resize(a.max_dialogs);
  auto vocab = build_vocab(train, a.min_freq);
  auto table = load_table(a.embeddings);
  auto extractor = make_extractor(table);

  fs::create_directories(a.out);
  write_vocab(fs::path(a.out) / "vocab.txt", vocab);
  json summary;
  summary["seed"] = c.seed;
  summary["min_freq"] = a.min_freq;
  summary["vocab_size"] = vocab.size();
  const std::vector<std::pair<std::string, std::string>> splits = {{"train", a.train}, {"valid", a.valid}, {"test", a.test}};
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const auto& [name, path] = splits[i];
    if (path.empty()) continue;
    ParseStats ps;
    auto dialogs = i == 0 ? train : parse_corpus(path, &ps);
    BuildStats bs;
    auto records = build_example_records(dialogs, extractor, c.seed + i, &bs);
    write_records(fs::path(a.out) / (name + ".jsonl"), records);
    summary[name] = {{"dialogs", dialogs.size()}, {"examples", bs.examples}, {"keywordless", bs.keywordless}};
    if (i == 0) summary[name]["skipped_lines"] = stats.skipped;
    else summary[name]["skipped_lines"] = ps.skipped;
  }
  std::ofstream(fs::path(a.out) / "stats.json") << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int train(const TrainArgs& a, const Common& c) {
  auto vocab = read_vocab(fs::path(a.data) / "vocab.txt");
  auto train_ex = load_split(a.data, "train", vocab);
  if (a.max_examples && train_ex.size() > a.max_examples) train_ex.resize(a.max_examples);
  std::vector<DialogExample> valid_ex;
  if (fs::exists(fs::path(a.data) / "valid.jsonl")) valid_ex = load_split(a.data, "valid", vocab);

  TrainConfig tc;
  tc.model_class = a.model_class;
  tc.weights = a.weights;
  tc.batch_size = a.batch;
  tc.epochs = a.epochs;
  tc.learning_rate = a.lr;
  tc.warmup_steps = a.warmup;
  tc.clip_norm = a.clip;
  tc.seed = c.seed;
  tc.checkpoint = a.checkpoint;
  tc.checkpoint_every = a.checkpoint_every;
  tc.valid_limit = a.valid_limit;
  tc.valid_kia_limit = a.valid_kia_limit;
  tc.deterministic = c.deterministic;
  tc.max_steps = a.max_steps;

  ModelConfig mc = a.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  auto cls = ModelClass::parse(a.model_class);
  Trainer trainer(tc, mc, vocab, pool_lookup(cls.pools, a.embeddings, a.synonyms, vocab));
  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::binary);
    if (!log_file) throw IoError("cannot write training log " + a.log);
    trainer.set_log(&log_file);
  } else {
    trainer.set_log(&std::cout);
  }
  auto result = trainer.train(train_ex, valid_ex);
  std::cerr << "best epoch " << result.best_epoch << ", checkpoint " << a.checkpoint << "\n";
  return 0;
}

int eval(const EvalArgs& a, const Common& c) {
  if (a.checkpoints.empty()) throw ConfigError("eval needs at least one --checkpoint");
  auto table = load_table(a.embeddings);
  std::optional<Loaded> ref;
  if (!a.ref_lm.empty()) ref = load(a.ref_lm);
  EvalReport report;
  report.config_json = eval_config_json(a, c);
  std::ofstream gen_out;
  if (!a.generations.empty()) gen_out.open(a.generations, std::ios::binary);
  for (const auto& path : a.checkpoints) {
    auto m = load(path);
    std::vector<std::string> gens;
    auto row = evaluate_checkpoint(fs::path(path).stem().string(), m, a, c, table, ref ? &ref->model : nullptr, &gens,
                                   &report.corpus_fingerprint);
    for (std::size_t i = 0; i < gens.size(); ++i) gen_out << row.name << "\t" << i << "\t" << gens[i] << "\n";
    report.rows.push_back(std::move(row));
  }
  if (!a.json.empty()) {
    std::ofstream out(a.json, std::ios::binary);
    out << report.to_json();
    if (!out) throw IoError("cannot write " + a.json);
  }
  std::cout << report.to_table();
  return 0;
}

int sweep_gamma(const SweepArgs& a, const Common& c) {
  if (a.values.empty()) throw ConfigError("sweep-gamma needs --values");
  fs::create_directories(a.out_dir);
  auto table = load_table(a.eval.embeddings);
  std::optional<Loaded> ref;
  if (!a.eval.ref_lm.empty()) ref = load(a.eval.ref_lm);
  EvalReport report;
  report.config_json = eval_config_json(a.eval, c);
  for (double g : a.values) {
    char tag[32];
    std::snprintf(tag, sizeof tag, "%g", g);
    TrainArgs t = a.train;
    t.weights.gamma = g;
    t.checkpoint = (fs::path(a.out_dir) / (std::string("gamma_") + tag + ".ckpt")).string();
    t.log = (fs::path(a.out_dir) / (std::string("gamma_") + tag + ".log.jsonl")).string();
    train(t, c);
    auto m = load(t.checkpoint);
    auto row = evaluate_checkpoint(std::string("gamma=") + tag, m, a.eval, c, table, ref ? &ref->model : nullptr,
                                   nullptr, &report.corpus_fingerprint);
    report.rows.push_back(std::move(row));
  }
  if (!a.eval.json.empty()) std::ofstream(a.eval.json, std::ios::binary) << report.to_json();
  std::cout << report.to_table();
  return 0;
}

int suggest(const SuggestArgs& a, const Common& c) {
  auto base = load(a.base);
  auto pred = load(a.predictor);
  auto table = load_table(a.embeddings);
  SuggestConfig sc;
  sc.decode = a.decode.config(c.seed);
  auto gen = generative_suggest(read_context(a.context_file, pred.ck.vocab), pred.model, pred.ck.vocab, sc);
  auto ext = extractive_suggest(read_context(a.context_file, base.ck.vocab), base.model, base.ck.vocab, sc, table);
  for (const auto* list : {&gen, &ext}) {
    for (const auto& s : *list) std::cout << to_string(s.source) << "\t" << s.text << "\t" << fixed(s.score) << "\n";
  }
  return 0;
}

int generate(const GenerateArgs& a, const Common& c) {
  auto m = load(a.checkpoint);
  const auto& vocab = m.ck.vocab;
  std::vector<TokenId> kws;
  for (const auto& k : a.keywords) {
    for (const auto& w : split_words(k)) {
      if (!vocab.contains(w)) {
        std::cerr << "warning: keyword '" << w << "' is not in the model vocabulary\n";
        continue;
      }
      kws.push_back(vocab.id(w));
    }
  }
  auto dc = a.decode.config(c.seed);
  TransformerSession session(m.model, read_context(a.context_file, vocab), kws, dc.max_new_tokens);
  auto gens = decode(session, dc);
  std::set<std::string> seen;
  int printed = 0;
  for (const auto& g : gens) {
    auto text = vocab.detokenize(g.tokens);
    if (!seen.insert(text).second) continue;
    std::cout << fixed(g.score) << "\t" << text << "\n";
    if (++printed == a.decode.num) break;
  }
  return 0;
}

namespace {

std::unique_ptr<Service> make_service(const ServeArgs& a, const Common& c) {
  ServiceConfig sc;
  sc.seed = c.seed;
  sc.persist = a.persist;
  sc.static_dir = a.static_dir;
  sc.response_decode = a.decode.config(c.seed);
  sc.suggest.decode = a.decode.config(c.seed);
  auto svc = std::make_unique<Service>(sc);
  ServiceModels m;
  m.response = load_model(a.response, "response");
  if (!a.multi_response.empty()) m.multi_response = load_model(a.multi_response, "multi_response");
  m.predictor = load_model(a.predictor, "predictor");
  m.base = load_model(a.base, "base");
  m.table = std::make_shared<EmbeddingTable>(load_table(a.embeddings));
  svc->set_models(std::move(m));
  return svc;
}

json checked(const HttpResponse& r) {
  auto j = json::parse(r.body);
  if (r.status >= 400) throw Error(j["error"]["kind"].get<std::string>(), j["error"]["message"].get<std::string>());
  return j;
}

}  // namespace

int interact(const ServeArgs& a, const Common& c) {
  auto svc = make_service(a, c);
  const auto id = checked(svc->handle("POST", "/v1/sessions", "")).at("session_id").get<std::string>();
  const std::string base = "/v1/sessions/" + id;
  std::string line;
  std::cout << "partner> " << std::flush;
  while (std::getline(std::cin, line)) {
    if (trim(line).empty()) {
      std::cout << "partner> " << std::flush;
      continue;
    }
    auto kw = checked(svc->handle("POST", base + "/keywords", json{{"partner_utterance", line}}.dump()));
    const auto& list = kw["keywords"];
    for (std::size_t i = 0; i < list.size(); ++i) {
      std::cout << "  [" << i + 1 << "] " << list[i]["text"].get<std::string>() << " ("
                << list[i]["source"].get<std::string>() << ")\n";
    }
    std::cout << "keyword (number or word)> " << std::flush;
    std::string pick;
    if (!std::getline(std::cin, pick)) break;
    pick = trim(pick);
    std::vector<std::string> chosen;
    try {
      std::size_t n = std::stoul(pick);
      if (n >= 1 && n <= list.size()) chosen.push_back(list[n - 1]["text"].get<std::string>());
    } catch (const std::exception&) {
    }
    if (chosen.empty()) {
      for (auto& w : split_words(pick)) {
        if (w != "," && chosen.size() < kMaxKeywords) chosen.push_back(w);
      }
    }
    if (chosen.empty()) {
      std::cout << "no keyword given\npartner> " << std::flush;
      continue;
    }
    auto rs = checked(svc->handle("POST", base + "/responses", json{{"keywords", chosen}, {"num", 3}}.dump()));
    const auto& responses = rs["responses"];
    for (std::size_t i = 0; i < responses.size(); ++i) {
      std::cout << "  (" << i + 1 << ") " << responses[i]["text"].get<std::string>() << "\n";
    }
    std::cout << "response (number, or type your own)> " << std::flush;
    std::string answer;
    if (!std::getline(std::cin, answer)) break;
    answer = trim(answer);
    try {
      std::size_t n = std::stoul(answer);
      if (n >= 1 && n <= responses.size()) answer = responses[n - 1]["text"].get<std::string>();
    } catch (const std::exception&) {
    }
    if (!answer.empty()) {
      checked(svc->handle("POST", base + "/commit", json{{"text", answer}}.dump()));
      std::cout << "you: " << answer << "\n";
    }
    std::cout << "partner> " << std::flush;
  }
  std::cout << "\n";
  return 0;
}

int serve(const ServeArgs& a, const Common& c) {
  auto svc = make_service(a, c);
  std::cerr << "listening on " << a.host << ":" << a.port << "\n";
  if (!svc->serve(a.host, a.port)) throw IoError("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

}  // namespace kwdial::cli
