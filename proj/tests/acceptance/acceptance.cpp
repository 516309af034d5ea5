// End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//
//   kwdial_acceptance --work DIR [--only 1,4,...]
//
// Criteria 4, 5 and 7 train on the corpus named by KWDIAL_DAILYDIALOG (a
// directory with train.txt, valid.txt, test.txt) and KWDIAL_GLOVE (word
// vectors). Without them a synthetic surrogate corpus is generated and the
// affected lines are labelled accordingly.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "kwdial/corpus.hpp"
#include "kwdial/decode.hpp"
#include "kwdial/embeddings.hpp"
#include "kwdial/error.hpp"
#include "kwdial/eval.hpp"
#include "kwdial/keywords.hpp"
#include "kwdial/model_class.hpp"
#include "kwdial/objective.hpp"
#include "kwdial/text.hpp"
#include "kwdial/trainer.hpp"
#include "oracles.hpp"
#include "synth.hpp"

using namespace kwdial;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and thresholds.
constexpr double kOracleTol = 1e-6;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradAbsFloor = 1e-9;
constexpr double kGradStep = 1e-5;
constexpr double kTraceTol = 1e-6;
constexpr double kPplTol = 1e-6;
constexpr double kNoKwKiaMax = 0.15;
constexpr double kContextGain = 0.30;
constexpr double kOracleSeconds = 10.0;
constexpr double kGradSeconds = 300.0;
constexpr double kControlSeconds = 7200.0;
constexpr std::size_t kNucleusSteps = 100000;
constexpr std::size_t kContexts = 100;
constexpr std::size_t kMinDistinct = 8;
constexpr double kDistinctShare = 0.90;
constexpr double kPlantRecovery = 0.80;
constexpr std::size_t kEvalLimit = 500;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

int failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail, bool surrogate = false) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " " << id << " " << name << (surrogate ? " [surrogate corpus]" : "")
            << ": " << detail << std::endl;
}

// ---- 1. loss oracles ---------------------------------------------------------------

constexpr TokenId kSkipId = special::kUnk;  // pools keyed on <unk> are skipped by design

oracle::Grid to_grid(const Matrix<double>& m) {
  oracle::Grid g(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    g[static_cast<std::size_t>(r)].assign(m.row(r).data(), m.row(r).data() + m.cols());
  return g;
}

TokenPool make_pool(const std::string& kw, TokenId tok, std::vector<TokenPoolMember> members) {
  TokenPool p;
  p.keyword = kw;
  p.keyword_token = tok;
  p.members = std::move(members);
  return p;
}

void criterion_loss_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n(0.0, 2.0);
  std::size_t mismatches = 0, instances = 0;
  double worst = 0.0;
  std::string first;
  auto note = [&](double got, double want, bool same_pick, const std::string& what) {
    const double err = std::abs(got - want);
    worst = std::max(worst, err);
    if (err > kOracleTol || !same_pick) {
      if (mismatches++ == 0) first = what + " got " + num(got, 8) + " want " + num(want, 8);
    }
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const int T = 1 + static_cast<int>(rng() % 5);
    const int V = 3 + static_cast<int>(rng() % 8);  // 3..10 columns
    Matrix<double> m(T, V);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    if (trial % 4 == 0) m = (m.array() * 2.0).round() / 2.0;  // exact ties
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(T));
    for (auto& b : mask) b = rng() % 3 != 0;
    mask[rng() % mask.size()] = 1;
    const auto grid = to_grid(m);

    std::vector<TokenId> ids;
    for (TokenId t = 0; t < V; ++t)
      if (t != kSkipId) ids.push_back(t);
    std::shuffle(ids.begin(), ids.end(), rng);
    auto name = [](TokenId t) { return "w" + std::to_string(t); };

    // min-NLL
    const TokenId kw = ids[0];
    auto a = keyword_min_nll<double>(m, mask, kw);
    auto o = oracle::min_nll(grid, mask, kw);
    // Rows tied to rounding may resolve either way; the pick must attain the minimum.
    auto nll_at = [&](int row, TokenId tok) {
      return row < 0 ? 0.0 : -oracle::log_probs(grid[static_cast<std::size_t>(row)])[static_cast<std::size_t>(tok)];
    };
    note(a.loss, o.loss, std::abs(nll_at(a.timestep, kw) - o.loss) <= 1e-12, "min-nll trial " + std::to_string(trial));

    // pooled, similarity-weighted or unit
    const std::size_t size = 1 + rng() % std::min<std::size_t>(4, ids.size());
    std::vector<TokenPoolMember> members;
    std::vector<oracle::Member> om;
    for (std::size_t i = 0; i < size; ++i) {
      const double sim = i == 0 ? 1.0 : static_cast<double>(rng() % 101) / 100.0;
      members.push_back({name(ids[i]), ids[i], sim});
      om.push_back({name(ids[i]), ids[i], sim});
    }
    std::shuffle(members.begin(), members.end(), rng);
    const bool unit = rng() % 2;
    auto s = keyword_sim_loss<double>(m, mask, make_pool(name(kw), kw, members), unit);
    auto op = oracle::pooled(grid, mask, name(kw), om, unit);
    const double op_nll = op.weight > 0 ? op.loss / op.weight : nll_at(op.timestep, op.token);
    note(s.loss, op.loss, std::abs(nll_at(s.timestep, s.token) - op_nll) <= 1e-12,
         "pooled trial " + std::to_string(trial));

    // multi-keyword sum over distinct keywords
    const std::size_t nk = 1 + rng() % std::min<std::size_t>(3, ids.size());
    const bool weighted = rng() % 2;
    KeywordSpec spec;
    spec.mode = KeywordLossMode::multi;
    spec.multi_weighting = weighted ? PoolWeighting::similarity : PoolWeighting::none;
    double want = 0.0;
    for (std::size_t k = 0; k < nk; ++k) {
      const TokenId t = ids[k];
      std::vector<TokenPoolMember> pm = {{name(t), t, 1.0}};
      std::vector<oracle::Member> po = {{name(t), t, 1.0}};
      if (weighted) {
        const TokenId nb = ids[(k + nk) % ids.size()];
        if (nb != t) {
          const double sim = static_cast<double>(rng() % 101) / 100.0;
          pm.push_back({name(nb), nb, sim});
          po.push_back({name(nb), nb, sim});
        }
        want += oracle::pooled(grid, mask, name(t), po, false).loss;
      } else {
        want += oracle::min_nll(grid, mask, t).loss;
      }
      spec.keywords.push_back(make_pool(name(t), t, pm));
    }
    auto ml = keyword_loss<double>(m, mask, spec);
    note(ml.loss, want, true, "multi trial " + std::to_string(trial));
    instances += 3;
  }
  const double secs = seconds_since(t0);
  verdict(1, "loss-oracle", mismatches == 0 && secs < kOracleSeconds,
          std::to_string(instances) + " checks over 1000 instances, " + std::to_string(mismatches) +
              " mismatches, max |err| " + sci(worst) + ", " + num(secs, 2) + " s" +
              (first.empty() ? "" : "; first: " + first));
}

// ---- 2. gradient checks --------------------------------------------------------------

SimilarityPool toy_pool(const std::string& kw) {
  SimilarityPool p;
  p.keyword = kw;
  if (kw.empty() || kw[0] != 'w') {
    p.members = {{kw, 1.0}};
    return p;
  }
  const int i = std::stoi(kw.substr(1));
  p.members = {{"w" + std::to_string((i + 1) % 11), 0.8}, {"w" + std::to_string((i + 4) % 11), 0.55}, {kw, 1.0}};
  return p;
}

bool same_selection(const LossBreakdown& a, const LossBreakdown& b) {
  if (a.selections.size() != b.selections.size()) return false;
  for (std::size_t i = 0; i < a.selections.size(); ++i) {
    if (a.selections[i].token != b.selections[i].token || a.selections[i].timestep != b.selections[i].timestep)
      return false;
  }
  return true;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  auto vocab = fixture::word_vocab(11);
  vocab.add(",");
  auto cfg = fixture::tiny_config(static_cast<int>(vocab.size()), 16, 2, 2);
  PoolCache pools(toy_pool, vocab);
  const auto examples = fixture::toy_examples(vocab, 3, 23);
  std::size_t checked = 0, skipped = 0, failed = 0;
  double worst = 0.0;
  std::string first;
  const std::vector<std::string> tags = {"no_kw", "kw_context", "kw_loss", "kw_sim_loss_glove", "kw_sim_loss_glove_1",
                                         "multi_kw_loss", "multi_kw_sim_loss_glove", "kw_pred", "ref_lm"};
  for (const auto& tag : tags) {
    auto model = Transformer<double>::initialize(cfg, 17);
    auto cls = ModelClass::parse(tag);
    const LossWeights w = cls.effective({1.0, 1.0, 1.0});
    for (const auto& e : examples) {
      if (e.keywords.empty()) continue;
      auto inst = make_instance(e, cls, vocab, &pools, cfg.max_len);
      auto grads = Parameters<double>::zeros(cfg);
      auto base = instance_loss<double>(model, inst, w, &grads);
      std::vector<Matrix<double>*> ps, gs;
      std::vector<std::string> names;
      model.params().visit([&](const std::string& nm, Matrix<double>& m) {
        ps.push_back(&m);
        names.push_back(nm);
      });
      grads.visit([&](const std::string&, Matrix<double>& m) { gs.push_back(&m); });
      for (std::size_t t = 0; t < ps.size(); ++t) {
        for (Eigen::Index i = 0; i < ps[t]->size(); ++i) {
          double& x = ps[t]->data()[i];
          const double x0 = x;
          x = x0 + kGradStep;
          auto hi = instance_loss<double>(model, inst, w);
          x = x0 - kGradStep;
          auto lo = instance_loss<double>(model, inst, w);
          x = x0;
          // A perturbation that moves the argmin sits on a tie.
          if (!same_selection(hi, base) || !same_selection(lo, base)) {
            ++skipped;
            continue;
          }
          const double fd = (hi.total - lo.total) / (2 * kGradStep);
          const double an = gs[t]->data()[i];
          const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
          ++checked;
          if (std::abs(fd - an) > kGradAbsFloor) worst = std::max(worst, err);
          if (err > kGradRelTol && std::abs(fd - an) > kGradAbsFloor) {
            if (failed++ == 0) first = tag + " " + names[t] + "[" + std::to_string(i) + "]";
          }
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  verdict(2, "gradient-check", failed == 0 && checked > 0 && secs < kGradSeconds,
          std::to_string(tags.size()) + " classes, " + std::to_string(checked) + " coordinates, " +
              std::to_string(failed) + " failures, " + std::to_string(skipped) + " tie exclusions, max rel err " +
              sci(worst) + ", " + num(secs, 1) + " s" + (first.empty() ? "" : "; first: " + first));
}

// ---- 3. reductions ---------------------------------------------------------------------

void criterion_reductions() {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> n(0.0, 2.0);
  double pool_err = 0.0, multi_err = 0.0;
  bool picks = true;
  for (int trial = 0; trial < 500; ++trial) {
    const int T = 1 + static_cast<int>(rng() % 8), V = special::kCount + 2 + static_cast<int>(rng() % 10);
    Matrix<double> m(T, V);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(T));
    for (auto& b : mask) b = rng() % 2;
    mask[rng() % mask.size()] = 1;
    const TokenId kw = special::kCount + static_cast<TokenId>(rng() % static_cast<unsigned>(V - special::kCount));
    auto base = keyword_min_nll<double>(m, mask, kw);
    auto pool = make_pool("k", kw, {{"k", kw, 1.0}});
    for (bool unit : {false, true}) {
      auto s = keyword_sim_loss<double>(m, mask, pool, unit);
      pool_err = std::max(pool_err, std::abs(s.loss - base.loss));
      picks = picks && s.timestep == base.timestep;
    }
    KeywordSpec spec;
    spec.mode = KeywordLossMode::multi;
    spec.keywords = {pool};
    multi_err = std::max(multi_err, std::abs(keyword_loss<double>(m, mask, spec).loss - base.loss));
  }

  // gamma = 0 against kw_context, step for step from a shared seed.
  auto vocab = fixture::word_vocab(30);
  auto train = fixture::toy_examples(vocab, 120, 41);
  auto valid = fixture::toy_examples(vocab, 12, 42);
  auto mc = fixture::tiny_config(static_cast<int>(vocab.size()), 32, 2, 4);
  mc.dropout = 0.1;
  auto run = [&](const std::string& tag) {
    TrainConfig tc;
    tc.model_class = tag;
    tc.weights.gamma = 0.0;
    tc.batch_size = 4;
    tc.epochs = 5;
    tc.max_steps = 50;
    tc.learning_rate = 1e-3;
    tc.warmup_steps = 10;
    tc.valid_kia_limit = 4;
    tc.seed = 9;
    return Trainer(tc, mc, vocab).train(train, valid);
  };
  auto a = run("kw_loss");
  auto b = run("kw_context");
  double trace_err = 0.0;
  const bool same_len = a.steps.size() == b.steps.size() && a.steps.size() == 50;
  for (std::size_t i = 0; same_len && i < a.steps.size(); ++i) {
    trace_err = std::max({trace_err, std::abs(a.steps[i].total - b.steps[i].total),
                          std::abs(a.steps[i].lm - b.steps[i].lm), std::abs(a.steps[i].cls - b.steps[i].cls)});
  }
  const bool pass = pool_err <= kOracleTol && picks && multi_err <= kOracleTol && same_len && trace_err <= kTraceTol;
  verdict(3, "reductions", pass,
          "pool={kw} vs min-NLL max |d| " + sci(pool_err) + ", multi N=1 max |d| " + sci(multi_err) +
              ", gamma=0 vs kw_context over " + std::to_string(a.steps.size()) + " steps max |d| " + sci(trace_err));
}

// ---- shared data for 4-8 -------------------------------------------------------------

struct Data {
  bool surrogate = true;
  Vocabulary vocab;
  EmbeddingTable table;
  std::vector<DialogExample> train, valid, test;
};

Data load_data(const fs::path& work) {
  Data d;
  fs::path dir, vectors;
  const char* dd = std::getenv("KWDIAL_DAILYDIALOG");
  const char* gv = std::getenv("KWDIAL_GLOVE");
  if (dd && gv && *dd && *gv) {
    d.surrogate = false;
    dir = dd;
    vectors = gv;
  } else {
    synth::SynthConfig sc;  // 2,000 training dialogs
    dir = work / "surrogate";
    synth::write(synth::generate(sc), dir);
    vectors = dir / "embeddings.txt";
  }
  auto train = parse_corpus(dir / "train.txt");
  if (train.size() > 2000) train.resize(2000);
  auto valid = parse_corpus(dir / "valid.txt");
  auto test = parse_corpus(dir / "test.txt");
  d.vocab = build_vocab(train);
  d.table = load_table(vectors);
  auto extractor = make_extractor(d.table);
  d.train = build_examples(train, d.vocab, extractor, 0);
  d.valid = build_examples(valid, d.vocab, extractor, 1);
  d.test = build_examples(test, d.vocab, extractor, 2);
  return d;
}

ModelConfig desk_model(const Vocabulary& vocab) {
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.d_model = 64;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.d_ff = 256;
  mc.max_len = 128;
  mc.dropout = 0.1;
  return mc;
}

TrainConfig desk_train(const std::string& tag, double gamma) {
  TrainConfig tc;
  tc.model_class = tag;
  tc.weights.gamma = gamma;
  tc.batch_size = 8;
  tc.epochs = 3;
  tc.learning_rate = 2e-3;
  tc.warmup_steps = 200;
  tc.seed = 1;
  return tc;
}

Transformer<float> train_model(const Data& d, const std::string& tag, double gamma) {
  const auto t0 = Clock::now();
  auto r = Trainer(desk_train(tag, gamma), desk_model(d.vocab), d.vocab).train(d.train, d.valid);
  std::cerr << "  trained " << tag << " gamma=" << gamma << " best epoch " << r.best_epoch << " in "
            << num(seconds_since(t0), 0) << " s\n";
  return std::move(r.model);
}

EvalConfig eval_config() {
  EvalConfig ec;
  ec.decode.strategy = DecodeStrategy::nucleus;
  ec.decode.top_p = 0.9;
  ec.decode.max_new_tokens = 40;
  ec.decode.seed = 0;
  ec.limit = kEvalLimit;
  return ec;
}

struct Models {
  std::optional<Transformer<float>> no_kw, kw_context, ref_lm, kw_pred;
  std::map<double, Transformer<float>> kw_loss;  // by gamma
  std::vector<EvalRow> rows;
  std::map<std::string, std::vector<std::string>> generations;
  double seconds = 0.0;
};

void train_and_eval(const Data& d, Models& m, const fs::path& work) {
  const auto t0 = Clock::now();
  m.no_kw = train_model(d, "no_kw", 0.0);
  m.kw_context = train_model(d, "kw_context", 0.0);
  for (double g : {0.0, 0.005, 1.0}) m.kw_loss.emplace(g, train_model(d, "kw_loss", g));
  m.ref_lm = train_model(d, "ref_lm", 0.0);

  const auto ec = eval_config();
  auto pools = [&](const std::string& k) { return nearest_neighbors(k, kDefaultPoolSize, d.table); };
  auto eval = [&](const std::string& name, const std::string& tag, const Transformer<float>& model) {
    std::vector<std::string> gens;
    m.rows.push_back(
        evaluate_model(name, model, ModelClass::parse(tag), d.test, d.vocab, ec, d.table, &*m.ref_lm, pools, &gens));
    m.generations[name] = std::move(gens);
  };
  eval("no_kw", "no_kw", *m.no_kw);
  eval("kw_context", "kw_context", *m.kw_context);
  eval("kw_loss(gamma=0)", "kw_loss", m.kw_loss.at(0.0));
  eval("kw_loss(gamma=0.005)", "kw_loss", m.kw_loss.at(0.005));
  eval("kw_loss(gamma=1)", "kw_loss", m.kw_loss.at(1.0));
  m.seconds = seconds_since(t0);

  EvalReport report;
  report.corpus_fingerprint = corpus_fingerprint(d.test);
  report.rows = m.rows;
  std::ofstream(work / "control_eval.json") << report.to_json();
  std::cerr << report.to_table();
}

const EvalRow& row(const Models& m, const std::string& name) {
  for (const auto& r : m.rows)
    if (r.name == name) return r;
  throw std::runtime_error("no eval row " + name);
}

void criterion_control(const Data& d, const Models& m) {
  const double none = row(m, "no_kw").kia, ctx = row(m, "kw_context").kia, loss = row(m, "kw_loss(gamma=0.005)").kia;
  const bool pass = none < kNoKwKiaMax && ctx >= none + kContextGain && loss >= ctx && m.seconds <= kControlSeconds;
  verdict(4, "control-effect", pass,
          "KIA no_kw " + num(none, 3) + ", kw_context " + num(ctx, 3) + ", kw_loss(0.005) " + num(loss, 3) + " on " +
              std::to_string(row(m, "no_kw").examples) + " test examples, " + num(m.seconds / 60.0, 1) +
              " min for all trainings and evals",
          d.surrogate);
}

void criterion_gamma(const Data& d, const Models& m) {
  const auto& g0 = row(m, "kw_loss(gamma=0)");
  const auto& g1 = row(m, "kw_loss(gamma=0.005)");
  const auto& g2 = row(m, "kw_loss(gamma=1)");
  const bool monotone = g0.kia <= g1.kia && g1.kia <= g2.kia;
  const bool ppl = g2.ppl && g1.ppl && *g2.ppl > *g1.ppl;
  verdict(5, "gamma-tradeoff", monotone && ppl,
          "KIA gamma 0/0.005/1 = " + num(g0.kia, 3) + "/" + num(g1.kia, 3) + "/" + num(g2.kia, 3) + ", ref-LM PPL " +
              num(g0.ppl.value_or(NAN), 2) + "/" + num(g1.ppl.value_or(NAN), 2) + "/" + num(g2.ppl.value_or(NAN), 2),
          d.surrogate);
}

// ---- 6. decoders ------------------------------------------------------------------------

std::vector<double> softmax(const std::vector<double>& logits) {
  auto lp = oracle::log_probs(logits);
  for (auto& v : lp) v = std::exp(v);
  return lp;
}

void criterion_decoders(const Data& d, const Models& m) {
  // Nucleus membership against the oracle set on a random landscape.
  std::size_t steps = 0, outside = 0, set_mismatch = 0;
  fixture::LandscapeSession land(61, 30, 0, 0.05);
  DecodeConfig nc;
  nc.strategy = DecodeStrategy::nucleus;
  nc.top_p = 0.9;
  nc.max_new_tokens = 60;
  for (std::uint64_t seed = 0; steps < kNucleusSteps; ++seed) {
    nc.seed = seed;
    std::vector<int> prefix;
    nucleus_sample(land, nc, [&](std::span<const TokenId> nucleus, TokenId chosen) {
      auto want = oracle::nucleus(softmax(land.logits_of(prefix)), nc.top_p);
      if (std::vector<int>(nucleus.begin(), nucleus.end()) != want) ++set_mismatch;
      if (std::find(want.begin(), want.end(), chosen) == want.end()) ++outside;
      prefix.push_back(chosen);
      ++steps;
    });
  }

  // One group equals textbook beam search.
  std::size_t beam_cases = 0, beam_mismatch = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (int width : {1, 2, 4, 6}) {
      fixture::LandscapeSession s(seed, 14, 0, 0.6, 1.5);
      DecodeConfig bc;
      bc.strategy = DecodeStrategy::diverse_beam;
      bc.beams = width;
      bc.groups = 1;
      bc.max_new_tokens = 8;
      auto got = diverse_beam_search(s, bc);
      auto want = oracle::beam_search([&](const std::vector<int>& p) { return s.logits_of(p); }, width, 8, 0);
      bool same = got.size() == want.size();
      for (std::size_t i = 0; same && i < got.size(); ++i) {
        same = std::vector<int>(got[i].tokens.begin(), got[i].tokens.end()) == want[i].tokens &&
               std::abs(got[i].score - want[i].score()) < 1e-9;
      }
      ++beam_cases;
      beam_mismatch += !same;
    }
  }

  // 10 beams in 2 groups on real contexts with the keyword-loss model.
  const auto& model = m.kw_loss.at(0.005);
  auto cls = ModelClass::parse("kw_loss");
  DecodeConfig dc;
  dc.strategy = DecodeStrategy::diverse_beam;
  dc.beams = 10;
  dc.groups = 2;
  dc.max_new_tokens = 40;
  std::size_t enough = 0, used = 0;
  for (std::size_t i = 0; i < d.test.size() && used < kContexts; ++i) {
    const auto& ex = d.test[i];
    auto kws = d.vocab.encode(keyword_block(ex, cls));
    TransformerSession s(model, ex.context, kws, dc.max_new_tokens);
    std::set<std::string> distinct;
    for (const auto& g : diverse_beam_search(s, dc)) distinct.insert(d.vocab.detokenize(g.tokens));
    enough += distinct.size() >= kMinDistinct;
    ++used;
  }
  const double share = used ? static_cast<double>(enough) / static_cast<double>(used) : 0.0;
  const bool pass = outside == 0 && set_mismatch == 0 && steps >= kNucleusSteps && beam_mismatch == 0 &&
                    share >= kDistinctShare;
  verdict(6, "decoder-contracts", pass,
          std::to_string(steps) + " nucleus steps, " + std::to_string(outside) + " outside, " +
              std::to_string(set_mismatch) + " set mismatches; 1-group beam " +
              std::to_string(beam_cases - beam_mismatch) + "/" + std::to_string(beam_cases) +
              " equal to oracle; >=8 distinct on " + std::to_string(enough) + "/" + std::to_string(used) +
              " contexts",
          d.surrogate);
}

// ---- 7. keyword predictors ---------------------------------------------------------------

bool contract_ok(const std::vector<KeywordSuggestion>& s) {
  if (s.size() > 3) return false;
  std::set<std::string> seen;
  for (const auto& k : s) {
    if (!is_valid_keyword(k.text) || split_words(k.text).size() != 1) return false;
    if (!seen.insert(k.text).second) return false;
  }
  return true;
}

std::vector<std::string> texts(const std::vector<KeywordSuggestion>& s) {
  std::vector<std::string> out;
  for (const auto& k : s) out.push_back(k.text);
  return out;
}

double planted_recovery(const fs::path& work, std::size_t* contexts) {
  const std::string plant = "zebra";
  synth::SynthConfig sc;
  sc.train_dialogs = 600;
  sc.valid_dialogs = 60;
  sc.test_dialogs = 60;
  sc.topics = 10;
  sc.words_per_topic = 15;
  sc.plant = plant;
  sc.seed = 11;
  Data d;
  const auto dir = work / "planted";
  synth::write(synth::generate(sc), dir);
  auto train = parse_corpus(dir / "train.txt");
  d.vocab = build_vocab(train);
  d.table = load_table(dir / "embeddings.txt");
  auto ex = make_extractor(d.table);
  d.train = build_examples(train, d.vocab, ex, 0);
  d.valid = build_examples(parse_corpus(dir / "valid.txt"), d.vocab, ex, 1);
  d.test = build_examples(parse_corpus(dir / "test.txt"), d.vocab, ex, 2);
  auto model = train_model(d, "kw_pred", 0.0);
  std::size_t hits = 0, n = 0;
  SuggestConfig sc2;
  for (std::size_t i = 0; i < d.test.size() && n < kContexts; ++i) {
    auto s = generative_suggest(d.test[i].context, model, d.vocab, sc2);
    hits += std::any_of(s.begin(), s.end(), [&](const KeywordSuggestion& k) { return k.text == plant; });
    ++n;
  }
  *contexts = n;
  return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
}

void criterion_predictors(const Data& d, Models& m, const fs::path& work) {
  m.kw_pred = train_model(d, "kw_pred", 0.0);
  SuggestConfig sc;
  std::size_t gen_ok = 0, ext_ok = 0, used = 0;
  std::vector<std::vector<std::string>> gen_lists, ext_lists;
  for (std::size_t i = 0; i < d.test.size() && used < kContexts; ++i) {
    const auto& ctx = d.test[i].context;
    auto g = generative_suggest(ctx, *m.kw_pred, d.vocab, sc);
    auto e = extractive_suggest(ctx, *m.no_kw, d.vocab, sc, d.table);
    gen_ok += contract_ok(g);
    ext_ok += contract_ok(e);
    gen_lists.push_back(texts(g));
    ext_lists.push_back(texts(e));
    ++used;
  }
  auto diversity = [&](const std::vector<std::vector<std::string>>& lists) {
    try {
      return num(keyword_diversity(lists, d.table).value, 3);
    } catch (const ConfigError&) {
      return std::string("n/a");
    }
  };
  std::size_t planted_n = 0;
  const double recovery = planted_recovery(work, &planted_n);
  const bool pass = gen_ok == used && ext_ok == used && used == kContexts && recovery >= kPlantRecovery;
  verdict(7, "keyword-predictors", pass,
          "contract held generative " + std::to_string(gen_ok) + "/" + std::to_string(used) + ", extractive " +
              std::to_string(ext_ok) + "/" + std::to_string(used) + "; diversity generative " +
              diversity(gen_lists) + ", extractive " + diversity(ext_lists) + "; planted keyword recovered on " +
              num(100.0 * recovery, 1) + "% of " + std::to_string(planted_n) + " held-out contexts",
          d.surrogate);
}

// ---- 8. metric identities ---------------------------------------------------------------

void criterion_metrics(const Data& d, const Models& m) {
  bool sim_ok = true;
  for (const auto& r : m.rows) sim_ok = sim_ok && r.sim_kia >= r.kia;

  // Perplexity of generated responses under the reference LM in double precision,
  // against exp of the token-weighted reference lm_loss computed directly.
  auto ref = Transformer<double>(m.ref_lm->config(), m.ref_lm->params().cast<double>());
  std::vector<std::vector<TokenId>> responses;
  for (const auto& text : m.generations.at("kw_loss(gamma=0.005)")) {
    responses.push_back(d.vocab.tokenize(text));
    if (responses.size() == 200) break;
  }
  const double ppl = perplexity<double>(responses, ref);
  double nll = 0.0, count = 0.0;
  for (const auto& r : responses) {
    EncodeOptions opts;
    opts.max_len = ref.config().max_len;
    std::span<const TokenId> body(r.data(), std::min<std::size_t>(r.size(), static_cast<std::size_t>(opts.max_len) - 5));
    auto in = encode_example({}, body, {}, opts);
    auto fwd = ref.forward(in);
    const double tokens = static_cast<double>(std::count(in.lm_mask.begin(), in.lm_mask.end(), 1));
    nll += lm_loss<double>(fwd.logits, in.targets, in.lm_mask) * tokens;
    count += tokens;
  }
  const double direct = std::exp(nll / count);
  const double ppl_err = std::abs(ppl - direct);

  // A model whose every weight is zero predicts the uniform distribution.
  auto zc = ref.config();
  auto zero = Transformer<double>(zc, Parameters<double>::zeros(zc));
  const double uniform = perplexity<double>(responses, zero);
  const double uni_err = std::abs(uniform - static_cast<double>(zc.vocab_size));

  verdict(8, "metric-identities", sim_ok && ppl_err <= kPplTol && uni_err <= kPplTol,
          "sim_kia >= kia on " + std::to_string(m.rows.size()) + " rows: " + (sim_ok ? "yes" : "no") +
              "; PPL " + num(ppl, 6) + " vs exp(lm_loss) " + num(direct, 6) + " (|d| " + sci(ppl_err) +
              "); uniform PPL " + num(uniform, 6) + " vs V=" + std::to_string(zc.vocab_size),
          d.surrogate);
}

// ---- 9. CLI determinism -------------------------------------------------------------------

int sh(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

void criterion_determinism(const fs::path& work) {
  const fs::path root = work / "cli";
  const fs::path corpus = root / "corpus";
  synth::SynthConfig sc;
  sc.train_dialogs = 120;
  sc.valid_dialogs = 15;
  sc.test_dialogs = 15;
  sc.topics = 4;
  sc.words_per_topic = 10;
  sc.dim = 16;
  synth::write(synth::generate(sc), corpus);
  {
    std::ofstream ctx(root / "context.txt");
    ctx << "how is the weather today\n";
  }
  const std::string cli = std::string("\"") + KWDIAL_CLI + "\" --seed 5 --deterministic ";
  const fs::path out = root / "out";
  auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  const std::vector<std::string> steps = {
      cli + "prepare --train " + q(corpus / "train.txt") + " --valid " + q(corpus / "valid.txt") + " --test " +
          q(corpus / "test.txt") + " --embeddings " + q(corpus / "embeddings.txt") + " --out " + q(out / "data") +
          " > " + q(out / "prepare.stdout"),
      cli + "train --data " + q(out / "data") + " --model-class kw_loss --d-model 16 --layers 1 --heads 2 --ffn 32 " +
          "--max-len 64 --batch 4 --epochs 2 --max-steps 40 --valid-kia-limit 4 --checkpoint " + q(out / "m.ckpt") +
          " --log " + q(out / "train.log") + " 2> " + q(out / "train.stderr"),
      cli + "eval --data " + q(out / "data") + " --embeddings " + q(corpus / "embeddings.txt") + " --checkpoint " +
          q(out / "m.ckpt") + " --limit 20 --json " + q(out / "eval.json") + " --generations " +
          q(out / "gens.tsv") + " > " + q(out / "eval.stdout"),
      cli + "generate --checkpoint " + q(out / "m.ckpt") + " --context-file " + q(root / "context.txt") +
          " --num 3 > " + q(out / "generate.stdout"),
  };
  std::vector<std::map<std::string, std::string>> runs;
  bool ran = true;
  for (int r = 0; r < 2 && ran; ++r) {
    fs::remove_all(out);
    fs::create_directories(out);
    for (const auto& cmd : steps) {
      if (sh(cmd) != 0) {
        ran = false;
        std::cerr << "  command failed: " << cmd << "\n";
        break;
      }
    }
    if (ran) runs.push_back(snapshot(out));
  }
  std::size_t differing = 0;
  std::string which;
  if (runs.size() == 2) {
    for (const auto& [name, bytes] : runs[0]) {
      auto it = runs[1].find(name);
      if (it == runs[1].end() || it->second != bytes) {
        ++differing;
        which += " " + name;
      }
    }
    if (runs[1].size() != runs[0].size()) ++differing;
  }
  const bool pass = ran && runs.size() == 2 && differing == 0 && runs[0].count("m.ckpt") &&
                    !runs[0].at("generate.stdout").empty();
  verdict(9, "determinism", pass,
          ran ? std::to_string(runs.empty() ? 0 : runs[0].size()) + " output files from prepare/train/eval/generate, " +
                    std::to_string(differing) + " differ between runs" + which
              : "a command failed");
}

std::set<int> parse_only(const std::string& s) {
  std::set<int> out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) out.insert(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "kwdial_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only = parse_only(argv[++i]);
    } else {
      std::cerr << "usage: kwdial_acceptance [--work DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  auto want = [&](int id) { return only.empty() || only.count(id); };
  fs::create_directories(work);
  try {
    if (want(1)) criterion_loss_oracles();
    if (want(2)) criterion_gradients();
    if (want(3)) criterion_reductions();
    if (want(4) || want(5) || want(6) || want(7) || want(8)) {
      auto data = load_data(work);
      std::cerr << "  corpus: " << data.train.size() << " train / " << data.valid.size() << " valid / "
                << data.test.size() << " test examples, vocabulary " << data.vocab.size() << "\n";
      Models models;
      train_and_eval(data, models, work);
      if (want(4)) criterion_control(data, models);
      if (want(5)) criterion_gamma(data, models);
      if (want(6)) criterion_decoders(data, models);
      if (want(7)) criterion_predictors(data, models, work);
      if (want(8)) criterion_metrics(data, models);
    }
    if (want(9)) criterion_determinism(work);
  } catch (const std::exception& e) {
    std::cout << "FAIL aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
