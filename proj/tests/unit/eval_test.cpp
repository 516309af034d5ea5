#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "kwdial/error.hpp"
#include "kwdial/eval.hpp"
#include "kwdial/objective.hpp"

using namespace kwdial;

namespace {

EmbeddingTable table_of(const std::string& text) {
  std::istringstream in(text);
  return load_table(in);
}

const char* kOrtho =
    "apple 1 0 0\n"
    "banana 0 1 0\n"
    "cherry 0 0 1\n"
    "grape 1 1 0\n";

}  // namespace

TEST(Kia, HitsMissesAndExclusions) {
  std::vector<std::string> r = {"press this button", "Press THIS, button!", "no match here", "anything"};
  std::vector<std::vector<std::string>> k = {{"button"}, {"button"}, {"button"}, {}};
  auto res = kia(r, k);
  EXPECT_EQ(res.counted, 3u);
  EXPECT_EQ(res.excluded, 1u);
  EXPECT_NEAR(res.kia, 2.0 / 3.0, 1e-12);
  // Substrings of a token do not count.
  std::vector<std::string> sub = {"buttons everywhere"};
  std::vector<std::vector<std::string>> kb = {{"button"}};
  EXPECT_EQ(kia(sub, kb).kia, 0.0);
}

TEST(Kia, MultiKeywordNeedsAll) {
  std::vector<std::string> r = {"red car fast", "red bike"};
  std::vector<std::vector<std::string>> k = {{"red", "car"}, {"red", "car"}};
  EXPECT_NEAR(kia(r, k).kia, 0.5, 1e-12);
  std::vector<std::vector<std::string>> bad = {{"x"}};
  EXPECT_THROW(kia(r, bad), ConfigError);
}

TEST(Kia, SimilarityPoolSplit) {
  PoolLookup pools = [](const std::string& w) {
    SimilarityPool p;
    p.keyword = w;
    if (w == "run") p.members = {{"jogging", 0.7}};
    p.members.push_back({w, 1.0});
    return p;
  };
  std::vector<std::string> r = {"i went jogging today"};
  std::vector<std::vector<std::string>> k = {{"run"}};
  auto res = kia(r, k, pools);
  EXPECT_EQ(res.kia, 0.0);
  EXPECT_EQ(res.sim_kia, 1.0);
}

TEST(Kia, AppendingKeywordForcesOneAndSimKiaDominates) {
  std::mt19937_64 rng(4);
  const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "omega", "sigma"};
  PoolLookup pools = [&](const std::string& w) {
    SimilarityPool p;
    p.keyword = w;
    p.members = {{words[(std::find(words.begin(), words.end(), w) - words.begin() + 1) % words.size()], 0.5}, {w, 1.0}};
    return p;
  };
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> r;
    std::vector<std::vector<std::string>> k;
    for (int i = 0; i < 10; ++i) {
      std::string s;
      for (int j = 0; j < 4; ++j) s += words[rng() % words.size()] + " ";
      r.push_back(s);
      k.push_back({words[rng() % words.size()]});
    }
    auto res = kia(r, k, pools);
    EXPECT_GE(res.sim_kia, res.kia);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += " " + k[i].front();
    EXPECT_EQ(kia(r, k).kia, 1.0);
  }
}

TEST(KeywordDiversity, IdenticalOrthogonalAndErrors) {
  auto t = table_of(kOrtho);
  std::vector<std::vector<std::string>> same = {{"apple", "apple"}, {"banana", "banana", "banana"}};
  EXPECT_NEAR(keyword_diversity(same, t).value, 1.0, 1e-9);
  std::vector<std::vector<std::string>> ortho = {{"apple", "banana", "cherry"}};
  EXPECT_NEAR(keyword_diversity(ortho, t).value, 0.0, 1e-12);
  // apple-grape and banana-grape are 1/sqrt(2); apple-banana is 0.
  std::vector<std::vector<std::string>> mixed = {{"apple", "banana", "grape"}, {"apple", "zzz"}};
  auto d = keyword_diversity(mixed, t);
  EXPECT_NEAR(d.value, (2.0 / std::sqrt(2.0)) / 3.0, 1e-6);
  EXPECT_EQ(d.used, 1u);
  EXPECT_EQ(d.excluded, 1u);
  std::vector<std::vector<std::string>> none = {{"apple"}, {"zzz", "yyy"}};
  EXPECT_THROW(keyword_diversity(none, t), ConfigError);
}

TEST(ResponseSimilarity, HandArithmetic) {
  auto t = table_of(kOrtho);
  EXPECT_NEAR(response_similarity("apple banana", "apple banana", t), 1.0, 1e-9);
  EXPECT_NEAR(response_similarity("apple", "cherry", t), 0.0, 1e-12);
  // centroid(apple cherry) = (.5, 0, .5), centroid(grape) = (1, 1, 0): cos = .5 / (sqrt(.5) * sqrt(2)) = .5
  EXPECT_NEAR(response_similarity("the apple and a cherry", "grape", t), 0.5, 1e-6);
  EXPECT_EQ(response_similarity("the and", "apple", t), 0.0);
}

TEST(DistinctN, HandCounts) {
  std::vector<std::string> r = {"i like tea", "i like coffee", "tea please"};
  EXPECT_NEAR(distinct_n(r, 1), 5.0 / 8.0, 1e-12);
  EXPECT_NEAR(distinct_n(r, 2), 4.0 / 5.0, 1e-12);
  std::vector<std::string> same(20, "a b c");
  EXPECT_NEAR(distinct_n(same, 1), 3.0 / 60.0, 1e-12);
  std::vector<std::string> disjoint = {"a b", "c d", "e f"};
  EXPECT_EQ(distinct_n(disjoint, 2), 1.0);
  std::vector<std::string> shortr = {"a", "b"};
  EXPECT_THROW(distinct_n(shortr, 2), ConfigError);
  EXPECT_THROW(distinct_n(r, 0), ConfigError);
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  auto cfg = fixture::tiny_config(40);
  Transformer<double> uniform(cfg, Parameters<double>::zeros(cfg));
  std::vector<std::vector<TokenId>> resp = {{9, 10, 11}, {12}};
  EXPECT_NEAR(perplexity<double>(resp, uniform), 40.0, 1e-9);
  EXPECT_THROW(perplexity<double>(std::vector<std::vector<TokenId>>{}, uniform), ConfigError);
}

TEST(Perplexity, CertainModelGivesOne) {
  auto cfg = fixture::tiny_config(30);
  auto p = Parameters<double>::zeros(cfg);
  p.final_bias(0, 0) = 1.0;
  p.token_embedding(special::kEos, 0) = 60.0;
  Transformer<double> certain(cfg, p);
  std::vector<std::vector<TokenId>> resp = {{}, {}};
  EXPECT_NEAR(perplexity<double>(resp, certain), 1.0, 1e-12);
}

TEST(Perplexity, EqualsExpOfLmLoss) {
  auto cfg = fixture::tiny_config(30);
  auto m = Transformer<double>::initialize(cfg, 21);
  std::vector<std::vector<TokenId>> resp = {{9, 14, 20, 11}, {25, 8}};
  double nll = 0;
  std::size_t n = 0;
  for (const auto& r : resp) {
    auto in = encode_example({}, r, {}, {});
    auto logits = m.forward(in).logits;
    const auto count = static_cast<std::size_t>(std::count(in.lm_mask.begin(), in.lm_mask.end(), 1));
    nll += lm_loss<double>(logits, in.targets, in.lm_mask) * static_cast<double>(count);
    n += count;
  }
  EXPECT_NEAR(perplexity<double>(resp, m), std::exp(nll / static_cast<double>(n)), 1e-6);
  EXPECT_NEAR(perplexity<double>(std::span(resp).first(1), m),
              std::exp(lm_loss<double>(m.forward(encode_example({}, resp[0], {}, {})).logits,
                                       encode_example({}, resp[0], {}, {}).targets,
                                       encode_example({}, resp[0], {}, {}).lm_mask)),
              1e-6);
}

TEST(EvaluateModel, DeterministicAcrossThreadCountsAndRatesInRange) {
  auto vocab = fixture::word_vocab(12);
  std::string text;
  for (int i = 0; i < 12; ++i) {
    text += "w" + std::to_string(i);
    for (int d = 0; d < 4; ++d) text += " " + std::to_string(((i * 7 + d * 3) % 11) / 10.0 - 0.3);
    text += "\n";
  }
  auto table = table_of(text);
  auto test = fixture::toy_examples(vocab, 12, 31);
  auto cfg = fixture::tiny_config(static_cast<int>(vocab.size()));
  auto model = Transformer<float>::initialize(cfg, 2);
  auto ref = Transformer<float>::initialize(cfg, 3);
  EvalConfig ec;
  ec.decode.max_new_tokens = 8;
  ec.decode.seed = 9;
  PoolLookup pools = [&](const std::string& w) { return nearest_neighbors(w, 2, table); };
  auto cls = ModelClass::parse("kw_loss");
  std::vector<std::string> g1, g3;
  auto a = evaluate_model("m", model, cls, test, vocab, ec, table, &ref, pools, &g1);
  ec.threads = 3;
  auto b = evaluate_model("m", model, cls, test, vocab, ec, table, &ref, pools, &g3);
  EXPECT_EQ(g1, g3);
  EXPECT_EQ(a.kia, b.kia);
  EXPECT_EQ(a.similarity, b.similarity);
  EXPECT_EQ(a.ppl, b.ppl);
  EXPECT_EQ(a.examples, 12u);
  for (double r : {a.kia, a.sim_kia, a.similarity, a.distinct1, a.distinct2}) {
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
  ASSERT_TRUE(a.ppl.has_value());
  EXPECT_GE(*a.ppl, 1.0);
  EXPECT_GE(a.sim_kia, a.kia);

  EvalReport report;
  report.rows = {a};
  report.corpus_fingerprint = corpus_fingerprint(test);
  auto j = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(j["rows"][0]["model"], "m");
  auto table_text = report.to_table();
  for (const char* col : {"Model", "KIA", "Sim-KIA", "Similarity", "Distinct-1", "Distinct-2", "PPL"})
    EXPECT_NE(table_text.find(col), std::string::npos) << col;
  EXPECT_EQ(corpus_fingerprint(test), corpus_fingerprint(test));
  EXPECT_NE(corpus_fingerprint(test), corpus_fingerprint(std::span(test).first(11)));
}
