#include "kwdial/model_class.hpp"

#include "kwdial/error.hpp"

namespace kwdial {

ModelClass ModelClass::parse(std::string_view raw) {
  ModelClass c;
  c.tag = std::string(raw);
  std::string tag(raw);
  if (auto p = tag.find("wordnet"); p != std::string::npos) tag.replace(p, 7, "lexicon");

  if (tag == "no_kw") return c;
  if (tag == "kw_pred") {
    c.keyword_prediction = true;
    return c;
  }
  if (tag == "ref_lm") {
    c.reference_lm = true;
    return c;
  }

  std::string rest = tag;
  c.input = KeywordInput::single;
  if (rest.starts_with("multi_")) {
    c.input = KeywordInput::multi;
    rest = rest.substr(6);
  }
  if (rest == "kw_context") return c;
  if (rest == "kw_loss") {
    c.keyword_loss = true;
    return c;
  }
  if (rest.ends_with("_1")) {
    c.unit_sim = true;
    rest = rest.substr(0, rest.size() - 2);
  }
  if (rest == "kw_sim_loss_glove") {
    c.keyword_loss = true;
    c.pools = PoolSource::embeddings;
    return c;
  }
  if (rest == "kw_sim_loss_lexicon") {
    c.keyword_loss = true;
    c.pools = PoolSource::lexicon;
    return c;
  }
  throw ConfigError("unknown model class: " + std::string(raw));
}

std::vector<std::string> ModelClass::known_tags() {
  std::vector<std::string> out = {"no_kw", "kw_context", "kw_loss"};
  for (auto src : {"glove", "lexicon"}) {
    out.push_back(std::string("kw_sim_loss_") + src);
    out.push_back(std::string("kw_sim_loss_") + src + "_1");
  }
  std::vector<std::string> multi;
  for (std::size_t i = 1; i < out.size(); ++i) multi.push_back("multi_" + out[i]);
  out.insert(out.end(), multi.begin(), multi.end());
  out.push_back("kw_pred");
  out.push_back("ref_lm");
  return out;
}

LossWeights ModelClass::effective(const LossWeights& w) const {
  LossWeights e = w;
  if (!keyword_loss) e.gamma = 0.0;
  if (!uses_classification()) e.beta = 0.0;
  return e;
}

KeywordLossMode ModelClass::loss_mode() const {
  if (input == KeywordInput::multi) return KeywordLossMode::multi;
  if (pools == PoolSource::none) return KeywordLossMode::plain;
  return unit_sim ? KeywordLossMode::sim_unit : KeywordLossMode::sim_weighted;
}

PoolWeighting ModelClass::pool_weighting() const {
  if (pools == PoolSource::none) return PoolWeighting::none;
  return unit_sim ? PoolWeighting::unit : PoolWeighting::similarity;
}

std::vector<std::string> keyword_block(const DialogExample& example, const ModelClass& cls) {
  switch (cls.input) {
    case KeywordInput::none:
      return {};
    case KeywordInput::single:
      if (example.keywords.empty()) return {};
      return {example.keywords.front()};
    case KeywordInput::multi:
      return example.keywords;
  }
  return {};
}

std::vector<std::string> kia_targets(const DialogExample& example, const ModelClass& cls) {
  if (example.keywords.empty()) return {};
  if (cls.input == KeywordInput::multi) return example.keywords;
  return {example.keywords.front()};
}

std::string keyword_prediction_target(std::span<const std::string> keywords) {
  std::string out;
  for (std::size_t i = 0; i < keywords.size(); ++i) {
    if (i) out += " , ";
    out += keywords[i];
  }
  return out;
}

}  // namespace kwdial
