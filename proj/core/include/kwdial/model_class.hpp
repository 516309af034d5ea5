#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kwdial/corpus.hpp"
#include "kwdial/objective.hpp"

namespace kwdial {

enum class KeywordInput { none, single, multi };
enum class PoolSource { none, embeddings, lexicon };

// Training recipe named by a tag such as "kw_loss" or "kw_sim_loss_glove_1".
//   no_kw                       empty keyword block, gamma forced to 0
//   kw_context                  top keyword in the block, gamma forced to 0
//   kw_loss                     + min-NLL keyword loss
//   kw_sim_loss_{glove,lexicon}[_1]   + pooled loss (embedding / lexicon pools,
//                               "_1" forces unit similarity)
//   multi_kw_{context,loss,sim_loss_*}  same with all extracted keywords
//   kw_pred                     generative keyword predictor (<kwpred> targets)
//   ref_lm                      context-free reference LM for perplexity
// "wordnet" is accepted as an alias of "lexicon".
struct ModelClass {
  std::string tag = "no_kw";
  KeywordInput input = KeywordInput::none;
  bool keyword_loss = false;
  PoolSource pools = PoolSource::none;
  bool unit_sim = false;
  bool keyword_prediction = false;
  bool reference_lm = false;

  static ModelClass parse(std::string_view tag);
  static std::vector<std::string> known_tags();

  bool uses_classification() const { return !keyword_prediction && !reference_lm; }
  // Effective loss weights: gamma is zeroed for classes without a keyword
  // loss, beta for the predictor and reference LM.
  LossWeights effective(const LossWeights& w) const;
  KeywordLossMode loss_mode() const;
  PoolWeighting pool_weighting() const;
};

// Keywords placed in the encoded keyword block for this class.
std::vector<std::string> keyword_block(const DialogExample& example, const ModelClass& cls);

// Keywords a generated response is expected to contain (KIA targets).
std::vector<std::string> kia_targets(const DialogExample& example, const ModelClass& cls);

// "k1 , k2 , k3" target text for the generative keyword predictor.
std::string keyword_prediction_target(std::span<const std::string> keywords);

}  // namespace kwdial
