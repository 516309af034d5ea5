#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "kwdial/error.hpp"

using namespace kwdial::cli;

namespace {

void add_model_flags(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--data", t.data, "Directory written by prepare")->required();
  cmd->add_option("--model-class", t.model_class)->capture_default_str();
  cmd->add_option("--alpha", t.weights.alpha)->capture_default_str();
  cmd->add_option("--beta", t.weights.beta)->capture_default_str();
  cmd->add_option("--gamma", t.weights.gamma)->capture_default_str();
  cmd->add_option("--batch", t.batch)->capture_default_str();
  cmd->add_option("--epochs", t.epochs)->capture_default_str();
  cmd->add_option("--lr", t.lr)->capture_default_str();
  cmd->add_option("--warmup", t.warmup)->capture_default_str();
  cmd->add_option("--clip", t.clip)->capture_default_str();
  cmd->add_option("--checkpoint-every", t.checkpoint_every, "Epochs between snapshots (0 = best only)");
  cmd->add_option("--max-steps", t.max_steps, "Stop after this many updates (0 = no limit)");
  cmd->add_option("--max-examples", t.max_examples, "Use only the first N training examples");
  cmd->add_option("--valid-limit", t.valid_limit)->capture_default_str();
  cmd->add_option("--valid-kia-limit", t.valid_kia_limit)->capture_default_str();
  cmd->add_option("--embeddings", t.embeddings, "Word vectors (GloVe text format)");
  cmd->add_option("--synonyms", t.synonyms, "Synonym lexicon TSV");
  cmd->add_option("--d-model", t.model.d_model)->capture_default_str();
  cmd->add_option("--layers", t.model.n_layers)->capture_default_str();
  cmd->add_option("--heads", t.model.n_heads)->capture_default_str();
  cmd->add_option("--ffn", t.model.d_ff)->capture_default_str();
  cmd->add_option("--max-len", t.model.max_len)->capture_default_str();
  cmd->add_option("--dropout", t.model.dropout)->capture_default_str();
}

void add_eval_flags(CLI::App* cmd, EvalArgs& e, bool data) {
  if (data) cmd->add_option("--data", e.data, "Directory written by prepare")->required();
  cmd->add_option("--split", e.split)->capture_default_str();
  cmd->add_option("--ref-lm", e.ref_lm, "Reference LM checkpoint (ref_lm class) for perplexity");
  if (data) cmd->add_option("--embeddings", e.embeddings, "Word vectors (GloVe text format)")->required();
  cmd->add_option("--top-p", e.top_p)->capture_default_str();
  cmd->add_option("--max-new-tokens", e.max_new_tokens)->capture_default_str();
  cmd->add_option("--limit", e.limit, "Evaluate only the first N examples");
  cmd->add_option("--json", e.json, "Write the report as JSON");
}

void add_decode_flags(CLI::App* cmd, DecodeArgs& d) {
  cmd->add_option("--strategy", d.strategy, "beam, nucleus or greedy")->capture_default_str();
  cmd->add_option("--beams", d.beams)->capture_default_str();
  cmd->add_option("--groups", d.groups)->capture_default_str();
  cmd->add_option("--diversity-penalty", d.penalty)->capture_default_str();
  cmd->add_option("--top-p", d.top_p)->capture_default_str();
  cmd->add_option("--max-new-tokens", d.max_new_tokens)->capture_default_str();
}

void add_service_models(CLI::App* cmd, ServeArgs& s) {
  cmd->add_option("--response", s.response, "Keyword-conditioned response checkpoint")->required();
  cmd->add_option("--multi-response", s.multi_response, "Checkpoint used for 2-3 keywords");
  cmd->add_option("--predictor", s.predictor, "Keyword predictor checkpoint (kw_pred)")->required();
  cmd->add_option("--base", s.base, "Keywordless checkpoint (no_kw)")->required();
  cmd->add_option("--embeddings", s.embeddings)->required();
  add_decode_flags(cmd, s.decode);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keyword-controllable dialog response generation"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();
  app.add_flag("--deterministic", common.deterministic, "Single-threaded, bit-reproducible execution");

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Corpus files to example JSONL with extracted keywords");
  p->add_option("--train", prep.train)->required();
  p->add_option("--valid", prep.valid);
  p->add_option("--test", prep.test);
  p->add_option("--embeddings", prep.embeddings)->required();
  p->add_option("--out", prep.out)->required();
  p->add_option("--min-freq", prep.min_freq)->capture_default_str();
  p->add_option("--max-dialogs", prep.max_dialogs, "Use only the first N training dialogs");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one model class");
  add_model_flags(t, tr);
  t->add_option("--checkpoint", tr.checkpoint)->required();
  t->add_option("--log", tr.log, "JSON-lines epoch log (default stdout)");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep-gamma", "Train and evaluate over keyword-loss weights");
  add_model_flags(s, sw.train);
  add_eval_flags(s, sw.eval, false);
  sw.train.model_class = "kw_loss";
  s->add_option("--values", sw.values, "Comma-separated gamma values")->delimiter(',')->capture_default_str();
  s->add_option("--out-dir", sw.out_dir)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints on a prepared split");
  add_eval_flags(e, ev, true);
  e->add_option("--checkpoint", ev.checkpoints, "Repeatable")->required();
  e->add_option("--generations", ev.generations, "Write generated responses (TSV)");

  SuggestArgs sg;
  auto* su = app.add_subcommand("suggest", "Keyword suggestions for a context");
  su->add_option("--base", sg.base)->required();
  su->add_option("--predictor", sg.predictor)->required();
  su->add_option("--embeddings", sg.embeddings)->required();
  su->add_option("--context-file", sg.context_file, "One turn per line, oldest first");
  add_decode_flags(su, sg.decode);

  GenerateArgs gn;
  auto* g = app.add_subcommand("generate", "Responses for a context and keywords");
  g->add_option("--checkpoint", gn.checkpoint)->required();
  g->add_option("--keywords", gn.keywords)->delimiter(',');
  g->add_option("--context-file", gn.context_file, "One turn per line, oldest first");
  g->add_option("--num", gn.decode.num)->capture_default_str();
  add_decode_flags(g, gn.decode);

  ServeArgs in;
  auto* it = app.add_subcommand("interact", "Terminal loop: partner turn, keywords, responses, commit");
  add_service_models(it, in);

  ServeArgs sv;
  auto* se = app.add_subcommand("serve", "HTTP JSON service");
  add_service_models(se, sv);
  se->add_option("--host", sv.host)->capture_default_str();
  se->add_option("--port", sv.port)->capture_default_str();
  se->add_option("--persist", sv.persist, "Append-only session log");
  se->add_option("--static", sv.static_dir, "Directory served under /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << app.help();
    std::cerr << "error: usage: " << ex.what() << "\n";
    return 2;
  }

  try {
    if (p->parsed()) return prepare(prep, common);
    if (t->parsed()) return train(tr, common);
    if (s->parsed()) {
      sw.eval.data = sw.train.data;
      sw.eval.embeddings = sw.train.embeddings;
      if (sw.eval.embeddings.empty()) throw kwdial::ConfigError("sweep-gamma needs --embeddings");
      return sweep_gamma(sw, common);
    }
    if (e->parsed()) return eval(ev, common);
    if (su->parsed()) return suggest(sg, common);
    if (g->parsed()) return generate(gn, common);
    if (it->parsed()) return interact(in, common);
    if (se->parsed()) return serve(sv, common);
  } catch (const kwdial::Error& ex) {
    std::cerr << "error: " << ex.kind() << ": " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: internal: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
