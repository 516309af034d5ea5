#include <iostream>

#include <CLI11.hpp>

#include "kwdial/error.hpp"
#include "synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a topic-clustered surrogate dialog corpus with word vectors and a synonym lexicon"};
  kwdial::synth::SynthConfig c;
  std::string out = "synth";
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--train-dialogs", c.train_dialogs)->capture_default_str();
  app.add_option("--valid-dialogs", c.valid_dialogs)->capture_default_str();
  app.add_option("--test-dialogs", c.test_dialogs)->capture_default_str();
  app.add_option("--topics", c.topics)->capture_default_str();
  app.add_option("--words-per-topic", c.words_per_topic)->capture_default_str();
  app.add_option("--min-turns", c.min_turns)->capture_default_str();
  app.add_option("--max-turns", c.max_turns)->capture_default_str();
  app.add_option("--dim", c.dim)->capture_default_str();
  app.add_option("--noise", c.noise)->capture_default_str();
  app.add_option("--plant", c.plant, "Word inserted into every utterance");
  app.add_option("--seed", c.seed)->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    kwdial::synth::write(kwdial::synth::generate(c), out);
  } catch (const kwdial::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
