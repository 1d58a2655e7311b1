// Writes the planted-preference toy corpus (news, behaviours, triples, word
// vectors) into a directory.

#include <iostream>

#include "CLI11.hpp"
#include "dor/errors.hpp"
#include "dor/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic planted-preference corpus"};
  dor::synth::SyntheticConfig config;
  std::string dir = "toy";
  app.add_option("dir", dir, "Output directory")->capture_default_str();
  app.add_option("--seed", config.seed, "Generator seed")->capture_default_str();
  app.add_option("--users", config.users, "Number of users")->capture_default_str();
  app.add_option("--news", config.news, "Number of news items")->capture_default_str();
  app.add_option("--word-dim", config.word_dim, "Word vector dimension")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    dor::synth::write_corpus(dor::synth::generate(config), dir);
  } catch (const dor::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
