#pragma once

// Command-line front end. Every RunConfig key can come from the JSON config
// file, from an environment variable DOR_<KEY> (upper case) or from a
// --<key> flag (underscores become dashes); later sources win in that order.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dor/training.hpp"
#include "json.hpp"

namespace dor::cli {

inline constexpr const char* kEnvPrefix = "DOR_";

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

struct RunConfig {
  train::TrainConfig train;

  std::string news;
  std::string behaviors;
  std::string triples;
  std::map<std::string, std::string> word_vectors;  // word_model tag -> vector file
  std::string output_dir = "out";
  std::string cache;       // default <output_dir>/dataset.cache
  std::string checkpoint;  // default <output_dir>/model.ckpt
  std::string kge_table;   // default <output_dir>/kge_<model>.bin
  std::string report;      // input of `plot`

  int min_readers = 10;
  int min_history = 50;
  double split_ratio = 0.8;

  std::vector<bool> ablate_do{true, false};
  std::vector<std::string> ablate_word_models{"word2vec", "glove", "bert"};
  std::vector<std::string> ablate_kge_models{"TransE", "TransH", "TransR"};
  std::string sweep = "both";  // epochs | neighbors | both
  std::vector<int> sweep_epochs{5, 8, 10, 12, 15};
  std::vector<int> sweep_neighbors{5, 10, 15, 20, 25};
  std::string plot_kind = "bar";  // bar | line
  std::string plot_x;             // label / x column, default the first column

  std::filesystem::path cache_path() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path kge_table_path(kge::ModelKind kind) const;

  void validate() const;
};

// Flat JSON document: the training keys plus the keys above.
nlohmann::json to_json(const RunConfig& config);
// Unknown keys and ill-typed values raise ConfigError.
void merge(RunConfig& config, const nlohmann::json& doc);
RunConfig from_json(const nlohmann::json& doc);
// Every key accepted by merge(), in to_json order.
std::vector<std::string> config_keys();
// Converts a flag or environment string into the JSON value for `key`.
nlohmann::json parse_value(const std::string& key, const std::string& text);

// Runs the command line; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dor::cli
