#pragma once

// End-to-end training (log loss, Adam) of the full recommender and its
// evaluation on held-out impressions, plus the single-file checkpoint.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dor/autograd.hpp"
#include "dor/data_pipeline.hpp"
#include "dor/gflm.hpp"
#include "dor/kg_store.hpp"
#include "dor/kge.hpp"
#include "dor/metrics.hpp"
#include "dor/news_encoder.hpp"
#include "dor/user_encoder.hpp"
#include "json.hpp"

namespace dor::train {

using ad::Matrix;
using ad::Parameter;

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-4;
  int epochs = 8;
  int word_dim = 300;
  int context_dim = 300;
  int neighbor_size = 20;
  int eom_batch = 110;
  std::uint64_t seed = 1;
  kge::ModelKind embedding_model = kge::ModelKind::TransR;
  std::string word_model = "glove";

  int heads = 2;         // GFLM attention heads
  int user_heads = 2;    // EOM self-attention heads
  int max_history = 50;  // most recent clicks kept per user
  int max_entities = 10; // entity slots per news item
  int title_len = 20;
  int abstract_len = 50;
  int eom_pretrain_epochs = 0;
  int kge_dim = 100;     // used only when KGE tables are trained in-run
  int kge_epochs = 10;
  bool use_do = true;
  bool finetune_kge = false;
  bool deterministic = true;
  int threads = 1;

  // Throws ConfigError naming the first offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

inline const std::vector<std::string>& word_model_tags() {
  static const std::vector<std::string> tags{"word2vec", "glove", "bert"};
  return tags;
}

nlohmann::json to_json(const TrainConfig& config);
// Unknown keys and ill-typed values raise ConfigError; absent keys keep defaults.
TrainConfig config_from_json(const nlohmann::json& doc);
// Applies the keys present in `doc` on top of `base`.
void merge_config(TrainConfig& base, const nlohmann::json& doc);

// Clamped to [1e-7, 1 - 1e-7] before taking logs.
double log_loss(double p, int y);
inline constexpr double kLossClamp = 1e-7;

// Word rows for the corpus: pretrained vectors when given (their dimension
// must equal word_dim), otherwise seeded random vectors keyed by word_model.
news::WordVocabulary build_vocabulary(const data::DatasetSplit& split, const TrainConfig& config,
                                      const news::WordVectors* pretrained);

struct EpochLog {
  int epoch = 0;  // 1-based within its phase
  double mean_loss = 0.0;
  std::size_t steps = 0;
  bool pretraining = false;
};

struct TrainingLog {
  double initial_loss = 0.0;  // mean per-candidate loss over train at init
  double final_loss = 0.0;    // same quantity after the last update
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
};

class DorModel {
 public:
  DorModel(const TrainConfig& config, const data::DatasetSplit& split, const kg::KnowledgeGraph& graph,
           const kge::EmbeddingTable& tables, news::WordVocabulary words);

  static DorModel load(const std::filesystem::path& path);
  static DorModel load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  void save(std::ostream& out) const;

  const TrainConfig& config() const { return config_; }
  const news::WordVocabulary& words() const { return words_; }

  // Every learnable block, including the (possibly frozen) KGE tables.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> eom_parameters() { return eom_.parameters(); }
  Parameter* find(const std::string& name);

  // Throws DataError when the split was built from a different corpus.
  void check_compatible(const data::DatasetSplit& split) const;

  news::NewsInput news_input(const data::NewsArticle& article) const;
  kg::EntityId link(const std::string& external_id) const;
  const std::vector<kg::Edge>& neighbors(kg::EntityId entity) const;

  gflm::GflmParams& gflm() { return gflm_; }
  news::NewsEncoderParams& news_encoder() { return news_; }
  user::EomParams& eom() { return eom_; }
  Parameter& entity_table() { return entity_table_; }
  Parameter& relation_table() { return relation_table_; }

  bool operator==(const DorModel& other) const;

 private:
  DorModel() = default;
  void index_entities();

  TrainConfig config_;
  news::WordVocabulary words_ = news::WordVocabulary::from_rows({std::string(news::kPadToken), "<oov>"},
                                                                Matrix::Zero(2, 1));
  std::vector<std::string> entity_names_;
  std::unordered_map<std::string, kg::EntityId> entity_ids_;
  std::vector<std::vector<kg::Edge>> neighbors_;
  std::uint64_t corpus_words_ = 0;
  std::uint64_t corpus_entities_ = 0;
  Parameter entity_table_;
  Parameter relation_table_;
  gflm::GflmParams gflm_;
  news::NewsEncoderParams news_;
  user::EomParams eom_;
};

// Corpus fingerprint used by the compatibility check.
std::uint64_t fingerprint(std::span<const std::string> items);

struct TrainResult {
  DorModel model;
  TrainingLog log;
};

// Trains an already constructed model in place.
TrainingLog fit(DorModel& model, const data::DatasetSplit& split, std::ostream* progress = nullptr);

// Builds the vocabulary and model, trains KGE tables first when none are
// given, and fits.
TrainResult train(const data::DatasetSplit& split, const TrainConfig& config, const kg::KnowledgeGraph& graph,
                  const kge::EmbeddingTable* tables = nullptr, const news::WordVectors* pretrained = nullptr,
                  std::ostream* progress = nullptr);

// Click logits for every candidate of every impression. Ranking metrics only
// depend on the order, and logits do not saturate the way probabilities do.
std::vector<eval::ScoredImpression> score_impressions(DorModel& model,
                                                      std::span<const data::NewsArticle> articles,
                                                      std::span<const data::ImpressionRecord> records);

eval::MetricReport evaluate(DorModel& model, const data::DatasetSplit& split);

}  // namespace dor::train
