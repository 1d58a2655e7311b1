#pragma once

// Internal observation: word rows (low-order) and contextual entity rows
// (high-order) are concatenated into one sequence, passed through a width-3
// convolution and pooled with additive attention into a news vector.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dor/autograd.hpp"
#include "dor/gflm.hpp"
#include "dor/kg_store.hpp"
#include "dor/kge.hpp"
#include "dor/random.hpp"

namespace dor::news {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

inline constexpr std::string_view kPadToken = "<pad>";

// Contents of a `token v1 ... vn` text file.
struct WordVectors {
  std::vector<std::string> tokens;
  Matrix vectors;  // tokens.size() x dim
};

// Accepts any dimension; every line must agree with the first. An optional
// word2vec-style "count dim" header line is skipped.
WordVectors parse_word_vectors(std::istream& in, const std::string& source = "<stream>");
WordVectors load_word_vectors(const std::filesystem::path& path);

class WordVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kOov = 1;

  // Corpus tokens found in `pretrained` get their pretrained rows, in
  // first-seen order; everything else maps to OOV. PAD is the zero vector,
  // OOV a seeded small random vector.
  static WordVocabulary from_pretrained(std::span<const std::string> corpus_tokens,
                                        const WordVectors& pretrained, std::uint64_t seed);
  // Every corpus token gets a seeded random vector of `dim` entries.
  static WordVocabulary random(std::span<const std::string> corpus_tokens, int dim, std::uint64_t seed);
  // Rebuilds a vocabulary from its token list and rows (checkpoint reload).
  // tokens[0] must be PAD and tokens[1] OOV.
  static WordVocabulary from_rows(std::vector<std::string> tokens, Matrix vectors);

  int id(std::string_view token) const;
  std::vector<int> ids(std::span<const std::string> tokens) const;

  const Matrix& vectors() const { return vectors_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  int dim() const { return static_cast<int>(vectors_.cols()); }
  std::span<const std::string> tokens() const { return tokens_; }
  // Order-sensitive hash of the token list.
  std::uint64_t fingerprint() const;

 private:
  WordVocabulary() = default;
  void add(const std::string& token, const Eigen::RowVectorXd& row);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  Matrix vectors_;
};

// u_i = v^T tanh(W x_i + b), alpha = softmax(u), output sum_i alpha_i x_i.
struct AdditiveAttention {
  Parameter weight;  // in x hidden
  Parameter bias;    // 1 x hidden
  Parameter query;   // hidden x 1

  static AdditiveAttention init(int in_dim, int hidden, Rng& rng, const std::string& prefix);
  std::vector<Parameter*> parameters() { return {&weight, &bias, &query}; }
};

Var additive_attention_weights(Var features, AdditiveAttention& aam);
Var additive_attention_pool(Var features, AdditiveAttention& aam);

struct NewsEncoderParams {
  Parameter word_projection;  // word_dim x d'
  Parameter conv_kernel;      // 3*d' x filters
  Parameter conv_bias;        // 1 x filters
  AdditiveAttention pool;

  static NewsEncoderParams init(int word_dim, int context_dim, int filters, Rng& rng);
  std::vector<Parameter*> parameters();
  Eigen::Index context_dim() const { return word_projection.value.cols(); }
  Eigen::Index out_dim() const { return conv_kernel.value.cols(); }
};

inline constexpr Eigen::Index kConvWindow = 3;

// Word ids (fixed length L, padded) and linked entity ids (fixed length E).
struct NewsInput {
  std::vector<int> tokens;
  std::vector<kg::EntityId> entities;
};

struct NewsRepresentation {
  std::string news_id;
  Matrix vector;  // 1 x out_dim
};

// Pretrained rows of each token: L x word_dim. PAD rows are zero.
Matrix encode_lrm(std::span<const int> tokens, const WordVocabulary& vocab);

// Row j is the 2-hop contextual vector of entity j; PAD rows are zero.
Var encode_hrm(Tape& tape, std::span<const kg::EntityId> entities, gflm::ContextEncoder& encoder,
               Eigen::Index context_dim);

// Projects word rows to d', appends the entity rows and applies the
// same-padded width-3 convolution with LeakyReLU: (L+E) x filters.
Var fuse_and_extract(Var word_rows, Var entity_rows, NewsEncoderParams& params);

// Full internal-observation pipeline. With use_attention == false the
// additive pool is replaced by an unweighted mean (ablation control).
Var encode_news(Tape& tape, const NewsInput& input, const WordVocabulary& vocab,
                gflm::ContextEncoder& encoder, NewsEncoderParams& params, bool use_attention = true);

// Forward-only helpers over a frozen embedding table.
Matrix encode_hrm(std::span<const kg::EntityId> entities, const kg::KnowledgeGraph& graph,
                  const kge::EmbeddingTable& tables, gflm::GflmParams& gflm_params, int neighbor_size,
                  std::uint64_t seed);
Matrix additive_attention_pool(const Matrix& features, AdditiveAttention& aam);

}  // namespace dor::news
