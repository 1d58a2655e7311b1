#include "dor/news_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "dor/errors.hpp"

namespace dor::news {

WordVectors parse_word_vectors(std::istream& in, const std::string& source) {
  WordVectors out;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    std::string cell;
    while (fields >> cell) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError(source, line_no, "non-numeric vector component '" + cell + "'");
      }
    }
    if (line_no == 1 && values.size() == 1 && token.find_first_not_of("0123456789") == std::string::npos)
      continue;  // "count dim" header
    if (values.empty()) throw ParseError(source, line_no, "token without a vector");
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
      throw ParseError(source, line_no,
                       "vector has " + std::to_string(values.size()) + " components, expected " +
                           std::to_string(dim));
    }
    out.tokens.push_back(token);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError(source + ": no word vectors found");
  out.vectors = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < dim; ++c)
      out.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return out;
}

WordVectors load_word_vectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open word vector file " + path.string());
  return parse_word_vectors(in, path.string());
}

namespace {

Eigen::RowVectorXd random_row(int dim, Rng& rng) {
  Eigen::RowVectorXd row(dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < dim; ++i) row(i) = uniform_real(rng, -bound, bound);
  return row;
}

}  // namespace

void WordVocabulary::add(const std::string& token, const Eigen::RowVectorXd& row) {
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  if (vectors_.rows() <= id) vectors_.conservativeResize(std::max<Eigen::Index>(2 * id + 2, 8), row.size());
  vectors_.row(id) = row;
}

WordVocabulary WordVocabulary::from_pretrained(std::span<const std::string> corpus_tokens,
                                               const WordVectors& pretrained, std::uint64_t seed) {
  const int dim = static_cast<int>(pretrained.vectors.cols());
  std::unordered_map<std::string, Eigen::Index> rows;
  for (std::size_t i = 0; i < pretrained.tokens.size(); ++i)
    rows.emplace(pretrained.tokens[i], static_cast<Eigen::Index>(i));
  WordVocabulary vocab;
  Rng rng(mix_seed(seed, 0x6f6f76));
  vocab.add(std::string(kPadToken), Eigen::RowVectorXd::Zero(dim));
  vocab.add("<oov>", random_row(dim, rng));
  for (const std::string& token : corpus_tokens) {
    if (token == kPadToken || vocab.ids_.contains(token)) continue;
    auto it = rows.find(token);
    if (it == rows.end()) continue;
    vocab.add(token, pretrained.vectors.row(it->second));
  }
  vocab.vectors_.conservativeResize(vocab.size(), dim);
  return vocab;
}

WordVocabulary WordVocabulary::random(std::span<const std::string> corpus_tokens, int dim,
                                      std::uint64_t seed) {
  if (dim <= 0) throw ConfigError("word dimension must be positive");
  WordVocabulary vocab;
  Rng rng(mix_seed(seed, 0x776f7264));
  vocab.add(std::string(kPadToken), Eigen::RowVectorXd::Zero(dim));
  vocab.add("<oov>", random_row(dim, rng));
  for (const std::string& token : corpus_tokens) {
    if (token == kPadToken || vocab.ids_.contains(token)) continue;
    vocab.add(token, random_row(dim, rng));
  }
  vocab.vectors_.conservativeResize(vocab.size(), dim);
  return vocab;
}

WordVocabulary WordVocabulary::from_rows(std::vector<std::string> tokens, Matrix vectors) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != "<oov>")
    throw DataError("word vocabulary must start with the PAD and OOV entries");
  if (static_cast<Eigen::Index>(tokens.size()) != vectors.rows())
    throw DataError("word vocabulary token and row counts differ");
  WordVocabulary vocab;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab.ids_.emplace(tokens[i], static_cast<int>(i)).second)
      throw DataError("duplicate token '" + tokens[i] + "' in word vocabulary");
  }
  vocab.tokens_ = std::move(tokens);
  vocab.vectors_ = std::move(vectors);
  return vocab;
}

int WordVocabulary::id(std::string_view token) const {
  if (token == kPadToken) return kPad;
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kOov : it->second;
}

std::vector<int> WordVocabulary::ids(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::uint64_t WordVocabulary::fingerprint() const {
  std::uint64_t h = mix_seed(static_cast<std::uint64_t>(tokens_.size()));
  for (const auto& t : tokens_) {
    std::uint64_t th = 1469598103934665603ULL;
    for (unsigned char c : t) th = (th ^ c) * 1099511628211ULL;
    h = mix_seed(h, th);
  }
  return h;
}

AdditiveAttention AdditiveAttention::init(int in_dim, int hidden, Rng& rng, const std::string& prefix) {
  return AdditiveAttention{
      Parameter(prefix + ".W", gflm::xavier(in_dim, hidden, rng)),
      Parameter(prefix + ".b", Matrix::Zero(1, hidden)),
      Parameter(prefix + ".v", gflm::xavier(hidden, 1, rng)),
  };
}

Var additive_attention_weights(Var features, AdditiveAttention& aam) {
  require(features.rows() >= 1, "additive attention needs at least one row");
  require(features.cols() == aam.weight.value.rows(), "additive attention input width mismatch");
  Tape& t = *features.tape();
  const Var hidden = ad::tanh(ad::add(ad::matmul(features, t.param(aam.weight)), t.param(aam.bias)));
  return ad::softmax_column(ad::matmul(hidden, t.param(aam.query)));
}

Var additive_attention_pool(Var features, AdditiveAttention& aam) {
  const Var alpha = additive_attention_weights(features, aam);
  return ad::matmul(ad::transpose(alpha), features);
}

Matrix additive_attention_pool(const Matrix& features, AdditiveAttention& aam) {
  Tape t;
  return additive_attention_pool(t.constant(features), aam).value();
}

NewsEncoderParams NewsEncoderParams::init(int word_dim, int context_dim, int filters, Rng& rng) {
  if (word_dim <= 0 || context_dim <= 0 || filters <= 0) throw ConfigError("news encoder dimensions must be positive");
  NewsEncoderParams p{
      Parameter("news.word_projection", gflm::xavier(word_dim, context_dim, rng)),
      Parameter("news.conv_kernel", gflm::xavier(kConvWindow * context_dim, filters, rng)),
      Parameter("news.conv_bias", Matrix::Zero(1, filters)),
      AdditiveAttention::init(filters, filters, rng, "news.pool"),
  };
  return p;
}

std::vector<Parameter*> NewsEncoderParams::parameters() {
  std::vector<Parameter*> out{&word_projection, &conv_kernel, &conv_bias};
  for (Parameter* p : pool.parameters()) out.push_back(p);
  return out;
}

Matrix encode_lrm(std::span<const int> tokens, const WordVocabulary& vocab) {
  return ad::gather(vocab.vectors(), tokens);
}

Var encode_hrm(Tape& tape, std::span<const kg::EntityId> entities, gflm::ContextEncoder& encoder,
               Eigen::Index context_dim) {
  require(!entities.empty(), "encode_hrm needs a fixed, non-zero entity slot count");
  std::vector<Var> rows;
  rows.reserve(entities.size());
  for (const kg::EntityId e : entities) {
    if (e == kg::kPadEntity) {
      rows.push_back(tape.constant(Matrix::Zero(1, context_dim)));
    } else {
      const Var v = encoder.encode(e);
      require(v.cols() == context_dim, "contextual entity width mismatch");
      rows.push_back(v);
    }
  }
  return ad::concat_rows(rows);
}

Var fuse_and_extract(Var word_rows, Var entity_rows, NewsEncoderParams& params) {
  Tape& t = *word_rows.tape();
  require(word_rows.cols() == params.word_projection.value.rows(), "word row width mismatch");
  require(entity_rows.cols() == params.context_dim(), "entity row width mismatch");
  const Var projected = ad::matmul(word_rows, t.param(params.word_projection));
  const Var parts[] = {projected, entity_rows};
  const Var sequence = ad::concat_rows(parts);
  const Var windows = ad::unfold(sequence, kConvWindow);
  return ad::leaky_relu(
      ad::add(ad::matmul(windows, t.param(params.conv_kernel)), t.param(params.conv_bias)),
      gflm::kLeakySlope);
}

Var encode_news(Tape& tape, const NewsInput& input, const WordVocabulary& vocab,
                gflm::ContextEncoder& encoder, NewsEncoderParams& params, bool use_attention) {
  require(!input.tokens.empty(), "news input has no token slots");
  const Var words = tape.constant(encode_lrm(input.tokens, vocab));
  const Var entities = encode_hrm(tape, input.entities, encoder, params.context_dim());
  const Var features = fuse_and_extract(words, entities, params);
  return use_attention ? additive_attention_pool(features, params.pool) : ad::mean_rows(features);
}

Matrix encode_hrm(std::span<const kg::EntityId> entities, const kg::KnowledgeGraph& graph,
                  const kge::EmbeddingTable& tables, gflm::GflmParams& gflm_params, int neighbor_size,
                  std::uint64_t seed) {
  Parameter ent("entities", tables.entities);
  Parameter rel("relations", tables.relations);
  ent.trainable = false;
  rel.trainable = false;
  std::unordered_map<kg::EntityId, std::vector<kg::Edge>> cache;
  Tape tape;
  gflm::ContextEncoder encoder(tape, gflm_params, ent, rel,
                               [&](kg::EntityId e) -> const std::vector<kg::Edge>& {
                                 auto it = cache.find(e);
                                 if (it == cache.end())
                                   it = cache.emplace(e, kg::sample_neighbors(graph, e, neighbor_size, seed)).first;
                                 return it->second;
                               });
  return encode_hrm(tape, entities, encoder, gflm_params.out_dim()).value();
}

}  // namespace dor::news
