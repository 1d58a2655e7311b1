#include "dor/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <thread>
#include <unordered_set>

#include "dor/binary_io.hpp"
#include "dor/errors.hpp"
#include "dor/random.hpp"

namespace dor::train {

using ad::Tape;
using ad::Var;
using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'O', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void positive(int v, const char* name) {
  if (v <= 0) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
}

void non_negative(int v, const char* name) {
  if (v < 0) throw ConfigError(std::string(name) + " must be non-negative, got " + std::to_string(v));
}

}  // namespace

void TrainConfig::validate() const {
  positive(batch_size, "batch_size");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  non_negative(epochs, "epochs");
  positive(word_dim, "word_dim");
  positive(context_dim, "context_dim");
  positive(neighbor_size, "neighbor_size");
  positive(eom_batch, "eom_batch");
  positive(heads, "heads");
  positive(user_heads, "user_heads");
  positive(max_history, "max_history");
  positive(max_entities, "max_entities");
  positive(title_len, "title_len");
  positive(abstract_len, "abstract_len");
  non_negative(eom_pretrain_epochs, "eom_pretrain_epochs");
  positive(kge_dim, "kge_dim");
  non_negative(kge_epochs, "kge_epochs");
  positive(threads, "threads");
  const auto& tags = word_model_tags();
  if (std::find(tags.begin(), tags.end(), word_model) == tags.end())
    throw ConfigError("word_model must be one of word2vec, glove, bert; got '" + word_model + "'");
}

json to_json(const TrainConfig& c) {
  return json{
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"epochs", c.epochs},
      {"word_dim", c.word_dim},
      {"context_dim", c.context_dim},
      {"neighbor_size", c.neighbor_size},
      {"eom_batch", c.eom_batch},
      {"seed", c.seed},
      {"embedding_model", kge::to_string(c.embedding_model)},
      {"word_model", c.word_model},
      {"heads", c.heads},
      {"user_heads", c.user_heads},
      {"max_history", c.max_history},
      {"max_entities", c.max_entities},
      {"title_len", c.title_len},
      {"abstract_len", c.abstract_len},
      {"eom_pretrain_epochs", c.eom_pretrain_epochs},
      {"kge_dim", c.kge_dim},
      {"kge_epochs", c.kge_epochs},
      {"use_do", c.use_do},
      {"finetune_kge", c.finetune_kge},
      {"deterministic", c.deterministic},
      {"threads", c.threads},
  };
}

namespace {

using Setter = std::function<void(TrainConfig&, const json&)>;

Setter int_field(int TrainConfig::*member) {
  return [member](TrainConfig& c, const json& v) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      throw ConfigError("integer out of range");
    c.*member = static_cast<int>(x);
  };
}

Setter bool_field(bool TrainConfig::*member) {
  return [member](TrainConfig& c, const json& v) {
    if (!v.is_boolean()) throw ConfigError("expected true or false");
    c.*member = v.get<bool>();
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"batch_size", int_field(&TrainConfig::batch_size)},
      {"learning_rate",
       [](TrainConfig& c, const json& v) {
         if (!v.is_number()) throw ConfigError("expected a number");
         c.learning_rate = v.get<double>();
       }},
      {"epochs", int_field(&TrainConfig::epochs)},
      {"word_dim", int_field(&TrainConfig::word_dim)},
      {"context_dim", int_field(&TrainConfig::context_dim)},
      {"neighbor_size", int_field(&TrainConfig::neighbor_size)},
      {"eom_batch", int_field(&TrainConfig::eom_batch)},
      {"seed",
       [](TrainConfig& c, const json& v) {
         if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
           throw ConfigError("expected a non-negative integer");
         c.seed = v.get<std::uint64_t>();
       }},
      {"embedding_model",
       [](TrainConfig& c, const json& v) {
         if (!v.is_string()) throw ConfigError("expected a string");
         c.embedding_model = kge::parse_model_kind(v.get<std::string>());
       }},
      {"word_model",
       [](TrainConfig& c, const json& v) {
         if (!v.is_string()) throw ConfigError("expected a string");
         c.word_model = v.get<std::string>();
       }},
      {"heads", int_field(&TrainConfig::heads)},
      {"user_heads", int_field(&TrainConfig::user_heads)},
      {"max_history", int_field(&TrainConfig::max_history)},
      {"max_entities", int_field(&TrainConfig::max_entities)},
      {"title_len", int_field(&TrainConfig::title_len)},
      {"abstract_len", int_field(&TrainConfig::abstract_len)},
      {"eom_pretrain_epochs", int_field(&TrainConfig::eom_pretrain_epochs)},
      {"kge_dim", int_field(&TrainConfig::kge_dim)},
      {"kge_epochs", int_field(&TrainConfig::kge_epochs)},
      {"use_do", bool_field(&TrainConfig::use_do)},
      {"finetune_kge", bool_field(&TrainConfig::finetune_kge)},
      {"deterministic", bool_field(&TrainConfig::deterministic)},
      {"threads", int_field(&TrainConfig::threads)},
  };
  return table;
}

}  // namespace

void merge_config(TrainConfig& base, const json& doc) {
  if (!doc.is_object()) throw ConfigError("training configuration must be a JSON object");
  const auto& table = setters();
  for (const auto& [key, value] : doc.items()) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown training configuration key '" + key + "'");
    try {
      it->second(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("configuration key '" + key + "': " + e.what());
    }
  }
}

TrainConfig config_from_json(const json& doc) {
  TrainConfig c;
  merge_config(c, doc);
  return c;
}

double log_loss(double p, int y) {
  require(y == 0 || y == 1, "log_loss label must be 0 or 1");
  require(!std::isnan(p), "log_loss probability is NaN");
  const double q = std::clamp(p, kLossClamp, 1.0 - kLossClamp);
  return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

std::uint64_t fingerprint(std::span<const std::string> items) {
  std::uint64_t h = mix_seed(static_cast<std::uint64_t>(items.size()));
  for (const auto& s : items) {
    std::uint64_t sh = 1469598103934665603ULL;
    for (unsigned char c : s) sh = (sh ^ c) * 1099511628211ULL;
    h = mix_seed(h, sh);
  }
  return h;
}

news::WordVocabulary build_vocabulary(const data::DatasetSplit& split, const TrainConfig& config,
                                      const news::WordVectors* pretrained) {
  if (pretrained != nullptr) {
    if (pretrained->vectors.cols() != config.word_dim) {
      throw ConfigError("word vectors have dimension " + std::to_string(pretrained->vectors.cols()) +
                        " but word_dim is " + std::to_string(config.word_dim));
    }
    return news::WordVocabulary::from_pretrained(split.words, *pretrained, config.seed);
  }
  const std::string tag[] = {config.word_model};
  return news::WordVocabulary::random(split.words, config.word_dim, mix_seed(config.seed, fingerprint(tag)));
}

// ---------------------------------------------------------------- model

DorModel::DorModel(const TrainConfig& config, const data::DatasetSplit& split, const kg::KnowledgeGraph& graph,
                   const kge::EmbeddingTable& tables, news::WordVocabulary words)
    : config_(config), words_(std::move(words)) {
  config_.validate();
  if (words_.dim() != config_.word_dim)
    throw ConfigError("word vocabulary dimension " + std::to_string(words_.dim()) + " differs from word_dim " +
                      std::to_string(config_.word_dim));
  if (tables.kind != config_.embedding_model)
    throw ConfigError("embedding tables were trained with " + kge::to_string(tables.kind) +
                      " but the configuration asks for " + kge::to_string(config_.embedding_model));
  if (tables.entities.rows() != graph.entity_count() || tables.relations.rows() != graph.relation_count())
    throw DataError("embedding tables do not match the knowledge graph vocabulary");
  if (!tables.all_finite()) throw DataError("embedding tables contain non-finite values");

  const auto names = graph.entities().names();
  entity_names_.assign(names.begin(), names.end());
  index_entities();
  neighbors_.resize(static_cast<std::size_t>(graph.entity_count()));
  for (kg::EntityId e = 1; e < graph.entity_count(); ++e)
    neighbors_[static_cast<std::size_t>(e)] = kg::sample_neighbors(graph, e, config_.neighbor_size, config_.seed);
  corpus_words_ = fingerprint(split.words);
  corpus_entities_ = fingerprint(split.entities);

  entity_table_ = Parameter("kge.entities", tables.entities);
  relation_table_ = Parameter("kge.relations", tables.relations);
  entity_table_.trainable = config_.finetune_kge;
  relation_table_.trainable = config_.finetune_kge;

  Rng rng(mix_seed(config_.seed, 0x6d6f64656cULL));
  gflm_ = gflm::GflmParams::init(static_cast<int>(tables.entity_dim()), static_cast<int>(tables.relation_dim()),
                                 config_.context_dim, config_.heads, rng);
  news_ = news::NewsEncoderParams::init(config_.word_dim, config_.context_dim, config_.context_dim, rng);
  eom_ = user::EomParams::init(config_.context_dim, config_.user_heads, config_.max_history, rng);
}

void DorModel::index_entities() {
  entity_ids_.clear();
  for (std::size_t i = 1; i < entity_names_.size(); ++i)
    entity_ids_.emplace(entity_names_[i], static_cast<kg::EntityId>(i));
}

std::vector<Parameter*> DorModel::parameters() {
  std::vector<Parameter*> out{&entity_table_, &relation_table_};
  for (Parameter* p : gflm_.parameters()) out.push_back(p);
  for (Parameter* p : news_.parameters()) out.push_back(p);
  for (Parameter* p : eom_.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> DorModel::parameters() const {
  auto mut = const_cast<DorModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

Parameter* DorModel::find(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void DorModel::check_compatible(const data::DatasetSplit& split) const {
  if (fingerprint(split.words) != corpus_words_)
    throw DataError("incompatible checkpoint: the dataset word list differs from the one the model was built on");
  if (fingerprint(split.entities) != corpus_entities_)
    throw DataError("incompatible checkpoint: the dataset entity list differs from the one the model was built on");
}

news::NewsInput DorModel::news_input(const data::NewsArticle& article) const {
  news::NewsInput in;
  auto append = [&](const std::vector<std::string>& tokens, int length) {
    for (int i = 0; i < length; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      in.tokens.push_back(idx < tokens.size() ? words_.id(tokens[idx]) : news::WordVocabulary::kPad);
    }
  };
  append(article.title_tokens, config_.title_len);
  append(article.abstract_tokens, config_.abstract_len);
  for (const auto& mention : article.entity_mentions()) {
    if (static_cast<int>(in.entities.size()) == config_.max_entities) break;
    const kg::EntityId e = link(mention);
    if (e != kg::kPadEntity) in.entities.push_back(e);
  }
  in.entities.resize(static_cast<std::size_t>(config_.max_entities), kg::kPadEntity);
  return in;
}

kg::EntityId DorModel::link(const std::string& external_id) const {
  auto it = entity_ids_.find(external_id);
  return it == entity_ids_.end() ? kg::kPadEntity : it->second;
}

const std::vector<kg::Edge>& DorModel::neighbors(kg::EntityId entity) const {
  static const std::vector<kg::Edge> none;
  if (entity <= 0 || static_cast<std::size_t>(entity) >= neighbors_.size()) return none;
  return neighbors_[static_cast<std::size_t>(entity)];
}

bool DorModel::operator==(const DorModel& other) const {
  if (!(config_ == other.config_) || entity_names_ != other.entity_names_ || neighbors_ != other.neighbors_ ||
      corpus_words_ != other.corpus_words_ || corpus_entities_ != other.corpus_entities_)
    return false;
  if (!std::equal(words_.tokens().begin(), words_.tokens().end(), other.words_.tokens().begin(),
                  other.words_.tokens().end()) ||
      words_.vectors() != other.words_.vectors())
    return false;
  const auto a = parameters();
  const auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->name != b[i]->name || a[i]->trainable != b[i]->trainable) return false;
    if (a[i]->value.rows() != b[i]->value.rows() || a[i]->value.cols() != b[i]->value.cols()) return false;
    if (a[i]->value != b[i]->value) return false;
  }
  return true;
}

// ------------------------------------------------------------ checkpoint
//
// char[8] magic, u32 version, config JSON, corpus fingerprints, word
// vocabulary (tokens + rows), entity names, sampled neighbour lists, then
// named parameter blocks (name, trainable flag, matrix).

void DorModel::save(std::ostream& out) const {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  io::write_pod(out, kCheckpointVersion);
  io::write_string(out, to_json(config_).dump());
  io::write_pod(out, corpus_words_);
  io::write_pod(out, corpus_entities_);
  io::write_pod<std::uint64_t>(out, words_.tokens().size());
  for (const auto& t : words_.tokens()) io::write_string(out, t);
  io::write_matrix(out, words_.vectors());
  io::write_pod<std::uint64_t>(out, entity_names_.size());
  for (const auto& n : entity_names_) io::write_string(out, n);
  io::write_pod<std::uint64_t>(out, neighbors_.size());
  for (const auto& list : neighbors_) {
    io::write_pod<std::uint64_t>(out, list.size());
    for (const kg::Edge& e : list) {
      io::write_pod(out, e.neighbor);
      io::write_pod(out, e.relation);
    }
  }
  const auto params = parameters();
  io::write_pod<std::uint64_t>(out, params.size());
  for (const Parameter* p : params) {
    io::write_string(out, p->name);
    io::write_pod<std::uint8_t>(out, p->trainable ? 1 : 0);
    io::write_matrix(out, p->value);
  }
  if (!out) throw Error("failed to write checkpoint");
}

void DorModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint file " + path.string() + " for writing");
  save(out);
}

DorModel DorModel::load(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + sizeof magic, kCheckpointMagic)) throw DataError("not a checkpoint file");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));

  DorModel m;
  try {
    m.config_ = config_from_json(json::parse(io::read_string(in)));
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt checkpoint configuration: ") + e.what());
  }
  m.corpus_words_ = io::read_pod<std::uint64_t>(in);
  m.corpus_entities_ = io::read_pod<std::uint64_t>(in);
  const auto n_words = io::read_pod<std::uint64_t>(in);
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < n_words; ++i) tokens.push_back(io::read_string(in));
  m.words_ = news::WordVocabulary::from_rows(std::move(tokens), io::read_matrix(in));
  const auto n_entities = io::read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_entities; ++i) m.entity_names_.push_back(io::read_string(in));
  m.index_entities();
  const auto n_lists = io::read_pod<std::uint64_t>(in);
  if (n_lists != n_entities) throw DataError("checkpoint neighbour table does not match the entity list");
  m.neighbors_.resize(n_lists);
  for (auto& list : m.neighbors_) {
    const auto count = io::read_pod<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
      kg::Edge e;
      e.neighbor = io::read_pod<kg::EntityId>(in);
      e.relation = io::read_pod<kg::RelationId>(in);
      if (e.neighbor <= 0 || static_cast<std::uint64_t>(e.neighbor) >= n_entities)
        throw DataError("checkpoint neighbour id out of range");
      list.push_back(e);
    }
  }

  const auto n_params = io::read_pod<std::uint64_t>(in);
  std::map<std::string, std::pair<bool, Matrix>> blocks;
  for (std::uint64_t i = 0; i < n_params; ++i) {
    std::string name = io::read_string(in);
    const bool trainable = io::read_pod<std::uint8_t>(in) != 0;
    Matrix value = io::read_matrix(in);
    if (!blocks.emplace(std::move(name), std::make_pair(trainable, std::move(value))).second)
      throw DataError("duplicate parameter block in checkpoint");
  }
  auto table = [&](const char* name) -> const Matrix& {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw DataError(std::string("checkpoint lacks parameter ") + name);
    return it->second.second;
  };
  const Matrix& ent = table("kge.entities");
  const Matrix& rel = table("kge.relations");

  // Rebuild the parameter structure, then overwrite every block by name.
  Rng rng(0);
  m.entity_table_ = Parameter("kge.entities", ent);
  m.relation_table_ = Parameter("kge.relations", rel);
  m.gflm_ = gflm::GflmParams::init(static_cast<int>(ent.cols()), static_cast<int>(rel.cols()),
                                   m.config_.context_dim, m.config_.heads, rng);
  m.news_ = news::NewsEncoderParams::init(m.config_.word_dim, m.config_.context_dim, m.config_.context_dim, rng);
  m.eom_ = user::EomParams::init(m.config_.context_dim, m.config_.user_heads, m.config_.max_history, rng);
  const auto params = m.parameters();
  if (params.size() != blocks.size()) throw DataError("checkpoint parameter count does not match its configuration");
  for (Parameter* p : params) {
    auto it = blocks.find(p->name);
    if (it == blocks.end()) throw DataError("checkpoint lacks parameter " + p->name);
    const Matrix& v = it->second.second;
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw DataError("checkpoint parameter " + p->name + " has an unexpected shape");
    p->value = v;
    p->trainable = it->second.first;
    p->grad.resize(0, 0);
  }
  return m;
}

DorModel DorModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint file " + path.string());
  return load(in);
}

// ------------------------------------------------------------- training

namespace {

class NewsIndex {
 public:
  NewsIndex(DorModel& model, std::span<const data::NewsArticle> articles) {
    inputs_.reserve(articles.size());
    for (std::size_t i = 0; i < articles.size(); ++i) {
      if (!index_.emplace(articles[i].news_id, static_cast<int>(i)).second)
        throw DataError("duplicate news id " + articles[i].news_id);
      inputs_.push_back(model.news_input(articles[i]));
    }
  }

  int at(const std::string& news_id, const std::string& impression_id) const {
    auto it = index_.find(news_id);
    if (it == index_.end())
      throw DataError("impression " + impression_id + " references unknown news " + news_id);
    return it->second;
  }

  const news::NewsInput& input(int i) const { return inputs_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return inputs_.size(); }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<news::NewsInput> inputs_;
};

// Dense form of one impression: the kept history and labelled candidates.
struct Sample {
  std::vector<int> history;
  std::vector<int> candidates;
  std::vector<double> labels;
};

std::vector<Sample> prepare(const NewsIndex& index, std::span<const data::ImpressionRecord> records,
                            int max_history) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Sample s;
    const std::size_t keep = std::min(r.history.size(), static_cast<std::size_t>(max_history));
    for (std::size_t i = r.history.size() - keep; i < r.history.size(); ++i)
      s.history.push_back(index.at(r.history[i], r.impression_id));
    for (const auto& c : r.candidates) {
      s.candidates.push_back(index.at(c.news_id, r.impression_id));
      s.labels.push_back(static_cast<double>(c.label));
    }
    out.push_back(std::move(s));
  }
  return out;
}

gflm::ContextEncoder make_encoder(Tape& tape, DorModel& model) {
  return gflm::ContextEncoder(tape, model.gflm(), model.entity_table(), model.relation_table(),
                              [&model](kg::EntityId e) -> const std::vector<kg::Edge>& { return model.neighbors(e); });
}

// Summed log loss over every candidate of the given samples.
struct BatchLoss {
  Var total;
  std::size_t candidates = 0;
};

BatchLoss batch_loss(Tape& tape, DorModel& model, const NewsIndex& index, const std::vector<Sample>& samples,
                     std::span<const std::size_t> batch) {
  auto encoder = make_encoder(tape, model);
  const bool use_do = model.config().use_do;
  std::unordered_map<int, Var> cache;
  auto news_var = [&](int i) {
    auto it = cache.find(i);
    if (it != cache.end()) return it->second;
    const Var v = news::encode_news(tape, index.input(i), model.words(), encoder, model.news_encoder(), use_do);
    cache.emplace(i, v);
    return v;
  };
  std::vector<Var> user_rows, news_rows;
  std::vector<double> labels;
  for (const std::size_t b : batch) {
    const Sample& s = samples[b];
    if (s.candidates.empty()) continue;
    std::vector<Var> history;
    history.reserve(s.history.size());
    for (const int h : s.history) history.push_back(news_var(h));
    const Var u = user::encode_user(tape, history, model.eom(), use_do);
    for (std::size_t c = 0; c < s.candidates.size(); ++c) {
      user_rows.push_back(u);
      news_rows.push_back(news_var(s.candidates[c]));
      labels.push_back(s.labels[c]);
    }
  }
  if (labels.empty()) return {};
  const Var logits = user::click_logits(ad::concat_rows(user_rows), ad::concat_rows(news_rows), model.eom().click);
  return {ad::bce_with_logits(logits, labels), labels.size()};
}

double mean_loss(DorModel& model, const NewsIndex& index, const std::vector<Sample>& samples, int batch_size) {
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    Tape tape;
    const BatchLoss loss = batch_loss(tape, model, index, samples, std::span(order).subspan(start, end - start));
    if (loss.candidates == 0) continue;
    total += loss.total.scalar();
    count += loss.candidates;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void step(std::span<Parameter* const> params) {
    for (Parameter* p : params) {
      if (!p->trainable || p->grad.size() != p->value.size()) continue;
      if (p->adam_m.size() != p->value.size()) {
        p->adam_m = Matrix::Zero(p->value.rows(), p->value.cols());
        p->adam_v = Matrix::Zero(p->value.rows(), p->value.cols());
      }
      const long t = ++steps_[p];
      p->adam_m = kAdamBeta1 * p->adam_m + (1.0 - kAdamBeta1) * p->grad;
      p->adam_v = kAdamBeta2 * p->adam_v + (1.0 - kAdamBeta2) * p->grad.cwiseProduct(p->grad);
      const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
      p->value.array() -= lr_ * (p->adam_m.array() / c1) / ((p->adam_v.array() / c2).sqrt() + kAdamEps);
    }
  }

 private:
  double lr_;
  std::map<const Parameter*, long> steps_;
};

}  // namespace

TrainingLog fit(DorModel& model, const data::DatasetSplit& split, std::ostream* progress) {
  model.check_compatible(split);
  const TrainConfig& config = model.config();
  const NewsIndex index(model, split.articles);
  const std::vector<Sample> samples = prepare(index, split.train, config.max_history);
  if (samples.empty()) throw DataError("training split is empty");

  TrainingLog log;
  log.initial_loss = mean_loss(model, index, samples, config.batch_size);
  if (progress) *progress << "initial loss " << log.initial_loss << '\n';

  Adam adam(config.learning_rate);
  const auto all = model.parameters();
  auto zero_grads = [&] {
    for (Parameter* p : all)
      if (p->trainable) p->zero_grad();
  };
  zero_grads();

  auto run_epoch = [&](int epoch, int batch_size, std::span<Parameter* const> update, bool pretraining) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(config.seed, pretraining ? 0x70726574ULL : 0x65706f63ULL, static_cast<std::uint64_t>(epoch)));
    shuffle(std::span(order), rng);
    double total = 0.0;
    std::size_t count = 0;
    EpochLog entry;
    entry.epoch = epoch;
    entry.pretraining = pretraining;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      Tape tape;
      const BatchLoss loss = batch_loss(tape, model, index, samples, std::span(order).subspan(start, end - start));
      if (loss.candidates == 0) continue;
      const double value = loss.total.scalar();
      if (!std::isfinite(value)) throw TrainingError("non-finite training loss", log.steps);
      tape.backward(ad::scale(loss.total, 1.0 / static_cast<double>(loss.candidates)));
      adam.step(update);
      zero_grads();
      total += value;
      count += loss.candidates;
      ++log.steps;
      ++entry.steps;
    }
    entry.mean_loss = count == 0 ? 0.0 : total / static_cast<double>(count);
    if (progress)
      *progress << (pretraining ? "eom pretrain epoch " : "epoch ") << epoch << " loss " << entry.mean_loss << '\n';
    log.epochs.push_back(entry);
  };

  if (config.eom_pretrain_epochs > 0) {
    // Only the user side and click head move; everything else is frozen so
    // the tape does not carry gradients through the news encoder.
    const auto eom = model.eom_parameters();
    const std::unordered_set<Parameter*> keep(eom.begin(), eom.end());
    std::vector<std::pair<Parameter*, bool>> saved;
    for (Parameter* p : all) {
      if (keep.contains(p)) continue;
      saved.emplace_back(p, p->trainable);
      p->trainable = false;
    }
    for (int e = 1; e <= config.eom_pretrain_epochs; ++e) run_epoch(e, config.eom_batch, eom, true);
    for (auto& [p, flag] : saved) p->trainable = flag;
  }
  for (int e = 1; e <= config.epochs; ++e) run_epoch(e, config.batch_size, all, false);
  for (Parameter* p : all) {
    p->grad.resize(0, 0);
    p->adam_m.resize(0, 0);
    p->adam_v.resize(0, 0);
  }

  log.final_loss = mean_loss(model, index, samples, config.batch_size);
  if (progress) *progress << "final loss " << log.final_loss << '\n';
  return log;
}

TrainResult train(const data::DatasetSplit& split, const TrainConfig& config, const kg::KnowledgeGraph& graph,
                  const kge::EmbeddingTable* tables, const news::WordVectors* pretrained, std::ostream* progress) {
  config.validate();
  kge::EmbeddingTable trained;
  if (tables == nullptr) {
    kge::KgeConfig kc;
    kc.kind = config.embedding_model;
    kc.entity_dim = config.kge_dim;
    kc.relation_dim = config.kge_dim;
    kc.epochs = config.kge_epochs;
    kc.seed = config.seed;
    trained = kge::train_kge(graph, kc).table;
    tables = &trained;
  }
  DorModel model(config, split, graph, *tables, build_vocabulary(split, config, pretrained));
  TrainingLog log = fit(model, split, progress);
  return {std::move(model), std::move(log)};
}

// ----------------------------------------------------------- evaluation

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, w, begin, end] {
      try {
        if (begin < end) fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<eval::ScoredImpression> score_impressions(DorModel& model, std::span<const data::NewsArticle> articles,
                                                      std::span<const data::ImpressionRecord> records) {
  const TrainConfig& config = model.config();
  const int threads = config.deterministic ? 1 : config.threads;
  const NewsIndex index(model, articles);
  const std::vector<Sample> samples = prepare(index, records, config.max_history);

  std::vector<char> needed(index.size(), 0);
  for (const Sample& s : samples) {
    for (const int h : s.history) needed[static_cast<std::size_t>(h)] = 1;
    for (const int c : s.candidates) needed[static_cast<std::size_t>(c)] = 1;
  }
  std::vector<int> todo;
  for (std::size_t i = 0; i < needed.size(); ++i)
    if (needed[i]) todo.push_back(static_cast<int>(i));

  // Forward passes only read the parameters, so workers share the model.
  std::vector<Matrix> vectors(index.size());
  parallel_for(todo.size(), threads, [&](std::size_t begin, std::size_t end) {
    constexpr std::size_t kPerTape = 256;
    for (std::size_t start = begin; start < end; start += kPerTape) {
      Tape tape;
      auto encoder = make_encoder(tape, model);
      for (std::size_t i = start; i < std::min(end, start + kPerTape); ++i) {
        const int n = todo[i];
        vectors[static_cast<std::size_t>(n)] =
            news::encode_news(tape, index.input(n), model.words(), encoder, model.news_encoder(), config.use_do)
                .value();
      }
    }
  });

  std::vector<eval::ScoredImpression> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const Sample& s = samples[r];
      eval::ScoredImpression& imp = out[r];
      imp.impression_id = records[r].impression_id;
      for (const auto& c : records[r].candidates) {
        imp.news_ids.push_back(c.news_id);
        imp.labels.push_back(c.label);
      }
      if (s.candidates.empty()) continue;
      std::vector<Matrix> history;
      for (const int h : s.history) history.push_back(vectors[static_cast<std::size_t>(h)]);
      const Matrix u = user::encode_user(history, model.eom(), config.use_do);
      const auto n = static_cast<Eigen::Index>(s.candidates.size());
      Matrix users(n, u.cols()), cands(n, u.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        users.row(i) = u.row(0);
        cands.row(i) = vectors[static_cast<std::size_t>(s.candidates[static_cast<std::size_t>(i)])].row(0);
      }
      Tape tape;
      const Matrix logits = user::click_logits(tape.constant(users), tape.constant(cands), model.eom().click).value();
      imp.scores.assign(logits.data(), logits.data() + logits.size());
    }
  });
  return out;
}

eval::MetricReport evaluate(DorModel& model, const data::DatasetSplit& split) {
  model.check_compatible(split);
  const auto scored = score_impressions(model, split.articles, split.test);
  return eval::compute_report(scored);
}

}  // namespace dor::train
