#include "dor/kge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "dor/binary_io.hpp"
#include "dor/errors.hpp"
#include "dor/random.hpp"

namespace dor::kge {

namespace {

constexpr char kMagic[8] = {'D', 'O', 'R', 'K', 'G', 'E', '0', '1'};

void check_same(Eigen::Index a, Eigen::Index b, const char* what) {
  require(a == b, std::string(what) + ": dimension mismatch " + std::to_string(a) + " vs " +
                      std::to_string(b));
}

void check_unit(const VecRef& normal) {
  require(std::abs(normal.norm() - 1.0) <= 1e-6, "TransH normal must have unit L2 norm");
}

void fill_uniform(Matrix& m, Rng& rng, double bound) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = uniform_real(rng, -bound, bound);
}

void normalize_row(Matrix& m, Eigen::Index row) {
  const double n = m.row(row).norm();
  if (n > 0.0) m.row(row) /= n;
}

void clip_row(Matrix& m, Eigen::Index row) {
  const double n = m.row(row).norm();
  if (n > 1.0) m.row(row) /= n;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::TransE: return "TransE";
    case ModelKind::TransH: return "TransH";
    case ModelKind::TransR: return "TransR";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "transe") return ModelKind::TransE;
  if (lower == "transh") return ModelKind::TransH;
  if (lower == "transr") return ModelKind::TransR;
  throw ConfigError("unknown embedding model '" + std::string(name) + "'");
}

bool EmbeddingTable::all_finite() const {
  if (!entities.allFinite() || !relations.allFinite() || !normals.allFinite()) return false;
  return std::all_of(projections.begin(), projections.end(),
                     [](const Matrix& m) { return m.allFinite(); });
}

bool EmbeddingTable::operator==(const EmbeddingTable& o) const {
  auto same = [](const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  if (kind != o.kind || !same(entities, o.entities) || !same(relations, o.relations) ||
      !same(normals, o.normals) || projections.size() != o.projections.size())
    return false;
  for (std::size_t i = 0; i < projections.size(); ++i)
    if (!same(projections[i], o.projections[i])) return false;
  return true;
}

double score_transe(const VecRef& head, const VecRef& relation, const VecRef& tail) {
  check_same(head.size(), relation.size(), "score_transe");
  check_same(head.size(), tail.size(), "score_transe");
  return -(head + relation - tail).squaredNorm();
}

Vector project_to_hyperplane(const VecRef& x, const VecRef& normal) {
  check_same(x.size(), normal.size(), "project_to_hyperplane");
  return x - normal.dot(x) * normal;
}

double score_transh(const VecRef& head, const VecRef& tail, const VecRef& normal,
                    const VecRef& translation) {
  check_same(head.size(), tail.size(), "score_transh");
  check_same(head.size(), normal.size(), "score_transh");
  check_same(head.size(), translation.size(), "score_transh");
  check_unit(normal);
  return -(project_to_hyperplane(head, normal) + translation - project_to_hyperplane(tail, normal))
              .squaredNorm();
}

double score_transr(const VecRef& head, const VecRef& tail, const VecRef& relation,
                    const MatRef& projection) {
  check_same(head.size(), tail.size(), "score_transr");
  check_same(head.size(), projection.rows(), "score_transr");
  check_same(relation.size(), projection.cols(), "score_transr");
  return -(projection.transpose() * (head - tail) + relation).squaredNorm();
}

double score(const EmbeddingTable& table, const kg::Triple& t) {
  const Vector h = table.entities.row(t.head).transpose();
  const Vector tl = table.entities.row(t.tail).transpose();
  const Vector r = table.relations.row(t.relation).transpose();
  switch (table.kind) {
    case ModelKind::TransE: return score_transe(h, r, tl);
    case ModelKind::TransH:
      return score_transh(h, tl, table.normals.row(t.relation).transpose(), r);
    case ModelKind::TransR:
      return score_transr(h, tl, r, table.projections[static_cast<std::size_t>(t.relation)]);
  }
  return 0.0;
}

TransEGradient transe_gradient(const VecRef& head, const VecRef& relation, const VecRef& tail) {
  const Vector residual = head + relation - tail;
  return {-2.0 * residual, -2.0 * residual, 2.0 * residual};
}

TransHGradient transh_gradient(const VecRef& head, const VecRef& tail, const VecRef& normal,
                               const VecRef& translation) {
  const Vector diff = head - tail;
  const double wd = normal.dot(diff);
  const Vector residual = diff - wd * normal + translation;
  // d residual / d diff = I - w w^T (symmetric).
  const Vector g_diff = -2.0 * (residual - normal * normal.dot(residual));
  const Vector g_normal = 2.0 * (diff * normal.dot(residual) + wd * residual);
  return {g_diff, -g_diff, g_normal, -2.0 * residual};
}

TransRGradient transr_gradient(const VecRef& head, const VecRef& tail, const VecRef& relation,
                               const MatRef& projection) {
  const Vector diff = head - tail;
  const Vector residual = projection.transpose() * diff + relation;
  const Vector g_head = -2.0 * (projection * residual);
  return {g_head, -g_head, -2.0 * residual, -2.0 * diff * residual.transpose()};
}

EmbeddingTable initialize_table(const kg::KnowledgeGraph& graph, const KgeConfig& config) {
  if (config.entity_dim <= 0 || config.relation_dim <= 0)
    throw ConfigError("embedding dimensions must be positive");
  const int k = config.entity_dim;
  const int d = config.kind == ModelKind::TransR ? config.relation_dim : k;
  EmbeddingTable table;
  table.kind = config.kind;
  Rng rng(mix_seed(config.seed, 0x6b6765));
  table.entities = Matrix(graph.entity_count(), k);
  table.relations = Matrix(graph.relation_count(), d);
  fill_uniform(table.entities, rng, 6.0 / std::sqrt(static_cast<double>(k)));
  fill_uniform(table.relations, rng, 6.0 / std::sqrt(static_cast<double>(d)));
  if (config.kind == ModelKind::TransH) {
    table.normals = Matrix(graph.relation_count(), k);
    fill_uniform(table.normals, rng, 6.0 / std::sqrt(static_cast<double>(k)));
    for (Eigen::Index r = 0; r < table.normals.rows(); ++r) normalize_row(table.normals, r);
  }
  if (config.kind == ModelKind::TransR) {
    table.projections.assign(static_cast<std::size_t>(graph.relation_count()), Matrix::Identity(k, d));
  }
  return table;
}

namespace {

class SgdTrainer {
 public:
  SgdTrainer(EmbeddingTable& table, const KgeConfig& config) : table_(table), config_(config) {}

  // Hinge loss of one (positive, corrupted) pair, applying the update when
  // the margin is violated.
  double step(const kg::Triple& pos, const kg::Triple& neg) {
    const double loss = config_.margin - score(table_, pos) + score(table_, neg);
    if (!std::isfinite(loss) || loss <= 0.0) return loss;
    // d loss = -d f(pos) + d f(neg)
    apply(pos, -1.0);
    apply(neg, +1.0);
    for (const auto e : {pos.head, pos.tail, neg.head, neg.tail}) constrain_entity(e);
    if (table_.kind == ModelKind::TransH) normalize_row(table_.normals, pos.relation);
    return loss;
  }

 private:
  void apply(const kg::Triple& t, double sign) {
    const double lr = config_.learning_rate * sign;
    const Vector h = table_.entities.row(t.head).transpose();
    const Vector tl = table_.entities.row(t.tail).transpose();
    const Vector r = table_.relations.row(t.relation).transpose();
    switch (table_.kind) {
      case ModelKind::TransE: {
        const auto g = transe_gradient(h, r, tl);
        table_.entities.row(t.head) -= lr * g.head.transpose();
        table_.entities.row(t.tail) -= lr * g.tail.transpose();
        table_.relations.row(t.relation) -= lr * g.relation.transpose();
        break;
      }
      case ModelKind::TransH: {
        const auto g = transh_gradient(h, tl, table_.normals.row(t.relation).transpose(), r);
        table_.entities.row(t.head) -= lr * g.head.transpose();
        table_.entities.row(t.tail) -= lr * g.tail.transpose();
        table_.relations.row(t.relation) -= lr * g.translation.transpose();
        table_.normals.row(t.relation) -= lr * g.normal.transpose();
        break;
      }
      case ModelKind::TransR: {
        auto& m = table_.projections[static_cast<std::size_t>(t.relation)];
        const auto g = transr_gradient(h, tl, r, m);
        table_.entities.row(t.head) -= lr * g.head.transpose();
        table_.entities.row(t.tail) -= lr * g.tail.transpose();
        table_.relations.row(t.relation) -= lr * g.relation.transpose();
        m -= lr * g.projection;
        break;
      }
    }
  }

  void constrain_entity(kg::EntityId e) {
    if (table_.kind == ModelKind::TransR)
      clip_row(table_.entities, e);
    else
      normalize_row(table_.entities, e);
  }

  EmbeddingTable& table_;
  const KgeConfig& config_;
};

}  // namespace

KgeTrainResult train_kge(const kg::KnowledgeGraph& graph, const KgeConfig& config) {
  if (graph.triple_count() == 0) throw DataError("cannot train embeddings on an empty graph");
  if (config.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (config.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  KgeTrainResult result;
  result.table = initialize_table(graph, config);
  SgdTrainer trainer(result.table, config);

  std::vector<kg::Triple> order(graph.triples().begin(), graph.triples().end());
  const auto real_entities = static_cast<std::uint64_t>(graph.entity_count() - 1);
  Rng rng(mix_seed(config.seed, 0x747261696e));
  std::size_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<kg::Triple>(order), rng);
    double epoch_loss = 0.0;
    for (const kg::Triple& pos : order) {
      kg::Triple neg = pos;
      const bool corrupt_head = (rng() >> 63) != 0;
      const auto replacement = static_cast<kg::EntityId>(1 + uniform_index(rng, real_entities));
      (corrupt_head ? neg.head : neg.tail) = replacement;
      const double loss = trainer.step(pos, neg);
      if (!std::isfinite(loss)) throw TrainingError("non-finite embedding loss", global_step);
      epoch_loss += std::max(0.0, loss);
      ++global_step;
    }
    result.epoch_losses.push_back(epoch_loss);
  }
  if (!result.table.all_finite()) throw TrainingError("non-finite embedding values", global_step);
  return result;
}

void save_table(std::ostream& out, const EmbeddingTable& table) {
  out.write(kMagic, sizeof kMagic);
  io::write_pod(out, static_cast<std::uint32_t>(table.kind));
  io::write_pod<std::int64_t>(out, table.entities.rows());
  io::write_pod<std::int64_t>(out, table.relations.rows());
  io::write_pod<std::int64_t>(out, table.entity_dim());
  io::write_pod<std::int64_t>(out, table.relation_dim());
  io::write_values(out, table.entities);
  io::write_values(out, table.relations);
  if (table.kind == ModelKind::TransH) io::write_values(out, table.normals);
  if (table.kind == ModelKind::TransR)
    for (const Matrix& m : table.projections) io::write_values(out, m);
}

EmbeddingTable load_table(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw DataError("not an embedding table file");
  EmbeddingTable table;
  const auto kind = io::read_pod<std::uint32_t>(in);
  if (kind > 2) throw DataError("unknown embedding model id " + std::to_string(kind));
  table.kind = static_cast<ModelKind>(kind);
  const auto n_ent = io::read_pod<std::int64_t>(in);
  const auto n_rel = io::read_pod<std::int64_t>(in);
  const auto k = io::read_pod<std::int64_t>(in);
  const auto d = io::read_pod<std::int64_t>(in);
  if (n_ent <= 0 || n_rel <= 0 || k <= 0 || d <= 0 || n_ent * k > (1LL << 34) ||
      n_rel * k * d > (1LL << 34))
    throw DataError("implausible embedding table header");
  table.entities = Matrix(n_ent, k);
  table.relations = Matrix(n_rel, d);
  io::read_values(in, table.entities);
  io::read_values(in, table.relations);
  if (table.kind == ModelKind::TransH) {
    table.normals = Matrix(n_rel, k);
    io::read_values(in, table.normals);
  }
  if (table.kind == ModelKind::TransR) {
    table.projections.assign(static_cast<std::size_t>(n_rel), Matrix(k, d));
    for (Matrix& m : table.projections) io::read_values(in, m);
  }
  return table;
}

void save_table(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  save_table(out, table);
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return load_table(in);
}

}  // namespace dor::kge
