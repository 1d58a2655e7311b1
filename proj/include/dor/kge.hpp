#pragma once

// Translation-based knowledge-graph embeddings (TransE, TransH, TransR):
// scoring functions, their analytic gradients, margin-ranking SGD training
// and a binary table format.
//
// Scores are negated squared distances, so larger is more plausible and
// every score is <= 0.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dor/kg_store.hpp"

namespace dor::kge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using VecRef = Eigen::Ref<const Vector>;
using MatRef = Eigen::Ref<const Matrix>;

enum class ModelKind : std::uint32_t { TransE = 0, TransH = 1, TransR = 2 };

std::string to_string(ModelKind kind);
// Accepts "TransE"/"transe" etc.; throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view name);

struct EmbeddingTable {
  ModelKind kind = ModelKind::TransR;
  Matrix entities;   // entity_count x k
  Matrix relations;  // relation_count x d; for TransH these are the translations d_r
  Matrix normals;    // TransH: relation_count x k unit hyperplane normals
  std::vector<Matrix> projections;  // TransR: one k x d matrix per relation

  Eigen::Index entity_dim() const { return entities.cols(); }
  Eigen::Index relation_dim() const { return relations.cols(); }
  bool all_finite() const;

  bool operator==(const EmbeddingTable& other) const;
};

double score_transe(const VecRef& head, const VecRef& relation, const VecRef& tail);
// Throws ContractViolation unless |normal| = 1 within 1e-6.
double score_transh(const VecRef& head, const VecRef& tail, const VecRef& normal,
                    const VecRef& translation);
// projection is k x d; entities are projected as row vectors (h M_r).
double score_transr(const VecRef& head, const VecRef& tail, const VecRef& relation,
                    const MatRef& projection);

double score(const EmbeddingTable& table, const kg::Triple& triple);

// x - (w.x) w
Vector project_to_hyperplane(const VecRef& x, const VecRef& normal);

struct TransEGradient {
  Vector head, relation, tail;
};
struct TransHGradient {
  Vector head, tail, normal, translation;
};
struct TransRGradient {
  Vector head, tail, relation;
  Matrix projection;
};

// Gradients of the score (not the loss). The TransH gradient is taken with
// the normal treated as a free vector; training renormalises afterwards.
TransEGradient transe_gradient(const VecRef& head, const VecRef& relation, const VecRef& tail);
TransHGradient transh_gradient(const VecRef& head, const VecRef& tail, const VecRef& normal,
                               const VecRef& translation);
TransRGradient transr_gradient(const VecRef& head, const VecRef& tail, const VecRef& relation,
                               const MatRef& projection);

struct KgeConfig {
  ModelKind kind = ModelKind::TransR;
  int entity_dim = 300;
  int relation_dim = 300;  // forced equal to entity_dim for TransE/TransH
  int epochs = 10;         // full passes over the triple set
  double learning_rate = 0.01;
  double margin = 1.0;
  std::uint64_t seed = 1;
};

struct KgeTrainResult {
  EmbeddingTable table;
  std::vector<double> epoch_losses;  // summed hinge loss per epoch
};

// Seeded uniform(-6/sqrt(dim), 6/sqrt(dim)) vectors; TransH normals are
// unit-normalised and TransR projections start at the (rectangular) identity.
EmbeddingTable initialize_table(const kg::KnowledgeGraph& graph, const KgeConfig& config);

// Margin-ranking SGD with one head-or-tail corruption per positive.
// Throws TrainingError when the loss becomes non-finite.
KgeTrainResult train_kge(const kg::KnowledgeGraph& graph, const KgeConfig& config);

// Binary table format, little-endian:
//   char[8] "DORKGE01", u32 kind, i64 entity_count, i64 relation_count,
//   i64 entity_dim, i64 relation_dim, then row-major f64 blocks:
//   entities, relations, [TransH normals], [TransR projections in relation order].
void save_table(std::ostream& out, const EmbeddingTable& table);
EmbeddingTable load_table(std::istream& in);
void save_table(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable load_table(const std::filesystem::path& path);

}  // namespace dor::kge
