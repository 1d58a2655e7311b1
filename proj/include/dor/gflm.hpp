#pragma once

// Graph-based feature learning: relation-aware, masked, multi-head attention
// over 2-hop ego-networks. Every function builds on an ad::Tape so the same
// code serves inference, training and gradient checks; the Matrix overloads
// are forward-only conveniences.

#include <cstdint>
#include <functional>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dor/autograd.hpp"
#include "dor/kg_store.hpp"
#include "dor/random.hpp"

namespace dor::gflm {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

inline constexpr double kLeakySlope = 0.2;

// One attention head: shared map W (in x out), attention vector
// a = [a_center; a_neighbor; a_relation] (3*out x 1) and the relation map
// W_rel (relation_dim x out).
struct AttentionHead {
  Parameter weight;
  Parameter attention;
  Parameter relation_weight;

  Eigen::Index in_dim() const { return weight.value.rows(); }
  Eigen::Index out_dim() const { return weight.value.cols(); }
};

struct GflmLayer {
  std::vector<AttentionHead> heads;
  Parameter self_relation;  // 1 x relation_dim, relation of the self-loop
};

// `inner` lifts raw entity embeddings to d' and aggregates one hop;
// `outer` aggregates the hop-1 results into the center.
struct GflmParams {
  GflmLayer inner;
  GflmLayer outer;

  static GflmParams init(int entity_dim, int relation_dim, int out_dim, int heads, Rng& rng);
  std::vector<Parameter*> parameters();
  int heads() const { return static_cast<int>(inner.heads.size()); }
  Eigen::Index out_dim() const { return inner.heads.front().out_dim(); }
};

enum class HeadMode { Concat, Average };
HeadMode parse_head_mode(std::string_view name);

AttentionHead init_head(int in_dim, int relation_dim, int out_dim, Rng& rng, std::string_view prefix);

// e_ij = a[0:2d']^T [W e_i || W e_j]; e_i, e_j are 1 x in rows.
Var attention_logit(Var center, Var neighbor, AttentionHead& head);
// a^T [W e_i || W e_j || W_rel r_ij] for every row j of `neighbors`
// (m x in) with its relation row (m x relation_dim); returns m x 1.
Var relation_aware_logits(Var center, Var neighbors, Var relations, AttentionHead& head);
// softmax over unmasked entries of LeakyReLU(logit); masked entries get 0.
Var attention_coefficients(Var logits, const std::vector<bool>& masked);
// sigma(sum_j alpha_j W e_j) with sigma = LeakyReLU(0.2).
Var aggregate(Var neighbors, Var alpha, AttentionHead& head);
// Relation-aware attention per head. Concat: ||_k sigma(sum_j a^k_j W_k e_j)
// (width K*d'); Average: sigma(1/K sum_k sum_j a^k_j W_k e_j) (width d').
Var multi_head(Var center, Var neighbors, Var relations, GflmLayer& layer, HeadMode mode);

// Entity-level encoder with per-tape memoisation. The first-level vector of
// an entity depends only on the entity and its sampled neighbours, so it is
// shared between every ego-network that contains it.
class ContextEncoder {
 public:
  using NeighborFn = std::function<const std::vector<kg::Edge>&(kg::EntityId)>;

  ContextEncoder(Tape& tape, GflmParams& params, Parameter& entity_table,
                 Parameter& relation_table, NeighborFn neighbors);

  // Self-loop plus sampled neighbours through the inner layer.
  Var first_level(kg::EntityId entity);
  // Full 2-hop encoding. An isolated entity returns sigma(mean_k W_k e).
  Var encode(kg::EntityId entity);

 private:
  Var level(GflmLayer& layer, Var center, Var neighbor_rows, const std::vector<kg::Edge>& edges);

  Tape& tape_;
  GflmParams& params_;
  Parameter& entity_table_;
  Parameter& relation_table_;
  NeighborFn neighbors_;
  std::unordered_map<kg::EntityId, Var> first_;
  std::unordered_map<kg::EntityId, Var> encoded_;
};

// Encodes an explicit ego-network (padded slots are ignored).
Var encode_entity(Tape& tape, const kg::EgoNetwork& ego, Parameter& entity_table,
                  Parameter& relation_table, GflmParams& params);

// Forward-only conveniences.
double attention_logit(const Matrix& center, const Matrix& neighbor, AttentionHead& head);
double relation_aware_logit(const Matrix& center, const Matrix& neighbor, const Matrix& relation,
                            AttentionHead& head);
Matrix attention_coefficients(const Matrix& logits, const std::vector<bool>& masked);
Matrix aggregate(const Matrix& neighbors, const Matrix& alpha, AttentionHead& head);
Matrix multi_head(const Matrix& center, const Matrix& neighbors, const Matrix& relations,
                  GflmLayer& layer, HeadMode mode);
Matrix encode_entity(const kg::EgoNetwork& ego, const Matrix& entity_vectors,
                     const Matrix& relation_vectors, GflmParams& params);

// Xavier-uniform initialiser shared by the model modules.
Matrix xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng);

}  // namespace dor::gflm
