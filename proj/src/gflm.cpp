#include "dor/gflm.hpp"

#include <cmath>
#include <string>

#include "dor/errors.hpp"

namespace dor::gflm {

Matrix xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = uniform_real(rng, -bound, bound);
  return m;
}

AttentionHead init_head(int in_dim, int relation_dim, int out_dim, Rng& rng, std::string_view prefix) {
  const std::string p(prefix);
  return AttentionHead{
      Parameter(p + ".W", xavier(in_dim, out_dim, rng)),
      Parameter(p + ".a", xavier(3 * out_dim, 1, rng)),
      Parameter(p + ".W_rel", xavier(relation_dim, out_dim, rng)),
  };
}

namespace {

GflmLayer init_layer(int in_dim, int relation_dim, int out_dim, int heads, Rng& rng,
                     const std::string& prefix) {
  GflmLayer layer;
  for (int k = 0; k < heads; ++k)
    layer.heads.push_back(init_head(in_dim, relation_dim, out_dim, rng, prefix + ".head" + std::to_string(k)));
  layer.self_relation = Parameter(prefix + ".self_relation", xavier(1, relation_dim, rng));
  return layer;
}

// (alpha^T (N W)) before the activation, for one head.
Var head_message(Var center, Var neighbors, Var relations, AttentionHead& head) {
  Tape& t = *center.tape();
  const Var w = t.param(head.weight);
  const Var projected = ad::matmul(neighbors, w);
  const Eigen::Index d = head.out_dim();
  const Var a = t.param(head.attention);
  const Var logits = ad::add(
      ad::add(ad::matmul(projected, ad::slice_rows(a, d, d)),
              ad::matmul(ad::matmul(relations, t.param(head.relation_weight)), ad::slice_rows(a, 2 * d, d))),
      ad::matmul(ad::matmul(center, w), ad::slice_rows(a, 0, d)));
  const Var alpha = attention_coefficients(logits, std::vector<bool>(static_cast<std::size_t>(logits.rows()), false));
  return ad::matmul(ad::transpose(alpha), projected);
}

void check_head_inputs(Var center, Var neighbors, Var relations, const AttentionHead& head) {
  require(center.rows() == 1, "center must be a single row");
  require(center.cols() == head.in_dim() && neighbors.cols() == head.in_dim(),
          "entity vector dimension does not match the attention head");
  require(relations.rows() == neighbors.rows(), "one relation row per neighbour required");
  require(relations.cols() == head.relation_weight.value.rows(),
          "relation vector dimension does not match the attention head");
}

}  // namespace

GflmParams GflmParams::init(int entity_dim, int relation_dim, int out_dim, int heads, Rng& rng) {
  if (heads < 1) throw ConfigError("attention head count must be >= 1");
  if (entity_dim < 1 || relation_dim < 1 || out_dim < 1) throw ConfigError("GFLM dimensions must be positive");
  GflmParams p;
  p.inner = init_layer(entity_dim, relation_dim, out_dim, heads, rng, "gflm.inner");
  p.outer = init_layer(out_dim, relation_dim, out_dim, heads, rng, "gflm.outer");
  return p;
}

std::vector<Parameter*> GflmParams::parameters() {
  std::vector<Parameter*> out;
  for (GflmLayer* layer : {&inner, &outer}) {
    for (AttentionHead& h : layer->heads) {
      out.push_back(&h.weight);
      out.push_back(&h.attention);
      out.push_back(&h.relation_weight);
    }
    out.push_back(&layer->self_relation);
  }
  return out;
}

HeadMode parse_head_mode(std::string_view name) {
  if (name == "concat") return HeadMode::Concat;
  if (name == "average") return HeadMode::Average;
  throw ConfigError("unknown multi-head mode '" + std::string(name) + "'");
}

Var attention_logit(Var center, Var neighbor, AttentionHead& head) {
  require(center.rows() == 1 && neighbor.rows() == 1, "attention_logit expects single rows");
  require(center.cols() == head.in_dim() && neighbor.cols() == head.in_dim(),
          "entity vector dimension does not match the attention head");
  Tape& t = *center.tape();
  const Var w = t.param(head.weight);
  const Var a = t.param(head.attention);
  const Eigen::Index d = head.out_dim();
  return ad::add(ad::matmul(ad::matmul(center, w), ad::slice_rows(a, 0, d)),
                 ad::matmul(ad::matmul(neighbor, w), ad::slice_rows(a, d, d)));
}

Var relation_aware_logits(Var center, Var neighbors, Var relations, AttentionHead& head) {
  check_head_inputs(center, neighbors, relations, head);
  Tape& t = *center.tape();
  const Var w = t.param(head.weight);
  const Var a = t.param(head.attention);
  const Eigen::Index d = head.out_dim();
  return ad::add(
      ad::add(ad::matmul(ad::matmul(neighbors, w), ad::slice_rows(a, d, d)),
              ad::matmul(ad::matmul(relations, t.param(head.relation_weight)), ad::slice_rows(a, 2 * d, d))),
      ad::matmul(ad::matmul(center, w), ad::slice_rows(a, 0, d)));
}

Var attention_coefficients(Var logits, const std::vector<bool>& masked) {
  return ad::masked_softmax(ad::leaky_relu(logits, kLeakySlope), masked);
}

Var aggregate(Var neighbors, Var alpha, AttentionHead& head) {
  require(alpha.cols() == 1 && alpha.rows() == neighbors.rows(),
          "aggregate: one coefficient per neighbour required");
  require(neighbors.cols() == head.in_dim(), "entity vector dimension does not match the attention head");
  Tape& t = *neighbors.tape();
  const Var projected = ad::matmul(neighbors, t.param(head.weight));
  return ad::leaky_relu(ad::matmul(ad::transpose(alpha), projected), kLeakySlope);
}

Var multi_head(Var center, Var neighbors, Var relations, GflmLayer& layer, HeadMode mode) {
  require(!layer.heads.empty(), "multi_head needs at least one head");
  std::vector<Var> messages;
  messages.reserve(layer.heads.size());
  for (AttentionHead& head : layer.heads) {
    check_head_inputs(center, neighbors, relations, head);
    messages.push_back(head_message(center, neighbors, relations, head));
  }
  if (mode == HeadMode::Concat) {
    for (Var& m : messages) m = ad::leaky_relu(m, kLeakySlope);
    return ad::concat_cols(messages);
  }
  Var total = messages.front();
  for (std::size_t k = 1; k < messages.size(); ++k) total = ad::add(total, messages[k]);
  return ad::leaky_relu(ad::scale(total, 1.0 / static_cast<double>(messages.size())), kLeakySlope);
}

ContextEncoder::ContextEncoder(Tape& tape, GflmParams& params, Parameter& entity_table,
                               Parameter& relation_table, NeighborFn neighbors)
    : tape_(tape),
      params_(params),
      entity_table_(entity_table),
      relation_table_(relation_table),
      neighbors_(std::move(neighbors)) {}

Var ContextEncoder::level(GflmLayer& layer, Var center, Var neighbor_rows,
                          const std::vector<kg::Edge>& edges) {
  std::vector<int> rel_ids;
  rel_ids.reserve(edges.size());
  for (const kg::Edge& e : edges) rel_ids.push_back(e.relation);
  std::vector<Var> rel_parts{tape_.param(layer.self_relation)};
  if (!rel_ids.empty()) rel_parts.push_back(ad::gather_rows(tape_, relation_table_, rel_ids));
  const Var relations = ad::concat_rows(rel_parts);
  return multi_head(center, neighbor_rows, relations, layer, HeadMode::Average);
}

Var ContextEncoder::first_level(kg::EntityId entity) {
  if (auto it = first_.find(entity); it != first_.end()) return it->second;
  const auto& edges = neighbors_(entity);
  std::vector<int> ids{entity};
  for (const kg::Edge& e : edges) ids.push_back(e.neighbor);
  const Var rows = ad::gather_rows(tape_, entity_table_, ids);
  const Var center = ad::slice_rows(rows, 0, 1);
  const Var out = level(params_.inner, center, rows, edges);
  first_.emplace(entity, out);
  return out;
}

Var ContextEncoder::encode(kg::EntityId entity) {
  if (auto it = encoded_.find(entity); it != encoded_.end()) return it->second;
  const auto& edges = neighbors_(entity);
  const Var center = first_level(entity);
  // Isolated: the self-loop alone already gives sigma(mean_k W_k e).
  Var out = center;
  if (!edges.empty()) {
    std::vector<Var> rows{center};
    for (const kg::Edge& e : edges) rows.push_back(first_level(e.neighbor));
    out = level(params_.outer, center, ad::concat_rows(rows), edges);
  }
  encoded_.emplace(entity, out);
  return out;
}

Var encode_entity(Tape& tape, const kg::EgoNetwork& ego, Parameter& entity_table,
                  Parameter& relation_table, GflmParams& params) {
  std::unordered_map<kg::EntityId, std::vector<kg::Edge>> lists;
  auto real = [](const std::vector<kg::Edge>& edges, const std::vector<bool>& padded) {
    std::vector<kg::Edge> out;
    for (std::size_t i = 0; i < edges.size(); ++i)
      if (!padded[i]) out.push_back(edges[i]);
    return out;
  };
  for (std::size_t i = 0; i < ego.hop1.size(); ++i) {
    if (ego.hop1_padded[i]) continue;
    lists.emplace(ego.hop1[i].neighbor, real(ego.hop2[i], ego.hop2_padded[i]));
  }
  lists[ego.center] = real(ego.hop1, ego.hop1_padded);
  const std::vector<kg::Edge> empty;
  ContextEncoder encoder(tape, params, entity_table, relation_table,
                         [&lists, &empty](kg::EntityId e) -> const std::vector<kg::Edge>& {
                           auto it = lists.find(e);
                           return it == lists.end() ? empty : it->second;
                         });
  return encoder.encode(ego.center);
}

double attention_logit(const Matrix& center, const Matrix& neighbor, AttentionHead& head) {
  Tape t;
  return attention_logit(t.constant(center), t.constant(neighbor), head).scalar();
}

double relation_aware_logit(const Matrix& center, const Matrix& neighbor, const Matrix& relation,
                            AttentionHead& head) {
  Tape t;
  return relation_aware_logits(t.constant(center), t.constant(neighbor), t.constant(relation), head)
      .scalar();
}

Matrix attention_coefficients(const Matrix& logits, const std::vector<bool>& masked) {
  Tape t;
  return attention_coefficients(t.constant(logits), masked).value();
}

Matrix aggregate(const Matrix& neighbors, const Matrix& alpha, AttentionHead& head) {
  Tape t;
  return aggregate(t.constant(neighbors), t.constant(alpha), head).value();
}

Matrix multi_head(const Matrix& center, const Matrix& neighbors, const Matrix& relations,
                  GflmLayer& layer, HeadMode mode) {
  Tape t;
  return multi_head(t.constant(center), t.constant(neighbors), t.constant(relations), layer, mode).value();
}

Matrix encode_entity(const kg::EgoNetwork& ego, const Matrix& entity_vectors,
                     const Matrix& relation_vectors, GflmParams& params) {
  Parameter entities("entities", entity_vectors);
  Parameter relations("relations", relation_vectors);
  entities.trainable = false;
  relations.trainable = false;
  Tape t;
  return encode_entity(t, ego, entities, relations, params).value();
}

}  // namespace dor::gflm
