#include "dor/user_encoder.hpp"

#include <algorithm>
#include <cmath>

#include "dor/errors.hpp"
#include "dor/gflm.hpp"

namespace dor::user {

EomParams EomParams::init(int dim, int heads, int max_history, Rng& rng) {
  if (dim <= 0 || heads <= 0 || max_history <= 0)
    throw ConfigError("user encoder dimensions, heads and history length must be positive");
  EomParams p;
  p.positions = Parameter("user.positions", gflm::xavier(max_history, dim, rng) * 0.1);
  for (int k = 0; k < heads; ++k) {
    const std::string prefix = "user.head" + std::to_string(k);
    p.heads.push_back(SelfAttentionHead{
        Parameter(prefix + ".Wq", gflm::xavier(dim, dim, rng)),
        Parameter(prefix + ".Wk", gflm::xavier(dim, dim, rng)),
        Parameter(prefix + ".Wv", gflm::xavier(dim, dim, rng)),
    });
  }
  p.output = Parameter("user.Wo", gflm::xavier(heads * dim, dim, rng));
  p.pool = news::AdditiveAttention::init(dim, dim, rng, "user.pool");
  p.default_user = Parameter("user.default", gflm::xavier(1, dim, rng));
  p.click = ClickHead{
      Parameter("click.W1", gflm::xavier(3 * dim, dim, rng)),
      Parameter("click.b1", Matrix::Zero(1, dim)),
      Parameter("click.w2", gflm::xavier(dim, 1, rng)),
      Parameter("click.b2", Matrix::Zero(1, 1)),
  };
  return p;
}

std::vector<Parameter*> EomParams::user_parameters() {
  std::vector<Parameter*> out{&positions};
  for (auto& h : heads) {
    out.push_back(&h.query);
    out.push_back(&h.key);
    out.push_back(&h.value);
  }
  out.push_back(&output);
  for (Parameter* p : pool.parameters()) out.push_back(p);
  out.push_back(&default_user);
  return out;
}

std::vector<Parameter*> EomParams::parameters() {
  auto out = user_parameters();
  for (Parameter* p : click.parameters()) out.push_back(p);
  return out;
}

Var encode_user(Tape& tape, std::span<const Var> history, EomParams& params, bool use_attention) {
  if (history.empty()) return tape.param(params.default_user);
  const auto keep = std::min<std::size_t>(history.size(), static_cast<std::size_t>(params.max_history()));
  const auto recent = history.subspan(history.size() - keep);
  for (const Var& v : recent)
    require(v.rows() == 1 && v.cols() == params.dim(), "history vector width mismatch");
  const Var stacked = ad::concat_rows(recent);
  if (!use_attention) return ad::mean_rows(stacked);

  const auto n = static_cast<Eigen::Index>(keep);
  const Var x = ad::add(stacked, ad::slice_rows(tape.param(params.positions), 0, n));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.dim()));
  std::vector<Var> head_outputs;
  for (SelfAttentionHead& h : params.heads) {
    const Var q = ad::matmul(x, tape.param(h.query));
    const Var k = ad::matmul(x, tape.param(h.key));
    const Var v = ad::matmul(x, tape.param(h.value));
    const Var weights = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt));
    head_outputs.push_back(ad::matmul(weights, v));
  }
  const Var attended = ad::matmul(ad::concat_cols(head_outputs), tape.param(params.output));
  return news::additive_attention_pool(attended, params.pool);
}

Var click_logits(Var users, Var news, ClickHead& head) {
  require(users.rows() == news.rows() && users.cols() == news.cols(),
          "user and news representations must have matching shapes");
  require(users.cols() * 3 == head.hidden_weight.value.rows(), "click head width mismatch");
  Tape& t = *users.tape();
  const Var parts[] = {users, news, ad::cmul(users, news)};
  const Var joined = ad::concat_cols(parts);
  const Var hidden = ad::leaky_relu(
      ad::add(ad::matmul(joined, t.param(head.hidden_weight)), t.param(head.hidden_bias)),
      gflm::kLeakySlope);
  return ad::add(ad::matmul(hidden, t.param(head.output_weight)), t.param(head.output_bias));
}

Matrix encode_user(std::span<const Matrix> history, EomParams& params, bool use_attention) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(history.size());
  for (const Matrix& h : history) vars.push_back(t.constant(h));
  return encode_user(t, vars, params, use_attention).value();
}

double click_probability(const Matrix& user, const Matrix& news, ClickHead& head) {
  Tape t;
  return ad::sigmoid(click_logits(t.constant(user), t.constant(news), head)).scalar();
}

std::vector<std::pair<std::string, double>> rank_candidates(
    const Matrix& user, std::span<const news::NewsRepresentation> candidates, ClickHead& head) {
  require(!candidates.empty(), "rank_candidates needs at least one candidate");
  std::vector<std::pair<std::string, double>> ranked;
  ranked.reserve(candidates.size());
  for (const auto& c : candidates) ranked.emplace_back(c.news_id, click_probability(user, c.vector, head));
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return ranked;
}

}  // namespace dor::user
