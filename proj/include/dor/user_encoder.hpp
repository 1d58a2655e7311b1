#pragma once

// External observation: the clicked-news history is turned into a user
// vector with learned positions, one multi-head self-attention layer and an
// additive-attention pool; a small feed-forward head scores user/news pairs.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dor/autograd.hpp"
#include "dor/news_encoder.hpp"
#include "dor/random.hpp"

namespace dor::user {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

struct SelfAttentionHead {
  Parameter query;  // d' x d'
  Parameter key;    // d' x d'
  Parameter value;  // d' x d'
};

// logistic(w2 . LeakyReLU([U || N || U*N] W1 + b1) + b2)
struct ClickHead {
  Parameter hidden_weight;  // 3d' x hidden
  Parameter hidden_bias;    // 1 x hidden
  Parameter output_weight;  // hidden x 1
  Parameter output_bias;    // 1 x 1

  std::vector<Parameter*> parameters() {
    return {&hidden_weight, &hidden_bias, &output_weight, &output_bias};
  }
};

struct EomParams {
  Parameter positions;  // max_history x d'
  std::vector<SelfAttentionHead> heads;
  Parameter output;  // heads*d' x d'
  news::AdditiveAttention pool;
  Parameter default_user;  // 1 x d'
  ClickHead click;

  static EomParams init(int dim, int heads, int max_history, Rng& rng);
  std::vector<Parameter*> parameters();
  // Parameters of the user side only (positions, attention, pool, default).
  std::vector<Parameter*> user_parameters();
  int max_history() const { return static_cast<int>(positions.value.rows()); }
  Eigen::Index dim() const { return positions.value.cols(); }
};

struct UserRepresentation {
  std::string user_id;
  Matrix vector;  // 1 x d'
};

// `history` holds 1 x d' clicked-news vectors, oldest first; only the last
// max_history entries are used. Empty history yields the learned default.
// use_attention == false replaces self-attention and the pool by a mean.
Var encode_user(Tape& tape, std::span<const Var> history, EomParams& params, bool use_attention = true);

// One logit per row pair: users and news are both n x d'. Returns n x 1.
Var click_logits(Var users, Var news, ClickHead& head);

Matrix encode_user(std::span<const Matrix> history, EomParams& params, bool use_attention = true);
double click_probability(const Matrix& user, const Matrix& news, ClickHead& head);

// Sorted by probability descending, ties by ascending news id.
std::vector<std::pair<std::string, double>> rank_candidates(
    const Matrix& user, std::span<const news::NewsRepresentation> candidates, ClickHead& head);

}  // namespace dor::user
