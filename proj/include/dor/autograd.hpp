#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass. Values live in the tape
// (std::deque keeps references stable while the tape grows); backward() walks
// the nodes in reverse order and accumulates gradients. Parameters are owned
// outside the tape and receive their gradient in Parameter::grad.
//
// Row-vector convention: a d-dimensional feature is a 1 x d matrix, a set of
// m features is an m x d matrix, and linear maps are applied as X * W.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dor::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v);

  void zero_grad();
  Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf bound to a parameter. The value is referenced, not copied.
  Var param(Parameter& p);
  // Records an op. `inputs` decide whether the result needs a gradient.
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);
  // Records a node that always requires a gradient (sparse parameter views).
  Var push_leaf(Matrix value, Backward backward);

  const Matrix& value(int id) const;
  Matrix& grad(int id);
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every node.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Parameter* param = nullptr;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
};

// Elementwise and linear-algebra ops. Shape errors throw ContractViolation.
Var matmul(Var a, Var b);
// b may have the shape of a, be a 1 x cols row (broadcast over rows) or 1x1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);
Var scale(Var a, double factor);
Var leaky_relu(Var a, double slope);
Var tanh(Var a);
Var sigmoid(Var a);
Var transpose(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Index start, Index count);
Var slice_cols(Var a, Index start, Index count);
Var sum(Var a);
// Column means: m x c -> 1 x c.
Var mean_rows(Var a);
// Softmax over an m x 1 column; entries with masked[i] == true get exactly 0.
// Throws DegenerateNeighborhood when every entry is masked.
Var masked_softmax(Var column, const std::vector<bool>& masked);
Var softmax_column(Var column);
// Independent softmax along each row.
Var softmax_rows(Var a);
// Rows of a parameter table; gradients are scattered into p.grad directly.
Var gather_rows(Tape& tape, Parameter& p, std::span<const int> ids);
// T x c -> T x (window * c): row t holds rows t-h .. t+h (h = window / 2) of
// `a`, zero outside the sequence. Window must be odd.
Var unfold(Var a, Index window);
// Sum over n of log-loss computed from logits (n x 1) against 0/1 labels.
Var bce_with_logits(Var logits, std::span<const double> labels);

// Eigen-only helpers shared by the numeric wrappers.
Matrix gather(const Matrix& table, std::span<const int> ids);

}  // namespace dor::ad
