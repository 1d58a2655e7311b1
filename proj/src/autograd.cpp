#include "dor/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dor/errors.hpp"

namespace dor::ad {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& same_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), "ops must share one tape");
  return *a.tape();
}

double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }

}  // namespace

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)) {
  grad = Matrix::Zero(value.rows(), value.cols());
  adam_m = Matrix::Zero(value.rows(), value.cols());
  adam_v = Matrix::Zero(value.rows(), value.cols());
}

void Parameter::zero_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols())
    grad = Matrix::Zero(value.rows(), value.cols());
  else
    grad.setZero();
}

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "scalar() on " + shape(v));
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  Node node;
  node.external = &p.value;
  node.param = &p;
  node.requires_grad = p.trainable;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.requires_grad()) {
      node.requires_grad = true;
      break;
    }
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push_leaf(Matrix value, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external ? *n.external : n.value;
}

Matrix& Tape::grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }

void Tape::backward(Var root) {
  require(root.tape() == this, "backward root from another tape");
  require(root.rows() == 1 && root.cols() == 1, "backward root must be 1x1");
  for (Node& n : nodes_) {
    if (!n.requires_grad) continue;
    const Matrix& v = n.external ? *n.external : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  if (!requires_grad(root.id())) return;
  grad(root.id())(0, 0) = 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) continue;
    if (n.param != nullptr) {
      if (n.param->grad.size() != n.grad.size()) n.param->zero_grad();
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.cols() == b.rows(),
          "matmul shape mismatch " + shape(a.value()) + " * " + shape(b.value()));
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  const Var in[] = {a, b};
  return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.requires_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const int ia = a.id(), ib = b.id();
  const Var in[] = {a, b};
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return t.push(av + bv, in, [ia, ib](Tape& tp, int self) {
      const Matrix& g = tp.grad(self);
      if (tp.requires_grad(ia)) tp.grad(ia) += g;
      if (tp.requires_grad(ib)) tp.grad(ib) += g;
    });
  }
  if (bv.rows() == 1 && bv.cols() == 1) {
    Matrix out = av.array() + bv(0, 0);
    return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
      const Matrix& g = tp.grad(self);
      if (tp.requires_grad(ia)) tp.grad(ia) += g;
      if (tp.requires_grad(ib)) tp.grad(ib)(0, 0) += g.sum();
    });
  }
  require(bv.rows() == 1 && bv.cols() == av.cols(),
          "add shape mismatch " + shape(av) + " + " + shape(bv));
  Matrix out = av.rowwise() + bv.row(0);
  return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) += g.colwise().sum();
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "sub shape mismatch " + shape(a.value()) + " - " + shape(b.value()));
  const int ia = a.id(), ib = b.id();
  const Var in[] = {a, b};
  return t.push(a.value() - b.value(), in, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) -= g;
  });
}

Var cmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "cmul shape mismatch " + shape(a.value()) + " .* " + shape(b.value()));
  const int ia = a.id(), ib = b.id();
  const Var in[] = {a, b};
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), in, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.requires_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  return t.push(a.value() * factor, in, [ia, factor](Tape& tp, int self) {
    tp.grad(ia) += tp.grad(self) * factor;
  });
}

Var leaky_relu(Var a, double slope) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  Matrix out = a.value().unaryExpr([slope](double x) { return leaky(x, slope); });
  return t.push(std::move(out), in, [ia, slope](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.grad(ia).array() +=
        tp.grad(self).array() * x.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }).array();
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  Matrix out = a.value().array().tanh().matrix();
  return t.push(std::move(out), in, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad(ia).array() += tp.grad(self).array() * (1.0 - y.array().square());
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return t.push(std::move(out), in, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad(ia).array() += tp.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  Matrix out = a.value().transpose();
  return t.push(std::move(out), in, [ia](Tape& tp, int self) {
    tp.grad(ia) += tp.grad(self).transpose();
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  Tape& t = *parts.front().tape();
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    require(p.tape() == &t && p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> layout;
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id(), c);
    c += p.cols();
  }
  return t.push(std::move(out), parts, [layout](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (const auto& [id, offset] : layout) {
      if (tp.requires_grad(id)) tp.grad(id) += g.middleCols(offset, tp.value(id).cols());
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Tape& t = *parts.front().tape();
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    require(p.tape() == &t && p.cols() == cols, "concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> layout;
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id(), r);
    r += p.rows();
  }
  return t.push(std::move(out), parts, [layout](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (const auto& [id, offset] : layout) {
      if (tp.requires_grad(id)) tp.grad(id) += g.middleRows(offset, tp.value(id).rows());
    }
  });
}

Var slice_rows(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  Matrix out = a.value().middleRows(start, count);
  return t.push(std::move(out), in, [ia, start, count](Tape& tp, int self) {
    tp.grad(ia).middleRows(start, count) += tp.grad(self);
  });
}

Var slice_cols(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), in, [ia, start, count](Tape& tp, int self) {
    tp.grad(ia).middleCols(start, count) += tp.grad(self);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), in, [ia](Tape& tp, int self) {
    tp.grad(ia).array() += tp.grad(self)(0, 0);
  });
}

Var mean_rows(Var a) {
  require(a.rows() > 0, "mean_rows of empty matrix");
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() * inv;
  return t.push(std::move(out), in, [ia, inv](Tape& tp, int self) {
    tp.grad(ia).rowwise() += tp.grad(self).row(0) * inv;
  });
}

Var masked_softmax(Var column, const std::vector<bool>& masked) {
  require(column.cols() == 1, "masked_softmax expects a column");
  require(static_cast<Index>(masked.size()) == column.rows(), "mask length mismatch");
  const Matrix& x = column.value();
  double max_v = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (Index i = 0; i < x.rows(); ++i) {
    if (masked[static_cast<std::size_t>(i)]) continue;
    max_v = std::max(max_v, x(i, 0));
    any = true;
  }
  if (!any) throw DegenerateNeighborhood("every attention entry is masked");
  Matrix out = Matrix::Zero(x.rows(), 1);
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    if (masked[static_cast<std::size_t>(i)]) continue;
    out(i, 0) = std::exp(x(i, 0) - max_v);
    total += out(i, 0);
  }
  out /= total;
  Tape& t = *column.tape();
  const int ic = column.id();
  const Var in[] = {column};
  return t.push(std::move(out), in, [ic](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    const double dot = y.col(0).dot(g.col(0));
    tp.grad(ic).array() += y.array() * (g.array() - dot);
  });
}

Var softmax_column(Var column) {
  return masked_softmax(column, std::vector<bool>(static_cast<std::size_t>(column.rows()), false));
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  return t.push(std::move(out), in, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad(ia);
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(g.row(r));
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Matrix gather(const Matrix& table, std::span<const int> ids) {
  Matrix out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(),
            "row id " + std::to_string(ids[i]) + " out of range for table of " +
                std::to_string(table.rows()) + " rows");
    out.row(static_cast<Index>(i)) = table.row(ids[i]);
  }
  return out;
}

Var gather_rows(Tape& tape, Parameter& p, std::span<const int> ids) {
  Matrix out = gather(p.value, ids);
  if (!p.trainable) return tape.constant(std::move(out));
  std::vector<int> rows(ids.begin(), ids.end());
  Parameter* target = &p;
  return tape.push_leaf(std::move(out), [rows, target](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (target->grad.size() != target->value.size()) target->zero_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) target->grad.row(rows[i]) += g.row(static_cast<Index>(i));
  });
}

Var unfold(Var a, Index window) {
  require(window > 0 && window % 2 == 1, "unfold window must be odd");
  const Matrix& x = a.value();
  const Index steps = x.rows();
  const Index c = x.cols();
  const Index half = window / 2;
  Matrix out = Matrix::Zero(steps, window * c);
  for (Index tpos = 0; tpos < steps; ++tpos) {
    for (Index o = 0; o < window; ++o) {
      const Index src = tpos + o - half;
      if (src < 0 || src >= steps) continue;
      out.block(tpos, o * c, 1, c) = x.row(src);
    }
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  const Var in[] = {a};
  return t.push(std::move(out), in, [ia, window, half, c](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad(ia);
    const Index steps_ = ga.rows();
    for (Index tpos = 0; tpos < steps_; ++tpos) {
      for (Index o = 0; o < window; ++o) {
        const Index src = tpos + o - half;
        if (src < 0 || src >= steps_) continue;
        ga.row(src) += g.block(tpos, o * c, 1, c);
      }
    }
  });
}

Var bce_with_logits(Var logits, std::span<const double> labels) {
  require(logits.cols() == 1 && logits.rows() == static_cast<Index>(labels.size()),
          "bce_with_logits shape mismatch");
  const Matrix& z = logits.value();
  double total = 0.0;
  for (Index i = 0; i < z.rows(); ++i) {
    const double x = z(i, 0);
    const double y = labels[static_cast<std::size_t>(i)];
    // softplus(x) - y * x, evaluated without overflow.
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<double> ys(labels.begin(), labels.end());
  Tape& t = *logits.tape();
  const int il = logits.id();
  const Var in[] = {logits};
  return t.push(std::move(out), in, [il, ys](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    const Matrix& zz = tp.value(il);
    Matrix& gz = tp.grad(il);
    for (Index i = 0; i < zz.rows(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-zz(i, 0)));
      gz(i, 0) += g * (p - ys[static_cast<std::size_t>(i)]);
    }
  });
}

}  // namespace dor::ad
