#include <cmath>

#include "../common/gradcheck.hpp"
#include "doctest.h"
#include "dor/autograd.hpp"
#include "dor/errors.hpp"

using namespace dor;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;
using testing::max_gradient_error;
using testing::random_matrix;

namespace {

constexpr double kTol = 1e-4;

// Projects an arbitrary output onto a scalar with fixed random weights so
// every output entry contributes a distinct gradient.
Var probe(Var x, std::uint64_t seed) {
  Tape& t = *x.tape();
  return ad::sum(ad::cmul(x, t.constant(random_matrix(x.rows(), x.cols(), seed))));
}

}  // namespace

TEST_CASE("matmul, add with broadcasting, sub, cmul and scale have exact gradients") {
  Parameter a("a", random_matrix(3, 4, 1)), b("b", random_matrix(4, 2, 2)), row("row", random_matrix(1, 2, 3)),
      one("one", random_matrix(1, 1, 4));
  const double err = max_gradient_error({&a, &b, &row, &one}, [&](Tape& t) {
    const Var m = ad::matmul(t.param(a), t.param(b));
    const Var x = ad::add(ad::add(m, t.param(row)), t.param(one));
    const Var y = ad::sub(ad::cmul(x, x), ad::scale(m, 0.3));
    return probe(y, 5);
  });
  CHECK(err < kTol);
}

TEST_CASE("nonlinearities match finite differences") {
  Parameter a("a", random_matrix(4, 3, 6));
  for (int which = 0; which < 3; ++which) {
    const double err = max_gradient_error({&a}, [&](Tape& t) {
      const Var x = t.param(a);
      const Var y = which == 0 ? ad::leaky_relu(x, 0.2) : which == 1 ? ad::tanh(x) : ad::sigmoid(x);
      return probe(y, 7);
    });
    CHECK(err < kTol);
  }
}

TEST_CASE("structural ops: transpose, concat, slice, mean") {
  Parameter a("a", random_matrix(3, 2, 8)), b("b", random_matrix(2, 2, 9));
  const double err = max_gradient_error({&a, &b}, [&](Tape& t) {
    const Var parts[] = {t.param(a), t.param(b)};
    const Var rows = ad::concat_rows(parts);  // 5 x 2
    const Var cols_parts[] = {rows, ad::scale(rows, 2.0)};
    const Var wide = ad::concat_cols(cols_parts);  // 5 x 4
    const Var s = ad::slice_cols(ad::slice_rows(wide, 1, 3), 1, 2);
    return ad::add(probe(ad::transpose(s), 10), probe(ad::mean_rows(wide), 11));
  });
  CHECK(err < kTol);
}

TEST_CASE("softmax variants") {
  Parameter col("col", random_matrix(5, 1, 12)), mat("mat", random_matrix(3, 4, 13));
  const std::vector<bool> mask{false, true, false, false, true};
  const double err = max_gradient_error({&col, &mat}, [&](Tape& t) {
    return ad::add(ad::add(probe(ad::masked_softmax(t.param(col), mask), 14), probe(ad::softmax_column(t.param(col)), 15)),
                   probe(ad::softmax_rows(t.param(mat)), 16));
  });
  CHECK(err < kTol);

  Tape t;
  const Var y = ad::masked_softmax(t.constant(col.value), mask);
  CHECK(y.value()(1, 0) == 0.0);
  CHECK(y.value()(4, 0) == 0.0);
  CHECK(y.value().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(ad::masked_softmax(t.constant(col.value), std::vector<bool>(5, true)), DegenerateNeighborhood);
}

TEST_CASE("unfold with same padding") {
  Tape t;
  Matrix x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  const Matrix u = ad::unfold(t.constant(x), 3).value();
  Matrix expected(3, 6);
  expected << 0, 0, 1, 2, 3, 4,  //
      1, 2, 3, 4, 5, 6,          //
      3, 4, 5, 6, 0, 0;
  CHECK(u == expected);
  CHECK_THROWS_AS(ad::unfold(t.constant(x), 2), ContractViolation);

  Parameter a("a", random_matrix(4, 3, 17));
  CHECK(max_gradient_error({&a}, [&](Tape& tp) { return probe(ad::unfold(tp.param(a), 3), 18); }) < kTol);
}

TEST_CASE("gather_rows scatters into the parameter gradient") {
  Parameter table("table", random_matrix(5, 3, 19));
  const std::vector<int> ids{4, 1, 4};
  CHECK(max_gradient_error({&table}, [&](Tape& t) { return probe(ad::gather_rows(t, table, ids), 20); }) < kTol);

  // Row 0 and rows never gathered keep a zero gradient.
  table.zero_grad();
  Tape t;
  t.backward(probe(ad::gather_rows(t, table, ids), 20));
  CHECK(table.grad.row(0).isZero());
  CHECK(table.grad.row(2).isZero());

  Parameter frozen("frozen", random_matrix(5, 3, 21));
  frozen.trainable = false;
  Tape t2;
  CHECK_FALSE(ad::gather_rows(t2, frozen, ids).requires_grad());
}

TEST_CASE("bce_with_logits is stable and differentiable") {
  Tape t;
  Matrix logits(3, 1);
  logits << 800.0, -800.0, 0.0;
  const std::vector<double> labels{1.0, 0.0, 1.0};
  const double v = ad::bce_with_logits(t.constant(logits), labels).scalar();
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Parameter z("z", random_matrix(4, 1, 22, 3.0));
  const std::vector<double> y{1.0, 0.0, 0.0, 1.0};
  CHECK(max_gradient_error({&z}, [&](Tape& tp) { return ad::bce_with_logits(tp.param(z), y); }) < kTol);
}

TEST_CASE("shape violations are contract errors") {
  Tape t;
  const Var a = t.constant(Matrix::Zero(2, 3));
  const Var b = t.constant(Matrix::Zero(2, 3));
  CHECK_THROWS_AS(ad::matmul(a, b), ContractViolation);
  CHECK_THROWS_AS(ad::add(a, t.constant(Matrix::Zero(3, 3))), ContractViolation);
}

TEST_CASE("constants do not require gradients and prune the tape") {
  Tape t;
  const Var a = t.constant(Matrix::Ones(2, 2));
  const Var y = ad::tanh(ad::matmul(a, a));
  CHECK_FALSE(y.requires_grad());
}
