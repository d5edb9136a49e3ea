#include "mccl/autograd.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <functional>

using namespace mccl;
using ag::Matrix;
using ag::Tape;
using ag::Var;

namespace {

// Compares d(sum(weights .* f(x)))/dx from the tape against central
// differences. Random output weights make every output entry matter.
double check(const std::function<Var(Var)>& f, const Matrix& x0, std::mt19937_64& rng) {
  Matrix probe;
  {
    Tape t;
    probe = f(t.input(x0)).value();
  }
  const Matrix w = oracle::random_matrix(probe.rows(), probe.cols(), rng);
  auto scalar = [&](const Matrix& x) {
    Tape t;
    return f(t.input(x)).value().cwiseProduct(w).sum();
  };
  Tape t;
  Var x = t.input(x0);
  Var y = ag::sum_all(ag::mul(f(x), t.constant(w)));
  t.backward(y);
  return oracle::grad_error(x.grad(), oracle::numeric_grad(scalar, x0));
}

}  // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
  std::mt19937_64 rng(7);
  const Matrix a = oracle::random_matrix(3, 4, rng);
  const Matrix b = oracle::random_matrix(3, 4, rng);
  const Matrix m = oracle::random_matrix(4, 2, rng);
  const Matrix row = oracle::random_matrix(1, 4, rng);
  const Matrix col = oracle::random_matrix(3, 1, rng);
  const Matrix pos = a.cwiseAbs().array() + 0.5;

  struct Case {
    const char* name;
    std::function<Var(Var)> f;
    Matrix x;
  };
  const std::vector<Case> cases = {
      {"add", [&](Var x) { return x + x.tape()->constant(b); }, a},
      {"sub", [&](Var x) { return x.tape()->constant(b) - x; }, a},
      {"mul", [&](Var x) { return ag::mul(x, x); }, a},
      {"div", [&](Var x) { return ag::div(x.tape()->constant(b), x); }, pos},
      {"scale", [&](Var x) { return ag::scale(x, -2.5); }, a},
      {"add_scalar", [&](Var x) { return ag::add_scalar(x, 3.0); }, a},
      {"add_row", [&](Var x) { return ag::add_row(x.tape()->constant(a), x); }, row},
      {"mul_col", [&](Var x) { return ag::mul_col(x.tape()->constant(a), x); }, col},
      {"matmul", [&](Var x) { return ag::matmul(x, x.tape()->constant(m)); }, a},
      {"matmul rhs", [&](Var x) { return ag::matmul(x.tape()->constant(a), x); }, m},
      {"matmul_nt", [&](Var x) { return ag::matmul_nt(x, x.tape()->constant(b)); }, a},
      {"transpose", [&](Var x) { return ag::transpose(x); }, a},
      {"relu", [&](Var x) { return ag::relu(x); }, a},
      {"leaky_relu", [&](Var x) { return ag::leaky_relu(x, 0.2); }, a},
      {"sigmoid", [&](Var x) { return ag::sigmoid(x); }, a},
      {"softmax_rows", [&](Var x) { return ag::softmax_rows(x); }, a},
      {"layer_norm_rows",
       [&](Var x) { return ag::layer_norm_rows(x, x.tape()->constant(row), x.tape()->constant(row)); }, a},
      {"row_norms", [&](Var x) { return ag::row_norms(x); }, a},
      {"normalize_rows", [&](Var x) { return ag::normalize_rows(x, 1e-8); }, a},
      {"row_sums", [&](Var x) { return ag::row_sums(x); }, a},
      {"mean_rows", [&](Var x) { return ag::mean_rows(x); }, a},
      {"mean_all", [&](Var x) { return ag::mean_all(x); }, a},
      {"slice_cols", [&](Var x) { return ag::slice_cols(x, 1, 2); }, a},
      {"slice_rows", [&](Var x) { return ag::slice_rows(x, 1, 2); }, a},
      {"concat_cols", [&](Var x) { return ag::concat_cols({x, ag::scale(x, 2.0)}); }, a},
      {"concat_rows", [&](Var x) { return ag::concat_rows({ag::scale(x, 3.0), x}); }, a},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(check(c.f, c.x, rng) < 1e-6);
  }
}

TEST_CASE("space_to_depth gathers f x f blocks") {
  // 4x4 grid of scalars numbered row-major; factor 2.
  Matrix grid(16, 1);
  for (int i = 0; i < 16; ++i) grid(i, 0) = i;
  Tape t;
  Var out = ag::space_to_depth(t.input(grid), 4, 4, 2);
  REQUIRE(out.rows() == 4);
  REQUIRE(out.cols() == 4);
  CHECK(out.value().row(0) == (Eigen::RowVector4d() << 0, 1, 4, 5).finished());
  CHECK(out.value().row(3) == (Eigen::RowVector4d() << 10, 11, 14, 15).finished());

  std::mt19937_64 rng(3);
  CHECK(check([](Var x) { return ag::space_to_depth(x, 4, 2, 2); }, oracle::random_matrix(8, 3, rng), rng) < 1e-6);
}

TEST_CASE("parameters accumulate gradients and bind once per tape") {
  ag::Parameter p("w", Matrix::Constant(1, 1, 2.0));
  Tape t;
  Var a = t.param(p);
  Var b = t.param(p);
  CHECK(a.id() == b.id());
  t.backward(ag::sum_all(ag::mul(a, b)));  // d(w^2)/dw = 2w
  CHECK(p.grad(0, 0) == doctest::Approx(4.0));
  p.zero_grad();
  CHECK(p.grad(0, 0) == 0.0);
}

TEST_CASE("constants receive no gradient") {
  Tape t;
  Var c = t.constant(Matrix::Ones(2, 2));
  Var y = ag::sum_all(ag::mul(c, c));
  CHECK_FALSE(y.requires_grad());
  t.backward(y);
  CHECK(c.grad().isZero());
}
