#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "xmatch/errors.hpp"
#include "xmatch/matrix.hpp"
#include "xmatch/rng.hpp"
#include "xmatch/tape.hpp"

using namespace xmatch;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0,
                     double offset = 0.0) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = offset + scale * rng.normal();
  }
  return m;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Scalarizes an arbitrary-shaped output as sum(output .* W) with a fixed
// random weighting W, so every output element influences the loss.
double run_loss(const std::vector<Matrix>& inputs, const Builder& build,
                const Matrix& weighting, Tape* keep = nullptr, Var* loss_out = nullptr) {
  Tape local;
  Tape& tape = keep ? *keep : local;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Matrix& m : inputs) vars.push_back(tape.param(m));
  const Var out = build(tape, vars);
  const Var loss = tape.sum_all(tape.mul(out, tape.input(weighting)));
  if (loss_out) *loss_out = loss;
  return tape.value(loss)(0, 0);
}

// Max relative error between tape gradients and central finite differences
// over every element of every input.
double max_fd_error(const std::vector<Matrix>& inputs, const Builder& build,
                    std::uint64_t weight_seed = 99, double step = 1e-5) {
  // Shape of the output determines the weighting matrix; probe once.
  Matrix weighting;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const Matrix& m : inputs) vars.push_back(probe.param(m));
    const Matrix& out = probe.value(build(probe, vars));
    Rng wrng(weight_seed);
    weighting = random_matrix(wrng, out.rows(), out.cols());
  }

  Tape tape;
  Var loss;
  std::vector<Var> vars;
  {
    std::vector<Var> collected;
    for (const Matrix& m : inputs) collected.push_back(tape.param(m));
    const Var out = build(tape, collected);
    loss = tape.sum_all(tape.mul(out, tape.input(weighting)));
    vars = std::move(collected);
  }
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const Matrix analytic = tape.grad(vars[which]);
    for (std::size_t r = 0; r < inputs[which].rows(); ++r) {
      for (std::size_t c = 0; c < inputs[which].cols(); ++c) {
        std::vector<Matrix> bumped = inputs;
        bumped[which](r, c) += step;
        const double up = run_loss(bumped, build, weighting);
        bumped[which](r, c) -= 2.0 * step;
        const double down = run_loss(bumped, build, weighting);
        const double fd = (up - down) / (2.0 * step);
        const double an = analytic(r, c);
        const double err = std::abs(fd - an) / (std::abs(fd) + std::abs(an) + 1e-8);
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("tape") {

TEST_CASE("forward values mirror the plain matrix ops") {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 4, 2);
  Tape tape;
  const Var va = tape.input(a);
  const Var vb = tape.input(b);
  const Matrix tape_prod = tape.value(tape.matmul(va, vb));
  const Matrix plain_prod = matmul(a, b);
  REQUIRE(tape_prod.same_shape(plain_prod));
  for (std::size_t r = 0; r < plain_prod.rows(); ++r) {
    for (std::size_t c = 0; c < plain_prod.cols(); ++c) {
      CHECK(tape_prod(r, c) == plain_prod(r, c));
    }
  }
  const Matrix tape_t = tape.value(tape.transpose(va));
  const Matrix plain_t = transpose(a);
  for (std::size_t r = 0; r < plain_t.rows(); ++r) {
    for (std::size_t c = 0; c < plain_t.cols(); ++c) {
      CHECK(tape_t(r, c) == plain_t(r, c));
    }
  }
}

TEST_CASE("row_softmax values match softmax_scaled") {
  Rng rng(2);
  const Matrix a = random_matrix(rng, 3, 5);
  Tape tape;
  const Matrix soft = tape.value(tape.row_softmax(tape.input(a), 4.0));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const std::vector<double> expected = softmax_scaled(a.row(r), 4.0);
    double total = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      CHECK(soft(r, c) == expected[c]);
      total += soft(r, c);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("row_l2_normalize values match l2_normalize") {
  Rng rng(3);
  const Matrix a = random_matrix(rng, 4, 3);
  Tape tape;
  const Matrix normed = tape.value(tape.row_l2_normalize(tape.input(a)));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const std::vector<double> expected = l2_normalize(a.row(r));
    for (std::size_t c = 0; c < a.cols(); ++c) CHECK(normed(r, c) == expected[c]);
  }
}

TEST_CASE("matmul gradients") {
  Rng rng(10);
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 4, 2);
  const double err = max_fd_error({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return t.matmul(v[0], v[1]);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("transpose add sub gradients") {
  Rng rng(11);
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 3, 4);
  const double err = max_fd_error({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return t.transpose(t.sub(t.add(v[0], v[1]), v[1]));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("mul and scale gradients") {
  Rng rng(12);
  const Matrix a = random_matrix(rng, 2, 5);
  const Matrix b = random_matrix(rng, 2, 5);
  const double err = max_fd_error({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return t.scale(t.mul(v[0], v[1]), -1.5);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("aliased operands accumulate both paths") {
  Rng rng(13);
  const Matrix a = random_matrix(rng, 2, 3);
  const double err = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.mul(v[0], v[0]);  // d/dx x*x = 2x needs both operand paths
  });
  CHECK(err < 1e-6);
}

TEST_CASE("add_scalar add_rowvec sub_broadcast gradients") {
  Rng rng(14);
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix v = random_matrix(rng, 1, 4);
  const Matrix s = random_matrix(rng, 1, 1);
  const double err = max_fd_error({a, v, s}, [](Tape& t, const std::vector<Var>& in) {
    return t.sub_broadcast(t.add_rowvec(t.add_scalar(in[0], 0.7), in[1]), in[2]);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("relu gradient away from the kink") {
  Matrix a(2, 3, {0.5, -0.7, 1.2, -0.4, 0.9, -2.0});
  const double err = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.relu(v[0]);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("exp log tanh sigmoid gradients") {
  Rng rng(15);
  Matrix a = random_matrix(rng, 2, 4, 0.3, 1.5);  // keep values positive for log
  const double err = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.sigmoid(t.tanh(t.log(t.exp(v[0]))));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("row_softmax gradient") {
  // Mild temperature and scale keep the softmax away from saturation, where
  // finite differences lose all relative accuracy.
  Rng rng(16);
  const Matrix a = random_matrix(rng, 3, 5, 0.6);
  const double err = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.row_softmax(v[0], 2.0);
  });
  CHECK(err < 1e-6);

  // Exact check against the closed-form Jacobian: for loss = sum(w .* p) with
  // p = softmax(lambda * x), dL/dx_j = lambda * p_j * (w_j - sum_i w_i p_i).
  const Matrix x = random_matrix(rng, 2, 4);
  const Matrix w = random_matrix(rng, 2, 4);
  Tape tape;
  const Var vx = tape.param(x);
  tape.backward(tape.sum_all(tape.mul(tape.row_softmax(vx, 6.0), tape.input(w))));
  const Matrix grad = tape.grad(vx);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::vector<double> p = softmax_scaled(x.row(r), 6.0);
    double inner = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) inner += w(r, c) * p[c];
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double expected = 6.0 * p[c] * (w(r, c) - inner);
      CHECK(grad(r, c) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("row_l2_normalize gradient") {
  Rng rng(17);
  const Matrix a = random_matrix(rng, 3, 4, 1.0, 0.5);
  const double err = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.row_l2_normalize(v[0]);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("reduction gradients") {
  Rng rng(18);
  const Matrix a = random_matrix(rng, 3, 4);
  const double err_sum = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum_all(v[0]);
  });
  CHECK(err_sum < 1e-6);
  const double err_rows = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.row_sums(v[0]);
  });
  CHECK(err_rows < 1e-6);
}

TEST_CASE("max gradients at distinct values") {
  Matrix a(2, 3, {0.1, 0.9, 0.4, 0.8, 0.2, 0.3});
  const double err_all = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.max_all(v[0]);
  });
  CHECK(err_all < 1e-6);
  const double err_rows = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.row_max(v[0]);
  });
  CHECK(err_rows < 1e-6);
}

TEST_CASE("max ties send the gradient to the lowest index") {
  Matrix a(1, 3, {0.7, 0.7, 0.2});
  Tape tape;
  const Var v = tape.param(a);
  tape.backward(tape.max_all(v));
  const Matrix g = tape.grad(v);
  CHECK(g(0, 0) == 1.0);
  CHECK(g(0, 1) == 0.0);
  CHECK(g(0, 2) == 0.0);
}

TEST_CASE("gather_rows accumulates duplicate indices") {
  Rng rng(19);
  const Matrix a = random_matrix(rng, 4, 3);
  const double err = max_fd_error({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.gather_rows(v[0], {2, 0, 2, 3});
  });
  CHECK(err < 1e-6);
}

TEST_CASE("stack_rows splits the gradient across parts") {
  // Parts are single rows; stacking the same row twice must accumulate.
  Rng rng(20);
  const Matrix a = random_matrix(rng, 1, 3);
  const Matrix b = random_matrix(rng, 1, 3);
  const double err = max_fd_error({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return t.stack_rows({v[0], v[1], v[0]});
  });
  CHECK(err < 1e-6);
}

TEST_CASE("a deep composite expression differentiates correctly") {
  Rng rng(21);
  const Matrix a = random_matrix(rng, 3, 4, 0.8);
  const Matrix b = random_matrix(rng, 4, 3, 0.8);
  const double err = max_fd_error({a, b}, [](Tape& t, const std::vector<Var>& v) {
    const Var prod = t.matmul(v[0], v[1]);                // 3x3
    const Var soft = t.row_softmax(prod, 3.0);            // 3x3
    const Var mixed = t.matmul(soft, t.transpose(v[1]));  // 3x4
    const Var normed = t.row_l2_normalize(mixed);
    return t.row_sums(t.mul(normed, v[0]));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("unused parameters keep a zero gradient") {
  Tape tape;
  const Var used = tape.param(Matrix(1, 2, {1.0, 2.0}));
  const Var unused = tape.param(Matrix(2, 2, {1, 2, 3, 4}));
  tape.backward(tape.sum_all(used));
  const Matrix g = tape.grad(unused);
  REQUIRE(g.rows() == 2);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(g(r, c) == 0.0);
  }
}

TEST_CASE("backward demands a scalar loss and runs once") {
  Tape tape;
  const Var v = tape.param(Matrix(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_AS(tape.backward(v), DomainError);
  const Var loss = tape.sum_all(v);
  tape.backward(loss);
  CHECK(tape.backward_done());
  CHECK_THROWS_AS(tape.backward(loss), StateError);
}

TEST_CASE("non-finite results are rejected at creation") {
  Tape tape;
  const Var zero = tape.input(Matrix(1, 1, {0.0}));
  CHECK_THROWS_AS(tape.log(zero), NumericError);
  const Var big = tape.input(Matrix(1, 1, {1e308}));
  CHECK_THROWS_AS(tape.mul(big, big), NumericError);
}

TEST_CASE("invalid vars are rejected") {
  Tape tape;
  Var stale;  // never registered
  CHECK_THROWS_AS(tape.value(stale), StateError);
  CHECK_THROWS_AS(tape.sum_all(stale), StateError);
}

}  // TEST_SUITE
