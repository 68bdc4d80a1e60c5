#include <doctest.h>

#include <cmath>
#include <vector>

#include "afford3d/autodiff.hpp"
#include "afford3d/error.hpp"
#include "test_support.hpp"

using namespace afford3d;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  return Tensor::matrix(r, c, testing::random_values(r * c, seed, -1, 1));
}

}  // namespace

TEST_CASE("matmul: identity, scalar, and naive oracle") {
  Tape tape;
  const Tensor x = random_matrix(3, 3, 1);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  CHECK(tape.value(ad::matmul(tape, tape.constant(eye), tape.constant(x))) == x);

  const Var six = ad::matmul(tape, tape.constant(Tensor::matrix(1, 1, {2})), tape.constant(Tensor::matrix(1, 1, {3})));
  CHECK(tape.value(six).item() == 6.0);

  const Tensor a = random_matrix(4, 5, 2), b = random_matrix(5, 3, 3);
  const Tensor& c = tape.value(ad::matmul(tape, tape.constant(a), tape.constant(b)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 5; ++p) s += a.at(i, p) * b.at(p, j);
      CHECK(std::abs(c.at(i, j) - s) <= 1e-12);
    }

  CHECK_THROWS_AS(ad::matmul(tape, tape.constant(a), tape.constant(a)), Error);
}

TEST_CASE("softmax rows") {
  Tape tape;
  const Var eq = ad::softmax_rows(tape, tape.constant(Tensor::matrix(1, 4, {2, 2, 2, 2})));
  for (double v : tape.value(eq).values()) CHECK(v == 0.25);

  const Var big = ad::softmax_rows(tape, tape.constant(Tensor::matrix(1, 2, {1000, 0})));
  CHECK(tape.value(big)[0] == doctest::Approx(1.0));
  CHECK(tape.value(big)[1] == doctest::Approx(0.0));

  const Tensor x = random_matrix(3, 5, 4);
  const Tensor& s = tape.value(ad::softmax_rows(tape, tape.constant(x)));
  for (std::size_t r = 0; r < 3; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < 5; ++c) row += s.at(r, c);
    CHECK(std::abs(row - 1.0) <= 1e-12);
  }

  const Tensor weights = random_matrix(3, 5, 5);
  const double err = ad::finite_difference_check(
      [&](Tape& t, Var v) { return ad::sum(t, ad::mul(t, ad::softmax_rows(t, v), t.constant(weights))); }, x);
  CHECK(err <= 1e-6);
}

TEST_CASE("elementwise values and domain errors") {
  Tape tape;
  CHECK(tape.value(ad::sigmoid(tape, tape.constant(Tensor::scalar(0.0)))).item() == 0.5);
  CHECK(tape.value(ad::relu(tape, tape.constant(Tensor::scalar(-3.0)))).item() == 0.0);
  const Var s = ad::sigmoid(tape, tape.constant(Tensor::matrix(1, 2, {-800, 800})));
  CHECK(tape.value(s)[0] >= 0.0);
  CHECK(tape.value(s)[1] == 1.0);

  try {
    ad::log(tape, tape.constant(Tensor::scalar(-1.0)));
    FAIL("expected a domain error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NumericDomain);
  }
  try {
    ad::scale(tape, tape.constant(Tensor::scalar(1e308)), 10.0);
    FAIL("expected an overflow error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NumericDomain);
  }
}

TEST_CASE("backward: x*x at 3, non-scalar loss, accumulation") {
  Tape tape;
  const Var x = tape.leaf(Tensor::scalar(3.0));
  const Var y = ad::mul(tape, x, x);
  tape.backward(y);
  CHECK(tape.grad(x).item() == 6.0);
  tape.backward(y);
  CHECK(tape.grad(x).item() == 12.0);
  tape.zero_grad();
  CHECK(tape.grad(x).item() == 0.0);

  const Var m = tape.leaf(random_matrix(2, 2, 1));
  try {
    tape.backward(m);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
  }
}

TEST_CASE("finite differences: linear function is exact") {
  // No truncation error for a linear map, so a wide step only trims cancellation.
  const Tensor w = random_matrix(3, 4, 7);
  const double err = ad::finite_difference_check(
      [&](Tape& t, Var x) { return ad::sum(t, ad::mul(t, x, t.constant(w))); }, random_matrix(3, 4, 8), 1e-3);
  CHECK(err <= 1e-10);
}

TEST_CASE("finite differences: softmax cross-entropy toy") {
  Tensor onehot({2, 4});
  onehot.at(0, 1) = 1.0;
  onehot.at(1, 3) = 1.0;
  const double err = ad::finite_difference_check(
      [&](Tape& t, Var x) {
        return ad::scale(t, ad::sum(t, ad::mul(t, t.constant(onehot), ad::log(t, ad::softmax_rows(t, x)))), -1.0);
      },
      random_matrix(2, 4, 9));
  CHECK(err <= 1e-6);
}

TEST_CASE("every primitive's backward matches finite differences") {
  const Tensor a = random_matrix(3, 4, 10), b = random_matrix(4, 2, 11), c = random_matrix(3, 4, 12);
  const Tensor probe2 = random_matrix(3, 2, 13), probe4 = random_matrix(3, 4, 14);
  auto dot = [](Tape& t, Var v, const Tensor& w) { return ad::sum(t, ad::mul(t, v, t.constant(w))); };

  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::matmul(t, x, t.constant(b)), probe2); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::matmul(t, t.constant(a), x), probe2); }, b) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::transpose(t, x), random_matrix(4, 3, 19)); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::add(t, x, t.constant(c)), probe4); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::sub(t, t.constant(c), x), probe4); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::mul(t, x, x), probe4); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::scale(t, x, -2.5), probe4); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::sigmoid(t, x), probe4); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::relu(t, x), probe4); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check([&](Tape& t, Var x) { return dot(t, ad::log(t, ad::sigmoid(t, x)), probe4); }, a) <= 1e-8);
  CHECK(ad::finite_difference_check(
            [&](Tape& t, Var x) { return dot(t, ad::repeat_rows(t, x, 3), probe4); }, random_matrix(1, 4, 15)) <= 1e-8);
  CHECK(ad::finite_difference_check(
            [&](Tape& t, Var x) {
              const std::vector<Var> parts{x, t.constant(random_matrix(1, 4, 16)), x};
              return dot(t, ad::concat_rows(t, parts), random_matrix(7, 4, 17));
            },
            a) <= 1e-8);
  CHECK(ad::finite_difference_check(
            [&](Tape& t, Var x) { return dot(t, ad::reshape(t, x, {4, 3}), random_matrix(4, 3, 18)); }, a) <= 1e-8);
}

TEST_CASE("scalar operands broadcast in add and mul") {
  const Tensor probe = random_matrix(2, 3, 20);
  const double err = ad::finite_difference_check(
      [&](Tape& t, Var s) {
        const Var m = t.constant(random_matrix(2, 3, 21));
        return ad::sum(t, ad::mul(t, ad::add(t, ad::mul(t, m, s), s), t.constant(probe)));
      },
      Tensor::scalar(0.7));
  CHECK(err <= 1e-8);
}

TEST_CASE("fault injection is detected") {
  const Tensor probe = random_matrix(3, 4, 30);
  auto f = [&](Tape& t, Var x) {
    t.inject_backward_fault(ad::Op::Sigmoid, 1.5);
    return ad::sum(t, ad::mul(t, ad::sigmoid(t, x), t.constant(probe)));
  };
  CHECK(ad::finite_difference_check(f, random_matrix(3, 4, 31)) > 1e-3);
}
