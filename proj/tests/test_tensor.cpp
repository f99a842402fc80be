#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "cnode/common.hpp"
#include "cnode/tensor.hpp"

using namespace cnode;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

Tensor random_normal(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul identity returns the operand") {
  Tape tape;
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor out = matmul(tape, eye, a);
  REQUIRE(out.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(out.at(i) == a.at(i));
}

TEST_CASE("tanh of the zero vector is zero") {
  Tape tape;
  Tensor out = tanh(tape, Tensor::zeros({3}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(out.at(i) == 0.0);
}

TEST_CASE("softplus at zero equals ln 2") {
  Tape tape;
  Tensor out = softplus(tape, Tensor::scalar(0.0));
  CHECK(out.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("backward of sum of squares") {
  Tape tape;
  Tensor x = tape.leaf({3}, {1, 2, 3});
  Tensor loss = sum(tape, square(tape, x));
  auto g = tape.backward(loss).at(x);
  CHECK(g.at(0) == 2.0);
  CHECK(g.at(1) == 4.0);
  CHECK(g.at(2) == 6.0);
}

TEST_CASE("leaves disconnected from the root get zero gradient") {
  Tape tape;
  Tensor c = tape.leaf(Tensor::scalar(7.0));
  Tensor x = tape.leaf({4}, {1, 2, 3, 4});
  Tensor unused = square(tape, x);
  (void)unused;
  auto grads = tape.backward(c);
  Tensor gx = grads.at(x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(gx.at(i) == 0.0);
  CHECK(grads.at(c).value() == 1.0);
}

TEST_CASE("backward of mean(tanh(W x)) matches finite differences") {
  Rng rng(11);
  Tensor w = random_normal(rng, {5, 4});
  Tensor x0 = random_normal(rng, {4});

  double err_x = grad_check(
      [&](Tape& t, const Tensor& x) { return mean(t, tanh(t, matmul(t, w, x))); }, x0, 1e-5);
  CHECK(err_x < 1e-6);

  double err_w = grad_check(
      [&](Tape& t, const Tensor& wv) { return mean(t, tanh(t, matmul(t, wv, x0))); }, w, 1e-5);
  CHECK(err_w < 1e-6);
}

TEST_CASE("grad_check on x*x and on sum(x)") {
  double err = grad_check([](Tape& t, const Tensor& x) { return mul(t, x, x); },
                          Tensor::scalar(3.0), 1e-5);
  CHECK(err < 1e-8);

  // Constant gradient: the only error left is rounding inside the central
  // difference itself.
  Rng rng(3);
  double err2 = grad_check([](Tape& t, const Tensor& x) { return sum(t, x); },
                           random_normal(rng, {6}), 1e-5);
  CHECK(err2 < 1e-9);
}

TEST_CASE("every primitive agrees with central finite differences") {
  Rng rng(1234);
  auto project = [](Tape& t, const Tensor& v, const Tensor& r) {
    return sum(t, mul(t, v, r));
  };

  struct Probe {
    const char* name;
    Shape shape;
    TensorFn fn;
  };

  // Fixed co-inputs per probe; each check perturbs one input of the op.
  Tensor m_a = random_normal(rng, {3, 4});
  Tensor m_b = random_normal(rng, {4, 2});
  Tensor v4 = random_normal(rng, {4});
  Tensor v6 = random_normal(rng, {6});
  Tensor r32 = random_normal(rng, {3, 2});
  Tensor r3 = random_normal(rng, {3});
  Tensor r34 = random_normal(rng, {3, 4});
  Tensor r6 = random_normal(rng, {6});
  Tensor r4 = random_normal(rng, {4});
  Tensor r10 = random_normal(rng, {10});
  Tensor sc = Tensor::scalar(0.7);

  std::vector<Probe> probes = {
      {"matmul lhs", {3, 4}, [&](Tape& t, const Tensor& x) {
         return project(t, matmul(t, x, m_b), r32);
       }},
      {"matmul rhs", {4, 2}, [&](Tape& t, const Tensor& x) {
         return project(t, matmul(t, m_a, x), r32);
       }},
      {"matmul vec", {4}, [&](Tape& t, const Tensor& x) {
         return project(t, matmul(t, m_a, x), r3);
       }},
      {"add", {6}, [&](Tape& t, const Tensor& x) { return project(t, add(t, x, v6), r6); }},
      {"sub", {6}, [&](Tape& t, const Tensor& x) { return project(t, sub(t, v6, x), r6); }},
      {"mul", {6}, [&](Tape& t, const Tensor& x) { return project(t, mul(t, x, v6), r6); }},
      {"mul scalar lhs", {1}, [&](Tape& t, const Tensor& x) {
         return project(t, mul(t, x, v6), r6);
       }},
      {"mul scalar rhs", {6}, [&](Tape& t, const Tensor& x) {
         return project(t, mul(t, x, sc), r6);
       }},
      {"scale", {6}, [&](Tape& t, const Tensor& x) { return project(t, scale(t, x, -1.7), r6); }},
      {"tanh", {6}, [&](Tape& t, const Tensor& x) { return project(t, tanh(t, x), r6); }},
      {"softplus", {6}, [&](Tape& t, const Tensor& x) {
         return project(t, softplus(t, x), r6);
       }},
      {"exp", {6}, [&](Tape& t, const Tensor& x) { return project(t, exp(t, x), r6); }},
      {"log", {6}, [&](Tape& t, const Tensor& x) {
         // keep the argument positive under perturbation
         return project(t, log(t, softplus(t, x)), r6);
       }},
      {"square", {6}, [&](Tape& t, const Tensor& x) { return project(t, square(t, x), r6); }},
      {"sum", {6}, [&](Tape& t, const Tensor& x) { return sum(t, x); }},
      {"mean", {6}, [&](Tape& t, const Tensor& x) { return mean(t, x); }},
      {"concat", {4}, [&](Tape& t, const Tensor& x) {
         return project(t, concat(t, {x, v6}), r10);
       }},
      {"slice", {6}, [&](Tape& t, const Tensor& x) {
         return project(t, slice(t, x, 1, 4), r4);
       }},
      {"broadcast_add_row", {4}, [&](Tape& t, const Tensor& x) {
         return project(t, broadcast_add_row(t, r34, x), r34);
       }},
      {"broadcast_add_row mat", {3, 4}, [&](Tape& t, const Tensor& x) {
         return project(t, broadcast_add_row(t, x, v4), r34);
       }},
  };

  for (const auto& p : probes) {
    CAPTURE(p.name);
    double err = grad_check(p.fn, random_normal(rng, p.shape), 1e-5);
    CHECK_MESSAGE(err < 1e-6, p.name, " rel err ", err);
  }
}

TEST_CASE("gradient accumulation is additive over fan-out") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(1.5));
  Tensor y = add(tape, x, x);
  auto g = tape.backward(y).at(x);
  CHECK(g.value() == 2.0);
}

TEST_CASE("tape replay is bit-identical") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tape tape;
    Tensor w = tape.leaf(random_normal(rng, {4, 4}));
    Tensor x = tape.leaf(random_normal(rng, {4}));
    Tensor loss = sum(tape, square(tape, tanh(tape, matmul(tape, w, x))));
    auto gw = tape.backward(loss).at(w);
    return std::make_pair(loss.value(), gw.values());
  };
  auto [l1, g1] = run(99);
  auto [l2, g2] = run(99);
  CHECK(l1 == l2);
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Tape tape;
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({4}, {1, 2, 3, 4});
  try {
    matmul(tape, a, b);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2x3)") != std::string::npos);
    CHECK(msg.find("(4)") != std::string::npos);
  }
}

TEST_CASE("non-finite outputs are reported, not propagated") {
  Tape tape;
  CHECK_THROWS_AS(log(tape, Tensor::scalar(-1.0)), NumericError);
  CHECK_THROWS_AS(exp(tape, Tensor::scalar(1e6)), NumericError);

  Tape unchecked(false);
  Tensor out = log(unchecked, Tensor::scalar(-1.0));
  CHECK(std::isnan(out.value()));
}

TEST_CASE("backward rejects a non-scalar root") {
  Tape tape;
  Tensor x = tape.leaf({2}, {1.0, 2.0});
  Tensor y = square(tape, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("apply_primitive free function mirrors Tape::apply") {
  Tape tape;
  Tensor a({2}, {1.0, 2.0});
  Tensor out = apply_primitive(tape, Op::kSquare, {a});
  CHECK(out.at(0) == 1.0);
  CHECK(out.at(1) == 4.0);
}
