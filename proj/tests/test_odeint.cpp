#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cnode/common.hpp"
#include "cnode/odeint.hpp"

using namespace cnode;

namespace {

OdeField decay_field(Tape& tape) {
  return [&tape](const Tensor& z) { return scale(tape, z, -1.0); };
}

// dz/dt = (-z2, z1): circular motion.
OdeField rotation_field(Tape& tape) {
  return [&tape](const Tensor& z) {
    Tensor z1 = slice(tape, z, 0, 1);
    Tensor z2 = slice(tape, z, 1, 1);
    return concat(tape, {scale(tape, z2, -1.0), z1});
  };
}

SolverConfig rk4(double step) {
  SolverConfig cfg;
  cfg.method = SolverMethod::kRk4Fixed;
  cfg.step = step;
  return cfg;
}

}  // namespace

TEST_CASE("exponential decay reaches e^{-1}") {
  Tape tape;
  Tensor z0 = tape.leaf(Tensor::scalar(1.0));
  auto states = ode_solve(tape, decay_field(tape), z0, 0.0, {1.0}, rk4(0.01));
  CHECK(std::abs(states[0].value() - std::exp(-1.0)) < 1e-5);
}

TEST_CASE("requesting t0 returns z0 exactly") {
  Tape tape;
  Tensor z0 = tape.leaf({2}, {0.3, -0.7});
  auto states = ode_solve(tape, decay_field(tape), z0, 2.5, {2.5}, rk4(0.05));
  CHECK(states[0].node() == z0.node());
  CHECK(states[0].at(0) == 0.3);
  CHECK(states[0].at(1) == -0.7);
}

TEST_CASE("rotation field traverses a quarter turn") {
  Tape tape;
  Tensor z0 = tape.leaf({2}, {1.0, 0.0});
  auto states = ode_solve(tape, rotation_field(tape), z0, 0.0, {M_PI / 2.0}, rk4(0.01));
  CHECK(std::abs(states[0].at(0) - 0.0) < 1e-4);
  CHECK(std::abs(states[0].at(1) - 1.0) < 1e-4);
}

TEST_CASE("rk4 convergence order is four on the decay field") {
  Tape tape;
  Tensor z0 = tape.leaf(Tensor::scalar(1.0));
  auto res = convergence_order(tape, decay_field(tape), z0, 0.0, 1.0, {0.2, 0.1, 0.05, 0.025});
  REQUIRE(!res.exact);
  CHECK(std::abs(res.order - 4.0) < 0.3);
}

TEST_CASE("rk4 is exact on a constant field") {
  Tape tape;
  Tensor c = tape.leaf(Tensor::scalar(0.37));
  OdeField constant = [&](const Tensor& z) { return scale(tape, add(tape, c, scale(tape, z, 0.0)), 1.0); };
  Tensor z0 = tape.leaf(Tensor::scalar(0.5));
  auto res = convergence_order(tape, constant, z0, 0.0, 1.0, {0.2, 0.1, 0.05});
  CHECK(res.exact);
}

TEST_CASE("harmonic oscillator converges at fourth order over one period") {
  Tape tape;
  Tensor z0 = tape.leaf({2}, {1.0, 0.0});
  auto res = convergence_order(tape, rotation_field(tape), z0, 0.0, 2.0 * M_PI,
                               {0.2, 0.1, 0.05, 0.025});
  REQUIRE(!res.exact);
  CHECK(std::abs(res.order - 4.0) < 0.3);
}

TEST_CASE("harmonic oscillator energy drift below 1e-6 over one period") {
  Tape tape;
  Tensor z0 = tape.leaf({2}, {1.0, 0.0});
  auto states = ode_solve(tape, rotation_field(tape), z0, 0.0, {2.0 * M_PI}, rk4(0.001));
  double e0 = 1.0;
  double e1 = states[0].at(0) * states[0].at(0) + states[0].at(1) * states[0].at(1);
  CHECK(std::abs(e1 - e0) < 1e-6);
}

TEST_CASE("interval additivity, fixed step on aligned boundaries") {
  auto direct = [&]() {
    Tape tape;
    Tensor z0 = tape.leaf(Tensor::scalar(1.0));
    return ode_solve(tape, decay_field(tape), z0, 0.0, {1.0}, rk4(0.125))[0].value();
  };
  auto split = [&]() {
    Tape tape;
    Tensor z0 = tape.leaf(Tensor::scalar(1.0));
    auto states = ode_solve(tape, decay_field(tape), z0, 0.0, {0.5, 1.0}, rk4(0.125));
    return states[1].value();
  };
  CHECK(direct() == split());
}

TEST_CASE("interval additivity, adaptive within 10*atol") {
  SolverConfig cfg;
  cfg.method = SolverMethod::kDopri5Adaptive;
  cfg.step = 0.1;
  cfg.rtol = 1e-8;
  cfg.atol = 1e-10;

  Tape tape;
  Tensor z0 = tape.leaf({2}, {1.0, 0.0});
  auto one = ode_solve(tape, rotation_field(tape), z0, 0.0, {2.0}, cfg);
  auto two = ode_solve(tape, rotation_field(tape), z0, 0.0, {1.0, 2.0}, cfg);
  CHECK(std::abs(one[0].at(0) - two[1].at(0)) < 10.0 * 1e-10 + 1e-9);
  CHECK(std::abs(one[0].at(1) - two[1].at(1)) < 10.0 * 1e-10 + 1e-9);
}

TEST_CASE("adaptive solver matches the analytic decay") {
  SolverConfig cfg;
  cfg.method = SolverMethod::kDopri5Adaptive;
  cfg.step = 0.5;
  cfg.rtol = 1e-9;
  cfg.atol = 1e-11;
  Tape tape;
  Tensor z0 = tape.leaf(Tensor::scalar(1.0));
  auto states = ode_solve(tape, decay_field(tape), z0, 0.0, {1.0, 2.0}, cfg);
  CHECK(std::abs(states[0].value() - std::exp(-1.0)) < 1e-8);
  CHECK(std::abs(states[1].value() - std::exp(-2.0)) < 1e-8);
}

TEST_CASE("gradient through the solver matches finite differences") {
  // d z(1) / d z0 for dz/dt = -a z is e^{-a}; check both z0 and the field
  // parameter a by finite differences on the unrolled discretization.
  auto end_state = [](double z0v, double av) {
    Tape tape;
    Tensor a = tape.leaf(Tensor::scalar(av));
    Tensor z0 = tape.leaf(Tensor::scalar(z0v));
    OdeField f = [&](const Tensor& z) { return scale(tape, mul(tape, a, z), -1.0); };
    auto states = ode_solve(tape, f, z0, 0.0, {1.0}, rk4(0.01));
    return states[0].value();
  };

  Tape tape;
  Tensor a = tape.leaf(Tensor::scalar(0.8));
  Tensor z0 = tape.leaf(Tensor::scalar(1.3));
  OdeField f = [&](const Tensor& z) { return scale(tape, mul(tape, a, z), -1.0); };
  Tensor end = ode_solve(tape, f, z0, 0.0, {1.0}, rk4(0.01))[0];
  auto grads = tape.backward(end);
  double g_z0 = grads.at(z0).value();
  double g_a = grads.at(a).value();

  double h = 1e-5;
  double fd_z0 = (end_state(1.3 + h, 0.8) - end_state(1.3 - h, 0.8)) / (2 * h);
  double fd_a = (end_state(1.3, 0.8 + h) - end_state(1.3, 0.8 - h)) / (2 * h);

  CHECK(std::abs(g_z0 - fd_z0) / (std::abs(fd_z0) + 1e-12) < 1e-4);
  CHECK(std::abs(g_a - fd_a) / (std::abs(fd_a) + 1e-12) < 1e-4);
}

TEST_CASE("unsorted times are rejected") {
  Tape tape;
  Tensor z0 = tape.leaf(Tensor::scalar(1.0));
  CHECK_THROWS_AS(ode_solve(tape, decay_field(tape), z0, 0.0, {1.0, 0.5}, rk4(0.1)),
                  ContractError);
  CHECK_THROWS_AS(ode_solve(tape, decay_field(tape), z0, 1.0, {0.5}, rk4(0.1)), ContractError);
}

TEST_CASE("adaptive solver reports divergence with the interval") {
  // dz/dt = z^2 from z0=2 blows up at t=0.5; max_steps must trip first.
  SolverConfig cfg;
  cfg.method = SolverMethod::kDopri5Adaptive;
  cfg.step = 0.01;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-12;
  cfg.max_steps = 200;

  Tape tape(false);  // let the state grow; the step cap is the guard here
  Tensor z0 = tape.leaf(Tensor::scalar(2.0));
  OdeField f = [&](const Tensor& z) { return square(tape, z); };
  try {
    ode_solve(tape, f, z0, 0.0, {1.0}, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    std::string msg = e.what();
    CHECK(msg.find("max_steps") != std::string::npos);
    CHECK(msg.find("[0") != std::string::npos);
  }
}

TEST_CASE("convergence_order rejects fewer than three steps") {
  Tape tape;
  Tensor z0 = tape.leaf(Tensor::scalar(1.0));
  CHECK_THROWS_AS(convergence_order(tape, decay_field(tape), z0, 0.0, 1.0, {0.1, 0.05}),
                  ContractError);
}
