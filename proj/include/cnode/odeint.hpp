#pragma once

#include <functional>
#include <vector>

#include "cnode/tensor.hpp"

namespace cnode {

// Autonomous vector field built from tape primitives; output shape must
// equal input shape so gradients flow through every solver step.
using OdeField = std::function<Tensor(const Tensor&)>;

enum class SolverMethod { kRk4Fixed, kDopri5Adaptive };

struct SolverConfig {
  SolverMethod method = SolverMethod::kRk4Fixed;
  double step = 0.05;     // fixed-step size
  double rtol = 1e-6;     // adaptive relative tolerance
  double atol = 1e-8;     // adaptive absolute tolerance
  std::size_t max_steps = 100000;

  void validate() const;
};

// Integrates z' = field(z) from (t0, z0) and returns the state at each
// requested time. Times must be nondecreasing with times[0] >= t0; a
// requested time equal to the current time returns the current state
// exactly (no step taken). Fixed-step integration shortens the final step
// of each segment so the solver lands exactly on every requested time.
// Every step is recorded on `tape`, so gradients flow to z0 and to any
// parameters captured by the field.
std::vector<Tensor> ode_solve(Tape& tape, const OdeField& field, const Tensor& z0, double t0,
                              const std::vector<double>& times, const SolverConfig& cfg);

// Least-squares slope of log(error at t1) vs log(step), with the reference
// solution integrated at a step 100x finer than the smallest requested.
// When every error sits at rounding level the slope is undefined and the
// method is reported as exact on this field.
struct ConvergenceResult {
  double order = 0.0;
  bool exact = false;
  std::vector<double> errors;  // one per step size
};

ConvergenceResult convergence_order(Tape& tape, const OdeField& field, const Tensor& z0,
                                    double t0, double t1, const std::vector<double>& steps);

}  // namespace cnode
