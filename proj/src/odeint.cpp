#include "cnode/odeint.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cnode {

void SolverConfig::validate() const {
  if (step <= 0.0) throw ContractError("SolverConfig: step must be > 0");
  if (rtol <= 0.0 || atol <= 0.0) throw ContractError("SolverConfig: rtol and atol must be > 0");
  if (max_steps < 1) throw ContractError("SolverConfig: max_steps must be >= 1");
}

namespace {

Tensor field_eval(const OdeField& field, const Tensor& z) {
  Tensor dz = field(z);
  if (dz.shape() != z.shape()) {
    throw ContractError("ode_solve: field output shape " + shape_str(dz.shape()) +
                        " does not match state shape " + shape_str(z.shape()));
  }
  return dz;
}

// One classical RK4 step of size h, recorded entirely on the tape so a
// backward pass sees the unrolled discretization.
Tensor rk4_step(Tape& tape, const OdeField& field, const Tensor& z, double h) {
  Tensor k1 = field_eval(field, z);
  Tensor k2 = field_eval(field, add(tape, z, scale(tape, k1, h / 2.0)));
  Tensor k3 = field_eval(field, add(tape, z, scale(tape, k2, h / 2.0)));
  Tensor k4 = field_eval(field, add(tape, z, scale(tape, k3, h)));
  Tensor incr = add(tape, add(tape, k1, scale(tape, k2, 2.0)),
                    add(tape, scale(tape, k3, 2.0), k4));
  return add(tape, z, scale(tape, incr, h / 6.0));
}

// Dormand-Prince 5(4) coefficients.
struct Dp {
  static constexpr double a21 = 1.0 / 5.0;
  static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                          a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
  static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                          a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
  static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                          b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
  // Embedded 4th-order weights.
  static constexpr double e1 = 5179.0 / 57600.0, e3 = 7571.0 / 16695.0, e4 = 393.0 / 640.0,
                          e5 = -92097.0 / 339200.0, e6 = 187.0 / 2100.0, e7 = 1.0 / 40.0;
};

Tensor lincomb(Tape& tape, const Tensor& z,
               std::initializer_list<std::pair<const Tensor*, double>> terms, double h) {
  Tensor acc = z;
  for (const auto& [k, c] : terms) {
    acc = add(tape, acc, scale(tape, *k, h * c));
  }
  return acc;
}

struct Dopri5Result {
  Tensor z_new;
  double err_norm;  // scaled error, accept when <= 1
};

Dopri5Result dopri5_step(Tape& tape, const OdeField& field, const Tensor& z, double h,
                         double rtol, double atol) {
  Tensor k1 = field_eval(field, z);
  Tensor k2 = field_eval(field, lincomb(tape, z, {{&k1, Dp::a21}}, h));
  Tensor k3 = field_eval(field, lincomb(tape, z, {{&k1, Dp::a31}, {&k2, Dp::a32}}, h));
  Tensor k4 =
      field_eval(field, lincomb(tape, z, {{&k1, Dp::a41}, {&k2, Dp::a42}, {&k3, Dp::a43}}, h));
  Tensor k5 = field_eval(
      field, lincomb(tape, z, {{&k1, Dp::a51}, {&k2, Dp::a52}, {&k3, Dp::a53}, {&k4, Dp::a54}}, h));
  Tensor k6 = field_eval(
      field, lincomb(tape, z,
                     {{&k1, Dp::a61}, {&k2, Dp::a62}, {&k3, Dp::a63}, {&k4, Dp::a64}, {&k5, Dp::a65}},
                     h));
  Tensor z_new = lincomb(
      tape, z, {{&k1, Dp::b1}, {&k3, Dp::b3}, {&k4, Dp::b4}, {&k5, Dp::b5}, {&k6, Dp::b6}}, h);
  Tensor k7 = field_eval(field, z_new);

  // Error estimate and step control use plain values; the controller is
  // not part of the differentiated graph.
  const auto& v1 = k1.values();
  const auto& v3 = k3.values();
  const auto& v4 = k4.values();
  const auto& v5 = k5.values();
  const auto& v6 = k6.values();
  const auto& v7 = k7.values();
  const auto& zv = z.values();
  const auto& znv = z_new.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    double z4 = zv[i] + h * (Dp::e1 * v1[i] + Dp::e3 * v3[i] + Dp::e4 * v4[i] + Dp::e5 * v5[i] +
                             Dp::e6 * v6[i] + Dp::e7 * v7[i]);
    double sc = atol + rtol * std::max(std::abs(zv[i]), std::abs(znv[i]));
    double e = (znv[i] - z4) / sc;
    acc += e * e;
  }
  double err = std::sqrt(acc / static_cast<double>(zv.size()));
  return {z_new, err};
}

std::string interval_str(double a, double b) {
  std::ostringstream os;
  os << "[" << a << ", " << b << "]";
  return os.str();
}

}  // namespace

std::vector<Tensor> ode_solve(Tape& tape, const OdeField& field, const Tensor& z0, double t0,
                              const std::vector<double>& times, const SolverConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(t0)) throw ContractError("ode_solve: t0 must be finite");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i])) throw ContractError("ode_solve: non-finite requested time");
    double prev = (i == 0) ? t0 : times[i - 1];
    if (times[i] < prev) {
      throw ContractError("ode_solve: requested times must be nondecreasing and >= t0");
    }
  }

  Tensor cur = z0.on_tape() ? z0 : tape.leaf(z0);
  double t = t0;
  std::size_t steps_taken = 0;

  std::vector<Tensor> out;
  out.reserve(times.size());

  for (double target : times) {
    if (target > t) {
      double span = target - t;
      if (cfg.method == SolverMethod::kRk4Fixed) {
        std::size_t n_full = static_cast<std::size_t>(std::floor(span / cfg.step + 1e-9));
        double remainder = span - static_cast<double>(n_full) * cfg.step;
        if (remainder < 1e-12 * std::max(1.0, std::abs(span))) remainder = 0.0;
        for (std::size_t s = 0; s < n_full + (remainder > 0.0 ? 1u : 0u); ++s) {
          double h = (s < n_full) ? cfg.step : remainder;
          cur = rk4_step(tape, field, cur, h);
          if (++steps_taken > cfg.max_steps) {
            throw NumericError("ode_solve: exceeded max_steps integrating " +
                               interval_str(t, target));
          }
        }
      } else {
        double h = std::min(cfg.step, span);
        double t_local = t;
        while (t_local < target) {
          h = std::min(h, target - t_local);
          Dopri5Result r = dopri5_step(tape, field, cur, h, cfg.rtol, cfg.atol);
          if (++steps_taken > cfg.max_steps) {
            throw NumericError("ode_solve: exceeded max_steps integrating " +
                               interval_str(t, target));
          }
          if (r.err_norm <= 1.0) {
            t_local += h;
            cur = r.z_new;
          }
          double factor = 0.9 * std::pow(std::max(r.err_norm, 1e-10), -0.2);
          h *= std::clamp(factor, 0.2, 5.0);
          if (!(h > 0.0) || !std::isfinite(h)) {
            throw NumericError("ode_solve: step size collapsed integrating " +
                               interval_str(t, target));
          }
        }
      }
      t = target;
    }
    out.push_back(cur);
  }
  return out;
}

ConvergenceResult convergence_order(Tape& tape, const OdeField& field, const Tensor& z0,
                                    double t0, double t1, const std::vector<double>& steps) {
  if (steps.size() < 3) {
    throw ContractError("convergence_order: need at least 3 step sizes");
  }
  double finest = *std::min_element(steps.begin(), steps.end());
  if (finest <= 0.0) throw ContractError("convergence_order: steps must be positive");

  auto solve_with = [&](double h) {
    SolverConfig cfg;
    cfg.method = SolverMethod::kRk4Fixed;
    cfg.step = h;
    cfg.max_steps = static_cast<std::size_t>((t1 - t0) / h) + 16;
    return ode_solve(tape, field, z0, t0, {t1}, cfg)[0];
  };

  Tensor ref = solve_with(finest / 100.0);
  double ref_scale = 0.0;
  for (double v : ref.values()) ref_scale = std::max(ref_scale, std::abs(v));

  ConvergenceResult res;
  for (double h : steps) {
    Tensor z = solve_with(h);
    double err = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      err = std::max(err, std::abs(z.values()[i] - ref.values()[i]));
    }
    res.errors.push_back(err);
  }

  // Rounding-level errors mean the method is exact on this field.
  double tol = 1e-13 * std::max(1.0, ref_scale);
  if (std::all_of(res.errors.begin(), res.errors.end(), [&](double e) { return e < tol; })) {
    res.exact = true;
    return res;
  }

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t n = steps.size();
  for (std::size_t i = 0; i < n; ++i) {
    double x = std::log(steps[i]);
    double y = std::log(std::max(res.errors[i], 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double denom = static_cast<double>(n) * sxx - sx * sx;
  res.order = (static_cast<double>(n) * sxy - sx * sy) / denom;
  return res;
}

}  // namespace cnode
