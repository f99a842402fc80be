#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnode/data.hpp"
#include "cnode/odeint.hpp"
#include "cnode/tensor.hpp"

namespace cnode {

struct ModelDims {
  std::size_t feature = 68;      // D, observed features per visit
  std::size_t latent = 16;       // L
  std::size_t hidden = 64;       // H, shared MLP width
  std::size_t meta = 2;          // dim(M): age, sex
  std::size_t cond = 14;         // dim(C): first-visit volumes
  std::size_t align_hidden = 32; // width of the two alignment regressors

  std::size_t cond_total() const { return meta + cond; }
};

// Parameter arrays in a fixed order; the order is part of the checkpoint
// format and of seed-determinism.
enum ParamId : std::size_t {
  kEncW,
  kEncB,
  kEncMuW,
  kEncMuB,
  kEncSigW,
  kEncSigB,
  kFieldW1,
  kFieldB1,
  kFieldW2,
  kFieldB2,
  kDecW1,
  kDecB1,
  kDecW2,
  kDecB2,
  kTauW1,
  kTauB1,
  kTauW2,
  kTauB2,
  kGammaW1,
  kGammaB1,
  kGammaW2,
  kGammaB2,
  kNumParams,
};

struct ParamArray {
  std::string name;
  Shape shape;
  std::vector<double> value;
};

struct ModelParams {
  ModelDims dims;
  std::vector<ParamArray> params;  // indexed by ParamId

  std::size_t total_size() const;
  void check_finite() const;  // throws NumericError on any non-finite entry
};

// Group label for a parameter id: encoder, field, decoder, tau_head,
// gamma_head. Used for per-group gradient assertions and reporting.
const char* param_group(std::size_t id);

// Xavier-uniform weights, zero biases; the speed head's output bias is set
// so the initial speed is exactly 1 (identity alignment).
ModelParams make_params(const ModelDims& dims, std::uint64_t seed);

// Positivity floor added to softplus for the per-subject speed.
inline constexpr double kGammaFloor = 1e-3;

struct LatentPosterior {
  Tensor mu;
  Tensor log_sigma;
};

// Learned placement of one subject on the shared progression axis.
// tau and gamma are scalars on the tape, so both alignment heads receive
// gradients from any loss consuming the aligned times.
struct AlignedSubject {
  Tensor tau;
  Tensor gamma;
  std::vector<Tensor> aligned_times;  // one {1} tensor per visit

  double tau_value() const { return tau.value(); }
  double gamma_value() const { return gamma.value(); }
  std::vector<double> aligned_values() const;
};

// Model parameters registered on one tape for a forward/backward pass.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& params);

  // tau = f_tau(M,C); gamma = softplus(f_gamma(M,C)) + floor;
  // aligned time k = tau + gamma * (t_k - t_1).
  AlignedSubject align_times(const std::vector<double>& meta, const std::vector<double>& cond,
                             const std::vector<double>& raw_times) const;

  // Per-visit MLP on concat(x_k, aligned_k - aligned_1), mean-pooled, then
  // linear heads for mu and log sigma. Handles single-visit prefixes.
  LatentPosterior encode(const std::vector<Tensor>& x_prefix,
                         const std::vector<Tensor>& aligned_prefix_times) const;

  Tensor decode(const Tensor& z) const;

  // Latent field g(z): L -> H (tanh) -> L, linear output.
  Tensor field_eval(const Tensor& z) const;
  OdeField field() const;

  // g scaled by a positive tape scalar. Integrating this field over raw
  // elapsed time equals integrating g over the aligned timeline, and it
  // keeps the speed head on the reconstruction gradient path.
  OdeField scaled_field(const Tensor& gamma) const;

  Tape& tape() const { return *tape_; }
  const Tensor& param(std::size_t id) const { return p_[id]; }
  const ModelDims& dims() const { return dims_; }

 private:
  Tensor affine(const Tensor& w, const Tensor& b, const Tensor& x) const;

  Tape* tape_;
  ModelDims dims_;
  std::vector<Tensor> p_;
};

// z0 = mu + exp(log_sigma) * noise.
Tensor reparameterize(Tape& tape, const LatentPosterior& post, const Tensor& noise);

// All tape tensors produced for one subject in a training batch.
struct SubjectGraph {
  AlignedSubject aligned;
  LatentPosterior posterior;
  Tensor z0;
  std::vector<Tensor> predictions;  // one per visit, reconstructions then forecasts
};

// align -> encode(prefix) -> sample -> integrate through every visit time ->
// decode. The first visit is a zero-length integration, so its prediction is
// decode(z0) with no solver step. noise must have latent dim entries (zeros
// for deterministic inference).
SubjectGraph run_subject(BoundModel& model, const SubjectRecord& subject, std::size_t prefix_len,
                         const std::vector<double>& noise, const SolverConfig& solver);

struct ForecastResult {
  std::vector<std::vector<double>> predictions;  // per visit index
  double tau = 0.0;
  double gamma = 1.0;
  std::vector<double> aligned_times;
};

ForecastResult forecast_subject(const ModelParams& params, const SubjectRecord& subject,
                                std::size_t prefix_len, const std::vector<double>& noise,
                                const SolverConfig& solver);

}  // namespace cnode
