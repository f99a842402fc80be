#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cnode/common.hpp"

namespace cnode {

struct VisitRecord {
  std::string subject_id;
  double time_years = 0.0;  // years since the subject's first visit
  std::vector<double> features;
};

struct SubjectRecord {
  std::string subject_id;
  std::vector<double> meta;  // [age, sex]; sex stays {0,1} under standardization
  std::vector<double> cond;  // first-visit volumes
  std::vector<VisitRecord> visits;  // sorted by time, first at 0

  std::vector<double> condition_vector() const;  // concat(meta, cond)
};

// Per-dimension statistics fitted on a training split only.
struct Standardizer {
  std::vector<double> feat_mean, feat_std;
  double age_mean = 0.0, age_std = 1.0;
  std::vector<double> cond_mean, cond_std;
};

struct Cohort {
  std::vector<SubjectRecord> subjects;
  std::size_t feature_dim = 0;
  std::size_t cond_dim = 0;
  std::optional<Standardizer> stats;  // present once standardized
  std::size_t dropped_at_load = 0;    // subjects removed for having < 2 visits
};

// visits.csv:   subject_id,time_years,f_0,...,f_{D-1}
// subjects.csv: subject_id,age,sex,v_0,...,v_{V-1}
Cohort load_cohort(const std::string& visits_path, const std::string& subjects_path);
void save_cohort(const Cohort& cohort, const std::string& visits_path,
                 const std::string& subjects_path);

Standardizer fit_standardizer(const Cohort& cohort,
                              const std::vector<std::size_t>& train_subjects);
Cohort apply_standardizer(const Cohort& cohort, const Standardizer& s);

// ---------------------------------------------------------------------------
// Synthetic cohort with known per-subject alignment. Every subject samples
// one shared latent path at its own (tau*, gamma*)-warped times; both warp
// parameters are smooth functions of the subject's conditions so they are
// recoverable from data.

struct GenConfig {
  std::size_t n_subjects = 161;
  double three_visit_fraction = 50.0 / 161.0;
  double interval_min = 0.61;   // years
  double interval_max = 2.27;
  double interval_mean = 1.11;
  std::size_t feature_dim = 68;
  std::size_t cond_dim = 14;
  std::size_t latent_dim = 4;
  double noise_sd = 0.1;
  bool force_identity_alignment = false;  // tau* = 0, gamma* = 1 everywhere
  std::uint64_t seed = 7;
};

struct SubjectTruth {
  std::string subject_id;
  double tau = 0.0;
  double gamma = 1.0;
};

struct SyntheticTruth {
  std::vector<SubjectTruth> subjects;
  std::size_t latent_dim = 0;
  double noise_sd = 0.0;
  // Generator internals, kept so an oracle can rebuild any point of the
  // shared path: dz/dt = A z + eps * tanh(B z), X = W2 tanh(W1 z) + b.
  std::vector<double> field_lin;   // A, L x L
  std::vector<double> field_gain;  // B, L x L
  double field_gain_scale = 0.0;   // eps
  std::vector<double> dec_w1;      // Hd x L
  std::vector<double> dec_w2;      // D x Hd
  std::vector<double> dec_b;       // D
  std::size_t dec_hidden = 0;
  std::vector<double> z_start;     // shared latent at aligned time 0
};

std::pair<Cohort, SyntheticTruth> synthesize_cohort(const GenConfig& cfg);

// Plain-double views of the generator internals, used by test oracles.
std::vector<double> truth_field_eval(const SyntheticTruth& t, const std::vector<double>& z);
std::vector<double> truth_decode(const SyntheticTruth& t, const std::vector<double>& z);
// Shared latent at an aligned time, via the generator's own fine-step rule.
std::vector<double> truth_latent_at(const SyntheticTruth& t, double aligned_time);

// truth.csv: subject_id,tau_true,gamma_true
void save_truth(const SyntheticTruth& t, const std::string& path);
std::vector<SubjectTruth> load_truth(const std::string& path);

// ---------------------------------------------------------------------------

using FoldSplit = std::pair<std::vector<std::size_t>, std::vector<std::size_t>>;

// Subject-level k-fold partition: disjoint, exhaustive, test sizes differing
// by at most one, deterministic per seed.
std::vector<FoldSplit> kfold_split(const Cohort& cohort, std::size_t k, std::uint64_t seed);

// Observed prefix = all visits but the last; forecast target = the last.
std::pair<std::vector<VisitRecord>, std::vector<VisitRecord>> prefix_target_split(
    const SubjectRecord& subject);

}  // namespace cnode
