#include "cnode/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace cnode {

std::vector<double> SubjectRecord::condition_vector() const {
  std::vector<double> out = meta;
  out.insert(out.end(), cond.begin(), cond.end());
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.empty()) throw DataError(path + ": empty file");
  return lines;
}

void expect_header(const std::string& path, const std::vector<std::string>& cols,
                   const std::vector<std::string>& expected) {
  if (cols != expected) {
    std::ostringstream os;
    os << path << ": bad header; expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) os << (i ? "," : "") << expected[i];
    throw DataError(os.str());
  }
}

std::string row_ctx(const std::string& path, std::size_t row) {
  return path + " row " + std::to_string(row);
}

}  // namespace

Cohort load_cohort(const std::string& visits_path, const std::string& subjects_path) {
  // Subjects first: every visit row must reference a known subject.
  auto subj_lines = read_lines(subjects_path);
  auto subj_header = split_csv_line(subj_lines[0]);
  if (subj_header.size() < 3 || subj_header[0] != "subject_id" || subj_header[1] != "age" ||
      subj_header[2] != "sex") {
    throw DataError(subjects_path + ": bad header; expected subject_id,age,sex,v_0,...");
  }
  std::size_t cond_dim = subj_header.size() - 3;
  for (std::size_t j = 0; j < cond_dim; ++j) {
    if (subj_header[3 + j] != "v_" + std::to_string(j)) {
      throw DataError(subjects_path + ": bad header; expected column v_" + std::to_string(j));
    }
  }

  Cohort cohort;
  cohort.cond_dim = cond_dim;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t r = 1; r < subj_lines.size(); ++r) {
    if (subj_lines[r].empty()) continue;
    auto cells = split_csv_line(subj_lines[r]);
    if (cells.size() != subj_header.size()) {
      throw DataError(row_ctx(subjects_path, r + 1) + ": expected " +
                      std::to_string(subj_header.size()) + " columns, got " +
                      std::to_string(cells.size()));
    }
    SubjectRecord s;
    s.subject_id = cells[0];
    if (s.subject_id.empty()) throw DataError(row_ctx(subjects_path, r + 1) + ": empty subject_id");
    if (index_of.count(s.subject_id)) {
      throw DataError(row_ctx(subjects_path, r + 1) + ": duplicate subject_id '" + s.subject_id +
                      "'");
    }
    double age = parse_double(cells[1], row_ctx(subjects_path, r + 1) + " age");
    double sex = parse_double(cells[2], row_ctx(subjects_path, r + 1) + " sex");
    if (sex != 0.0 && sex != 1.0) {
      throw DataError(row_ctx(subjects_path, r + 1) + ": sex must be 0 or 1, got " + cells[2]);
    }
    s.meta = {age, sex};
    s.cond.reserve(cond_dim);
    for (std::size_t j = 0; j < cond_dim; ++j) {
      s.cond.push_back(
          parse_double(cells[3 + j], row_ctx(subjects_path, r + 1) + " v_" + std::to_string(j)));
    }
    index_of[s.subject_id] = cohort.subjects.size();
    cohort.subjects.push_back(std::move(s));
  }
  if (cohort.subjects.empty()) throw DataError(subjects_path + ": no subjects");

  auto visit_lines = read_lines(visits_path);
  auto visit_header = split_csv_line(visit_lines[0]);
  if (visit_header.size() < 3 || visit_header[0] != "subject_id" ||
      visit_header[1] != "time_years") {
    throw DataError(visits_path + ": bad header; expected subject_id,time_years,f_0,...");
  }
  std::size_t feature_dim = visit_header.size() - 2;
  for (std::size_t j = 0; j < feature_dim; ++j) {
    if (visit_header[2 + j] != "f_" + std::to_string(j)) {
      throw DataError(visits_path + ": bad header; expected column f_" + std::to_string(j));
    }
  }
  cohort.feature_dim = feature_dim;

  std::vector<std::vector<std::pair<double, std::size_t>>> seen_times(cohort.subjects.size());
  for (std::size_t r = 1; r < visit_lines.size(); ++r) {
    if (visit_lines[r].empty()) continue;
    auto cells = split_csv_line(visit_lines[r]);
    if (cells.size() != visit_header.size()) {
      throw DataError(row_ctx(visits_path, r + 1) + ": expected " +
                      std::to_string(visit_header.size()) + " columns, got " +
                      std::to_string(cells.size()));
    }
    auto it = index_of.find(cells[0]);
    if (it == index_of.end()) {
      throw DataError(row_ctx(visits_path, r + 1) + ": unknown subject_id '" + cells[0] + "'");
    }
    VisitRecord v;
    v.subject_id = cells[0];
    v.time_years = parse_double(cells[1], row_ctx(visits_path, r + 1) + " time_years");
    if (v.time_years < 0.0) {
      throw DataError(row_ctx(visits_path, r + 1) + ": negative time_years");
    }
    v.features.reserve(feature_dim);
    for (std::size_t j = 0; j < feature_dim; ++j) {
      double x =
          parse_double(cells[2 + j], row_ctx(visits_path, r + 1) + " f_" + std::to_string(j));
      if (!std::isfinite(x)) {
        throw DataError(row_ctx(visits_path, r + 1) + ": non-finite feature f_" +
                        std::to_string(j));
      }
      v.features.push_back(x);
    }
    for (auto& [t, row] : seen_times[it->second]) {
      if (t == v.time_years) {
        throw DataError(row_ctx(visits_path, r + 1) + ": duplicate (subject, time) also at row " +
                        std::to_string(row));
      }
    }
    seen_times[it->second].push_back({v.time_years, r + 1});
    cohort.subjects[it->second].visits.push_back(std::move(v));
  }

  // Sort visits, anchor the first visit at time zero, drop short subjects.
  std::vector<SubjectRecord> kept;
  kept.reserve(cohort.subjects.size());
  for (auto& s : cohort.subjects) {
    std::sort(s.visits.begin(), s.visits.end(),
              [](const VisitRecord& a, const VisitRecord& b) { return a.time_years < b.time_years; });
    if (s.visits.size() < 2) {
      ++cohort.dropped_at_load;
      continue;
    }
    double t0 = s.visits.front().time_years;
    if (t0 != 0.0) {
      for (auto& v : s.visits) v.time_years -= t0;
    }
    kept.push_back(std::move(s));
  }
  cohort.subjects = std::move(kept);
  if (cohort.subjects.empty()) {
    throw DataError(visits_path + ": no subject has the two visits required");
  }
  return cohort;
}

void save_cohort(const Cohort& cohort, const std::string& visits_path,
                 const std::string& subjects_path) {
  {
    std::ofstream out(subjects_path);
    if (!out) throw DataError(subjects_path + ": cannot open for writing");
    out << "subject_id,age,sex";
    for (std::size_t j = 0; j < cohort.cond_dim; ++j) out << ",v_" << j;
    out << "\n";
    for (const auto& s : cohort.subjects) {
      out << s.subject_id << "," << format_double(s.meta[0]) << "," << format_double(s.meta[1]);
      for (double v : s.cond) out << "," << format_double(v);
      out << "\n";
    }
  }
  {
    std::ofstream out(visits_path);
    if (!out) throw DataError(visits_path + ": cannot open for writing");
    out << "subject_id,time_years";
    for (std::size_t j = 0; j < cohort.feature_dim; ++j) out << ",f_" << j;
    out << "\n";
    for (const auto& s : cohort.subjects) {
      for (const auto& v : s.visits) {
        out << s.subject_id << "," << format_double(v.time_years);
        for (double x : v.features) out << "," << format_double(x);
        out << "\n";
      }
    }
  }
}

namespace {

void accumulate_stats(const std::vector<std::vector<const std::vector<double>*>>& rows,
                      std::vector<double>& mean, std::vector<double>& sd) {
  std::size_t dim = mean.size();
  std::size_t n = 0;
  for (const auto& group : rows) n += group.size();
  for (const auto& group : rows) {
    for (const auto* v : group) {
      for (std::size_t j = 0; j < dim; ++j) mean[j] += (*v)[j];
    }
  }
  for (std::size_t j = 0; j < dim; ++j) mean[j] /= static_cast<double>(n);
  for (const auto& group : rows) {
    for (const auto* v : group) {
      for (std::size_t j = 0; j < dim; ++j) {
        double d = (*v)[j] - mean[j];
        sd[j] += d * d;
      }
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
    if (sd[j] < 1e-12) sd[j] = 1.0;  // constant column: leave values centered only
  }
}

}  // namespace

Standardizer fit_standardizer(const Cohort& cohort,
                              const std::vector<std::size_t>& train_subjects) {
  if (train_subjects.empty()) throw ContractError("fit_standardizer: empty training split");
  Standardizer s;
  s.feat_mean.assign(cohort.feature_dim, 0.0);
  s.feat_std.assign(cohort.feature_dim, 0.0);
  s.cond_mean.assign(cohort.cond_dim, 0.0);
  s.cond_std.assign(cohort.cond_dim, 0.0);

  std::vector<std::vector<const std::vector<double>*>> feat_rows, cond_rows;
  double age_sum = 0.0;
  std::size_t n_subj = 0;
  for (std::size_t idx : train_subjects) {
    const auto& subj = cohort.subjects.at(idx);
    std::vector<const std::vector<double>*> visits;
    for (const auto& v : subj.visits) visits.push_back(&v.features);
    feat_rows.push_back(std::move(visits));
    cond_rows.push_back({&subj.cond});
    age_sum += subj.meta[0];
    ++n_subj;
  }
  accumulate_stats(feat_rows, s.feat_mean, s.feat_std);
  accumulate_stats(cond_rows, s.cond_mean, s.cond_std);

  s.age_mean = age_sum / static_cast<double>(n_subj);
  double acc = 0.0;
  for (std::size_t idx : train_subjects) {
    double d = cohort.subjects.at(idx).meta[0] - s.age_mean;
    acc += d * d;
  }
  s.age_std = std::sqrt(acc / static_cast<double>(n_subj));
  if (s.age_std < 1e-12) s.age_std = 1.0;
  return s;
}

Cohort apply_standardizer(const Cohort& cohort, const Standardizer& s) {
  if (s.feat_mean.size() != cohort.feature_dim || s.cond_mean.size() != cohort.cond_dim) {
    throw ContractError("apply_standardizer: stats dims do not match cohort dims");
  }
  Cohort out = cohort;
  for (auto& subj : out.subjects) {
    subj.meta[0] = (subj.meta[0] - s.age_mean) / s.age_std;
    for (std::size_t j = 0; j < out.cond_dim; ++j) {
      subj.cond[j] = (subj.cond[j] - s.cond_mean[j]) / s.cond_std[j];
    }
    for (auto& v : subj.visits) {
      for (std::size_t j = 0; j < out.feature_dim; ++j) {
        v.features[j] = (v.features[j] - s.feat_mean[j]) / s.feat_std[j];
      }
    }
  }
  out.stats = s;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

std::vector<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double sd) {
  std::vector<double> m(rows * cols);
  for (double& x : m) x = sd * rng.normal();
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One plain-double RK4 step for the truth field (sign-aware h).
std::vector<double> truth_rk4_step(const SyntheticTruth& t, const std::vector<double>& z,
                                   double h) {
  auto f = [&](const std::vector<double>& y) { return truth_field_eval(t, y); };
  std::size_t L = z.size();
  auto k1 = f(z);
  std::vector<double> tmp(L);
  for (std::size_t i = 0; i < L; ++i) tmp[i] = z[i] + 0.5 * h * k1[i];
  auto k2 = f(tmp);
  for (std::size_t i = 0; i < L; ++i) tmp[i] = z[i] + 0.5 * h * k2[i];
  auto k3 = f(tmp);
  for (std::size_t i = 0; i < L; ++i) tmp[i] = z[i] + h * k3[i];
  auto k4 = f(tmp);
  std::vector<double> out(L);
  for (std::size_t i = 0; i < L; ++i) {
    out[i] = z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return out;
}

}  // namespace

std::vector<double> truth_field_eval(const SyntheticTruth& t, const std::vector<double>& z) {
  std::size_t L = t.latent_dim;
  std::vector<double> out(L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    double lin = 0.0, pre = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      lin += t.field_lin[i * L + j] * z[j];
      pre += t.field_gain[i * L + j] * z[j];
    }
    out[i] = lin + t.field_gain_scale * std::tanh(pre);
  }
  return out;
}

std::vector<double> truth_decode(const SyntheticTruth& t, const std::vector<double>& z) {
  std::size_t L = t.latent_dim, H = t.dec_hidden, D = t.dec_b.size();
  std::vector<double> hidden(H);
  for (std::size_t i = 0; i < H; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < L; ++j) acc += t.dec_w1[i * L + j] * z[j];
    hidden[i] = std::tanh(acc);
  }
  std::vector<double> out(D);
  for (std::size_t i = 0; i < D; ++i) {
    double acc = t.dec_b[i];
    for (std::size_t j = 0; j < H; ++j) acc += t.dec_w2[i * H + j] * hidden[j];
    out[i] = acc;
  }
  return out;
}

std::vector<double> truth_latent_at(const SyntheticTruth& t, double aligned_time) {
  // Fixed fine step, shortened at the end, so the value is a pure function
  // of the requested time.
  const double h0 = 1.0 / 512.0;
  std::vector<double> z = t.z_start;
  double remaining = std::abs(aligned_time);
  double sign = aligned_time >= 0.0 ? 1.0 : -1.0;
  while (remaining > 0.0) {
    double h = std::min(h0, remaining);
    z = truth_rk4_step(t, z, sign * h);
    remaining -= h;
  }
  return z;
}

std::pair<Cohort, SyntheticTruth> synthesize_cohort(const GenConfig& cfg) {
  if (cfg.n_subjects < 2) throw ContractError("synthesize_cohort: need at least 2 subjects");
  if (cfg.interval_max < cfg.interval_min) {
    throw ContractError("synthesize_cohort: interval_max < interval_min");
  }
  const bool fixed_interval = (cfg.interval_max - cfg.interval_min) < 1e-12;
  double beta_b = 0.0;
  if (!fixed_interval) {
    double frac = (cfg.interval_mean - cfg.interval_min) / (cfg.interval_max - cfg.interval_min);
    if (frac <= 0.0 || frac >= 1.0) {
      throw ContractError("synthesize_cohort: interval_mean outside (min, max)");
    }
    beta_b = 2.0 * (1.0 - frac) / frac;  // Beta(2, b) has mean 2/(2+b) = frac
  }

  Rng rng(cfg.seed);
  const std::size_t L = cfg.latent_dim;
  const std::size_t D = cfg.feature_dim;
  const std::size_t V = cfg.cond_dim;
  const std::size_t P = V + 2;

  SyntheticTruth truth;
  truth.latent_dim = L;
  truth.noise_sd = cfg.noise_sd;
  truth.dec_hidden = 16;

  // Mildly damped rotation with a tanh perturbation: the shared path keeps
  // moving over the whole aligned-time range without blowing up.
  {
    auto raw = random_matrix(rng, L, L, 1.0 / std::sqrt(static_cast<double>(L)));
    truth.field_lin.assign(L * L, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        truth.field_lin[i * L + j] = 0.8 * (raw[i * L + j] - raw[j * L + i]) / 2.0;
      }
      truth.field_lin[i * L + i] -= 0.12;
    }
  }
  truth.field_gain = random_matrix(rng, L, L, 1.0 / std::sqrt(static_cast<double>(L)));
  truth.field_gain_scale = 0.3;
  truth.dec_w1 = random_matrix(rng, truth.dec_hidden, L, 1.0 / std::sqrt(static_cast<double>(L)));
  truth.dec_w2 =
      random_matrix(rng, D, truth.dec_hidden, 2.0 / std::sqrt(static_cast<double>(truth.dec_hidden)));
  truth.dec_b.assign(D, 0.0);
  truth.z_start.resize(L);
  for (double& x : truth.z_start) x = rng.normal();

  // Weights mapping conditions to the true alignment parameters.
  auto w_tau = random_matrix(rng, 1, P, 1.0 / std::sqrt(static_cast<double>(P)));
  auto u_tau = random_matrix(rng, 1, P, 1.0 / std::sqrt(static_cast<double>(P)));
  auto w_gam = random_matrix(rng, 1, P, 1.0 / std::sqrt(static_cast<double>(P)));
  auto u_gam = random_matrix(rng, 1, P, 1.0 / std::sqrt(static_cast<double>(P)));

  // Exact visit-count proportions so the default cohort shape reproduces
  // run after run; which subjects get three visits is shuffled.
  std::size_t n3 = static_cast<std::size_t>(
      std::llround(cfg.three_visit_fraction * static_cast<double>(cfg.n_subjects)));
  n3 = std::min(n3, cfg.n_subjects);
  std::vector<std::size_t> visit_counts(cfg.n_subjects, 2);
  for (std::size_t i = 0; i < n3; ++i) visit_counts[i] = 3;
  rng.shuffle(visit_counts);

  Cohort cohort;
  cohort.feature_dim = D;
  cohort.cond_dim = V;

  for (std::size_t i = 0; i < cfg.n_subjects; ++i) {
    SubjectRecord s;
    s.subject_id = "s" + std::to_string(i + 1);

    double sex = rng.uniform() < 0.55 ? 1.0 : 0.0;
    double age = 61.0 + 9.0 * rng.normal();
    s.meta = {age, sex};
    s.cond.resize(V);
    for (double& c : s.cond) c = rng.normal();

    std::vector<double> x(P);
    x[0] = (age - 61.0) / 9.0;
    x[1] = sex - 0.5;
    for (std::size_t j = 0; j < V; ++j) x[2 + j] = s.cond[j];

    SubjectTruth st;
    st.subject_id = s.subject_id;
    if (cfg.force_identity_alignment) {
      st.tau = 0.0;
      st.gamma = 1.0;
    } else {
      double a_tau = dot(w_tau, x);
      double b_tau = dot(u_tau, x);
      st.tau = 0.8 * std::tanh(a_tau + 0.5 * std::tanh(b_tau));
      double a_gam = dot(w_gam, x);
      double b_gam = dot(u_gam, x);
      st.gamma = 0.5 + 1.5 * sigmoid(1.5 * (a_gam + 0.5 * std::tanh(b_gam)));
    }

    std::size_t k_visits = visit_counts[i];
    std::vector<double> times{0.0};
    for (std::size_t k = 1; k < k_visits; ++k) {
      double interval = fixed_interval
                            ? cfg.interval_min
                            : cfg.interval_min +
                                  (cfg.interval_max - cfg.interval_min) * rng.beta(2.0, beta_b);
      times.push_back(times.back() + interval);
    }

    for (double tk : times) {
      VisitRecord v;
      v.subject_id = s.subject_id;
      v.time_years = tk;
      double aligned = st.tau + st.gamma * tk;
      auto z = truth_latent_at(truth, aligned);
      v.features = truth_decode(truth, z);
      for (double& f : v.features) f += cfg.noise_sd * rng.normal();
      s.visits.push_back(std::move(v));
    }

    truth.subjects.push_back(st);
    cohort.subjects.push_back(std::move(s));
  }

  return {std::move(cohort), std::move(truth)};
}

void save_truth(const SyntheticTruth& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << "subject_id,tau_true,gamma_true\n";
  for (const auto& s : t.subjects) {
    out << s.subject_id << "," << format_double(s.tau) << "," << format_double(s.gamma) << "\n";
  }
}

std::vector<SubjectTruth> load_truth(const std::string& path) {
  auto lines = read_lines(path);
  expect_header(path, split_csv_line(lines[0]), {"subject_id", "tau_true", "gamma_true"});
  std::vector<SubjectTruth> out;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    if (lines[r].empty()) continue;
    auto cells = split_csv_line(lines[r]);
    if (cells.size() != 3) {
      throw DataError(row_ctx(path, r + 1) + ": expected 3 columns");
    }
    SubjectTruth st;
    st.subject_id = cells[0];
    st.tau = parse_double(cells[1], row_ctx(path, r + 1) + " tau_true");
    st.gamma = parse_double(cells[2], row_ctx(path, r + 1) + " gamma_true");
    out.push_back(std::move(st));
  }
  return out;
}

std::vector<FoldSplit> kfold_split(const Cohort& cohort, std::size_t k, std::uint64_t seed) {
  std::size_t n = cohort.subjects.size();
  if (k < 2) throw ContractError("kfold_split: k must be >= 2");
  if (k > n) throw ContractError("kfold_split: k = " + std::to_string(k) + " exceeds " +
                                 std::to_string(n) + " subjects");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<FoldSplit> folds;
  std::size_t base = n / k, rem = n % k, pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    std::size_t sz = base + (f < rem ? 1 : 0);
    FoldSplit split;
    split.second.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + sz));
    for (std::size_t i = 0; i < n; ++i) {
      if (i < pos || i >= pos + sz) split.first.push_back(order[i]);
    }
    std::sort(split.first.begin(), split.first.end());
    std::sort(split.second.begin(), split.second.end());
    folds.push_back(std::move(split));
    pos += sz;
  }
  return folds;
}

std::pair<std::vector<VisitRecord>, std::vector<VisitRecord>> prefix_target_split(
    const SubjectRecord& subject) {
  if (subject.visits.size() < 2) {
    throw ContractError("prefix_target_split: subject '" + subject.subject_id +
                        "' has fewer than 2 visits");
  }
  std::vector<VisitRecord> prefix(subject.visits.begin(), subject.visits.end() - 1);
  std::vector<VisitRecord> target{subject.visits.back()};
  return {std::move(prefix), std::move(target)};
}

}  // namespace cnode
