#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "subevo/data.hpp"
#include "subevo/errors.hpp"
#include "subevo/estimation.hpp"
#include "subevo/parallel.hpp"
#include "subevo/random.hpp"
#include "subevo/state_evolution.hpp"

namespace subevo {

/// floor(q n), with a 1e-9 allowance so that e.g. q = 0.6, n = 1000 gives 600.
inline Eigen::Index subset_size(Eigen::Index n, double q) {
  return static_cast<Eigen::Index>(std::floor(q * static_cast<double>(n) + 1e-9));
}

struct SubsampleDraw {
  std::vector<IndexSet> subsets;  // each sorted
  Eigen::MatrixXi overlap_sizes;  // |I_m cap I_m'|
};

namespace detail {

inline constexpr std::uint64_t kSubsetStream = 0x5b5e7ULL;
inline constexpr std::uint64_t kRepStream = 0x4e9ULL;
inline constexpr std::uint64_t kReferenceStream = 0x4ef0ULL;

inline std::size_t overlap(const IndexSet& a, const IndexSet& b) {
  std::size_t i = 0, j = 0, count = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (b[j] < a[i]) ++j;
    else { ++count; ++i; ++j; }
  }
  return count;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return make_rng(seed, {stream, index})();
}

}  // namespace detail

/// M independent uniform subsets of [n] of size floor(q n), each from its own
/// seeded partial Fisher-Yates shuffle.
inline SubsampleDraw draw_subsets(Eigen::Index n, double q, int M, std::uint64_t seed) {
  if (n < 1) throw DomainError("n must be >= 1");
  if (!(q > 0.0 && q <= 1.0)) throw DomainError("q must lie in (0, 1]");
  if (M < 1) throw DomainError("M must be >= 1");
  const Eigen::Index k = subset_size(n, q);
  if (k < 1) throw DomainError("floor(q n) must be >= 1");

  SubsampleDraw draw;
  draw.subsets.resize(static_cast<std::size_t>(M));
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (int m = 0; m < M; ++m) {
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Rng gen = make_rng(seed, {detail::kSubsetStream, static_cast<std::uint64_t>(m)});
    for (Eigen::Index i = 0; i < k; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(gen))]);
    }
    IndexSet subset(perm.begin(), perm.begin() + k);
    std::sort(subset.begin(), subset.end());
    draw.subsets[static_cast<std::size_t>(m)] = std::move(subset);
  }
  draw.overlap_sizes.resize(M, M);
  for (int a = 0; a < M; ++a)
    for (int b = a; b < M; ++b) {
      const int o = static_cast<int>(detail::overlap(draw.subsets[a], draw.subsets[b]));
      draw.overlap_sizes(a, b) = draw.overlap_sizes(b, a) = o;
    }
  return draw;
}

/// Centering and projection used by the bilinear forms: d = P (beta_hat - beta*)
/// with P = I (robust) or I - w w^T (logistic).
inline Eigen::VectorXd projected_error(const DataModel& model, const Eigen::VectorXd& beta_hat) {
  Eigen::VectorXd d = beta_hat - model.beta_star();
  if (model.is_logistic()) {
    const Eigen::VectorXd w = model.direction();
    d -= w.dot(d) * w;
  }
  return d;
}

inline DataModel model_for_dimension(const DataModel& model, Eigen::Index p) {
  if (model.beta_star().size() == p) return model;
  if (model.beta_star().size() != 0) throw DomainError("beta* length does not match p");
  return model.with_dimension(p);
}

struct PairFitRecord {
  int rep = 0;
  bool failed = false;
  std::string failure;
  double corr = std::numeric_limits<double>::quiet_NaN();
  double inner = std::numeric_limits<double>::quiet_NaN();
  double est_eta_sigma2 = std::numeric_limits<double>::quiet_NaN();
  std::pair<double, double> est_sigma2{std::numeric_limits<double>::quiet_NaN(),
                                       std::numeric_limits<double>::quiet_NaN()};
  std::pair<double, double> risk{std::numeric_limits<double>::quiet_NaN(),
                                 std::numeric_limits<double>::quiet_NaN()};  // ||d||^2
  std::pair<double, double> mean_psi2{std::numeric_limits<double>::quiet_NaN(),
                                      std::numeric_limits<double>::quiet_NaN()};  // |I|^-1 sum psi^2
  std::pair<double, double> gamma_hat{std::numeric_limits<double>::quiet_NaN(),
                                      std::numeric_limits<double>::quiet_NaN()};
  std::pair<double, double> signal{std::numeric_limits<double>::quiet_NaN(),
                                   std::numeric_limits<double>::quiet_NaN()};  // w^T beta_hat
  long overlap = 0;
};

struct MeanSe {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double se = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  int count = 0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  MeanSe out;
  out.count = static_cast<int>(v.size());
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    out.se = out.sd / std::sqrt(static_cast<double>(v.size()));
  }
  return out;
}

struct PairSummary {
  MeanSe corr, inner, est_eta_sigma2, est_sigma2, risk, mean_psi2, signal;
  int reps = 0;
  int failures = 0;
};

struct PairExperiment {
  std::vector<PairFitRecord> records;
  PairSummary summary;
};

struct SimOptions {
  FitOptions fit{};
  unsigned workers = worker_count();
};

namespace detail {

inline PairSummary summarize(const std::vector<PairFitRecord>& records) {
  PairSummary s;
  s.reps = static_cast<int>(records.size());
  std::vector<double> corr, inner, eta, s2, risk, psi2, signal;
  for (const auto& r : records) {
    if (r.failed) {
      ++s.failures;
      continue;
    }
    corr.push_back(r.corr);
    inner.push_back(r.inner);
    eta.push_back(r.est_eta_sigma2);
    s2.push_back(r.est_sigma2.first);
    s2.push_back(r.est_sigma2.second);
    risk.push_back(r.risk.first);
    risk.push_back(r.risk.second);
    psi2.push_back(r.mean_psi2.first);
    psi2.push_back(r.mean_psi2.second);
    signal.push_back(r.signal.first);
    signal.push_back(r.signal.second);
  }
  s.corr = mean_se(corr);
  s.inner = mean_se(inner);
  s.est_eta_sigma2 = mean_se(eta);
  s.est_sigma2 = mean_se(s2);
  s.risk = mean_se(risk);
  s.mean_psi2 = mean_se(psi2);
  s.signal = mean_se(signal);
  return s;
}

inline void check_sim_args(Eigen::Index n, Eigen::Index p, double q, int reps) {
  if (n < 1 || p < 1) throw DomainError("n and p must be >= 1");
  if (reps < 1) throw DomainError("reps must be >= 1");
  if (!(q > 0.0 && q <= 1.0)) throw DomainError("q must lie in (0, 1]");
  if (subset_size(n, q) <= p) throw DomainError("floor(q n) must exceed p");
}

}  // namespace detail

/// Per replication: fresh dataset, two independent subsets, two fits, the
/// bilinear forms of the projected errors and the plug-in estimates.
inline PairExperiment run_pair_experiment(const DataModel& model_in, const LossModel& loss,
                                          Eigen::Index n, Eigen::Index p, double q, int reps,
                                          std::uint64_t seed, const SimOptions& opt = {}) {
  detail::check_sim_args(n, p, q, reps);
  if (model_in.is_logistic() != loss.is_logistic())
    throw DomainError("loss family does not match the data model");
  const DataModel model = model_for_dimension(model_in, p);
  const Eigen::VectorXd w = model.direction();

  PairExperiment out;
  out.records.resize(static_cast<std::size_t>(reps));
  parallel_for(
      static_cast<std::size_t>(reps),
      [&](std::size_t r) {
        PairFitRecord& rec = out.records[r];
        rec.rep = static_cast<int>(r);
        const std::uint64_t rep_seed = detail::derive_seed(seed, detail::kRepStream, r);
        const Dataset data = sample_dataset(model, n, p, rep_seed);
        const SubsampleDraw draw = draw_subsets(n, q, 2, rep_seed);
        rec.overlap = draw.overlap_sizes(0, 1);
        try {
          const FitResult fa = fit_mestimator(data.X, data.y, draw.subsets[0], loss, opt.fit);
          const FitResult fb = fit_mestimator(data.X, data.y, draw.subsets[1], loss, opt.fit);
          const GammaHat ga = gamma_hat(data.X, data.y, fa, loss);
          const GammaHat gb = gamma_hat(data.X, data.y, fb, loss);
          const Eigen::VectorXd da = projected_error(model, fa.beta_hat);
          const Eigen::VectorXd db = projected_error(model, fb.beta_hat);
          rec.inner = da.dot(db);
          rec.corr = rec.inner / (da.norm() * db.norm());
          rec.risk = {da.squaredNorm(), db.squaredNorm()};
          rec.est_eta_sigma2 = eta_sigma2_hat(fa, ga, fb, gb, p);
          rec.est_sigma2 = {sigma2_hat(fa, ga, p), sigma2_hat(fb, gb, p)};
          const double size = static_cast<double>(draw.subsets[0].size());
          rec.mean_psi2 = {fa.psi.squaredNorm() / size, fb.psi.squaredNorm() / size};
          rec.gamma_hat = {ga.value, gb.value};
          rec.signal = {w.dot(fa.beta_hat), w.dot(fb.beta_hat)};
        } catch (const SeparationError& e) {
          rec.failed = true;
          rec.failure = e.what();
        } catch (const SingularCurvatureError& e) {
          rec.failed = true;
          rec.failure = e.what();
        }
      },
      opt.workers);
  out.summary = detail::summarize(out.records);
  return out;
}

struct BaggingRecord {
  int rep = 0;
  int M = 0;
  bool failed = false;
  std::string failure;
  double bagged_risk = std::numeric_limits<double>::quiet_NaN();  // ||b_bar - beta*||^2
  double decomposition = std::numeric_limits<double>::quiet_NaN();  // M^-2 sum_{m,m'} d_m^T d_m'
  std::vector<double> single_risks;   // ||d_m||^2
  Eigen::MatrixXd per_pair_inners;    // d_m^T d_m'
  double mean_single_risk = std::numeric_limits<double>::quiet_NaN();
  double mean_cross_inner = std::numeric_limits<double>::quiet_NaN();  // over m != m'
};

struct BaggingExperiment {
  std::vector<BaggingRecord> records;
  MeanSe bagged_risk;
  MeanSe single_risk;
  MeanSe cross_inner;
  double max_decomposition_gap = 0.0;
  int failures = 0;
};

/// Bagged estimate b_bar = M^-1 sum_m beta_hat(I_m) per replication.
inline BaggingExperiment run_bagging_experiment(const DataModel& model_in, const LossModel& loss,
                                                Eigen::Index n, Eigen::Index p, double q, int M,
                                                int reps, std::uint64_t seed,
                                                const SimOptions& opt = {}) {
  detail::check_sim_args(n, p, q, reps);
  if (M < 1) throw DomainError("M must be >= 1");
  if (model_in.is_logistic() != loss.is_logistic())
    throw DomainError("loss family does not match the data model");
  const DataModel model = model_for_dimension(model_in, p);

  BaggingExperiment out;
  out.records.resize(static_cast<std::size_t>(reps));
  parallel_for(
      static_cast<std::size_t>(reps),
      [&](std::size_t r) {
        BaggingRecord& rec = out.records[r];
        rec.rep = static_cast<int>(r);
        rec.M = M;
        const std::uint64_t rep_seed = detail::derive_seed(seed, detail::kRepStream, r);
        const Dataset data = sample_dataset(model, n, p, rep_seed);
        const SubsampleDraw draw = draw_subsets(n, q, M, rep_seed);
        try {
          Eigen::MatrixXd D(p, M);  // columns beta_hat_m - beta*
          Eigen::VectorXd bar = Eigen::VectorXd::Zero(p);
          for (int m = 0; m < M; ++m) {
            const FitResult f = fit_mestimator(data.X, data.y, draw.subsets[m], loss, opt.fit);
            D.col(m) = f.beta_hat - model.beta_star();
            bar += f.beta_hat;
          }
          bar /= static_cast<double>(M);
          rec.bagged_risk = (bar - model.beta_star()).squaredNorm();
          rec.per_pair_inners = D.transpose() * D;
          const double M2 = static_cast<double>(M) * M;
          rec.decomposition = rec.per_pair_inners.sum() / M2;
          rec.single_risks.resize(static_cast<std::size_t>(M));
          double cross = 0.0;
          for (int a = 0; a < M; ++a) {
            rec.single_risks[a] = rec.per_pair_inners(a, a);
            for (int b = 0; b < M; ++b)
              if (a != b) cross += rec.per_pair_inners(a, b);
          }
          rec.mean_single_risk = rec.per_pair_inners.trace() / M;
          if (M > 1) rec.mean_cross_inner = cross / (M2 - M);
        } catch (const SeparationError& e) {
          rec.failed = true;
          rec.failure = e.what();
        }
      },
      opt.workers);

  std::vector<double> risk, single, cross;
  for (const auto& rec : out.records) {
    if (rec.failed) {
      ++out.failures;
      continue;
    }
    risk.push_back(rec.bagged_risk);
    single.push_back(rec.mean_single_risk);
    if (rec.M > 1) cross.push_back(rec.mean_cross_inner);
    out.max_decomposition_gap =
        std::max(out.max_decomposition_gap, std::abs(rec.bagged_risk - rec.decomposition));
  }
  out.bagged_risk = mean_se(risk);
  out.single_risk = mean_se(single);
  out.cross_inner = mean_se(cross);
  return out;
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("KS statistic needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return best;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n != b.size() || n < 2) throw DomainError("pearson needs two equal samples of size >= 2");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

struct DiagnosticOptions {
  int reference_draws = 20;  // reference pairs per observation in the overlap
  SimOptions sim{};
};

struct DiagnosticReport {
  StateSolution state;
  double eta = 0.0;
  long overlap = 0;
  double ks_first = 0.0;    // x_i^T b(I) vs prox(aU + sigma G)
  double ks_second = 0.0;   // x_i^T b(I~) vs prox(aU + sigma G~)
  double ks_between = 0.0;  // the two empirical marginals against each other
  double corr_empirical = 0.0;
  double corr_reference = 0.0;
  double corr_gap = 0.0;
};

/// Compares the predicted values (x_i^T b(I), x_i^T b(I~)) over i in I cap I~
/// with reference pairs (prox(aU_i + sigma G_i), prox(aU_i + sigma G~_i)),
/// corr(G_i, G~_i) = eta, reusing the observed (y_i, U_i). In robust mode the
/// predictions are centred at x_i^T beta* and the prox is that of l_{eps_i}.
inline DiagnosticReport bivariate_prox_diagnostic(const DataModel& model_in, const LossModel& loss,
                                                  Eigen::Index n, Eigen::Index p, double q,
                                                  std::uint64_t seed,
                                                  const DiagnosticOptions& opt = {},
                                                  const QuadratureSpec& quad = {}) {
  detail::check_sim_args(n, p, q, 1);
  if (opt.reference_draws < 1) throw DomainError("reference_draws must be >= 1");
  const DataModel model = model_for_dimension(model_in, p);

  RegimeParams params{static_cast<double>(n) / static_cast<double>(p), q, model, loss, quad};
  DiagnosticReport rep;
  rep.state = solve_system(params);
  rep.eta = solve_eta(params, rep.state).eta;

  const Dataset data = sample_dataset(model, n, p, seed);
  const SubsampleDraw draw = draw_subsets(n, q, 2, seed);
  const FitResult fa = fit_mestimator(data.X, data.y, draw.subsets[0], loss, opt.sim.fit);
  const FitResult fb = fit_mestimator(data.X, data.y, draw.subsets[1], loss, opt.sim.fit);

  std::vector<Eigen::Index> common;
  std::set_intersection(draw.subsets[0].begin(), draw.subsets[0].end(), draw.subsets[1].begin(),
                        draw.subsets[1].end(), std::back_inserter(common));
  rep.overlap = static_cast<long>(common.size());
  if (common.size() < 2) throw DomainError("subsets overlap in fewer than two observations");

  const Eigen::VectorXd w = model.direction();
  const Eigen::VectorXd center = data.X * model.beta_star();
  const double sigma = rep.state.sigma, gamma = rep.state.gamma, a = rep.state.a;
  const double s = std::sqrt(std::max(0.0, 1.0 - rep.eta * rep.eta));

  std::vector<double> emp_a, emp_b, ref_a, ref_b;
  Rng gen = make_rng(seed, {detail::kReferenceStream});
  std::normal_distribution<double> normal;
  for (const Eigen::Index i : common) {
    const double xa = data.X.row(i).dot(fa.beta_hat);
    const double xb = data.X.row(i).dot(fb.beta_hat);
    double response, offset = 0.0;
    if (model.is_robust()) {
      emp_a.push_back(xa - center(i));
      emp_b.push_back(xb - center(i));
      response = data.noise(i);
    } else {
      emp_a.push_back(xa);
      emp_b.push_back(xb);
      response = data.y(i);
      offset = a * data.X.row(i).dot(w);
    }
    for (int k = 0; k < opt.reference_draws; ++k) {
      const double g = normal(gen);
      const double gt = rep.eta * g + s * normal(gen);
      ref_a.push_back(prox(loss, response, gamma, offset + sigma * g));
      ref_b.push_back(prox(loss, response, gamma, offset + sigma * gt));
    }
  }
  rep.ks_first = ks_statistic(emp_a, ref_a);
  rep.ks_second = ks_statistic(emp_b, ref_b);
  rep.ks_between = ks_statistic(emp_a, emp_b);
  rep.corr_empirical = pearson(emp_a, emp_b);
  rep.corr_reference = pearson(ref_a, ref_b);
  rep.corr_gap = std::abs(rep.corr_empirical - rep.corr_reference);
  return rep;
}

}  // namespace subevo
