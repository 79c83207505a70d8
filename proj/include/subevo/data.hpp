#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <boost/math/special_functions/beta.hpp>

#include "subevo/errors.hpp"
#include "subevo/loss.hpp"
#include "subevo/random.hpp"

namespace subevo {

/// scale x Student-t(df). Samples are multiplied by the scale; no variance normalisation.
struct NoiseLaw {
  double df = 2.0;
  double scale = 1.0;

  void validate() const {
    if (!(df > 0.0) || !std::isfinite(df)) throw DomainError("noise df must be positive");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw DomainError("noise scale must be positive");
  }
};

inline double noise_cdf(const NoiseLaw& law, double x) {
  const double t = x / law.scale;
  const double lower = 0.5 * boost::math::ibeta(0.5 * law.df, 0.5, law.df / (law.df + t * t));
  return t <= 0.0 ? lower : 1.0 - lower;
}

/// Inverse CDF of the scaled t law. Closed form for df = 2, otherwise bisection
/// on the incomplete-beta CDF.
inline double noise_quantile(const NoiseLaw& law, double u) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("noise_quantile requires u in (0, 1)");
  law.validate();
  if (law.df == 2.0) return law.scale * (2.0 * u - 1.0) / std::sqrt(2.0 * u * (1.0 - u));
  if (u == 0.5) return 0.0;
  if (u > 0.5) return -noise_quantile(law, 1.0 - u);

  const NoiseLaw unit{law.df, 1.0};
  double lo = -1.0;
  while (noise_cdf(unit, lo) > u) lo *= 2.0;
  double hi = 0.0;
  while (hi - lo > 1e-12 * std::max(1.0, std::abs(lo))) {
    const double mid = 0.5 * (lo + hi);
    if (noise_cdf(unit, mid) < u) lo = mid; else hi = mid;
  }
  return law.scale * 0.5 * (lo + hi);
}

template <class Gen>
double sample_noise(const NoiseLaw& law, Gen& gen) {
  std::normal_distribution<double> normal;
  std::gamma_distribution<double> chi2(0.5 * law.df, 2.0);
  const double z = normal(gen);
  return law.scale * z / std::sqrt(chi2(gen) / law.df);
}

/// Distribution of the iid design entries; every kind has mean 0 and variance 1.
struct DesignLaw {
  enum class Kind { Gaussian, Rademacher, Uniform, StudentT };
  Kind kind = Kind::Gaussian;
  double df = 4.0;  // StudentT only; must exceed 2

  static DesignLaw gaussian() { return {}; }
  static DesignLaw rademacher() { return {Kind::Rademacher, 4.0}; }
  static DesignLaw uniform() { return {Kind::Uniform, 4.0}; }
  static DesignLaw student_t(double df) {
    if (!(df > 2.0)) throw DomainError("t design needs df > 2 for unit variance");
    return {Kind::StudentT, df};
  }

  /// "gaussian", "rademacher", "uniform" or "t:<df>".
  static DesignLaw from_name(std::string_view name) {
    if (name == "gaussian") return gaussian();
    if (name == "rademacher") return rademacher();
    if (name == "uniform") return uniform();
    if (name.substr(0, 2) == "t:") {
      try {
        return student_t(std::stod(std::string(name.substr(2))));
      } catch (const DomainError&) {
        throw;
      } catch (const std::exception&) {
      }
    }
    throw DomainError("unknown design: " + std::string(name));
  }

  std::string name() const {
    switch (kind) {
      case Kind::Gaussian: return "gaussian";
      case Kind::Rademacher: return "rademacher";
      case Kind::Uniform: return "uniform";
      case Kind::StudentT: return "t:" + std::to_string(df);
    }
    return {};
  }

  template <class Gen>
  double sample(Gen& gen) const {
    switch (kind) {
      case Kind::Gaussian: return std::normal_distribution<double>()(gen);
      case Kind::Rademacher: return std::bernoulli_distribution(0.5)(gen) ? 1.0 : -1.0;
      case Kind::Uniform: {
        const double r = std::sqrt(3.0);
        return std::uniform_real_distribution<double>(-r, r)(gen);
      }
      case Kind::StudentT: {
        const double t = sample_noise(NoiseLaw{df, 1.0}, gen);
        return t * std::sqrt((df - 2.0) / df);
      }
    }
    return 0.0;
  }
};

/// Generative model: robust linear (y = x^T beta* + eps) or logistic
/// (P(y = 1 | x) = sigmoid(x^T beta*), ||beta*|| = nu).
class DataModel {
 public:
  enum class Mode { Robust, Logistic };

  static DataModel robust(NoiseLaw noise, DesignLaw design = DesignLaw::gaussian(),
                          Eigen::VectorXd beta_star = {}) {
    noise.validate();
    DataModel m(Mode::Robust, design, std::move(beta_star));
    m.noise_ = noise;
    return m;
  }

  static DataModel logistic(double nu, DesignLaw design = DesignLaw::gaussian(),
                            Eigen::VectorXd beta_star = {}) {
    if (!(nu >= 0.0) || !std::isfinite(nu)) throw DomainError("signal norm must be >= 0");
    if (beta_star.size() > 0 && std::abs(beta_star.norm() - nu) > 1e-12)
      throw DomainError("logistic beta* must have norm nu");
    DataModel m(Mode::Logistic, design, std::move(beta_star));
    m.nu_ = nu;
    return m;
  }

  Mode mode() const { return mode_; }
  bool is_robust() const { return mode_ == Mode::Robust; }
  bool is_logistic() const { return mode_ == Mode::Logistic; }
  const NoiseLaw& noise() const { return noise_; }
  double signal_norm() const { return nu_; }
  const DesignLaw& design() const { return design_; }
  const Eigen::VectorXd& beta_star() const { return beta_star_; }

  /// Unit vector w = beta* / ||beta*||; the all-equal direction when beta* = 0.
  Eigen::VectorXd direction() const {
    const auto p = beta_star_.size();
    const double norm = beta_star_.norm();
    if (norm > 0.0) return beta_star_ / norm;
    return Eigen::VectorXd::Constant(p, 1.0 / std::sqrt(static_cast<double>(p)));
  }

  /// Copy with beta* set to the canonical length-p signal: the unit all-equal
  /// vector (robust) or nu times it (logistic).
  DataModel with_dimension(Eigen::Index p) const {
    if (p < 1) throw DomainError("dimension must be >= 1");
    DataModel m = *this;
    const double magnitude = is_robust() ? 1.0 : nu_;
    m.beta_star_ = Eigen::VectorXd::Constant(p, magnitude / std::sqrt(static_cast<double>(p)));
    return m;
  }

  LossModel default_loss() const {
    return is_logistic() ? LossModel::logistic() : LossModel::huber();
  }

 private:
  DataModel(Mode mode, DesignLaw design, Eigen::VectorXd beta_star)
      : mode_(mode), design_(design), beta_star_(std::move(beta_star)) {}

  Mode mode_;
  DesignLaw design_;
  Eigen::VectorXd beta_star_;
  NoiseLaw noise_{};
  double nu_ = 0.0;
};

struct Dataset {
  Eigen::MatrixXd X;      // n x p
  Eigen::VectorXd y;      // n
  Eigen::VectorXd noise;  // robust mode only: y - X beta*
};

/// Draws n iid rows. Deterministic in seed.
inline Dataset sample_dataset(const DataModel& model, Eigen::Index n, Eigen::Index p,
                              std::uint64_t seed) {
  if (n < 1 || p < 1) throw DomainError("sample_dataset requires n, p >= 1");
  if (model.beta_star().size() != p) throw DomainError("beta* length does not match p");

  Rng gen = make_rng(seed, {0x5eedda7aULL});
  Dataset d;
  d.X.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) d.X(i, j) = model.design().sample(gen);

  const Eigen::VectorXd signal = d.X * model.beta_star();
  d.y.resize(n);
  if (model.is_robust()) {
    d.noise.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) d.noise(i) = sample_noise(model.noise(), gen);
    d.y = signal + d.noise;
  } else {
    std::uniform_real_distribution<double> unif;
    for (Eigen::Index i = 0; i < n; ++i)
      d.y(i) = unif(gen) < detail::sigmoid(signal(i)) ? 1.0 : 0.0;
  }
  return d;
}

}  // namespace subevo
