#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "subevo/data.hpp"
#include "subevo/errors.hpp"
#include "subevo/loss.hpp"
#include "subevo/parallel.hpp"
#include "subevo/quadrature.hpp"

namespace subevo {

/// Proportional-regime parameters: n/p = delta, |I| = q n.
struct RegimeParams {
  double delta = 5.0;
  double q = 1.0;
  DataModel model = DataModel::robust(NoiseLaw{});
  LossModel loss = LossModel::huber();
  QuadratureSpec quad{};

  double delta_q() const { return delta * q; }

  void validate() const {
    if (!(delta > 0.0) || !std::isfinite(delta)) throw DomainError("delta must be positive");
    if (!(q > 0.0 && q <= 1.0)) throw DomainError("q must lie in (0, 1]");
    if (model.is_logistic() != loss.is_logistic())
      throw DomainError("loss family does not match the data model");
    if (model.is_robust() && !(delta_q() > 1.0))
      throw DomainError("robust regression requires q * delta > 1");
    quad.validate();
  }
};

struct StateSolution {
  double a = 0.0;  // signal overlap; 0 in robust mode
  double sigma = 0.0;
  double gamma = 0.0;
  double residual_norm = 0.0;  // max |residual| over the equations
  int iterations = 0;
};

struct EtaSolution {
  double eta = 0.0;
  double fixed_point_residual = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

struct SystemTolerances {
  double target = 1e-12;      // Newton keeps going until here
  double accept = 1e-9;       // largest residual returned as solved
  double gamma_limit = 1e6;   // beyond this the iterates are treated as diverging
  int max_iterations = 200;
  int stagnation_steps = 50;  // damped steps above 1e-6 before giving up
};

namespace detail {

// Kinks and feature points of x -> prox(x) for one response value.
struct XFeatures {
  std::vector<double> features, kinks;
};

inline XFeatures x_features(const LossModel& loss, double y, double gamma) {
  XFeatures out{prox_features(loss, y, gamma), {}};
  for (double z : loss.prox_kinks(gamma)) out.kinks.push_back(y - z);
  return out;
}

// Rule for E f(shift + scale G) adapted to the features of f.
struct GaussianRule {
  std::vector<double> x, w, fg, kg;

  void build(const Quadrature& quad, const XFeatures& xf, double shift, double scale) {
    fg.clear();
    kg.clear();
    for (double v : xf.features) fg.push_back((v - shift) / scale);
    for (double v : xf.kinks) kg.push_back((v - shift) / scale);
    quad.normal_rule_adapted(fg, kg, x, w);
  }
};

// Expectations of the state-evolution integrands for one (a, sigma, gamma).
struct Moments {
  double r2 = 0.0;      // E (x - prox(x))^2
  double r = 0.0;       // E (x - prox(x))
  double u_r = 0.0;     // E U (x - prox(x))
  double g_prox = 0.0;  // E G prox(x)
};

class StateEquations {
 public:
  explicit StateEquations(const RegimeParams& params)
      : params_(params),
        quad_(quadrature_for(params.quad)),
        rule_(quad_.marginal_rule(params.model)) {}

  const RegimeParams& params() const { return params_; }
  const Quadrature& quadrature() const { return quad_; }
  const std::vector<MarginalNode>& rule() const { return rule_; }

  // x = a U + sigma G
  Moments moments(double a, double sigma, double gamma) const {
    Moments m;
    const LossModel& loss = params_.loss;
    GaussianRule rule;
    for (const auto& node : rule_) {
      const double offset = a * node.U;
      const XFeatures xf = x_features(loss, node.y, gamma);
      rule.build(quad_, xf, offset, sigma);
      const std::vector<double>& g = rule.x;
      const std::vector<double>& w = rule.w;
      double r2 = 0.0, r = 0.0, gp = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double x = offset + sigma * g[k];
        const double p = prox(loss, node.y, gamma, x);
        const double res = x - p;
        r2 += w[k] * res * res;
        r += w[k] * res;
        gp += w[k] * g[k] * p;
      }
      m.r2 += node.weight * r2;
      m.r += node.weight * r;
      m.u_r += node.weight * node.U * r;
      m.g_prox += node.weight * gp;
    }
    return m;
  }

  // Variance equation, signal equation (logistic only), Stein equation.
  std::vector<double> residuals(double a, double sigma, double gamma) const {
    const Moments m = moments(a, sigma, gamma);
    const double dq = params_.delta_q();
    const double variance = m.r2 - sigma * sigma / dq;
    const double stein = m.g_prox / sigma - (1.0 - 1.0 / dq);
    if (params_.model.is_robust()) return {variance, stein};
    return {variance, m.u_r, stein};
  }

 private:
  const RegimeParams& params_;
  const Quadrature& quad_;
  std::vector<MarginalNode> rule_;
};

inline double max_abs(const std::vector<double>& v) {
  double out = 0.0;
  for (double x : v) out = std::max(out, std::abs(x));
  return out;
}

// Damped Newton on dimensionless residuals with a central-difference Jacobian.
// Unknowns: (log sigma, log gamma), plus a in front when it is free.
class SystemNewton {
 public:
  SystemNewton(const StateEquations& eq, const SystemTolerances& tol)
      : eq_(eq), tol_(tol), solve_a_(eq.params().model.is_logistic() &&
                                      eq.params().model.signal_norm() > 0.0) {}

  struct Outcome {
    StateSolution solution;
    bool converged = false;
    bool diverged = false;
    bool stagnated = false;
  };

  Eigen::VectorXd pack(double a, double sigma, double gamma) const {
    Eigen::VectorXd th(solve_a_ ? 3 : 2);
    int i = 0;
    if (solve_a_) th(i++) = a;
    th(i++) = std::log(sigma);
    th(i) = std::log(gamma);
    return th;
  }

  std::array<double, 3> unpack(const Eigen::VectorXd& th) const {
    int i = 0;
    const double a = solve_a_ ? th(i++) : 0.0;
    const double sigma = std::exp(th(i++));
    return {a, sigma, std::exp(th(i))};
  }

  Eigen::VectorXd scaled(const Eigen::VectorXd& th) const {
    const auto [a, sigma, gamma] = unpack(th);
    const Moments m = eq_.moments(a, sigma, gamma);
    const double dq = eq_.params().delta_q();
    Eigen::VectorXd s(th.size());
    int i = 0;
    s(i++) = m.r2 / (sigma * sigma) - 1.0 / dq;
    if (solve_a_) s(i++) = m.u_r / sigma;
    s(i) = m.g_prox / sigma - (1.0 - 1.0 / dq);
    return s;
  }

  double unscaled_norm(const Eigen::VectorXd& th) const {
    const auto [a, sigma, gamma] = unpack(th);
    return max_abs(eq_.residuals(a, sigma, gamma));
  }

  Outcome run(Eigen::VectorXd th) const {
    Outcome out;
    Eigen::VectorXd s = scaled(th);
    int damped_above = 0;
    int it = 0;
    for (; it < tol_.max_iterations; ++it) {
      const double res = unscaled_norm(th);
      if (res <= tol_.target) {
        out.converged = true;
        break;
      }
      const Eigen::Index k = th.size();
      Eigen::MatrixXd jac(k, k);
      for (Eigen::Index j = 0; j < k; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(th(j)));
        Eigen::VectorXd plus = th, minus = th;
        plus(j) += h;
        minus(j) -= h;
        jac.col(j) = (scaled(plus) - scaled(minus)) / (2.0 * h);
      }
      Eigen::VectorXd step = jac.fullPivLu().solve(-s);
      if (!step.allFinite()) break;
      // at most a factor e^2 change in sigma or gamma per step
      const double biggest = step.cwiseAbs().maxCoeff();
      if (biggest > 2.0) step *= 2.0 / biggest;

      double lambda = 1.0;
      bool accepted = false;
      Eigen::VectorXd trial, s_trial;
      while (lambda > 1e-10) {
        trial = th + lambda * step;
        s_trial = scaled(trial);
        if (s_trial.allFinite() && s_trial.norm() < s.norm()) {
          accepted = true;
          break;
        }
        lambda *= 0.5;
      }
      if (!accepted) break;
      th = trial;
      s = s_trial;
      if (unpack(th)[2] > tol_.gamma_limit) {
        out.diverged = true;
        ++it;
        break;
      }
      if (lambda < 1.0 && unscaled_norm(th) > 1e-6) {
        if (++damped_above >= tol_.stagnation_steps) {
          out.stagnated = true;
          ++it;
          break;
        }
      }
    }
    const auto [a, sigma, gamma] = unpack(th);
    out.solution = {a, sigma, gamma, unscaled_norm(th), it};
    if (!out.diverged && out.solution.residual_norm <= tol_.accept) out.converged = true;
    return out;
  }

 private:
  const StateEquations& eq_;
  SystemTolerances tol_;
  bool solve_a_;
};

// Robust fallback: inner bisection on gamma for the Stein equation, outer
// bisection on sigma for the variance equation. Gives a starting point for Newton.
inline std::optional<std::array<double, 2>> nested_bisection(const StateEquations& eq) {
  const double dq = eq.params().delta_q();
  auto stein = [&](double sigma, double gamma) {
    return eq.moments(0.0, sigma, gamma).g_prox / sigma - (1.0 - 1.0 / dq);
  };
  // Stein residual decreases in gamma; nullopt when no root in range.
  auto gamma_of = [&](double sigma) -> std::optional<double> {
    double lo = std::log(1e-8), hi = std::log(1e6);
    if (stein(sigma, std::exp(lo)) < 0.0 || stein(sigma, std::exp(hi)) > 0.0) return std::nullopt;
    for (int i = 0; i < 80; ++i) {
      const double mid = 0.5 * (lo + hi);
      if (stein(sigma, std::exp(mid)) > 0.0) lo = mid; else hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
  };
  auto variance = [&](double sigma) -> std::optional<double> {
    const auto gamma = gamma_of(sigma);
    if (!gamma) return std::nullopt;
    return eq.moments(0.0, sigma, *gamma).r2 / (sigma * sigma) - 1.0 / dq;
  };

  double prev_log = std::log(1e-4);
  auto prev = variance(1e-4);
  for (double ls = prev_log + 0.25; ls <= std::log(1e4); ls += 0.25) {
    const auto cur = variance(std::exp(ls));
    if (prev && cur && (*prev > 0.0) != (*cur > 0.0)) {
      double lo = prev_log, hi = ls;
      const bool lo_positive = *prev > 0.0;
      for (int i = 0; i < 60; ++i) {
        const double mid = 0.5 * (lo + hi);
        const auto v = variance(std::exp(mid));
        if (!v) break;
        if ((*v > 0.0) == lo_positive) lo = mid; else hi = mid;
      }
      const double sigma = std::exp(0.5 * (lo + hi));
      if (const auto gamma = gamma_of(sigma)) return std::array<double, 2>{sigma, *gamma};
      return std::nullopt;
    }
    prev = cur;
    prev_log = ls;
  }
  return std::nullopt;
}

}  // namespace detail

/// Residuals of the asymptotic system at (a, sigma, gamma), with x = aU + sigma G
/// and r(x) = x - prox(x):
///   variance  E r(x)^2 - sigma^2 / (delta q)
///   signal    E U r(x)                         (logistic only)
///   Stein     E G prox(x) / sigma - (1 - 1 / (delta q))
inline std::vector<double> system_residuals(const RegimeParams& params, double a, double sigma,
                                            double gamma) {
  params.validate();
  return detail::StateEquations(params).residuals(a, sigma, gamma);
}

/// Solves for (sigma, gamma) (robust, a = 0) or (a, sigma, gamma) (logistic).
/// Throws RegimeError when the iterates diverge or stagnate, which in logistic
/// mode means the MLE does not exist at this (delta q, nu).
inline StateSolution solve_system(const RegimeParams& params,
                                  const SystemTolerances& tol = {}) {
  params.validate();
  const detail::StateEquations eq(params);
  const detail::SystemNewton newton(eq, tol);
  const double nu = params.model.is_logistic() ? params.model.signal_norm() : 0.0;

  auto outcome = newton.run(newton.pack(nu / 2.0, 1.0, 1.0));
  if (outcome.converged) return outcome.solution;

  if (params.model.is_robust()) {
    if (const auto start = detail::nested_bisection(eq)) {
      auto polished = newton.run(newton.pack(0.0, (*start)[0], (*start)[1]));
      polished.solution.iterations += outcome.solution.iterations;
      if (polished.converged) return polished.solution;
    }
    throw NumericalError("robust state evolution did not converge (residual " +
                         std::to_string(outcome.solution.residual_norm) + ")");
  }
  throw RegimeError("logistic state evolution has no solution at delta*q = " +
                    std::to_string(params.delta_q()) + ", nu = " + std::to_string(nu) +
                    (outcome.diverged ? " (gamma diverged)" : " (residual stagnated)"));
}

/// Which algebraic form of F to evaluate. Residual: q^2 delta / sigma^2 E[r(x) r(x~)]
/// with r(x) = x - prox(x). Score: q^2 delta gamma^2 / sigma^2 E[l'(prox x) l'(prox x~)].
/// Both agree because x - prox(x) = gamma l'(prox(x)).
enum class FForm { Auto, Residual, Score };

namespace detail {

inline constexpr double kNegligibleWeight = 1e-20;

// Marginal rule folded by the sign symmetry of the response law: the noise is
// symmetric (robust) and (y, U) -> (1 - y, -U) preserves the logistic law, and
// under either map r(x) and l'(prox x) flip sign together with x. Integrands
// that are products of two such factors therefore only need half the nodes.
inline std::vector<MarginalNode> folded_rule(const Quadrature& quad, const DataModel& model) {
  std::vector<MarginalNode> out;
  for (const auto& node : quad.marginal_rule(model)) {
    const bool keep = model.is_robust() ? node.y >= 0.0 : node.y == 1.0;
    if (!keep) continue;
    const double factor = (model.is_robust() && node.y == 0.0) ? 1.0 : 2.0;
    if (node.weight * factor < kNegligibleWeight) continue;
    out.push_back({node.y, node.U, node.weight * factor});
  }
  return out;
}

}  // namespace detail

/// Right-hand side F(t) of the correlation fixed point, with
/// x = aU + sigma G and x~ = aU + sigma G~, corr(G, G~) = t.
/// Normal nodes with weight below 1e-20 are skipped.
inline double eval_F(double t, const RegimeParams& params, const StateSolution& state,
                     FForm form = FForm::Auto) {
  if (!(std::abs(t) <= 1.0)) throw DomainError("eval_F requires t in [-1, 1]");
  params.validate();
  if (form == FForm::Auto) form = params.model.is_robust() ? FForm::Residual : FForm::Score;

  const Quadrature& quad = quadrature_for(params.quad);
  const auto rule = detail::folded_rule(quad, params.model);
  const LossModel& loss = params.loss;
  const double sigma = state.sigma, gamma = state.gamma;

  auto integrand = [&](double y, double x) {
    const double p = prox(loss, y, gamma, x);
    return form == FForm::Residual ? x - p : loss_d1(loss, y, p);
  };

  const bool collapse = std::abs(t) == 1.0;
  const double s = collapse ? 0.0 : std::sqrt(1.0 - t * t);
  std::vector<double> first;
  detail::GaussianRule outer, inner_rule;
  double acc = 0.0;
  for (const auto& node : rule) {
    const double offset = state.a * node.U;
    const detail::XFeatures xf = detail::x_features(loss, node.y, gamma);
    outer.build(quad, xf, offset, sigma);
    const std::size_t n = outer.x.size();
    first.resize(n);
    for (std::size_t j = 0; j < n; ++j) first[j] = integrand(node.y, offset + sigma * outer.x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (first[j] == 0.0 || outer.w[j] < detail::kNegligibleWeight) continue;
      double inner = 0.0;
      const double center = offset + sigma * t * outer.x[j];
      if (collapse) {
        inner = integrand(node.y, center);
      } else {
        inner_rule.build(quad, xf, center, sigma * s);
        for (std::size_t k = 0; k < inner_rule.x.size(); ++k) {
          if (inner_rule.w[k] < detail::kNegligibleWeight) continue;
          inner += inner_rule.w[k] * integrand(node.y, center + sigma * s * inner_rule.x[k]);
        }
      }
      sum += outer.w[j] * first[j] * inner;
    }
    acc += node.weight * sum;
  }
  const double q = params.q;
  const double scale = q * q * params.delta / (sigma * sigma);
  return form == FForm::Residual ? scale * acc : scale * gamma * gamma * acc;
}

struct EtaOptions {
  double tolerance = 1e-11;
  int max_iterations = 10000;
};

/// Fixed-point iteration eta <- F(eta) from q / 2. F is a q-contraction, so
/// this converges linearly; q = 1 returns 1 directly.
inline EtaSolution solve_eta(const RegimeParams& params, const StateSolution& state,
                             const EtaOptions& opt = {}) {
  params.validate();
  EtaSolution out;
  if (params.q == 1.0) {
    out.eta = 1.0;
    out.trace = {1.0};
    return out;
  }
  double eta = params.q / 2.0;
  out.trace.push_back(eta);
  for (int it = 1; it <= opt.max_iterations; ++it) {
    const double next = eval_F(std::clamp(eta, -1.0, 1.0), params, state);
    out.trace.push_back(next);
    const double step = std::abs(next - eta);
    eta = next;
    if (step <= opt.tolerance) {
      out.eta = eta;
      out.iterations = it;
      out.fixed_point_residual = std::abs(eval_F(eta, params, state) - eta);
      return out;
    }
  }
  throw NumericalError("eta fixed-point iteration exceeded its budget");
}

/// sigma^2 / M + (1 - 1/M) sigma^2 eta.
inline double bagged_risk_limit(double eta, double sigma2, long long M) {
  if (M < 1) throw DomainError("M must be >= 1");
  const double inv = 1.0 / static_cast<double>(M);
  return sigma2 * inv + (1.0 - inv) * sigma2 * eta;
}

struct RiskRow {
  double q = 0.0;
  double eta = std::numeric_limits<double>::quiet_NaN();
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double a = std::numeric_limits<double>::quiet_NaN();
  double eta_sigma2 = std::numeric_limits<double>::quiet_NaN();
  std::string status = "ok";  // "ok", "no-solution" or "invalid"
  bool ok() const { return status == "ok"; }
};

/// One row per q. Rows whose system has no solution are marked, not thrown.
inline std::vector<RiskRow> risk_curve(const RegimeParams& base, const std::vector<double>& q_grid) {
  std::vector<RiskRow> rows(q_grid.size());
  parallel_for(q_grid.size(), [&](std::size_t i) {
    RiskRow& row = rows[i];
    row.q = q_grid[i];
    RegimeParams params = base;
    params.q = q_grid[i];
    try {
      params.validate();
    } catch (const DomainError&) {
      row.status = "invalid";
      return;
    }
    try {
      const StateSolution st = solve_system(params);
      const EtaSolution eta = solve_eta(params, st);
      row.eta = eta.eta;
      row.sigma2 = st.sigma * st.sigma;
      row.gamma = st.gamma;
      row.a = st.a;
      row.eta_sigma2 = eta.eta * row.sigma2;
    } catch (const RegimeError&) {
      row.status = "no-solution";
    }
  });
  return rows;
}

}  // namespace subevo
