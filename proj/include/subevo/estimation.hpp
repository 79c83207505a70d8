#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "subevo/errors.hpp"
#include "subevo/loss.hpp"

namespace subevo {

using IndexSet = std::vector<Eigen::Index>;

struct FitOptions {
  int max_iterations = 200;
  double grad_tolerance = 1e-8;  // scaled by sqrt(|I|)
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double divergence_norm = 1e6;
  std::optional<Eigen::VectorXd> start;
};

struct FitResult {
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd psi;  // -l'_{y_i}(x_i^T beta_hat) on I, 0 elsewhere
  double grad_norm = 0.0;
  int newton_iters = 0;
  IndexSet subset;
  std::vector<double> objective_trace;  // objective after each accepted step
};

struct GammaHat {
  double value = 0.0;
  IndexSet subset;
};

namespace detail {

inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd& X, const IndexSet& I) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(I.size()), X.cols());
  for (std::size_t r = 0; r < I.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(I[r]);
  return out;
}

inline Eigen::VectorXd entries_of(const Eigen::VectorXd& v, const IndexSet& I) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(I.size()));
  for (std::size_t r = 0; r < I.size(); ++r) out(static_cast<Eigen::Index>(r)) = v(I[r]);
  return out;
}

// sum_i x_i w_i x_i^T over rows with w_i > 0 (lower triangle filled, then mirrored)
inline Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& XI, const Eigen::VectorXd& w) {
  Eigen::Index active = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) active += w(i) > 0.0;
  Eigen::MatrixXd scaled(active, XI.cols());
  for (Eigen::Index i = 0, r = 0; i < w.size(); ++i)
    if (w(i) > 0.0) scaled.row(r++) = std::sqrt(w(i)) * XI.row(i);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(XI.cols(), XI.cols());
  H.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
  return H.selfadjointView<Eigen::Lower>();
}

}  // namespace detail

/// Minimises sum_{i in I} l_{y_i}(x_i^T b) by Newton's method with Armijo
/// backtracking; when the full Newton step is rejected, robust losses also try
/// an IRLS step and keep the lower objective. The Hessian gets a 1e-10 trace/p jitter when its Cholesky
/// factorisation fails (flat Huber regions).
inline FitResult fit_mestimator(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const IndexSet& I, const LossModel& loss,
                                const FitOptions& opt = {}) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw DomainError("X and y disagree on n");
  if (static_cast<Eigen::Index>(I.size()) <= p) throw DomainError("fit requires |I| > p");
  for (auto i : I)
    if (i < 0 || i >= n) throw DomainError("subset index out of range");

  const Eigen::MatrixXd XI = detail::rows_of(X, I);
  const Eigen::VectorXd yI = detail::entries_of(y, I);
  const Eigen::Index m = XI.rows();
  for (Eigen::Index i = 0; i < m; ++i) detail::check_response(loss, yI(i));

  auto objective = [&](const Eigen::VectorXd& u) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) acc += loss_value(loss, yI(i), u(i));
    return acc;
  };

  Eigen::VectorXd beta = opt.start ? *opt.start : Eigen::VectorXd::Zero(p);
  if (beta.size() != p) throw DomainError("start vector has the wrong length");
  Eigen::VectorXd u = XI * beta;
  double f = objective(u);
  FitResult out;
  out.objective_trace.push_back(f);
  Eigen::VectorXd d1(m), d2(m), grad(p);
  const double tol = opt.grad_tolerance * std::sqrt(static_cast<double>(m));

  int it = 0;
  for (;; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) {
      d1(i) = loss_d1(loss, yI(i), u(i));
      d2(i) = loss_d2(loss, yI(i), u(i));
    }
    grad.noalias() = XI.transpose() * d1;
    const double gnorm = grad.norm();
    if (gnorm <= tol) {
      out.grad_norm = gnorm;
      break;
    }
    if (it >= opt.max_iterations) {
      if (loss.is_logistic() && beta.norm() > 1e2)
        throw SeparationError("logistic fit did not converge; coefficients growing");
      throw NumericalError("Newton fit exceeded its iteration budget");
    }

    auto solve_with = [&](const Eigen::VectorXd& weights) -> Eigen::VectorXd {
      Eigen::MatrixXd H = detail::weighted_gram(XI, weights);
      Eigen::LLT<Eigen::MatrixXd> llt(H);
      if (llt.info() != Eigen::Success) {
        const double jitter = 1e-10 * std::max(H.trace(), 1.0) / static_cast<double>(p);
        H.diagonal().array() += jitter;
        llt.compute(H);
        if (llt.info() != Eigen::Success) {
          H.diagonal().array() += 1e4 * jitter;
          llt.compute(H);
          if (llt.info() != Eigen::Success) throw NumericalError("Hessian factorisation failed");
        }
      }
      return llt.solve(-grad);
    };

    // Near the optimum the objective decrease drops below its rounding error;
    // a step that leaves f unchanged is then accepted only if it shrinks the gradient.
    auto gradient_norm_at = [&](const Eigen::VectorXd& u_trial) {
      Eigen::VectorXd g1(m);
      for (Eigen::Index i = 0; i < m; ++i) g1(i) = loss_d1(loss, yI(i), u_trial(i));
      return (XI.transpose() * g1).norm();
    };
    struct Trial {
      bool ok = false;
      double t = 0.0, f = 0.0;
      Eigen::VectorXd u;
    };
    auto line_search = [&](const Eigen::VectorXd& step, int halvings) {
      const Eigen::VectorXd du = XI * step;
      const double slope = grad.dot(step);
      double t = 1.0;
      for (int k = 0; k <= halvings; ++k) {
        Eigen::VectorXd u_trial = u + t * du;
        const double f_trial = objective(u_trial);
        if (f_trial <= f + opt.armijo_c * t * slope &&
            (f_trial < f || gradient_norm_at(u_trial) < gnorm))
          return Trial{true, t, f_trial, std::move(u_trial)};
        t *= opt.backtrack;
      }
      return Trial{};
    };
    auto commit = [&](const Eigen::VectorXd& step, Trial& tr) {
      beta += tr.t * step;
      u = std::move(tr.u);
      f = tr.f;
      out.objective_trace.push_back(f);
    };

    bool accepted = false;
    const Eigen::VectorXd newton = solve_with(d2);
    Trial tn = line_search(newton, 59);
    if (tn.ok && (tn.t == 1.0 || loss.is_logistic())) {
      commit(newton, tn);
      accepted = true;
    } else if (loss.is_robust()) {
      // A shortened Newton step means most residuals sit where rho'' is tiny;
      // an IRLS step with weights rho'(r) / r >= rho''(r) majorises the
      // objective. Take whichever of the two lands lower.
      Eigen::VectorXd w(m);
      const double w0 = loss.rho_d2(0.0);
      for (Eigen::Index i = 0; i < m; ++i) {
        const double r = yI(i) - u(i);
        w(i) = r == 0.0 ? w0 : loss.rho_d1(r) / r;
      }
      const Eigen::VectorXd irls = solve_with(w);
      Trial ti = line_search(irls, 59);
      if (ti.ok && (!tn.ok || ti.f < tn.f)) {
        commit(irls, ti);
        accepted = true;
      } else if (tn.ok) {
        commit(newton, tn);
        accepted = true;
      }
    }
    if (!accepted) {
      // no decrease at machine precision; accept a nearly stationary point
      if (gnorm <= 1e3 * tol) {
        out.grad_norm = gnorm;
        break;
      }
      throw NumericalError("line search failed in Newton fit");
    }
    if (beta.norm() > opt.divergence_norm)
      throw SeparationError("coefficient norm exceeded the divergence threshold");
  }

  if (loss.is_logistic()) {
    // a fit that classifies every row correctly means the data are separable
    bool separated = true;
    for (Eigen::Index i = 0; i < m && separated; ++i)
      separated = yI(i) == 1.0 ? u(i) > 0.0 : u(i) < 0.0;
    if (separated) throw SeparationError("responses are linearly separable; the MLE does not exist");
  }

  out.beta_hat = beta;
  out.newton_iters = it;
  out.subset = I;
  out.psi = Eigen::VectorXd::Zero(n);
  for (Eigen::Index r = 0; r < m; ++r) out.psi(I[static_cast<std::size_t>(r)]) = -loss_d1(loss, yI(r), u(r));
  return out;
}

/// p / [sum_i l''_i - l''_i^2 x_i^T H^{-1} x_i], H = sum_{l in I} x_l l''_l x_l^T.
inline GammaHat gamma_hat(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const FitResult& fit,
                          const LossModel& loss) {
  const Eigen::MatrixXd XI = detail::rows_of(X, fit.subset);
  const Eigen::VectorXd yI = detail::entries_of(y, fit.subset);
  const Eigen::VectorXd u = XI * fit.beta_hat;
  Eigen::VectorXd d2(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) d2(i) = loss_d2(loss, yI(i), u(i));

  const Eigen::MatrixXd H = detail::weighted_gram(XI, d2);
  const Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success)
    throw SingularCurvatureError("curvature matrix is not positive definite");

  // l''_i^2 x_i^T H^{-1} x_i = l''_i ||L^{-1} sqrt(l''_i) x_i||^2
  Eigen::MatrixXd V(XI.cols(), XI.rows());
  for (Eigen::Index i = 0; i < XI.rows(); ++i) V.col(i) = std::sqrt(d2(i)) * XI.row(i).transpose();
  llt.matrixL().solveInPlace(V);
  double bracket = 0.0;
  for (Eigen::Index i = 0; i < XI.rows(); ++i) bracket += d2(i) - d2(i) * V.col(i).squaredNorm();

  const double p = static_cast<double>(X.cols());
  if (!(bracket > 0.0) || !std::isfinite(bracket))
    throw SingularCurvatureError("gamma_hat denominator is not positive");
  return {p / bracket, fit.subset};
}

/// gamma_hat^2 ||psi||^2 / p, summed in the same order as eta_sigma2_hat so the
/// two agree exactly when I = I~.
inline double sigma2_hat(const FitResult& fit, const GammaHat& gh, Eigen::Index p) {
  double sq = 0.0;
  for (Eigen::Index i = 0; i < fit.psi.size(); ++i) sq += fit.psi(i) * fit.psi(i);
  return (gh.value * gh.value) * sq / static_cast<double>(p);
}

/// gamma_hat(I) gamma_hat(I~) psi^T psi~ / p; the sum runs over I and I~ through
/// the supports of psi. Symmetric in its two arguments to the bit.
inline double eta_sigma2_hat(const FitResult& fit_a, const GammaHat& gh_a, const FitResult& fit_b,
                             const GammaHat& gh_b, Eigen::Index p) {
  if (fit_a.psi.size() != fit_b.psi.size()) throw DomainError("fits come from different datasets");
  double inner = 0.0;
  for (Eigen::Index i = 0; i < fit_a.psi.size(); ++i) inner += fit_a.psi(i) * fit_b.psi(i);
  return (gh_a.value * gh_b.value) * inner / static_cast<double>(p);
}

}  // namespace subevo
