#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "subevo/errors.hpp"

namespace subevo {

namespace detail {

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

// log(1 + e^u) without overflow
inline double softplus(double u) {
  return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u)));
}

inline constexpr double kProxTol = 1e-12;
inline constexpr int kProxMaxIter = 100;

// Root of the strictly increasing map g on [lo, hi] with g(lo) <= 0 <= g(hi).
// fdf(p) returns {g(p), g'(p)}. Newton steps are taken when they stay inside
// the bracket and at least halve the step before last, bisection otherwise.
template <class FDF>
double safeguarded_newton(FDF&& fdf, double lo, double hi, double start) {
  double p = std::clamp(start, lo, hi);
  double step_before = hi - lo, last_step = hi - lo;
  for (int it = 0; it < kProxMaxIter; ++it) {
    const auto [v, dv] = fdf(p);
    if (v == 0.0) return p;
    if (v < 0.0) lo = p; else hi = p;
    double next = p - v / dv;
    if (!(next > lo && next < hi) || 2.0 * std::abs(next - p) > step_before)
      next = 0.5 * (lo + hi);
    step_before = last_step;
    last_step = std::abs(next - p);
    p = next;
    if (last_step <= kProxTol * (1.0 + std::abs(p)) || hi - lo <= kProxTol * (1.0 + std::abs(p)))
      return p;
  }
  throw NumericalError("proximal Newton iteration did not converge");
}

}  // namespace detail

/// Convex per-observation loss l_y(u).
///
/// Robust losses are l_y(u) = rho(y - u) for an even, 1-Lipschitz rho with
/// rho'' in [0, 1]; the logistic loss is l_y(u) = log(1 + e^u) - u y with
/// y in {0, 1}.
class LossModel {
 public:
  enum class Kind { Huber, PseudoHuber, ScaledPseudoHuber, Logistic };

  static LossModel huber() { return LossModel(Kind::Huber, 1.0); }
  static LossModel pseudo_huber() { return LossModel(Kind::PseudoHuber, 1.0); }
  static LossModel scaled_pseudo_huber(double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw DomainError("scaled pseudo-Huber requires lambda > 0");
    return LossModel(Kind::ScaledPseudoHuber, lambda);
  }
  static LossModel logistic() { return LossModel(Kind::Logistic, 1.0); }

  /// Parses "huber", "pseudo-huber", "scaled-pseudo-huber:<lambda>" or "logistic".
  static LossModel from_name(std::string_view name) {
    if (name == "huber") return huber();
    if (name == "pseudo-huber") return pseudo_huber();
    if (name == "logistic") return logistic();
    constexpr std::string_view scaled = "scaled-pseudo-huber";
    if (name.substr(0, scaled.size()) == scaled) {
      double lambda = 1.0;
      if (name.size() > scaled.size()) {
        if (name[scaled.size()] != ':') throw DomainError("unknown loss: " + std::string(name));
        try {
          lambda = std::stod(std::string(name.substr(scaled.size() + 1)));
        } catch (const std::exception&) {
          throw DomainError("bad lambda in loss name: " + std::string(name));
        }
      }
      return scaled_pseudo_huber(lambda);
    }
    throw DomainError("unknown loss: " + std::string(name));
  }

  Kind kind() const { return kind_; }
  double lambda() const { return lambda_; }
  bool is_logistic() const { return kind_ == Kind::Logistic; }
  bool is_robust() const { return !is_logistic(); }

  /// True when inf rho'' > 0 holds. Huber violates it (rho'' = 0 outside
  /// [-1, 1]) but remains supported.
  bool meets_curvature_assumption() const {
    return kind_ == Kind::PseudoHuber || kind_ == Kind::ScaledPseudoHuber;
  }

  std::string name() const {
    switch (kind_) {
      case Kind::Huber: return "huber";
      case Kind::PseudoHuber: return "pseudo-huber";
      case Kind::ScaledPseudoHuber: return "scaled-pseudo-huber:" + std::to_string(lambda_);
      case Kind::Logistic: return "logistic";
    }
    return {};
  }

  // rho and its derivatives; robust kinds only.
  double rho(double t) const {
    switch (kind_) {
      case Kind::Huber: {
        const double a = std::abs(t);
        return a < 1.0 ? 0.5 * t * t : a - 0.5;
      }
      case Kind::PseudoHuber: return std::sqrt(1.0 + t * t);
      case Kind::ScaledPseudoHuber: {
        const double s = t / lambda_;
        return lambda_ * lambda_ / (1.0 + lambda_) * std::sqrt(1.0 + s * s);
      }
      case Kind::Logistic: break;
    }
    throw DomainError("rho() is undefined for the logistic loss");
  }

  double rho_d1(double t) const {
    switch (kind_) {
      case Kind::Huber: return std::clamp(t, -1.0, 1.0);
      case Kind::PseudoHuber: return t / std::sqrt(1.0 + t * t);
      case Kind::ScaledPseudoHuber: {
        const double s = t / lambda_;
        return t / ((1.0 + lambda_) * std::sqrt(1.0 + s * s));
      }
      case Kind::Logistic: break;
    }
    throw DomainError("rho_d1() is undefined for the logistic loss");
  }

  // Huber kink: right limits, i.e. rho''(-1) = 1 and rho''(1) = 0.
  double rho_d2(double t) const {
    switch (kind_) {
      case Kind::Huber: return (t >= -1.0 && t < 1.0) ? 1.0 : 0.0;
      case Kind::PseudoHuber: {
        const double r = 1.0 + t * t;
        return 1.0 / (r * std::sqrt(r));
      }
      case Kind::ScaledPseudoHuber: {
        const double s = t / lambda_;
        const double r = 1.0 + s * s;
        return 1.0 / ((1.0 + lambda_) * r * std::sqrt(r));
      }
      case Kind::Logistic: break;
    }
    throw DomainError("rho_d2() is undefined for the logistic loss");
  }

  /// Points z at which prox_rho(gamma, z) is not differentiable (empty for
  /// smooth losses). In terms of the response prox these sit at x = y - z.
  std::vector<double> prox_kinks(double gamma) const {
    if (kind_ == Kind::Huber) return {-(1.0 + gamma), 1.0 + gamma};
    return {};
  }

  /// argmin_p (z - p)^2 / 2 + gamma rho(p).
  double prox_rho(double gamma, double z) const {
    if (kind_ == Kind::Huber) {
      const double a = std::abs(z);
      if (a <= 1.0 + gamma) return z / (1.0 + gamma);
      return z > 0.0 ? z - gamma : z + gamma;
    }
    if (z == 0.0) return 0.0;
    // p has the sign of z and |z - p| = gamma |rho'(p)| <= gamma.
    const double lo = z > 0.0 ? std::max(0.0, z - gamma) : z;
    const double hi = z > 0.0 ? z : std::min(0.0, z + gamma);
    const double scale = kind_ == Kind::PseudoHuber ? 1.0 : lambda_;
    const double slope = kind_ == Kind::PseudoHuber ? 1.0 : 1.0 / (1.0 + lambda_);
    // larger of the quadratic-zone and linear-zone Huber-type guesses
    const double start =
        std::copysign(std::max(std::abs(z) / (1.0 + gamma * slope),
                               std::abs(z) - gamma * slope * scale),
                      z);
    return detail::safeguarded_newton(
        [&](double p) {
          const double u = p / scale;
          const double r = 1.0 + u * u;
          const double root = std::sqrt(r);
          return std::pair{p + gamma * slope * p / root - z, 1.0 + gamma * slope / (r * root)};
        },
        lo, hi, start);
  }

 private:
  LossModel(Kind k, double lambda) : kind_(k), lambda_(lambda) {}

  Kind kind_;
  double lambda_;
};

namespace detail {
inline void check_response(const LossModel& m, double y) {
  if (m.is_logistic()) {
    if (y != 0.0 && y != 1.0) throw DomainError("logistic response must be 0 or 1");
  } else if (!std::isfinite(y)) {
    throw DomainError("robust response must be finite");
  }
}
}  // namespace detail

inline double loss_value(const LossModel& m, double y, double u) {
  detail::check_response(m, y);
  if (m.is_logistic()) return detail::softplus(u) - u * y;
  return m.rho(y - u);
}

inline double loss_d1(const LossModel& m, double y, double u) {
  detail::check_response(m, y);
  if (m.is_logistic()) return detail::sigmoid(u) - y;
  return -m.rho_d1(y - u);
}

inline double loss_d2(const LossModel& m, double y, double u) {
  detail::check_response(m, y);
  if (m.is_logistic()) {
    const double s = detail::sigmoid(u);
    return s * (1.0 - s);
  }
  return m.rho_d2(y - u);
}

/// Proximal operator argmin_p (x - p)^2 / 2 + gamma l_y(p).
///
/// Robust losses go through the reflection prox_{gamma l_y}(x) = y - prox_{gamma rho}(y - x).
inline double prox(const LossModel& m, double y, double gamma, double x) {
  detail::check_response(m, y);
  if (!(gamma > 0.0)) throw DomainError("prox requires gamma > 0");
  if (m.is_robust()) return y - m.prox_rho(gamma, y - x);

  // y = 1: sigmoid(p) - 1 < 0 so p > x; y = 0: p < x. Shift is at most gamma.
  const double lo = y == 1.0 ? x : x - gamma;
  const double hi = y == 1.0 ? x + gamma : x;
  const double s0 = detail::sigmoid(x);
  const double start = x - gamma * (s0 - y) / (1.0 + gamma * s0 * (1.0 - s0));
  return detail::safeguarded_newton(
      [&](double p) {
        const double s = detail::sigmoid(p);
        return std::pair{p + gamma * (s - y) - x, 1.0 + gamma * s * (1.0 - s)};
      },
      lo, hi, start);
}

/// Derivative of x -> prox(x): 1 / (1 + gamma l''_y(prox(x))), in (0, 1].
inline double prox_d1(const LossModel& m, double y, double gamma, double x) {
  const double p = prox(m, y, gamma, x);
  return 1.0 / (1.0 + gamma * loss_d2(m, y, p));
}

/// Sorted points x = p + gamma l'_y(p) for a graded grid of p around the
/// loss centre; between neighbours x -> prox(x) is smooth on the scale of
/// their spacing. Huber kinks are among them.
inline std::vector<double> prox_features(const LossModel& m, double y, double gamma) {
  static constexpr double offsets[] = {0.0, 1.0, 2.0, 4.0, 8.0};
  if (m.kind() == LossModel::Kind::Huber) return {y - 1.0 - gamma, y + 1.0 + gamma};
  const double centre = m.is_robust() ? y : 0.0;
  const double unit = m.kind() == LossModel::Kind::ScaledPseudoHuber ? m.lambda() : 1.0;
  std::vector<double> out;
  for (double d : offsets) {
    for (double sign : {-1.0, 1.0}) {
      if (d == 0.0 && sign > 0.0) continue;
      const double p = centre + sign * d * unit;
      out.push_back(p + gamma * loss_d1(m, y, p));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace subevo
