#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "subevo/data.hpp"
#include "subevo/errors.hpp"
#include "subevo/loss.hpp"

namespace subevo {

struct QuadratureSpec {
  int gh_nodes = 80;
  int gl_nodes = 200;

  void validate() const {
    if (gh_nodes < 20) throw DomainError("gh_nodes must be >= 20");
    if (gl_nodes < 50) throw DomainError("gl_nodes must be >= 50");
  }
  auto operator<=>(const QuadratureSpec&) const = default;
};

namespace detail {

// Gauss-Hermite rule for the weight exp(-x^2), Newton on the orthonormal recurrence.
inline void gauss_hermite(int n, std::vector<double>& x, std::vector<double>& w) {
  constexpr double pim4 = 0.7511255444649425;  // pi^(-1/4)
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int m = (n + 1) / 2;
  double z = 0.0, pp = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0) z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    else if (i == 1) z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    else if (i == 2) z = 1.86 * z - 0.86 * x[0];
    else if (i == 3) z = 1.91 * z - 0.91 * x[1];
    else z = 2.0 * z - x[i - 2];
    bool converged = false;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) {
        converged = true;
        break;
      }
    }
    if (!converged) throw NumericalError("Gauss-Hermite node iteration did not converge");
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = w[n - 1 - i] = 2.0 / (pp * pp);
  }
}

// Gauss-Legendre rule on [a, b].
inline void gauss_legendre(int n, double a, double b, std::vector<double>& x,
                           std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int m = (n + 1) / 2;
  const double xm = 0.5 * (b + a), xl = 0.5 * (b - a);
  for (int i = 0; i < m; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0;; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15) break;
      if (it > 100) throw NumericalError("Gauss-Legendre node iteration did not converge");
    }
    x[i] = xm - xl * z;
    x[n - 1 - i] = xm + xl * z;
    w[i] = w[n - 1 - i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
  }
}

}  // namespace detail

/// One atom of the response marginal: y (the noise eps in robust mode),
/// U = x^T w (0 in robust mode), and its quadrature weight.
struct MarginalNode {
  double y;
  double U;
  double weight;
};

/// Immutable node tables for expectations over G ~ N(0,1) and over (0,1).
class Quadrature {
 public:
  explicit Quadrature(QuadratureSpec spec = {}) : spec_(spec) {
    spec.validate();
    detail::gauss_hermite(spec.gh_nodes, g_nodes_, g_weights_);
    const double root2 = std::numbers::sqrt2;
    const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
    for (int k = 0; k < spec.gh_nodes; ++k) {
      g_nodes_[k] *= root2;
      g_weights_[k] *= inv_sqrt_pi;
    }
    detail::gauss_legendre(spec.gl_nodes, 0.0, 1.0, u_nodes_, u_weights_);
    detail::gauss_legendre(kPanelNodes, -1.0, 1.0, panel_nodes_, panel_weights_);
  }

  static constexpr int kPanelNodes = 10;
  static constexpr double kPanelRange = 9.0;
  static constexpr double kResolvedGap = 0.5;  // Gauss-Hermite copes with wider feature gaps

  /// Rule for E f(G) when f has kinks at `kinks` and changes character near
  /// the sorted points `features` (both in G units). Features closer together
  /// than a base panel, and all kinks, become panel edges of a composite
  /// Gauss-Legendre rule on [-9, 9] whose base panel count scales with
  /// gh_nodes; otherwise the Gauss-Hermite rule is returned. Weights include
  /// the normal density.
  void normal_rule_adapted(std::span<const double> features, std::span<const double> kinks,
                           std::vector<double>& x, std::vector<double>& w) const {
    const int panels = std::max(2, spec_.gh_nodes / kPanelNodes);
    const double base = 2.0 * kPanelRange / panels;
    std::vector<double> edges;
    auto inside = [](double b) { return b > -kPanelRange && b < kPanelRange; };
    for (double b : kinks)
      if (inside(b)) edges.push_back(b);
    bool fine = !edges.empty();
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (!inside(features[i])) continue;
      double gap = std::numeric_limits<double>::infinity();
      if (i > 0) gap = std::min(gap, features[i] - features[i - 1]);
      if (i + 1 < features.size()) gap = std::min(gap, features[i + 1] - features[i]);
      if (gap < base) edges.push_back(features[i]);
      if (gap < kResolvedGap) fine = true;
    }
    x.clear();
    w.clear();
    if (!fine) {
      x.assign(g_nodes_.begin(), g_nodes_.end());
      w.assign(g_weights_.begin(), g_weights_.end());
      return;
    }
    for (int i = 0; i <= panels; ++i) edges.push_back(-kPanelRange + base * i);
    std::sort(edges.begin(), edges.end());
    const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
      const double half = 0.5 * (edges[i + 1] - edges[i]);
      if (half <= 1e-14) continue;
      const double mid = 0.5 * (edges[i + 1] + edges[i]);
      for (int k = 0; k < kPanelNodes; ++k) {
        const double g = mid + half * panel_nodes_[k];
        x.push_back(g);
        w.push_back(half * panel_weights_[k] * norm * std::exp(-0.5 * g * g));
      }
    }
  }

  const QuadratureSpec& spec() const { return spec_; }
  std::span<const double> normal_nodes() const { return g_nodes_; }
  std::span<const double> normal_weights() const { return g_weights_; }
  std::span<const double> unit_nodes() const { return u_nodes_; }
  std::span<const double> unit_weights() const { return u_weights_; }

  /// E f(G), G ~ N(0,1).
  template <class F>
  double expect_g(F&& f) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < g_nodes_.size(); ++k) acc += g_weights_[k] * f(g_nodes_[k]);
    return acc;
  }

  /// E f(G, G~) with corr(G, G~) = t, G~ = tG + sqrt(1 - t^2) Z.
  template <class F>
  double expect_gg(F&& f, double t) const {
    if (!(std::abs(t) <= 1.0)) throw DomainError("correlation must lie in [-1, 1]");
    if (std::abs(t) == 1.0) return expect_g([&](double g) { return f(g, t * g); });
    const double s = std::sqrt(1.0 - t * t);
    const std::size_t n = g_nodes_.size();
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double g = g_nodes_[j];
      const double tg = t * g;
      double inner = 0.0;
      for (std::size_t k = 0; k < n; ++k) inner += g_weights_[k] * f(g, tg + s * g_nodes_[k]);
      acc += g_weights_[j] * inner;
    }
    return acc;
  }

  /// Node table for the law of (y, U): quantile-mapped Gauss-Legendre over the
  /// noise (robust) or Gauss-Hermite over U with the two logistic outcomes.
  std::vector<MarginalNode> marginal_rule(const DataModel& model) const {
    std::vector<MarginalNode> rule;
    if (model.is_robust()) {
      rule.reserve(u_nodes_.size());
      for (std::size_t k = 0; k < u_nodes_.size(); ++k) {
        const double u = std::clamp(u_nodes_[k], 1e-12, 1.0 - 1e-12);
        rule.push_back({noise_quantile(model.noise(), u), 0.0, u_weights_[k]});
      }
    } else {
      const double nu = model.signal_norm();
      rule.reserve(2 * g_nodes_.size());
      for (std::size_t k = 0; k < g_nodes_.size(); ++k) {
        const double U = g_nodes_[k];
        const double p1 = detail::sigmoid(nu * U);
        rule.push_back({1.0, U, g_weights_[k] * p1});
        rule.push_back({0.0, U, g_weights_[k] * (1.0 - p1)});
      }
    }
    return rule;
  }

  /// E f(y, U) over the response marginal of the model.
  template <class F>
  double expect_marginal(F&& f, const DataModel& model) const {
    return expect_marginal(f, marginal_rule(model));
  }

  template <class F>
  static double expect_marginal(F&& f, std::span<const MarginalNode> rule) {
    double acc = 0.0;
    for (const auto& node : rule) acc += node.weight * f(node.y, node.U);
    return acc;
  }

 private:
  QuadratureSpec spec_;
  std::vector<double> g_nodes_, g_weights_;
  std::vector<double> u_nodes_, u_weights_;
  std::vector<double> panel_nodes_, panel_weights_;
};

/// Shared, lazily built tables for a spec.
inline const Quadrature& quadrature_for(const QuadratureSpec& spec) {
  static std::mutex mutex;
  static std::map<QuadratureSpec, std::unique_ptr<Quadrature>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[spec];
  if (!slot) slot = std::make_unique<Quadrature>(spec);
  return *slot;
}

template <class F>
double expect_g(F&& f, const QuadratureSpec& spec = {}) {
  return quadrature_for(spec).expect_g(std::forward<F>(f));
}

template <class F>
double expect_gg(F&& f, double t, const QuadratureSpec& spec = {}) {
  return quadrature_for(spec).expect_gg(std::forward<F>(f), t);
}

template <class F>
double expect_marginal(F&& f, const DataModel& model, const QuadratureSpec& spec = {}) {
  return quadrature_for(spec).expect_marginal(std::forward<F>(f), model);
}

}  // namespace subevo
