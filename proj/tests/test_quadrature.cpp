#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>

#include "oracles.hpp"
#include "subevo/quadrature.hpp"
#include "subevo/state_evolution.hpp"

using namespace subevo;

TEST(GaussHermite, Moments) {
  EXPECT_NEAR(expect_g([](double) { return 1.0; }), 1.0, 1e-14);
  EXPECT_NEAR(expect_g([](double g) { return g * g; }), 1.0, 1e-12);
  EXPECT_NEAR(expect_g([](double g) { return std::pow(g, 4); }), 3.0, 1e-11);
  EXPECT_NEAR(expect_g([](double g) { return std::pow(g, 6); }), 15.0, 1e-10);
  EXPECT_NEAR(expect_g([](double g) { return g * g * g; }), 0.0, 1e-12);
  EXPECT_NEAR(expect_g([](double g) { return std::cos(g); }), std::exp(-0.5), 1e-13);
}

TEST(GaussHermite, CorrelatedPair) {
  EXPECT_NEAR(expect_gg([](double g, double h) { return g * h; }, 0.3), 0.3, 1e-12);
  for (double t : {-0.7, 0.0, 0.45, 1.0}) {
    EXPECT_NEAR(expect_gg([](double g, double h) { return g * g * h * h; }, t), 1.0 + 2.0 * t * t, 1e-10);
  }
  auto f1 = [](double g) { return std::atan(g + 0.3); };
  auto f2 = [](double g) { return std::exp(-g * g / 4.0) * g * g; };
  EXPECT_NEAR(expect_gg([&](double g, double h) { return f1(g) * f2(h); }, 0.0),
              expect_g(f1) * expect_g(f2), 1e-13);
  EXPECT_THROW(expect_gg([](double, double) { return 0.0; }, 1.5), DomainError);
}

TEST(MarginalRule, RobustNoise) {
  const auto model = DataModel::robust({2.0, 3.0});
  EXPECT_NEAR(expect_marginal([](double, double) { return 1.0; }, model), 1.0, 1e-12);
  EXPECT_NEAR(expect_marginal([](double y, double) { return (y > 0) - (y < 0); }, model), 0.0, 1e-10);
  // bounded integrand against the noise CDF integrated independently
  boost::math::quadrature::sinh_sinh<double> ss;
  const double ref = ss.integrate([](double e) { return std::atan(e) * std::atan(e) * oracle::t_density(2.0, 3.0, e); });
  EXPECT_NEAR(expect_marginal([](double y, double) { return std::atan(y) * std::atan(y); }, model), ref, 1e-7);
}

TEST(MarginalRule, Logistic) {
  const auto model = DataModel::logistic(1.0);
  EXPECT_NEAR(expect_marginal([](double, double) { return 1.0; }, model), 1.0, 1e-12);
  EXPECT_NEAR(expect_marginal([](double y, double) { return y; }, model), 0.5, 1e-10);
  // E[U y] = E[U sigmoid(U)] = E[sigmoid'(U)] by Stein
  const double ref = expect_g([](double u) {
    const double s = oracle::sigmoid(u);
    return s * (1.0 - s);
  });
  EXPECT_NEAR(expect_marginal([](double y, double U) { return U * y; }, model), ref, 1e-12);
}

TEST(QuadratureSpec, Validation) {
  EXPECT_THROW((QuadratureSpec{10, 200}.validate()), DomainError);
  EXPECT_THROW((QuadratureSpec{80, 20}.validate()), DomainError);
  EXPECT_NO_THROW((QuadratureSpec{80, 200}.validate()));
}

// Robust variance-equation integrand (x - prox(x))^2, x = sigma G, against 1e7 draws.
TEST(MonteCarloOracle, RobustVarianceIntegrand) {
  const auto model = DataModel::robust({2.0, 3.0});
  const auto loss = LossModel::huber();
  const double sigma = 2.2, gamma = 1.7;
  const double quad = expect_marginal(
      [&](double y, double) {
        return expect_g([&](double g) {
          const double x = sigma * g;
          const double r = x - prox(loss, y, gamma, x);
          return r * r;
        });
      },
      model);
  Rng gen = make_rng(2718);
  std::normal_distribution<double> normal;
  const int n = 10000000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double eps = sample_noise(model.noise(), gen);
    const double x = sigma * normal(gen);
    const double r = x - oracle::prox(loss, eps, gamma, x);
    s += r * r;
    ss += r * r * r * r;
  }
  const double mean = s / n, se = std::sqrt((ss / n - mean * mean) / n);
  EXPECT_LE(std::abs(quad - mean), 3.0 * se) << quad << " vs " << mean << " +- " << se;
}

// Correlation fixed-point integrand at t = 0.5 against 1e7 draws.
TEST(MonteCarloOracle, EtaIntegrandAtHalf) {
  const RegimeParams params{5.0, 0.6, DataModel::robust({2.0, 3.0}), LossModel::huber(), {}};
  const StateSolution st = solve_system(params);
  const double t = 0.5;
  const double F = eval_F(t, params, st);
  Rng gen = make_rng(314);
  std::normal_distribution<double> normal;
  const int n = 10000000;
  const double scale = params.q * params.q * params.delta / (st.sigma * st.sigma);
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double eps = sample_noise(params.model.noise(), gen);
    const double g = normal(gen);
    const double gt = t * g + std::sqrt(1 - t * t) * normal(gen);
    const double x = st.sigma * g, xt = st.sigma * gt;
    const double v = scale * (x - oracle::prox(params.loss, eps, st.gamma, x)) *
                     (xt - oracle::prox(params.loss, eps, st.gamma, xt));
    s += v;
    ss += v * v;
  }
  const double mean = s / n, se = std::sqrt((ss / n - mean * mean) / n);
  EXPECT_LE(std::abs(F - mean), 3.0 * se) << F << " vs " << mean << " +- " << se;
}

// Doubling both node counts moves every state-evolution right-hand side by at
// most 1e-8; the variance equation is compared relative to sigma^2.
TEST(NodeCountStability, DoublingNodes) {
  std::vector<RegimeParams> cases;
  for (const auto& loss : {LossModel::huber(), LossModel::pseudo_huber()})
    for (double scale : {1.0, 3.0, 10.0})
      for (double q : {0.3, 0.6, 0.9}) cases.push_back({5.0, q, DataModel::robust({2.0, scale}), loss, {}});
  for (double nu : {1.0, 2.0})
    for (double q : {0.3, 0.6, 0.9}) cases.push_back({10.0, q, DataModel::logistic(nu), LossModel::logistic(), {}});
  for (const auto& base : cases) {
    const StateSolution st = solve_system(base);
    RegimeParams fine = base;
    fine.quad = {2 * base.quad.gh_nodes, 2 * base.quad.gl_nodes};
    const auto r0 = system_residuals(base, st.a, st.sigma, st.gamma);
    const auto r1 = system_residuals(fine, st.a, st.sigma, st.gamma);
    for (std::size_t k = 0; k < r0.size(); ++k) {
      const double unit = k == 0 ? std::max(1.0, st.sigma * st.sigma) : 1.0;
      EXPECT_LE(std::abs(r0[k] - r1[k]) / unit, 1e-8) << base.loss.name() << " q=" << base.q << " eq " << k;
    }
    const double t = 0.5 * base.q;
    EXPECT_LE(std::abs(eval_F(t, base, st) - eval_F(t, fine, st)), 1e-8)
        << base.loss.name() << " q=" << base.q << " t=" << t;
  }
}

TEST(NodeCountStability, EndpointsOfF) {
  for (const RegimeParams& base : {RegimeParams{5.0, 0.3, DataModel::robust({2.0, 10.0}), LossModel::pseudo_huber(), {}},
                                   RegimeParams{5.0, 0.9, DataModel::robust({2.0, 1.0}), LossModel::huber(), {}},
                                   RegimeParams{10.0, 0.3, DataModel::logistic(2.0), LossModel::logistic(), {}}}) {
    const StateSolution st = solve_system(base);
    RegimeParams fine = base;
    fine.quad = {2 * base.quad.gh_nodes, 2 * base.quad.gl_nodes};
    for (double t : {0.0, base.q})
      EXPECT_LE(std::abs(eval_F(t, base, st) - eval_F(t, fine, st)), 1e-8) << base.loss.name() << " t=" << t;
  }
}

// Gauss-Hermite alone converges slowly across a kink; the adapted rule is exact
// for a piecewise-linear integrand.
TEST(AdaptedRule, KinkedIntegrand) {
  const Quadrature& quad = quadrature_for({});
  std::vector<double> x, w;
  const std::vector<double> kinks{-0.3, 0.8};
  quad.normal_rule_adapted({}, kinks, x, w);
  auto f = [](double g) { return std::clamp(g, -0.3, 0.8); };
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * f(x[k]);
  boost::math::normal_distribution<double> nd;
  auto Phi = [&](double v) { return boost::math::cdf(nd, v); };
  auto phi = [&](double v) { return boost::math::pdf(nd, v); };
  const double exact = -0.3 * Phi(-0.3) + (phi(-0.3) - phi(0.8)) + 0.8 * (1.0 - Phi(0.8));
  EXPECT_NEAR(acc, exact, 1e-14);
  double weight = 0.0;
  for (double v : w) weight += v;
  EXPECT_NEAR(weight, 1.0, 1e-14);

  // Without kinks or fine features the Gauss-Hermite rule comes back unchanged.
  const std::vector<double> far{-30.0, 30.0};
  quad.normal_rule_adapted(far, {}, x, w);
  EXPECT_EQ(x.size(), quad.normal_nodes().size());
}
