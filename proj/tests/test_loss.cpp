#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "subevo/errors.hpp"
#include "subevo/loss.hpp"

using namespace subevo;

namespace {

std::vector<LossModel> all_losses() {
  return {LossModel::huber(), LossModel::pseudo_huber(), LossModel::scaled_pseudo_huber(2.5),
          LossModel::logistic()};
}

double draw_response(const LossModel& m, std::mt19937_64& gen) {
  if (m.is_logistic()) return std::bernoulli_distribution(0.5)(gen) ? 1.0 : 0.0;
  return std::uniform_real_distribution<double>(-5.0, 5.0)(gen);
}

}  // namespace

TEST(LossValue, Examples) {
  EXPECT_EQ(loss_value(LossModel::huber(), 0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(loss_value(LossModel::pseudo_huber(), 0.0, 0.0), 1.0);
  EXPECT_NEAR(loss_value(LossModel::logistic(), 1.0, 0.0), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(loss_value(LossModel::huber(), 0.0, 3.0), 2.5);
  EXPECT_DOUBLE_EQ(loss_value(LossModel::huber(), 0.0, 0.5), 0.125);
}

TEST(LossValue, ScaledPseudoHuberPrefactor) {
  const double l = 3.0;
  const auto m = LossModel::scaled_pseudo_huber(l);
  for (double t : {-4.0, -0.3, 0.0, 1.7}) {
    EXPECT_NEAR(m.rho(t), l * l / (1.0 + l) * std::sqrt(1.0 + (t / l) * (t / l)), 1e-14);
  }
}

TEST(LossDerivatives, Examples) {
  EXPECT_EQ(loss_d1(LossModel::pseudo_huber(), 0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(loss_d2(LossModel::pseudo_huber(), 0.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(loss_d1(LossModel::logistic(), 1.0, 0.0), -0.5);
}

TEST(LossDerivatives, MatchCentralDifferences) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> unif(-8.0, 8.0);
  for (const auto& m : all_losses()) {
    for (int k = 0; k < 400; ++k) {
      const double y = draw_response(m, gen);
      const double u = unif(gen);
      if (m.kind() == LossModel::Kind::Huber && (std::abs(std::abs(y - u) - 1.0) < 1e-3)) continue;
      const double h = 1e-5;
      const double fd1 = (loss_value(m, y, u + h) - loss_value(m, y, u - h)) / (2 * h);
      const double fd2 = (loss_d1(m, y, u + h) - loss_d1(m, y, u - h)) / (2 * h);
      const double d1 = loss_d1(m, y, u), d2 = loss_d2(m, y, u);
      EXPECT_LE(std::abs(fd1 - d1), 1e-6 * std::max(1.0, std::abs(d1))) << m.name();
      EXPECT_LE(std::abs(fd2 - d2), 1e-6 * std::max(1.0, std::abs(d2))) << m.name();
      EXPECT_NEAR(d1, oracle::loss_prime(m, y, u), 1e-14) << m.name();
    }
  }
}

TEST(LossDerivatives, RobustBounds) {
  for (const auto& m : {LossModel::huber(), LossModel::pseudo_huber(), LossModel::scaled_pseudo_huber(0.4)}) {
    for (double t = -30.0; t <= 30.0; t += 0.01) {
      EXPECT_LE(std::abs(loss_d1(m, 0.0, t)), 1.0);
      EXPECT_LE(loss_d2(m, 0.0, t), 1.0);
      EXPECT_GE(loss_d2(m, 0.0, t), 0.0);
    }
  }
}

TEST(LossDerivatives, HuberKinkUsesRightLimit) {
  const auto m = LossModel::huber();
  EXPECT_EQ(m.rho_d2(1.0), 0.0);
  EXPECT_EQ(m.rho_d2(-1.0), 1.0);
}

TEST(Prox, HuberClosedForm) {
  const auto m = LossModel::huber();
  EXPECT_DOUBLE_EQ(prox(m, 0.0, 1.0, 4.0), 3.0);
  EXPECT_DOUBLE_EQ(prox(m, 0.0, 1.0, 1.0), 0.5);
}

TEST(Prox, LogisticExample) {
  // root of p + 2 (sigmoid(p) - 1) = 0
  const double p = prox(LossModel::logistic(), 1.0, 2.0, 0.0);
  EXPECT_NEAR(p, oracle::prox(LossModel::logistic(), 1.0, 2.0, 0.0), 1e-12);
  EXPECT_NEAR(p + 2.0 * (oracle::sigmoid(p) - 1.0), 0.0, 1e-12);
}

TEST(Prox, IdentityAsGammaVanishes) {
  for (const auto& m : all_losses()) {
    const double y = m.is_logistic() ? 1.0 : 0.3;
    EXPECT_NEAR(prox(m, y, 1e-12, 3.7), 3.7, 1e-6) << m.name();
    EXPECT_NEAR(prox_d1(m, y, 1e-12, 2.0), 1.0, 1e-6) << m.name();
  }
}

TEST(Prox, MatchesBisectionOracle) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> xs(-20.0, 20.0), lg(-4.0, 4.0);
  for (const auto& m : all_losses()) {
    for (int k = 0; k < 2000; ++k) {
      const double y = draw_response(m, gen);
      const double gamma = std::exp(lg(gen));
      const double x = xs(gen);
      const double p = prox(m, y, gamma, x);
      EXPECT_NEAR(p, oracle::prox(m, y, gamma, x), 1e-10 * std::max(1.0, std::abs(x))) << m.name();
    }
  }
}

TEST(Prox, Stationarity) {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> xs(-20.0, 20.0), lg(-3.0, 3.0);
  for (const auto& m : all_losses()) {
    for (int k = 0; k < 2000; ++k) {
      const double y = draw_response(m, gen);
      const double gamma = std::exp(lg(gen));
      const double x = xs(gen);
      const double p = prox(m, y, gamma, x);
      EXPECT_LE(std::abs(x - p - gamma * loss_d1(m, y, p)), 1e-10) << m.name();
    }
  }
}

TEST(Prox, MonotoneContraction) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> xs(-20.0, 20.0), lg(-3.0, 3.0);
  for (const auto& m : all_losses()) {
    for (int k = 0; k < 2000; ++k) {
      const double y = draw_response(m, gen);
      const double gamma = std::exp(lg(gen));
      double x1 = xs(gen), x2 = xs(gen);
      if (x1 > x2) std::swap(x1, x2);
      const double d = prox(m, y, gamma, x2) - prox(m, y, gamma, x1);
      EXPECT_GE(d, -1e-12) << m.name();
      EXPECT_LE(d, x2 - x1 + 1e-12) << m.name();
    }
  }
}

TEST(ProxDerivative, Examples) {
  EXPECT_DOUBLE_EQ(prox_d1(LossModel::pseudo_huber(), 0.0, 1.0, 0.0), 0.5);
  const auto lg = LossModel::logistic();
  for (double x : {-3.0, -0.2, 0.0, 1.4, 5.0}) {
    const double p = prox(lg, 1.0, 1.0, x);
    const double s = oracle::sigmoid(p);
    const double h = 1e-5;
    const double fd = (prox(lg, 1.0, 1.0, x + h) - prox(lg, 1.0, 1.0, x - h)) / (2 * h);
    EXPECT_NEAR(prox_d1(lg, 1.0, 1.0, x), 1.0 / (1.0 + s * (1.0 - s)), 1e-14);
    EXPECT_NEAR(prox_d1(lg, 1.0, 1.0, x), fd, 1e-5);
  }
}

TEST(ProxDerivative, InUnitInterval) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> xs(-20.0, 20.0), lg(-3.0, 3.0);
  for (const auto& m : all_losses()) {
    for (int k = 0; k < 500; ++k) {
      const double d = prox_d1(m, draw_response(m, gen), std::exp(lg(gen)), xs(gen));
      EXPECT_GT(d, 0.0);
      EXPECT_LE(d, 1.0);
    }
  }
}

TEST(LossModelErrors, RejectsBadInputs) {
  EXPECT_THROW(loss_value(LossModel::logistic(), 0.5, 0.0), DomainError);
  EXPECT_THROW(prox(LossModel::huber(), 0.0, 0.0, 1.0), DomainError);
  EXPECT_THROW(prox(LossModel::huber(), 0.0, -1.0, 1.0), DomainError);
  EXPECT_THROW(LossModel::scaled_pseudo_huber(0.0), DomainError);
  EXPECT_THROW(LossModel::from_name("squared"), DomainError);
  EXPECT_THROW(LossModel::from_name("scaled-pseudo-huber:abc"), DomainError);
  EXPECT_THROW(loss_value(LossModel::huber(), std::nan(""), 0.0), DomainError);
}

TEST(LossModelNames, RoundTrip) {
  EXPECT_EQ(LossModel::from_name("huber").kind(), LossModel::Kind::Huber);
  EXPECT_EQ(LossModel::from_name("pseudo-huber").kind(), LossModel::Kind::PseudoHuber);
  EXPECT_EQ(LossModel::from_name("logistic").kind(), LossModel::Kind::Logistic);
  const auto s = LossModel::from_name("scaled-pseudo-huber:2.5");
  EXPECT_EQ(s.kind(), LossModel::Kind::ScaledPseudoHuber);
  EXPECT_DOUBLE_EQ(s.lambda(), 2.5);
}
