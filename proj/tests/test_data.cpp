#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "subevo/data.hpp"

using namespace subevo;

TEST(NoiseQuantile, Examples) {
  EXPECT_EQ(noise_quantile({2.0, 1.0}, 0.5), 0.0);
  const double q75 = noise_quantile({2.0, 1.0}, 0.75);
  EXPECT_NEAR(q75, 0.5 / std::sqrt(2.0 * 0.75 * 0.25), 1e-15);
  EXPECT_NEAR(q75, 0.8165, 1e-3);
  EXPECT_DOUBLE_EQ(noise_quantile({2.0, 3.0}, 0.75), 3.0 * q75);
  EXPECT_THROW(noise_quantile({2.0, 1.0}, 0.0), DomainError);
  EXPECT_THROW(noise_quantile({2.0, 1.0}, 1.0), DomainError);
}

TEST(NoiseQuantile, MatchesReferenceDistribution) {
  for (double df : {2.0, 3.0, 5.5}) {
    for (double u : {1e-6, 0.01, 0.2, 0.5, 0.73, 0.99, 1.0 - 1e-6}) {
      const double ref = oracle::t_quantile(df, 1.7, u);
      EXPECT_NEAR(noise_quantile({df, 1.7}, u), ref, 1e-9 * std::max(1.0, std::abs(ref))) << df << " " << u;
    }
  }
}

TEST(NoiseQuantile, InvertsCdf) {
  for (double df : {2.0, 3.0}) {
    for (double u = 0.001; u < 1.0; u += 0.0371) {
      EXPECT_NEAR(noise_cdf({df, 2.0}, noise_quantile({df, 2.0}, u)), u, 1e-10);
    }
  }
}

TEST(NoiseSampling, KolmogorovSmirnovAgainstCdf) {
  for (double df : {2.0, 3.0}) {
    const NoiseLaw law{df, 3.0};
    Rng gen = make_rng(99, {static_cast<std::uint64_t>(df)});
    std::vector<double> x(1000000);
    for (auto& v : x) v = sample_noise(law, gen);
    std::sort(x.begin(), x.end());
    double ks = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double F = noise_cdf(law, x[i]);
      ks = std::max({ks, std::abs(F - i / n), std::abs(F - (i + 1) / n)});
    }
    EXPECT_LE(ks, 0.005) << "df=" << df;
  }
}

TEST(NoiseSampling, MedianOfAbsoluteScaledT2) {
  Rng gen = make_rng(3);
  std::vector<double> a(100000);
  for (auto& v : a) v = std::abs(sample_noise({2.0, 3.0}, gen));
  std::nth_element(a.begin(), a.begin() + a.size() / 2, a.end());
  // median |eps| is the 0.75 quantile of 3 t2, about 2.449
  EXPECT_NEAR(a[a.size() / 2], oracle::t_quantile(2.0, 3.0, 0.75), 0.1);
}

TEST(DesignLaw, UnitMomentsAtLargeN) {
  const std::size_t n = 1000000;
  for (const auto& law : {DesignLaw::gaussian(), DesignLaw::rademacher(), DesignLaw::uniform(),
                          DesignLaw::student_t(4.0), DesignLaw::student_t(6.0)}) {
    Rng gen = make_rng(17);
    std::vector<double> x(n);
    for (auto& v : x) v = law.sample(gen);
    double m = 0.0;
    for (double v : x) m += v;
    m /= n;
    double s2 = 0.0, m4 = 0.0;
    for (double v : x) {
      s2 += (v - m) * (v - m);
      m4 += std::pow(v - m, 4);
    }
    s2 /= n;
    m4 /= n;
    const double excess = std::max(0.0, m4 / (s2 * s2) - 3.0);
    EXPECT_LE(std::abs(m), 3.0 / std::sqrt(double(n))) << law.name();
    EXPECT_LE(std::abs(s2 - 1.0), 3.0 * std::sqrt(2.0 / n) * (1.0 + excess)) << law.name();
  }
}

TEST(DesignLaw, Names) {
  EXPECT_EQ(DesignLaw::from_name("rademacher").kind, DesignLaw::Kind::Rademacher);
  EXPECT_EQ(DesignLaw::from_name("t:4").kind, DesignLaw::Kind::StudentT);
  EXPECT_DOUBLE_EQ(DesignLaw::from_name("t:4").df, 4.0);
  EXPECT_THROW(DesignLaw::from_name("t:2"), DomainError);
  EXPECT_THROW(DesignLaw::from_name("cauchy"), DomainError);
}

TEST(DataModel, RobustZeroSignalGivesNoise) {
  const auto model = DataModel::robust({2.0, 1.0}, DesignLaw::gaussian(), Eigen::VectorXd::Zero(5));
  const Dataset d = sample_dataset(model, 50, 5, 1234);
  EXPECT_EQ((d.y - d.noise).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DataModel, RejectsInvalidParameters) {
  EXPECT_THROW(DataModel::robust({2.0, 0.0}), DomainError);
  EXPECT_THROW(DataModel::robust({-1.0, 1.0}), DomainError);
  EXPECT_THROW(DataModel::logistic(-0.1), DomainError);
  EXPECT_THROW(DataModel::logistic(1.0, DesignLaw::gaussian(), Eigen::VectorXd::Ones(4)), DomainError);
  const auto m = DataModel::robust({2.0, 1.0}).with_dimension(3);
  EXPECT_THROW(sample_dataset(m, 10, 4, 1), DomainError);
}

TEST(DataModel, CanonicalSignal) {
  const auto r = DataModel::robust({2.0, 1.0}).with_dimension(16);
  EXPECT_NEAR(r.beta_star().norm(), 1.0, 1e-14);
  const auto l = DataModel::logistic(2.0).with_dimension(9);
  EXPECT_NEAR(l.beta_star().norm(), 2.0, 1e-14);
  EXPECT_NEAR((l.direction() - l.beta_star() / 2.0).norm(), 0.0, 1e-15);
}

TEST(DataModel, LogisticSymmetricLinkAtZeroSignal) {
  const auto model = DataModel::logistic(0.0).with_dimension(2);
  const Dataset d = sample_dataset(model, 100000, 2, 77);
  EXPECT_NEAR(d.y.mean(), 0.5, 0.005);
}

TEST(DataModel, LogisticLinkCalibratedByDecile) {
  const Eigen::Index n = 200000, p = 4;
  const auto model = DataModel::logistic(2.0).with_dimension(p);
  const Dataset d = sample_dataset(model, n, p, 2024);
  const Eigen::VectorXd s = d.X * model.beta_star();
  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s(a) < s(b); });
  for (int bin = 0; bin < 10; ++bin) {
    double ys = 0.0, ps = 0.0;
    const Eigen::Index lo = bin * n / 10, hi = (bin + 1) * n / 10;
    for (Eigen::Index k = lo; k < hi; ++k) {
      ys += d.y(order[k]);
      ps += oracle::sigmoid(s(order[k]));
    }
    const double m = static_cast<double>(hi - lo);
    const double pbar = ps / m;
    EXPECT_LE(std::abs(ys / m - pbar), 3.0 * std::sqrt(pbar * (1 - pbar) / m)) << "bin " << bin;
  }
}

TEST(DataModel, DeterministicInSeed) {
  const auto model = DataModel::robust({3.0, 2.0}, DesignLaw::uniform()).with_dimension(7);
  const Dataset a = sample_dataset(model, 30, 7, 5);
  const Dataset b = sample_dataset(model, 30, 7, 5);
  const Dataset c = sample_dataset(model, 30, 7, 6);
  EXPECT_TRUE((a.X.array() == b.X.array()).all());
  EXPECT_TRUE((a.y.array() == b.y.array()).all());
  EXPECT_FALSE((a.y.array() == c.y.array()).all());
}
