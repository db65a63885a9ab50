#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <pwflow/evaluation.hpp>

#include "test_helpers.hpp"

using namespace pwflow;

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

Matrix normal_draws(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  return test::random_matrix(static_cast<Eigen::Index>(n), 1, seed, sd);
}

Vector normal_log_density(const Matrix& x, double sd) {
  return (-0.5 * (x.col(0).array() / sd).square() - kLogSqrt2Pi - std::log(sd)).matrix();
}

KlEstimate gaussian_pair(std::size_t n, std::uint64_t seed) {
  return kl_divergence([](std::size_t m, std::uint64_t s) { return normal_draws(m, s); },
                       [](const Matrix& x) { return normal_log_density(x, 1.0); },
                       [](const Matrix& x) { return normal_log_density(x, 2.0); }, n, seed);
}

const double kGaussianPairKl = std::log(2.0) + 1.0 / 8.0 - 0.5;

}  // namespace

TEST(Kl, AnalyticGaussianPair) {
  EXPECT_NEAR(kGaussianPairKl, 0.3181, 1e-4);
  const KlEstimate e = gaussian_pair(10000, 1);
  EXPECT_EQ(e.n_samples, 10000u);
  EXPECT_EQ(e.clipped, 0u);
  EXPECT_GT(e.mc_error, 0.0);
  EXPECT_LT(std::abs(e.value - kGaussianPairKl), 3 * e.mc_error);
}

TEST(Kl, CoverageOverSeeds) {
  int covered = 0;
  const int seeds = 40;
  for (int s = 0; s < seeds; ++s) {
    const KlEstimate e = gaussian_pair(2000, 100 + static_cast<std::uint64_t>(s));
    covered += std::abs(e.value - kGaussianPairKl) < 3 * e.mc_error;
  }
  EXPECT_GE(covered, 38);
}

TEST(Kl, SelfDivergenceOfTarget) {
  const auto t = circle_of_gaussians();
  const KlEstimate e = kl_divergence([&](std::size_t n, std::uint64_t s) { return t->sample(n, s).points; },
                                     [&](const Matrix& x) { return t->log_density(x); },
                                     [&](const Matrix& x) { return t->log_density(x); }, 5000, 3);
  EXPECT_EQ(e.value, 0.0);
  EXPECT_LE(std::abs(e.value), 3 * e.mc_error);
}

TEST(Kl, ErrorShrinksAsRootN) {
  const double a = gaussian_pair(5000, 7).mc_error;
  const double b = gaussian_pair(20000, 8).mc_error;
  EXPECT_NEAR(a / b, 2.0, 0.4);
}

TEST(Kl, Deterministic) {
  const KlEstimate a = gaussian_pair(1000, 5), b = gaussian_pair(1000, 5);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.mc_error, b.mc_error);
}

TEST(Kl, TooFewSamples) { EXPECT_THROW(gaussian_pair(99, 1), ConfigError); }

TEST(Kl, UnderflowIsClippedAndCounted) {
  auto truncated = [](double cut) {
    return [cut](const Matrix& x) {
      Vector lp = normal_log_density(x, 1.0);
      for (Eigen::Index i = 0; i < lp.size(); ++i) {
        if (x(i, 0) > cut) lp(i) = -std::numeric_limits<double>::infinity();
      }
      return lp;
    };
  };
  const auto sampler = [](std::size_t m, std::uint64_t s) { return normal_draws(m, s); };
  const auto model = [](const Matrix& x) { return normal_log_density(x, 1.0); };
  const KlEstimate rare = kl_divergence(sampler, model, truncated(3.6), 10000, 2);
  EXPECT_GT(rare.clipped, 0u);
  EXPECT_LE(rare.clipped, 10u);
  EXPECT_TRUE(std::isfinite(rare.value));
  EXPECT_THROW(kl_divergence(sampler, model, truncated(2.0), 10000, 2), NumericError);
}

TEST(Kl, FlowAgainstTarget) {
  const PiecewiseFlow fresh(std::vector<MafModel>{MafModel::create(2, {}, 0)}, std::vector<double>{1.0});
  const auto t = circle_of_gaussians();
  const PiecewiseFlow three(std::vector<MafModel>{MafModel::create(3, {}, 0)}, std::vector<double>{1.0});
  EXPECT_THROW(kl_divergence(three, *t, 1000, 1), ConfigError);
  const KlEstimate e = kl_divergence(fresh, *t, 1000, 1);
  EXPECT_TRUE(std::isfinite(e.value));
  EXPECT_GT(e.value, 1.0);
}

TEST(AvgLogLikelihood, StandardNormalEntropy) {
  const PiecewiseFlow f(std::vector<MafModel>{MafModel::create(2, {}, 0)}, std::vector<double>{1.0});
  const WeightedSampleSet test(test::random_matrix(10000, 2, 3));
  const LogLikelihood ll = avg_log_likelihood(f, test);
  EXPECT_NEAR(ll.mean, -(1.0 + std::log(2 * std::numbers::pi)), ll.two_sigma);
}

TEST(AvgLogLikelihood, SinglePointIsInfiniteError) {
  const PiecewiseFlow f(std::vector<MafModel>{MafModel::create(2, {}, 0)}, std::vector<double>{1.0});
  const LogLikelihood ll = avg_log_likelihood(f, WeightedSampleSet(Matrix::Zero(1, 2)));
  EXPECT_NEAR(ll.mean, -std::log(2 * std::numbers::pi), 1e-14);
  EXPECT_TRUE(std::isinf(ll.two_sigma));
}

TEST(AvgLogLikelihood, DuplicatedSetShrinksErrorByRootTwo) {
  const PiecewiseFlow f(std::vector<MafModel>{test::random_maf(2, 4)}, std::vector<double>{1.0});
  const Matrix x = test::random_matrix(500, 2, 5);
  Matrix twice(1000, 2);
  twice << x, x;
  const LogLikelihood a = avg_log_likelihood(f, WeightedSampleSet(x));
  const LogLikelihood b = avg_log_likelihood(f, WeightedSampleSet(twice));
  EXPECT_NEAR(a.mean, b.mean, 1e-12);
  EXPECT_NEAR(a.two_sigma / b.two_sigma, std::sqrt(2.0), 1e-9);
}

TEST(AvgLogLikelihood, DimensionMismatch) {
  const PiecewiseFlow f(std::vector<MafModel>{MafModel::create(2, {}, 0)}, std::vector<double>{1.0});
  EXPECT_THROW(avg_log_likelihood(f, WeightedSampleSet(Matrix::Zero(4, 3))), ConfigError);
  EXPECT_THROW(avg_log_likelihood(f, WeightedSampleSet(Matrix::Zero(0, 2))), ConfigError);
}

TEST(Aggregate, SingleRun) {
  const std::vector<KlEstimate> runs{{0.3, 0.05, 100, 0}};
  const RunAggregate a = aggregate(runs);
  EXPECT_EQ(a.mean, 0.3);
  EXPECT_EQ(a.error, 0.05);
}

TEST(Aggregate, EqualErrorsShrinkByRootR) {
  const std::vector<KlEstimate> runs(10, KlEstimate{0.1, 0.02, 100, 0});
  EXPECT_NEAR(aggregate(runs).error, 0.02 / std::sqrt(10.0), 1e-15);
}

TEST(Aggregate, Arithmetic) {
  const std::vector<KlEstimate> runs{{0.1, 0.1, 100, 0}, {0.3, 0.1, 100, 0}};
  const RunAggregate a = aggregate(runs);
  EXPECT_NEAR(a.mean, 0.2, 1e-15);
  EXPECT_NEAR(a.error, 0.0707, 1e-4);
  EXPECT_THROW(aggregate(std::vector<KlEstimate>{}), ConfigError);
}
