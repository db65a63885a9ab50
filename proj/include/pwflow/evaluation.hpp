#pragma once

// Monte Carlo KL divergence under the flow, held-out log-likelihood, and
// multi-run aggregation with errors combined in quadrature.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "piecewise.hpp"
#include "samples.hpp"
#include "targets.hpp"

namespace pwflow {

/// Lower bound applied to log p_X where the target density underflows.
inline constexpr double kLogDensityFloor = -745.0;
/// Largest tolerated fraction of clipped summands.
inline constexpr double kMaxClippedFraction = 1e-3;
inline constexpr std::size_t kMinKlSamples = 100;

struct KlEstimate {
  double value = 0.0;
  double mc_error = 0.0;
  std::size_t n_samples = 0;
  std::size_t clipped = 0;
};

using LogDensityFn = std::function<Vector(const Matrix&)>;
using SamplerFn = std::function<Matrix(std::size_t n, std::uint64_t seed)>;

/// Mean and standard error of log p_model(x) - log p_target(x) over
/// x ~ p_model.
inline KlEstimate kl_divergence(const SamplerFn& sample_model, const LogDensityFn& model_log_density,
                                const LogDensityFn& target_log_density, std::size_t n, std::uint64_t seed) {
  if (n < kMinKlSamples) {
    throw ConfigError("kl_divergence needs at least " + std::to_string(kMinKlSamples) + " samples, got " +
                      std::to_string(n));
  }
  const Matrix x = sample_model(n, seed);
  if (static_cast<std::size_t>(x.rows()) != n) throw ShapeError("kl_divergence: sampler returned wrong count");
  const Vector lq = model_log_density(x);
  Vector lp = target_log_density(x);
  if (lq.size() != x.rows() || lp.size() != x.rows()) throw ShapeError("kl_divergence: density length mismatch");

  KlEstimate est;
  est.n_samples = n;
  for (Eigen::Index i = 0; i < lp.size(); ++i) {
    if (std::isnan(lp(i))) throw NumericError("kl_divergence: target log-density is NaN", lp(i));
    if (lp(i) < kLogDensityFloor) {
      lp(i) = kLogDensityFloor;
      ++est.clipped;
    }
    if (!std::isfinite(lq(i))) throw NumericError("kl_divergence: model log-density is not finite", lq(i));
  }
  if (static_cast<double>(est.clipped) > kMaxClippedFraction * static_cast<double>(n)) {
    throw NumericError("kl_divergence: target density underflows at " + std::to_string(est.clipped) + " of " +
                           std::to_string(n) + " model samples",
                       static_cast<double>(est.clipped));
  }
  const Vector d = lq - lp;
  est.value = d.mean();
  const double var = (d.array() - est.value).square().sum() / static_cast<double>(n - 1);
  est.mc_error = std::sqrt(var / static_cast<double>(n));
  return est;
}

inline KlEstimate kl_divergence(const PiecewiseFlow& flow, const TargetDistribution& target, std::size_t n,
                                std::uint64_t seed) {
  if (flow.dim() != target.dim()) throw ConfigError("kl_divergence: model and target dimensions differ");
  return kl_divergence([&](std::size_t m, std::uint64_t s) { return flow.sample(m, s).points; },
                       [&](const Matrix& x) { return flow.log_prob(x); },
                       [&](const Matrix& x) { return target.log_density(x); }, n, seed);
}

struct LogLikelihood {
  double mean = 0.0;
  double two_sigma = 0.0;  // infinite for a single effective sample
};

/// Weighted mean of log p(x) over `test`, with 2 * weighted std / sqrt(N_eff)
/// where N_eff = (sum w)^2 / sum w^2.
inline LogLikelihood avg_log_likelihood(const LogDensityFn& log_density, const WeightedSampleSet& test) {
  if (test.empty()) throw ConfigError("avg_log_likelihood: empty test set");
  test.validate();
  const Vector lp = log_density(test.points);
  const double wsum = test.weights.sum();
  LogLikelihood out;
  out.mean = test.weights.dot(lp) / wsum;
  if (test.size() == 1) {
    out.two_sigma = std::numeric_limits<double>::infinity();
    return out;
  }
  const double var = test.weights.dot((lp.array() - out.mean).square().matrix()) / wsum;
  const double n_eff = wsum * wsum / test.weights.squaredNorm();
  out.two_sigma = 2.0 * std::sqrt(var / n_eff);
  return out;
}

inline LogLikelihood avg_log_likelihood(const PiecewiseFlow& flow, const WeightedSampleSet& test) {
  if (flow.dim() != test.dim()) {
    throw ConfigError("avg_log_likelihood: model has dimension " + std::to_string(flow.dim()) + ", data has " +
                      std::to_string(test.dim()));
  }
  return avg_log_likelihood([&](const Matrix& x) { return flow.log_prob(x); }, test);
}

struct RunAggregate {
  std::vector<KlEstimate> runs;
  double mean = 0.0;
  double error = 0.0;
};

/// Mean of the run values; error sqrt(sum e_i^2) / R.
inline RunAggregate aggregate(std::span<const KlEstimate> runs) {
  if (runs.empty()) throw ConfigError("aggregate needs at least one run");
  RunAggregate agg;
  agg.runs.assign(runs.begin(), runs.end());
  double sum = 0.0;
  double sq = 0.0;
  for (const auto& r : runs) {
    sum += r.value;
    sq += r.mc_error * r.mc_error;
  }
  const auto r = static_cast<double>(runs.size());
  agg.mean = sum / r;
  agg.error = std::sqrt(sq) / r;
  return agg;
}

}  // namespace pwflow
