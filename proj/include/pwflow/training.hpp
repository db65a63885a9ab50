#pragma once

// ADAM training with a seeded train/test split and early stopping that rolls
// the model back to its best test-loss epoch.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "maf.hpp"
#include "numerics.hpp"
#include "random.hpp"
#include "samples.hpp"

namespace pwflow {

struct TrainingConfig {
  std::size_t max_epochs = 10000;
  double patience_fraction = 0.02;
  double test_fraction = 0.2;
  double learning_rate = 1e-3;
  std::size_t batch_size = 0;  // 0 means full batch
  std::uint64_t seed = 0;

  void validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (!(patience_fraction > 0.0 && patience_fraction <= 1.0)) {
      throw ConfigError("patience fraction must lie in (0, 1]");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  }

  /// Epochs without improvement tolerated before stopping.
  [[nodiscard]] std::size_t patience() const {
    return static_cast<std::size_t>(std::ceil(patience_fraction * static_cast<double>(max_epochs) - 1e-9));
  }
};

struct TrainingReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_test_loss = 0.0;
  double wall_time_seconds = 0.0;
  std::size_t parameter_count = 0;  // h
  std::size_t samples_used = 0;     // N, train plus test
};

struct Split {
  WeightedSampleSet train;
  WeightedSampleSet test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

inline constexpr std::size_t kMinSplitSamples = 5;

/// Seeded shuffle into disjoint train and test parts; weights travel with
/// their points. Both parts are non-empty.
inline Split split(const WeightedSampleSet& samples, double test_fraction, std::uint64_t seed) {
  const std::size_t n = samples.size();
  if (n < kMinSplitSamples) {
    throw ConfigError("split needs at least " + std::to_string(kMinSplitSamples) + " samples, got " +
                      std::to_string(n));
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  Split s;
  s.test_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train_indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  s.test = samples.subset(s.test_indices);
  s.train = samples.subset(s.train_indices);
  return s;
}

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;
};

/// One bias-corrected ADAM update in place.
inline void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
                      double learning_rate) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols()) {
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has shape " + shape_string(g));
    }
    state.m[i] = AdamState::kBeta1 * state.m[i] + (1.0 - AdamState::kBeta1) * g;
    state.v[i] = AdamState::kBeta2 * state.v[i] + (1.0 - AdamState::kBeta2) * g.cwiseProduct(g);
    params[i]->array() -=
        learning_rate * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + AdamState::kEpsilon);
  }
}

/// Gradient of the weighted loss with respect to every parameter of `model`,
/// in parameters() order.
inline std::pair<double, Gradients> loss_and_gradient(const MafModel& model, const WeightedSampleSet& batch) {
  GradTape tape;
  Var loss = model.loss(tape, batch);
  Gradients g = tape.backward(loss);
  return {loss.scalar(), std::move(g)};
}

namespace detail {
inline std::pair<double, Gradients> training_gradient(const MafModel& model, const WeightedSampleSet& batch,
                                                      std::size_t epoch) {
  try {
    return loss_and_gradient(model, batch);
  } catch (const NumericError& e) {
    throw TrainingError(std::string("non-finite training loss (") + e.what() + ")", epoch);
  }
}
}  // namespace detail

/// Fits the standardizer on the training part, then runs ADAM with early
/// stopping. On return the model holds the parameters of the best epoch.
inline TrainingReport train(MafModel& model, const WeightedSampleSet& samples, const TrainingConfig& cfg) {
  cfg.validate();
  if (samples.dim() != model.dim()) {
    throw ConfigError("training data has dimension " + std::to_string(samples.dim()) + ", model expects " +
                      std::to_string(model.dim()));
  }
  samples.validate();
  const auto start = std::chrono::steady_clock::now();

  Split parts = split(samples, cfg.test_fraction, derive_seed(cfg.seed, 0));
  if (!(parts.train.total_weight() > 0.0) || !(parts.test.total_weight() > 0.0)) {
    throw ConfigError("train or test split carries zero total weight");
  }
  model.fit_standardizer(parts.train);

  TrainingReport report;
  report.parameter_count = model.parameter_count();
  report.samples_used = samples.size();

  const std::size_t patience = cfg.patience();
  const std::size_t n_train = parts.train.size();
  const bool full_batch = cfg.batch_size == 0 || cfg.batch_size >= n_train;
  Rng batch_rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});

  AdamState adam;
  auto params = model.parameters();
  std::vector<Matrix> best_params = model.parameter_values();
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (full_batch) {
      auto [loss, grads] = detail::training_gradient(model, parts.train, epoch);
      if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", epoch);
      adam_step(params, grads, adam, cfg.learning_rate);
    } else {
      std::shuffle(order.begin(), order.end(), batch_rng);
      for (std::size_t first = 0; first < n_train; first += cfg.batch_size) {
        const std::size_t last = std::min(n_train, first + cfg.batch_size);
        WeightedSampleSet batch = parts.train.subset(std::span(order).subspan(first, last - first));
        if (!(batch.total_weight() > 0.0)) continue;
        auto [loss, grads] = detail::training_gradient(model, batch, epoch);
        if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", epoch);
        adam_step(params, grads, adam, cfg.learning_rate);
      }
    }

    double test_loss = 0.0;
    try {
      test_loss = model.loss(parts.test);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("non-finite test loss (") + e.what() + ")", epoch);
    }
    if (!std::isfinite(test_loss)) throw TrainingError("non-finite test loss", epoch);

    report.epochs_run = epoch;
    if (test_loss < best) {
      best = test_loss;
      report.best_epoch = epoch;
      best_params = model.parameter_values();
    } else if (epoch - report.best_epoch >= patience) {
      break;
    }
  }

  model.set_parameter_values(best_params);
  report.best_test_loss = best;
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace pwflow
