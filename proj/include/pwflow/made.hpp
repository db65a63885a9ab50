#pragma once

// Masked autoencoder producing Gaussian conditional parameters (mu_i, log
// sigma_i) for each input dimension, where output block i only sees inputs
// that come before i in the network's ordering.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "random.hpp"

namespace pwflow {

inline constexpr double kLogSigmaMin = -7.0;
inline constexpr double kLogSigmaMax = 7.0;

struct ConditionalParams {
  std::vector<double> mu;
  std::vector<double> log_sigma;
};

struct MadeLayer {
  Matrix weight;  // fan_in x fan_out
  Matrix bias;    // 1 x fan_out
  Matrix mask;    // same shape as weight, entries 0/1
};

/// Identity ordering 0, 1, ..., dim-1.
inline std::vector<std::size_t> identity_ordering(std::size_t dim) {
  std::vector<std::size_t> o(dim);
  std::iota(o.begin(), o.end(), std::size_t{0});
  return o;
}

inline std::vector<std::size_t> reversed_ordering(std::size_t dim) {
  auto o = identity_ordering(dim);
  std::reverse(o.begin(), o.end());
  return o;
}

class MadeNetwork {
 public:
  struct Outputs {
    Var mu;         // n x D
    Var log_sigma;  // n x D, clamped
  };

  MadeNetwork() = default;

  /// `ordering[p]` is the input dimension placed at autoregressive position p.
  static MadeNetwork build(std::size_t dim, std::vector<std::size_t> hidden_sizes,
                           std::vector<std::size_t> ordering, std::uint64_t seed) {
    if (dim == 0) throw ConfigError("MADE: dimension must be at least 1");
    if (hidden_sizes.empty()) throw ConfigError("MADE: at least one hidden layer is required");
    for (std::size_t h : hidden_sizes) {
      if (h == 0) throw ConfigError("MADE: hidden layer sizes must be at least 1");
    }
    if (ordering.size() != dim) throw ConfigError("MADE: ordering length does not match dimension");
    {
      auto sorted = ordering;
      std::sort(sorted.begin(), sorted.end());
      if (sorted != identity_ordering(dim)) throw ConfigError("MADE: ordering is not a permutation");
    }

    MadeNetwork net;
    net.dim_ = dim;
    net.hidden_ = std::move(hidden_sizes);
    net.ordering_ = std::move(ordering);
    net.assign_degrees();
    net.build_masks();

    Rng rng(seed);
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
      MadeLayer& layer = net.layers_[l];
      const bool output_layer = l + 1 == net.layers_.size();
      layer.bias = Matrix::Zero(1, layer.mask.cols());
      if (output_layer) {
        layer.weight = Matrix::Zero(layer.mask.rows(), layer.mask.cols());
        continue;
      }
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(layer.mask.rows())));
      layer.weight.resize(layer.mask.rows(), layer.mask.cols());
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = normal(rng);
    }
    return net;
  }

  /// Rebuilds a network from stored parameters; masks are recomputed from the
  /// ordering.
  static MadeNetwork from_parameters(std::size_t dim, std::vector<std::size_t> hidden_sizes,
                                     std::vector<std::size_t> ordering, std::vector<Matrix> params) {
    MadeNetwork net = build(dim, std::move(hidden_sizes), std::move(ordering), 0);
    auto slots = net.parameters();
    if (params.size() != slots.size()) throw FormatError("MADE: wrong number of parameter arrays");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (params[i].rows() != slots[i]->rows() || params[i].cols() != slots[i]->cols()) {
        throw FormatError("MADE: parameter array " + std::to_string(i) + " has shape " + shape_string(params[i]) +
                          ", expected " + shape_string(*slots[i]));
      }
      *slots[i] = std::move(params[i]);
    }
    return net;
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] const std::vector<std::size_t>& hidden_sizes() const noexcept { return hidden_; }
  [[nodiscard]] const std::vector<std::size_t>& ordering() const noexcept { return ordering_; }
  [[nodiscard]] const std::vector<MadeLayer>& layers() const noexcept { return layers_; }

  /// Degree of each input (1-based autoregressive position).
  [[nodiscard]] const std::vector<std::size_t>& input_degrees() const noexcept { return input_degrees_; }
  [[nodiscard]] const std::vector<std::vector<std::size_t>>& hidden_degrees() const noexcept { return hidden_degrees_; }

  [[nodiscard]] std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Weight then bias for every layer, input side first.
  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out;
    for (auto& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::vector<const Matrix*> parameters() const {
    std::vector<const Matrix*> out;
    for (const auto& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  /// Batched forward on a tape; registers this network's parameters in the
  /// order of parameters().
  Outputs forward(GradTape& tape, Var x) const {
    if (static_cast<std::size_t>(x.cols()) != dim_) {
      throw ShapeError("MADE: input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(dim_));
    }
    Var h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const MadeLayer& layer = layers_[l];
      Var w = ops::mul(tape.parameter(layer.weight), tape.constant(layer.mask));
      Var b = tape.parameter(layer.bias);
      h = ops::add_row(ops::matmul(h, w), b);
      if (l + 1 < layers_.size()) h = ops::tanh(h);
    }
    const auto d = static_cast<Eigen::Index>(dim_);
    return {ops::columns(h, 0, d), ops::clamp(ops::columns(h, d, d), kLogSigmaMin, kLogSigmaMax)};
  }

  [[nodiscard]] ConditionalParams conditionals(std::span<const double> x) const {
    if (x.size() != dim_) throw ShapeError("MADE: input length does not match dimension");
    Matrix row(1, static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < dim_; ++i) {
      if (!std::isfinite(x[i])) throw NumericError("MADE: non-finite input", x[i]);
      row(0, static_cast<Eigen::Index>(i)) = x[i];
    }
    GradTape tape(false);
    Outputs out = forward(tape, tape.constant(std::move(row)));
    ConditionalParams p;
    p.mu.assign(out.mu.value().data(), out.mu.value().data() + dim_);
    p.log_sigma.assign(out.log_sigma.value().data(), out.log_sigma.value().data() + dim_);
    return p;
  }

 private:
  // Hidden unit u gets degree 1 + (u mod (D-1)); with D == 1 every degree is 1.
  void assign_degrees() {
    input_degrees_.assign(dim_, 0);
    for (std::size_t p = 0; p < dim_; ++p) input_degrees_[ordering_[p]] = p + 1;
    hidden_degrees_.clear();
    for (std::size_t width : hidden_) {
      std::vector<std::size_t> deg(width);
      for (std::size_t u = 0; u < width; ++u) deg[u] = dim_ > 1 ? 1 + (u % (dim_ - 1)) : 1;
      hidden_degrees_.push_back(std::move(deg));
    }
  }

  void build_masks() {
    layers_.clear();
    const std::vector<std::size_t>* prev = &input_degrees_;
    for (const auto& deg : hidden_degrees_) {
      Matrix mask(static_cast<Eigen::Index>(prev->size()), static_cast<Eigen::Index>(deg.size()));
      for (std::size_t i = 0; i < prev->size(); ++i) {
        for (std::size_t u = 0; u < deg.size(); ++u) {
          mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u)) = deg[u] >= (*prev)[i] ? 1.0 : 0.0;
        }
      }
      layers_.push_back(MadeLayer{Matrix(), Matrix(), std::move(mask)});
      prev = &deg;
    }
    // Output columns: [mu_0..mu_{D-1}, log_sigma_0..log_sigma_{D-1}].
    const auto d = static_cast<Eigen::Index>(dim_);
    Matrix mask(static_cast<Eigen::Index>(prev->size()), 2 * d);
    for (std::size_t u = 0; u < prev->size(); ++u) {
      for (std::size_t i = 0; i < dim_; ++i) {
        const double allowed = (*prev)[u] < input_degrees_[i] ? 1.0 : 0.0;
        mask(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(i)) = allowed;
        mask(static_cast<Eigen::Index>(u), d + static_cast<Eigen::Index>(i)) = allowed;
      }
    }
    layers_.push_back(MadeLayer{Matrix(), Matrix(), std::move(mask)});
  }

  std::size_t dim_ = 0;
  std::vector<std::size_t> hidden_;
  std::vector<std::size_t> ordering_;
  std::vector<std::size_t> input_degrees_;
  std::vector<std::vector<std::size_t>> hidden_degrees_;
  std::vector<MadeLayer> layers_;
};

/// Parameter count of a MADE with the given shape, without building it.
inline std::size_t made_parameter_count(std::size_t dim, std::span<const std::size_t> hidden) {
  std::size_t n = 0;
  std::size_t fan_in = dim;
  for (std::size_t h : hidden) {
    n += fan_in * h + h;
    fan_in = h;
  }
  return n + fan_in * 2 * dim + 2 * dim;
}

}  // namespace pwflow
