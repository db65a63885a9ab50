#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"

namespace pwflow {

/// N points in D dimensions with one non-negative weight per point.
struct WeightedSampleSet {
  Matrix points;   // N x D
  Vector weights;  // N

  WeightedSampleSet() = default;

  /// Unit weights.
  explicit WeightedSampleSet(Matrix pts) : points(std::move(pts)), weights(Vector::Ones(points.rows())) {}

  WeightedSampleSet(Matrix pts, Vector w) : points(std::move(pts)), weights(std::move(w)) {
    if (weights.size() != points.rows()) {
      throw ShapeError("WeightedSampleSet: " + std::to_string(weights.size()) + " weights for " +
                       std::to_string(points.rows()) + " points");
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(points.rows()); }
  [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(points.cols()); }
  [[nodiscard]] bool empty() const noexcept { return points.rows() == 0; }
  [[nodiscard]] double total_weight() const { return weights.sum(); }

  [[nodiscard]] std::span<const double> point(std::size_t i) const {
    return {points.data() + i * dim(), dim()};
  }

  [[nodiscard]] WeightedSampleSet subset(std::span<const std::size_t> indices) const {
    Matrix p(static_cast<Eigen::Index>(indices.size()), points.cols());
    Vector w(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto src = static_cast<Eigen::Index>(indices[r]);
      p.row(static_cast<Eigen::Index>(r)) = points.row(src);
      w(static_cast<Eigen::Index>(r)) = weights(src);
    }
    return {std::move(p), std::move(w)};
  }

  /// Finite points, non-negative finite weights, positive total weight.
  void validate() const {
    if (!points.allFinite()) throw NumericError("sample set contains non-finite coordinates");
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      if (!std::isfinite(weights(i)) || weights(i) < 0.0) {
        throw ConfigError("sample " + std::to_string(i) + " has invalid weight " + std::to_string(weights(i)));
      }
    }
    if (!empty() && !(total_weight() > 0.0)) throw ConfigError("sample weights are all zero");
  }
};

}  // namespace pwflow
