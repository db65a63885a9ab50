#pragma once

// Weighted k-means (k-means++ seeding, Lloyd iterations) and mean silhouette
// scoring to choose the number of clusters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "random.hpp"
#include "samples.hpp"

namespace pwflow {

struct Clustering {
  std::size_t k = 0;
  std::vector<std::size_t> labels;     // one per sample, in [0, k)
  Matrix centroids;                    // k x D
  std::vector<double> cluster_weights; // W_k, summed member weights
  std::vector<double> objective_trace; // weighted within-cluster SSE after each Lloyd iteration

  [[nodiscard]] std::vector<std::size_t> members(std::size_t cluster) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cluster) out.push_back(i);
    }
    return out;
  }

  [[nodiscard]] std::vector<std::size_t> counts() const {
    std::vector<std::size_t> c(k, 0);
    for (std::size_t l : labels) ++c[l];
    return c;
  }
};

struct KMeansOptions {
  std::size_t max_iter = 300;
  std::size_t restarts = 4;  // independent seedings; the lowest objective wins
};

namespace detail {

inline double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

inline double weighted_sse(const WeightedSampleSet& s, const Matrix& centroids, std::span<const std::size_t> labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += s.weights(static_cast<Eigen::Index>(i)) *
             squared_distance(s.points, static_cast<Eigen::Index>(i), centroids, static_cast<Eigen::Index>(labels[i]));
  }
  return total;
}

/// k-means++ with sample weights as selection probabilities.
inline Matrix kmeanspp_seed(const WeightedSampleSet& s, std::size_t k, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Matrix centroids(static_cast<Eigen::Index>(k), s.points.cols());
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto draw = [&](const Vector& mass) {
    const double total = mass.sum();
    if (!(total > 0.0)) {
      std::uniform_int_distribution<Eigen::Index> any(0, n - 1);
      return any(rng);
    }
    const double target = unif(rng) * total;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += mass(i);
      if (acc > target && mass(i) > 0.0) return i;
    }
    for (Eigen::Index i = n; i-- > 0;) {
      if (mass(i) > 0.0) return i;
    }
    return Eigen::Index{0};
  };

  centroids.row(0) = s.points.row(draw(s.weights));
  Vector nearest(n);
  for (Eigen::Index i = 0; i < n; ++i) nearest(i) = squared_distance(s.points, i, centroids, 0);
  for (std::size_t c = 1; c < k; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    centroids.row(ci) = s.points.row(draw(s.weights.cwiseProduct(nearest)));
    for (Eigen::Index i = 0; i < n; ++i) nearest(i) = std::min(nearest(i), squared_distance(s.points, i, centroids, ci));
  }
  return centroids;
}

inline Clustering lloyd(const WeightedSampleSet& s, Matrix centroids, std::size_t max_iter) {
  const auto n = static_cast<Eigen::Index>(s.size());
  const auto k = static_cast<std::size_t>(centroids.rows());
  std::vector<std::size_t> labels(static_cast<std::size_t>(n), k);  // k marks "unassigned"
  Clustering out;
  out.k = k;

  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(s.points, i, centroids, static_cast<Eigen::Index>(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[static_cast<std::size_t>(i)] != best) {
        labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }

    // Empty clusters take the point farthest from its own centroid.
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t l : labels) ++counts[l];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t li = labels[static_cast<std::size_t>(i)];
        if (counts[li] < 2) continue;
        const double d = squared_distance(s.points, i, centroids, static_cast<Eigen::Index>(li));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) throw ConfigError("k-means: cannot repair empty cluster");
      --counts[labels[static_cast<std::size_t>(far)]];
      labels[static_cast<std::size_t>(far)] = c;
      counts[c] = 1;
      centroids.row(static_cast<Eigen::Index>(c)) = s.points.row(far);
      changed = true;
    }

    // Weighted centroid update; zero-weight clusters fall back to the plain mean.
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), s.points.cols());
    Matrix plain = Matrix::Zero(static_cast<Eigen::Index>(k), s.points.cols());
    std::vector<double> wsum(k, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
      sums.row(c) += s.weights(i) * s.points.row(i);
      plain.row(c) += s.points.row(i);
      wsum[static_cast<std::size_t>(c)] += s.weights(i);
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (wsum[c] > 0.0) {
        centroids.row(ci) = sums.row(ci) / wsum[c];
      } else {
        centroids.row(ci) = plain.row(ci) / static_cast<double>(counts[c]);
      }
    }
    out.objective_trace.push_back(weighted_sse(s, centroids, labels));
    if (!changed) break;
  }

  out.labels = std::move(labels);
  out.centroids = std::move(centroids);
  out.cluster_weights.assign(k, 0.0);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    out.cluster_weights[out.labels[i]] += s.weights(static_cast<Eigen::Index>(i));
  }
  return out;
}

}  // namespace detail

/// Weighted k-means. Deterministic given the seed.
inline Clustering kmeans(const WeightedSampleSet& samples, std::size_t k, std::uint64_t seed,
                         const KMeansOptions& opts = {}) {
  if (k < 1) throw ConfigError("k-means: k must be at least 1");
  if (k > samples.size()) {
    throw ConfigError("k-means: k = " + std::to_string(k) + " exceeds sample count " + std::to_string(samples.size()));
  }
  samples.validate();
  Clustering best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(opts.restarts, 1); ++r) {
    Rng rng(derive_seed(seed, r));
    Clustering c = detail::lloyd(samples, detail::kmeanspp_seed(samples, k, rng), opts.max_iter);
    const double obj = c.objective_trace.back();
    if (obj < best_obj) {
      best_obj = obj;
      best = std::move(c);
    }
  }
  return best;
}

/// Pluggable clustering algorithm.
class ClusteringStrategy {
 public:
  virtual ~ClusteringStrategy() = default;
  [[nodiscard]] virtual Clustering fit(const WeightedSampleSet& samples, std::size_t k, std::uint64_t seed) const = 0;
};

class KMeansStrategy final : public ClusteringStrategy {
 public:
  explicit KMeansStrategy(KMeansOptions opts = {}) : opts_(opts) {}
  [[nodiscard]] Clustering fit(const WeightedSampleSet& samples, std::size_t k, std::uint64_t seed) const override {
    return kmeans(samples, k, seed, opts_);
  }

 private:
  KMeansOptions opts_;
};

inline constexpr std::size_t kSilhouetteMaxPoints = 2000;

/// Per-sample silhouette (b - a) / max(a, b) on Euclidean distances.
/// Members of singleton clusters score 0.
inline std::vector<double> silhouette_samples(const Matrix& points, std::span<const std::size_t> labels) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (labels.size() != n) throw ShapeError("silhouette: label count does not match sample count");
  std::size_t k = 0;
  for (std::size_t l : labels) k = std::max(k, l + 1);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t l : labels) ++counts[l];
  std::size_t occupied = 0;
  for (std::size_t c : counts) occupied += c > 0 ? 1 : 0;
  if (occupied < 2) throw ConfigError("silhouette: needs at least two non-empty clusters");

  std::vector<double> s(n, 0.0);
  std::vector<double> dist_sum(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist_sum[labels[j]] += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    }
    const std::size_t own = labels[i];
    if (counts[own] < 2) continue;
    const double a = dist_sum[own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c == own || counts[c] == 0) continue;
      b = std::min(b, dist_sum[c] / static_cast<double>(counts[c]));
    }
    const double denom = std::max(a, b);
    s[i] = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return s;
}

/// Unweighted mean silhouette. Above `max_points` samples, a seeded uniform
/// subsample of that size is scored instead.
inline double silhouette(const WeightedSampleSet& samples, std::span<const std::size_t> labels, std::uint64_t seed = 0,
                         std::size_t max_points = kSilhouetteMaxPoints) {
  if (labels.size() != samples.size()) throw ShapeError("silhouette: label count does not match sample count");
  std::size_t k = 0;
  for (std::size_t l : labels) k = std::max(k, l + 1);
  if (k < 2) throw ConfigError("silhouette: needs k >= 2");

  const Matrix* pts = &samples.points;
  std::vector<std::size_t> sub_labels;
  Matrix sub;
  std::span<const std::size_t> use = labels;
  if (samples.size() > max_points) {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < max_points; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(max_points);
    std::sort(idx.begin(), idx.end());
    sub.resize(static_cast<Eigen::Index>(max_points), samples.points.cols());
    for (std::size_t r = 0; r < max_points; ++r) {
      sub.row(static_cast<Eigen::Index>(r)) = samples.points.row(static_cast<Eigen::Index>(idx[r]));
      sub_labels.push_back(labels[idx[r]]);
    }
    pts = &sub;
    use = sub_labels;
  }
  const auto s = silhouette_samples(*pts, use);
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

struct ClusterScan {
  std::vector<std::size_t> candidates;
  std::vector<double> scores;  // mean silhouette per candidate
  std::size_t chosen_k = 0;
  std::vector<Clustering> clusterings;  // one per candidate
};

namespace detail {
/// Candidate with the highest score; the first (smallest k) on ties.
inline std::size_t argmax_smallest_k(std::span<const std::size_t> candidates, std::span<const double> scores) {
  if (candidates.empty() || candidates.size() != scores.size()) throw ShapeError("cluster scan: malformed scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return candidates[best];
}
}  // namespace detail

/// Scores every k in [k_min, k_max]; picks the highest mean silhouette,
/// smallest k on ties.
inline ClusterScan select_k(const WeightedSampleSet& samples, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                            const ClusteringStrategy& strategy = KMeansStrategy{}) {
  if (k_min < 2 || k_min > k_max || k_max > samples.size()) {
    throw ConfigError("select_k: need 2 <= k_min <= k_max <= N, got [" + std::to_string(k_min) + ", " +
                      std::to_string(k_max) + "] with N = " + std::to_string(samples.size()));
  }
  ClusterScan scan;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    Clustering c = strategy.fit(samples, k, derive_seed(seed, k));
    const double score = silhouette(samples, c.labels, derive_seed(seed, 1000 + k));
    scan.candidates.push_back(k);
    scan.scores.push_back(score);
    scan.clusterings.push_back(std::move(c));
  }
  scan.chosen_k = detail::argmax_smallest_k(scan.candidates, scan.scores);
  return scan;
}

}  // namespace pwflow
