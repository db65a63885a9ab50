#pragma once

// Two-dimensional multi-modal toy targets with seeded samplers and normalized
// log-densities.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"
#include "random.hpp"
#include "samples.hpp"

namespace pwflow {

class TargetDistribution {
 public:
  virtual ~TargetDistribution() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::size_t dim() const = 0;

  /// n unit-weight samples; deterministic in seed.
  [[nodiscard]] virtual WeightedSampleSet sample(std::size_t n, std::uint64_t seed) const = 0;

  [[nodiscard]] virtual double log_density(std::span<const double> x) const = 0;

  [[nodiscard]] Vector log_density(const Matrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != dim()) throw ShapeError(name() + ": dimension mismatch");
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out(i) = log_density(std::span<const double>(x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())));
    }
    return out;
  }
};

struct QuadratureGrid {
  double lo = -8.0;
  double hi = 8.0;
  std::size_t cells = 1600;
};

/// Midpoint-rule integral of exp(log_density) over a square grid. The
/// callback receives one grid row (cells x 2) at a time.
inline double grid_quadrature_2d(const std::function<Vector(const Matrix&)>& log_density,
                                 const QuadratureGrid& grid = {}) {
  const double h = (grid.hi - grid.lo) / static_cast<double>(grid.cells);
  const auto n = static_cast<Eigen::Index>(grid.cells);
  Matrix row(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) row(i, 0) = grid.lo + (static_cast<double>(i) + 0.5) * h;
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    row.col(1).setConstant(grid.lo + (static_cast<double>(j) + 0.5) * h);
    total += log_density(row).array().exp().sum();
  }
  return total * h * h;
}

namespace detail {

inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178032973640562;

/// Samples a radius from the density proportional to
/// rho * exp(-(rho - r)^2 / (2 sigma^2)) on rho > 0, i.e. the radial marginal
/// of a 2-D density exp(-(|x| - r)^2 / (2 sigma^2)). Rejection from a normal
/// proposal of doubled width.
class RingRadiusSampler {
 public:
  RingRadiusSampler(double radius, double sigma) : r_(radius), s_(sigma), proposal_(radius, 2.0 * sigma) {
    c_ = 1.0 / (2.0 * s_ * s_) - 1.0 / (8.0 * s_ * s_);
    const double peak = 0.5 * (r_ + std::sqrt(r_ * r_ + 2.0 / c_));
    log_bound_ = std::log(peak) - c_ * (peak - r_) * (peak - r_);
  }

  double operator()(Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (;;) {
      const double rho = proposal_(rng);
      if (rho <= 0.0) continue;
      const double log_ratio = std::log(rho) - c_ * (rho - r_) * (rho - r_) - log_bound_;
      if (std::log(unif(rng)) < log_ratio) return rho;
    }
  }

 private:
  double r_;
  double s_;
  double c_ = 0.0;
  double log_bound_ = 0.0;
  std::normal_distribution<double> proposal_;
};

/// log of the normalizer of exp(-(|x| - r)^2 / (2 sigma^2)) over the plane.
inline double ring_log_normalizer(double r, double sigma) {
  const double z = 2.0 * std::numbers::pi *
                   (sigma * sigma * std::exp(-r * r / (2.0 * sigma * sigma)) +
                    r * sigma * std::sqrt(std::numbers::pi / 2.0) * (1.0 + std::erf(r / (std::numbers::sqrt2 * sigma))));
  return std::log(z);
}

/// log(Phi(a) - Phi(b)) for a > b, accurate in both tails.
inline double log_normal_cdf_difference(double a, double b) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  double diff = 0.0;
  if (b > 0.0) {
    diff = 0.5 * (std::erfc(b * inv_sqrt2) - std::erfc(a * inv_sqrt2));
  } else {
    diff = 0.5 * (std::erfc(-a * inv_sqrt2) - std::erfc(-b * inv_sqrt2));
  }
  return std::log(diff);
}

}  // namespace detail

/// Equal-weight mixture of isotropic Gaussians evenly spaced on a circle.
class CircleOfGaussians final : public TargetDistribution {
 public:
  explicit CircleOfGaussians(std::size_t modes = 8, double radius = 4.0, double sigma = 0.3)
      : modes_(modes), radius_(radius), sigma_(sigma) {
    for (std::size_t m = 0; m < modes_; ++m) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(modes_);
      centers_.push_back({radius_ * std::cos(a), radius_ * std::sin(a)});
    }
  }

  [[nodiscard]] std::string name() const override { return "circle_of_gaussians"; }
  [[nodiscard]] std::size_t dim() const override { return 2; }
  [[nodiscard]] const std::vector<std::array<double, 2>>& centers() const noexcept { return centers_; }
  [[nodiscard]] double sigma() const noexcept { return sigma_; }

  [[nodiscard]] WeightedSampleSet sample(std::size_t n, std::uint64_t seed) const override {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, modes_ - 1);
    std::normal_distribution<double> normal(0.0, sigma_);
    Matrix pts(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const auto& c = centers_[pick(rng)];
      pts(i, 0) = c[0] + normal(rng);
      pts(i, 1) = c[1] + normal(rng);
    }
    return WeightedSampleSet(std::move(pts));
  }

  using TargetDistribution::log_density;

  [[nodiscard]] double log_density(std::span<const double> x) const override {
    std::vector<double> terms(modes_);
    const double log_norm = -std::log(static_cast<double>(modes_)) - 2.0 * detail::kLogSqrtTwoPi - 2.0 * std::log(sigma_);
    for (std::size_t m = 0; m < modes_; ++m) {
      const double dx = x[0] - centers_[m][0];
      const double dy = x[1] - centers_[m][1];
      terms[m] = log_norm - (dx * dx + dy * dy) / (2.0 * sigma_ * sigma_);
    }
    return logsumexp(terms);
  }

 private:
  std::size_t modes_;
  double radius_;
  double sigma_;
  std::vector<std::array<double, 2>> centers_;
};

/// Equal mixture of two concentric rings, each with density proportional to
/// exp(-(|x| - r)^2 / (2 sigma^2)).
class TwoRings final : public TargetDistribution {
 public:
  TwoRings(double inner = 2.0, double outer = 4.0, double sigma = 0.2) : radii_{inner, outer}, sigma_(sigma) {
    for (std::size_t i = 0; i < 2; ++i) log_norm_[i] = detail::ring_log_normalizer(radii_[i], sigma_);
  }

  [[nodiscard]] std::string name() const override { return "two_rings"; }
  [[nodiscard]] std::size_t dim() const override { return 2; }
  [[nodiscard]] const std::array<double, 2>& radii() const noexcept { return radii_; }
  [[nodiscard]] double sigma() const noexcept { return sigma_; }
  [[nodiscard]] double ring_log_normalizer(std::size_t i) const { return log_norm_.at(i); }

  [[nodiscard]] WeightedSampleSet sample(std::size_t n, std::uint64_t seed) const override {
    Rng rng(seed);
    std::array<detail::RingRadiusSampler, 2> radius{detail::RingRadiusSampler(radii_[0], sigma_),
                                                    detail::RingRadiusSampler(radii_[1], sigma_)};
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::bernoulli_distribution coin(0.5);
    Matrix pts(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const std::size_t ring = coin(rng) ? 1 : 0;
      const double rho = radius[ring](rng);
      const double a = angle(rng);
      pts(i, 0) = rho * std::cos(a);
      pts(i, 1) = rho * std::sin(a);
    }
    return WeightedSampleSet(std::move(pts));
  }

  using TargetDistribution::log_density;

  [[nodiscard]] double log_density(std::span<const double> x) const override {
    const double rho = std::hypot(x[0], x[1]);
    std::array<double, 2> terms{};
    for (std::size_t i = 0; i < 2; ++i) {
      const double d = rho - radii_[i];
      terms[i] = -std::numbers::ln2 - log_norm_[i] - d * d / (2.0 * sigma_ * sigma_);
    }
    return logsumexp(terms);
  }

 private:
  std::array<double, 2> radii_;
  double sigma_;
  std::array<double, 2> log_norm_{};
};

/// Two interleaved crescents. Each moon is a ring profile of radius r around
/// its center restricted to a half circle; the angular edges are softened
/// with the same noise scale measured along the arc, so the density stays
/// smooth. The second moon is the point reflection of the first.
class TwoMoons final : public TargetDistribution {
 public:
  TwoMoons(double radius = 2.0, double sigma = 0.2, double horizontal_offset = 1.0, double vertical_offset = 1.0)
      : radius_(radius), sigma_(sigma) {
    centers_[0] = {-horizontal_offset, -0.5 * vertical_offset};
    centers_[1] = {horizontal_offset, 0.5 * vertical_offset};
    ring_log_norm_ = detail::ring_log_normalizer(radius_, sigma_);
    log_norm_ = compute_log_normalizer();
  }

  [[nodiscard]] std::string name() const override { return "two_moons"; }
  [[nodiscard]] std::size_t dim() const override { return 2; }
  [[nodiscard]] const std::array<std::array<double, 2>, 2>& centers() const noexcept { return centers_; }
  [[nodiscard]] double radius() const noexcept { return radius_; }

  /// Normalizer found by quadrature at construction.
  [[nodiscard]] double log_normalizer() const noexcept { return log_norm_; }

  [[nodiscard]] WeightedSampleSet sample(std::size_t n, std::uint64_t seed) const override {
    Rng rng(seed);
    detail::RingRadiusSampler radius(radius_, sigma_);
    std::uniform_real_distribution<double> arc(0.0, std::numbers::pi);
    std::normal_distribution<double> jitter(0.0, sigma_ / radius_);
    std::bernoulli_distribution coin(0.5);
    Matrix pts(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const std::size_t moon = coin(rng) ? 1 : 0;
      const double rho = radius(rng);
      const double a = arc(rng) + jitter(rng);
      const double sign = moon == 0 ? 1.0 : -1.0;
      pts(i, 0) = centers_[moon][0] + sign * rho * std::cos(a);
      pts(i, 1) = centers_[moon][1] + sign * rho * std::sin(a);
    }
    return WeightedSampleSet(std::move(pts));
  }

  using TargetDistribution::log_density;

  [[nodiscard]] double log_density(std::span<const double> x) const override {
    return unnormalized(x) - log_norm_;
  }

 private:
  [[nodiscard]] double unnormalized(std::span<const double> x) const {
    std::array<double, 2> terms{};
    const double s = sigma_ / radius_;
    for (std::size_t m = 0; m < 2; ++m) {
      // Local frame: moon 1 is moon 0 rotated by pi about its own center.
      const double lx = m == 0 ? x[0] - centers_[0][0] : -(x[0] - centers_[1][0]);
      const double ly = m == 0 ? x[1] - centers_[0][1] : -(x[1] - centers_[1][1]);
      const double rho = std::hypot(lx, ly);
      double phi = std::atan2(ly, lx);
      if (phi < -0.5 * std::numbers::pi) phi += 2.0 * std::numbers::pi;
      const double d = rho - radius_;
      const double log_window = detail::log_normal_cdf_difference(phi / s, (phi - std::numbers::pi) / s) -
                                std::log(std::numbers::pi);
      // ring profile / (ring normalizer / 2 pi) * angular window, halved for the mixture
      terms[m] = -std::numbers::ln2 - d * d / (2.0 * sigma_ * sigma_) - ring_log_norm_ +
                 std::log(2.0 * std::numbers::pi) + log_window;
    }
    return logsumexp(terms);
  }

  [[nodiscard]] double compute_log_normalizer() const {
    // Finer than the [-8, 8]^2 / 1600^2 grid used for verification.
    const double mass = grid_quadrature_2d(
        [this](const Matrix& pts) {
          Vector out(pts.rows());
          for (Eigen::Index i = 0; i < pts.rows(); ++i) out(i) = unnormalized(std::span<const double>(pts.row(i).data(), 2));
          return out;
        },
        QuadratureGrid{-8.0, 8.0, 3200});
    return std::log(mass);
  }

  double radius_;
  double sigma_;
  std::array<std::array<double, 2>, 2> centers_{};
  double ring_log_norm_ = 0.0;
  double log_norm_ = 0.0;
};

inline std::unique_ptr<TargetDistribution> circle_of_gaussians() { return std::make_unique<CircleOfGaussians>(); }
inline std::unique_ptr<TargetDistribution> two_rings() { return std::make_unique<TwoRings>(); }

/// Builds (and normalizes) the two-moons target once per process.
inline std::unique_ptr<TargetDistribution> two_moons() {
  static const TwoMoons cached;
  return std::make_unique<TwoMoons>(cached);
}

inline std::vector<std::string> target_names() { return {"two_moons", "circle_of_gaussians", "two_rings"}; }

inline std::unique_ptr<TargetDistribution> make_target(std::string_view name) {
  std::string key(name);
  std::replace(key.begin(), key.end(), '-', '_');
  if (key == "circle_of_gaussians") return circle_of_gaussians();
  if (key == "two_rings") return two_rings();
  if (key == "two_moons") return two_moons();
  throw ConfigError("unknown target '" + std::string(name) + "'");
}

}  // namespace pwflow
