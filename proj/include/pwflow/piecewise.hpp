#pragma once

// Piecewise flow: cluster the target samples, train one MAF per cluster and
// combine them as a mixture weighted by each cluster's total sample weight.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "binary_io.hpp"
#include "clustering.hpp"
#include "errors.hpp"
#include "maf.hpp"
#include "numerics.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "samples.hpp"
#include "training.hpp"

namespace pwflow {

/// One or more components failed to train.
class ComponentTrainingError : public Error {
 public:
  ComponentTrainingError(const std::string& what, std::vector<std::size_t> failed)
      : Error(what), failed_(std::move(failed)) {}
  [[nodiscard]] const std::vector<std::size_t>& failed_clusters() const noexcept { return failed_; }

 private:
  std::vector<std::size_t> failed_;
};

/// Training cost sum_k E_k * N_k * h_k; for a single flow this is E * N * h.
inline double training_cost(std::span<const TrainingReport> reports) {
  if (reports.empty()) throw ConfigError("training_cost needs at least one report");
  double c = 0.0;
  for (const auto& r : reports) {
    c += static_cast<double>(r.epochs_run) * static_cast<double>(r.samples_used) *
         static_cast<double>(r.parameter_count);
  }
  return c;
}

// -- hyperparameter parity --------------------------------------------------

inline constexpr double kParityTolerance = 0.15;

struct ParityPlan {
  std::size_t budget = 0;  // h of the reference single flow
  std::size_t clusters = 1;
  FlowArchitecture component;
  std::size_t component_parameters = 0;  // h_k
  std::size_t total_parameters = 0;      // sum_k h_k

  [[nodiscard]] double relative_error() const {
    return std::abs(static_cast<double>(total_parameters) - static_cast<double>(budget)) / static_cast<double>(budget);
  }
};

/// Shrinks the hidden widths (keeping their proportions) so that k copies of
/// the component flow hold about as many parameters as the reference flow.
inline ParityPlan parity_plan(std::size_t dim, const FlowArchitecture& reference, std::size_t k) {
  if (k < 1) throw ConfigError("parity_plan: k must be at least 1");
  if (reference.hidden.empty() || reference.hidden.front() == 0) {
    throw ConfigError("parity_plan: reference architecture needs hidden layers");
  }
  ParityPlan plan;
  plan.budget = maf_parameter_count(dim, reference);
  plan.clusters = k;
  const std::size_t lead = reference.hidden.front();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t w = 1; w <= lead; ++w) {
    FlowArchitecture arch{{}, reference.blocks};
    for (std::size_t h : reference.hidden) {
      const auto scaled = static_cast<std::size_t>(std::llround(static_cast<double>(h * w) / static_cast<double>(lead)));
      arch.hidden.push_back(std::max<std::size_t>(1, scaled));
    }
    const std::size_t per = maf_parameter_count(dim, arch);
    const double err = std::abs(static_cast<double>(k * per) - static_cast<double>(plan.budget));
    if (err < best) {
      best = err;
      plan.component = arch;
      plan.component_parameters = per;
      plan.total_parameters = k * per;
    }
  }
  if (plan.relative_error() > kParityTolerance) {
    throw ConfigError("parity_plan: no component width reaches the parameter budget " + std::to_string(plan.budget) +
                      " within 15% for k = " + std::to_string(k));
  }
  return plan;
}

// -- the mixture -------------------------------------------------------------

struct PiecewiseComponent {
  MafModel model;
  double weight = 0.0;  // normalized mixture weight
};

/// Samples plus, for each draw, the component index and base point it came from.
struct PiecewiseDraw {
  WeightedSampleSet samples;
  std::vector<std::size_t> component;
  Matrix base;
};

class PiecewiseFlow {
 public:
  PiecewiseFlow() = default;

  /// `cluster_weights` are the raw W_k; they are normalized to sum to one.
  PiecewiseFlow(std::vector<MafModel> models, std::span<const double> cluster_weights) {
    if (models.empty()) throw ConfigError("piecewise flow needs at least one component");
    if (models.size() != cluster_weights.size()) throw ShapeError("piecewise flow: one weight per component required");
    double total = 0.0;
    for (double w : cluster_weights) {
      if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("piecewise flow: component weights must be positive");
      total += w;
    }
    dim_ = models.front().dim();
    for (std::size_t i = 0; i < models.size(); ++i) {
      if (models[i].dim() != dim_) throw ShapeError("piecewise flow: components disagree on dimension");
      components_.push_back({std::move(models[i]), cluster_weights[i] / total});
    }
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t size() const noexcept { return components_.size(); }
  [[nodiscard]] const std::vector<PiecewiseComponent>& components() const noexcept { return components_; }

  [[nodiscard]] std::vector<double> weights() const {
    std::vector<double> w;
    for (const auto& c : components_) w.push_back(c.weight);
    return w;
  }

  [[nodiscard]] std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& c : components_) n += c.model.parameter_count();
    return n;
  }

  /// log sum_k exp(log W_k + log p_k(x)), one value per row.
  [[nodiscard]] Vector log_prob(const Matrix& x) const {
    Matrix terms(x.rows(), static_cast<Eigen::Index>(components_.size()));
    for (std::size_t k = 0; k < components_.size(); ++k) {
      terms.col(static_cast<Eigen::Index>(k)) =
          components_[k].model.log_prob(x).array() + std::log(components_[k].weight);
    }
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out(i) = logsumexp(std::span<const double>(terms.row(i).data(), components_.size()));
    }
    return out;
  }

  [[nodiscard]] double log_prob(std::span<const double> x) const {
    if (x.size() != dim_) throw ShapeError("piecewise flow: input dimension mismatch");
    Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(dim_));
    return log_prob(row)(0);
  }

  /// Picks component k with probability W_k by inverse CDF, then maps a
  /// standard-normal base point through that component's inverse.
  [[nodiscard]] PiecewiseDraw sample_with_provenance(std::size_t n, std::uint64_t seed) const {
    if (n < 1) throw ConfigError("sample: n must be at least 1");
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> cdf;
    double acc = 0.0;
    for (const auto& c : components_) cdf.push_back(acc += c.weight);

    PiecewiseDraw draw;
    draw.component.resize(n);
    draw.base.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < n; ++i) {
      const double u = unif(rng) * acc;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      draw.component[i] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), components_.size() - 1);
      for (std::size_t d = 0; d < dim_; ++d) draw.base(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = normal(rng);
    }

    Matrix points(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim_));
    for (std::size_t k = 0; k < components_.size(); ++k) {
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < n; ++i) {
        if (draw.component[i] == k) rows.push_back(static_cast<Eigen::Index>(i));
      }
      if (rows.empty()) continue;
      Matrix z(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim_));
      for (std::size_t r = 0; r < rows.size(); ++r) z.row(static_cast<Eigen::Index>(r)) = draw.base.row(rows[r]);
      Matrix x = components_[k].model.inverse(z);
      for (std::size_t r = 0; r < rows.size(); ++r) points.row(rows[r]) = x.row(static_cast<Eigen::Index>(r));
    }
    draw.samples = WeightedSampleSet(std::move(points));
    return draw;
  }

  [[nodiscard]] WeightedSampleSet sample(std::size_t n, std::uint64_t seed) const {
    return sample_with_provenance(n, seed).samples;
  }

  // -- serialization ---------------------------------------------------------

  static constexpr std::string_view kMagic = "PWFPNF\n";
  static constexpr std::uint32_t kVersion = 1;

  [[nodiscard]] std::string to_bytes() const {
    binary::Writer w;
    w.bytes(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(dim_));
    w.u32(static_cast<std::uint32_t>(components_.size()));
    for (const auto& c : components_) w.f64(c.weight);
    for (const auto& c : components_) {
      const std::string blob = c.model.to_bytes();
      w.u64(blob.size());
      w.bytes(blob);
    }
    return w.take();
  }

  static PiecewiseFlow from_bytes(std::string_view bytes) {
    binary::Reader r(bytes);
    r.expect(kMagic, "PNF");
    const auto version = r.u32("PNF version");
    if (version != kVersion) throw FormatError("PNF: unsupported format version " + std::to_string(version));
    const std::size_t dim = r.u32("PNF dimension");
    const std::size_t k = r.u32("PNF component count");
    if (k == 0 || k > 100000) throw FormatError("PNF: implausible component count");
    std::vector<double> weights;
    for (std::size_t i = 0; i < k; ++i) weights.push_back(r.f64("PNF weights"));
    PiecewiseFlow flow;
    flow.dim_ = dim;
    for (std::size_t i = 0; i < k; ++i) {
      const auto len = r.u64("PNF component length");
      MafModel m = MafModel::from_bytes(r.take(static_cast<std::size_t>(len), "PNF component"));
      if (m.dim() != dim) throw FormatError("PNF: component dimension mismatch");
      if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) throw FormatError("PNF: invalid component weight");
      flow.components_.push_back({std::move(m), weights[i]});
    }
    if (!r.at_end()) throw FormatError("PNF: trailing bytes");
    return flow;
  }

  void save(const std::filesystem::path& path) const { MafModel::write_file(path, to_bytes()); }
  static PiecewiseFlow load(const std::filesystem::path& path) { return from_bytes(MafModel::read_file(path)); }

 private:
  std::size_t dim_ = 0;
  std::vector<PiecewiseComponent> components_;
};

// -- fitting -----------------------------------------------------------------

inline constexpr std::size_t kMinClusterSize = 25;

struct PiecewiseOptions {
  /// Per-component architecture, or the single-flow reference when `parity`
  /// is set.
  FlowArchitecture architecture;
  bool parity = true;
  std::optional<std::size_t> clusters;  // fixed k; otherwise silhouette scan
  std::size_t k_min = 2;
  std::size_t k_max = 12;
  std::size_t min_cluster_size = kMinClusterSize;
  std::size_t threads = 0;  // 0: PWFLOW_THREADS / hardware
};

struct PiecewiseFit {
  PiecewiseFlow flow;
  std::vector<TrainingReport> reports;  // one per component
  Clustering clustering;
  std::optional<ClusterScan> scan;
  FlowArchitecture component_architecture;
  std::optional<ParityPlan> plan;
};

/// Seeds derived from the training seed, one stream per purpose and cluster.
struct PiecewiseSeeds {
  static std::uint64_t clustering(std::uint64_t master) { return derive_seed(master, 1); }
  static std::uint64_t init(std::uint64_t master, std::size_t k) { return derive_seed(derive_seed(master, 2), k); }
  static std::uint64_t training(std::uint64_t master, std::size_t k) { return derive_seed(derive_seed(master, 3), k); }
};

inline PiecewiseFit fit(const WeightedSampleSet& samples, const TrainingConfig& cfg, const PiecewiseOptions& opts,
                        const ClusteringStrategy& strategy = KMeansStrategy{}) {
  cfg.validate();
  samples.validate();
  if (samples.empty()) throw ConfigError("piecewise fit: no samples");
  const std::uint64_t cluster_seed = PiecewiseSeeds::clustering(cfg.seed);

  PiecewiseFit result;
  if (opts.clusters) {
    if (*opts.clusters < 1) throw ConfigError("piecewise fit: cluster count must be at least 1");
    result.clustering = strategy.fit(samples, *opts.clusters, cluster_seed);
  } else {
    const std::size_t k_max = std::min(opts.k_max, samples.size());
    result.scan = select_k(samples, opts.k_min, k_max, cluster_seed, strategy);
    const auto& scan = *result.scan;
    const auto pos = static_cast<std::size_t>(
        std::find(scan.candidates.begin(), scan.candidates.end(), scan.chosen_k) - scan.candidates.begin());
    result.clustering = scan.clusterings[pos];
  }
  const Clustering& clustering = result.clustering;
  const std::size_t k = clustering.k;

  std::vector<WeightedSampleSet> parts;
  for (std::size_t c = 0; c < k; ++c) {
    const auto idx = clustering.members(c);
    if (idx.size() < opts.min_cluster_size) {
      throw ConfigError("piecewise fit: cluster " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                        " samples, fewer than the minimum " + std::to_string(opts.min_cluster_size));
    }
    parts.push_back(samples.subset(idx));
    if (!(parts.back().total_weight() > 0.0)) {
      throw ConfigError("piecewise fit: cluster " + std::to_string(c) + " carries zero total weight");
    }
  }

  if (opts.parity) {
    result.plan = parity_plan(samples.dim(), opts.architecture, k);
    result.component_architecture = result.plan->component;
  } else {
    result.component_architecture = opts.architecture;
  }

  std::vector<MafModel> models(k);
  std::vector<TrainingReport> reports(k);
  std::vector<std::string> failures(k);
  parallel_for(k, opts.threads == 0 ? thread_limit() : opts.threads, [&](std::size_t c) {
    try {
      MafModel m = MafModel::create(samples.dim(), result.component_architecture, PiecewiseSeeds::init(cfg.seed, c));
      TrainingConfig local = cfg;
      local.seed = PiecewiseSeeds::training(cfg.seed, c);
      reports[c] = train(m, parts[c], local);
      models[c] = std::move(m);
    } catch (const std::exception& e) {
      failures[c] = e.what();
    }
  });

  std::vector<std::size_t> failed;
  std::string message = "piecewise fit: training failed for cluster(s)";
  for (std::size_t c = 0; c < k; ++c) {
    if (failures[c].empty()) continue;
    failed.push_back(c);
    message += " " + std::to_string(c) + " (" + failures[c] + ")";
  }
  if (!failed.empty()) throw ComponentTrainingError(message, std::move(failed));

  result.flow = PiecewiseFlow(std::move(models), clustering.cluster_weights);
  result.reports = std::move(reports);
  return result;
}

}  // namespace pwflow
