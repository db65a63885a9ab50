#pragma once

// Masked autoregressive flow: a fixed affine standardization followed by a
// chain of MADE blocks whose orderings alternate between identity and
// reversal. forward() maps data to the standard-normal base, inverse() maps
// base points back to data space.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"
#include "made.hpp"
#include "numerics.hpp"
#include "random.hpp"
#include "samples.hpp"

namespace pwflow {

struct FlowArchitecture {
  std::vector<std::size_t> hidden{32, 32};
  std::size_t blocks = 2;
};

/// Per-dimension affine map u = (x - shift) / scale.
struct Standardizer {
  Vector shift;
  Vector scale;

  static Standardizer identity(std::size_t dim) {
    return {Vector::Zero(static_cast<Eigen::Index>(dim)), Vector::Ones(static_cast<Eigen::Index>(dim))};
  }

  /// Weighted mean and (population) standard deviation. Degenerate
  /// dimensions keep unit scale.
  static Standardizer fit(const WeightedSampleSet& samples) {
    samples.validate();
    const double total = samples.total_weight();
    Vector mean = (samples.points.transpose() * samples.weights) / total;
    Matrix centered = samples.points.rowwise() - mean.transpose();
    Vector var = (centered.array().square().matrix().transpose() * samples.weights) / total;
    Vector scale = var.array().sqrt().matrix();
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
      if (!(scale(i) > 0.0) || !std::isfinite(scale(i))) scale(i) = 1.0;
    }
    return {std::move(mean), std::move(scale)};
  }

  [[nodiscard]] double log_det() const { return -scale.array().log().sum(); }
};

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

class MafModel {
 public:
  struct Transform {
    Matrix z;        // n x D
    Vector log_det;  // n
  };

  struct TapedTransform {
    Var z;        // n x D
    Var log_det;  // n x 1, excludes the standardizer constant
  };

  MafModel() = default;

  static MafModel create(std::size_t dim, const FlowArchitecture& arch, std::uint64_t seed) {
    if (arch.blocks == 0) throw ConfigError("MAF: at least one block is required");
    MafModel m;
    m.dim_ = dim;
    m.standardizer_ = Standardizer::identity(dim);
    for (std::size_t b = 0; b < arch.blocks; ++b) {
      auto ordering = b % 2 == 0 ? identity_ordering(dim) : reversed_ordering(dim);
      m.blocks_.push_back(MadeNetwork::build(dim, arch.hidden, std::move(ordering), derive_seed(seed, b)));
    }
    return m;
  }

  static MafModel from_parts(std::size_t dim, std::vector<MadeNetwork> blocks, Standardizer standardizer) {
    MafModel m;
    m.dim_ = dim;
    m.blocks_ = std::move(blocks);
    m.set_standardizer(std::move(standardizer));
    return m;
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] const std::vector<MadeNetwork>& blocks() const noexcept { return blocks_; }
  [[nodiscard]] const Standardizer& standardizer() const noexcept { return standardizer_; }

  void set_standardizer(Standardizer s) {
    if (static_cast<std::size_t>(s.shift.size()) != dim_ || static_cast<std::size_t>(s.scale.size()) != dim_) {
      throw ShapeError("MAF: standardizer dimension mismatch");
    }
    for (Eigen::Index i = 0; i < s.scale.size(); ++i) {
      if (!(s.scale(i) > 0.0) || !std::isfinite(s.scale(i)) || !std::isfinite(s.shift(i))) {
        throw ConfigError("MAF: standardizer scales must be finite and positive");
      }
    }
    standardizer_ = std::move(s);
  }

  void fit_standardizer(const WeightedSampleSet& samples) {
    check_dim(samples.dim());
    set_standardizer(Standardizer::fit(samples));
  }

  [[nodiscard]] std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.parameter_count();
    return n;
  }

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out;
    for (auto& b : blocks_) {
      auto p = b.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  [[nodiscard]] std::vector<Matrix> parameter_values() const {
    std::vector<Matrix> out;
    for (const auto& b : blocks_) {
      for (const Matrix* p : b.parameters()) out.push_back(*p);
    }
    return out;
  }

  void set_parameter_values(const std::vector<Matrix>& values) {
    auto slots = parameters();
    if (slots.size() != values.size()) throw ShapeError("MAF: parameter count mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = values[i];
  }

  /// Taped data-to-base transform. Parameters are registered on the tape in
  /// parameters() order.
  TapedTransform forward(GradTape& tape, Var x) const {
    check_dim(static_cast<std::size_t>(x.cols()));
    const Matrix& raw = x.value();
    Matrix u = (raw.rowwise() - standardizer_.shift.transpose()).array().rowwise() /
               standardizer_.scale.transpose().array();
    Var h = tape.constant(std::move(u));
    Var log_det = tape.constant(Matrix::Zero(x.rows(), 1));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      auto out = blocks_[b].forward(tape, h);
      h = ops::mul(h - out.mu, ops::exp(ops::scale(out.log_sigma, -1.0)));
      log_det = log_det - ops::row_sum(out.log_sigma);
      if (!h.value().allFinite()) throw NumericError("MAF: non-finite output in block " + std::to_string(b));
    }
    return {h, log_det};
  }

  /// Batched data-to-base transform including the standardizer's log-Jacobian.
  [[nodiscard]] Transform forward(const Matrix& x) const {
    GradTape tape(false);
    auto t = forward(tape, tape.constant(x));
    Vector ld = t.log_det.value().col(0);
    ld.array() += standardizer_.log_det();
    return {t.z.value(), std::move(ld)};
  }

  [[nodiscard]] std::pair<std::vector<double>, double> forward(std::span<const double> x) const {
    Transform t = forward(row_of(x));
    return {std::vector<double>(t.z.data(), t.z.data() + dim_), t.log_det(0)};
  }

  /// Base-to-data map: blocks in reverse, each inverted one autoregressive
  /// position at a time.
  [[nodiscard]] Matrix inverse(const Matrix& z) const {
    check_dim(static_cast<std::size_t>(z.cols()));
    Matrix cur = z;
    for (std::size_t b = blocks_.size(); b-- > 0;) {
      const MadeNetwork& net = blocks_[b];
      Matrix x = Matrix::Zero(cur.rows(), cur.cols());
      for (std::size_t p = 0; p < dim_; ++p) {
        const auto i = static_cast<Eigen::Index>(net.ordering()[p]);
        GradTape tape(false);
        auto out = net.forward(tape, tape.constant(x));
        x.col(i) = cur.col(i).cwiseProduct(out.log_sigma.value().col(i).array().exp().matrix()) +
                   out.mu.value().col(i);
      }
      if (!x.allFinite()) throw NumericError("MAF: non-finite inverse in block " + std::to_string(b));
      cur = std::move(x);
    }
    Matrix x = (cur.array().rowwise() * standardizer_.scale.transpose().array()).matrix().rowwise() +
               standardizer_.shift.transpose();
    return x;
  }

  [[nodiscard]] std::vector<double> inverse(std::span<const double> z) const {
    Matrix x = inverse(row_of(z));
    return {x.data(), x.data() + dim_};
  }

  /// Standard-normal base density plus log-Jacobian, one value per row.
  [[nodiscard]] Vector log_prob(const Matrix& x) const {
    Transform t = forward(x);
    Vector base = -0.5 * t.z.rowwise().squaredNorm();
    base.array() -= 0.5 * static_cast<double>(dim_) * kLogTwoPi;
    return base + t.log_det;
  }

  [[nodiscard]] double log_prob(std::span<const double> x) const { return log_prob(row_of(x))(0); }

  /// Taped weight-normalized negative log-likelihood, 1x1.
  Var loss(GradTape& tape, const WeightedSampleSet& batch) const {
    check_dim(batch.dim());
    const double total = batch.total_weight();
    if (!(total > 0.0)) throw ConfigError("MAF loss: sample weights sum to zero");
    for (Eigen::Index i = 0; i < batch.weights.size(); ++i) {
      if (batch.weights(i) < 0.0) throw ConfigError("MAF loss: negative sample weight");
    }
    auto t = forward(tape, tape.constant(batch.points));
    Var lp = ops::scale(ops::row_sum(ops::square(t.z)), -0.5) + t.log_det;
    Var w = tape.constant((batch.weights / total).transpose());
    Var nll = ops::scale(ops::matmul(w, lp), -1.0);
    const double constant = 0.5 * static_cast<double>(dim_) * kLogTwoPi - standardizer_.log_det();
    return nll + tape.constant(Matrix::Constant(1, 1, constant));
  }

  [[nodiscard]] double loss(const WeightedSampleSet& batch) const {
    GradTape tape(false);
    return loss(tape, batch).scalar();
  }

  // -- serialization -------------------------------------------------------

  static constexpr std::string_view kMagic = "PWFMAF\n";
  static constexpr std::uint32_t kVersion = 1;

  [[nodiscard]] std::string to_bytes() const {
    binary::Writer w;
    w.bytes(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(dim_));
    w.u32(static_cast<std::uint32_t>(blocks_.size()));
    for (const auto& b : blocks_) {
      w.u32(static_cast<std::uint32_t>(b.hidden_sizes().size()));
      for (std::size_t h : b.hidden_sizes()) w.u32(static_cast<std::uint32_t>(h));
      for (std::size_t o : b.ordering()) w.u32(static_cast<std::uint32_t>(o));
    }
    for (Eigen::Index i = 0; i < standardizer_.shift.size(); ++i) w.f64(standardizer_.shift(i));
    for (Eigen::Index i = 0; i < standardizer_.scale.size(); ++i) w.f64(standardizer_.scale(i));
    for (const auto& b : blocks_) {
      for (const Matrix* p : b.parameters()) w.matrix(*p);
    }
    return w.take();
  }

  static MafModel from_bytes(std::string_view bytes) {
    binary::Reader r(bytes);
    MafModel m = read(r);
    if (!r.at_end()) throw FormatError("MAF: trailing bytes after model");
    return m;
  }

  static MafModel read(binary::Reader& r) {
    r.expect(kMagic, "MAF");
    const auto version = r.u32("MAF version");
    if (version != kVersion) {
      throw FormatError("MAF: unsupported format version " + std::to_string(version));
    }
    const std::size_t dim = r.u32("MAF dimension");
    const std::size_t nblocks = r.u32("MAF block count");
    if (dim == 0 || dim > 4096 || nblocks == 0 || nblocks > 4096) throw FormatError("MAF: implausible header");
    std::vector<std::vector<std::size_t>> hidden(nblocks);
    std::vector<std::vector<std::size_t>> orderings(nblocks);
    for (std::size_t b = 0; b < nblocks; ++b) {
      const std::size_t nh = r.u32("MAF layer count");
      if (nh == 0 || nh > 64) throw FormatError("MAF: implausible layer count");
      for (std::size_t l = 0; l < nh; ++l) {
        const std::size_t width = r.u32("MAF layer width");
        if (width == 0 || width > (1u << 20)) throw FormatError("MAF: implausible layer width");
        hidden[b].push_back(width);
      }
      for (std::size_t i = 0; i < dim; ++i) orderings[b].push_back(r.u32("MAF ordering"));
    }
    Standardizer st{Vector(static_cast<Eigen::Index>(dim)), Vector(static_cast<Eigen::Index>(dim))};
    for (std::size_t i = 0; i < dim; ++i) st.shift(static_cast<Eigen::Index>(i)) = r.f64("MAF shift");
    for (std::size_t i = 0; i < dim; ++i) st.scale(static_cast<Eigen::Index>(i)) = r.f64("MAF scale");

    std::vector<MadeNetwork> blocks;
    for (std::size_t b = 0; b < nblocks; ++b) {
      std::vector<Matrix> params;
      std::size_t fan_in = dim;
      for (std::size_t width : hidden[b]) {
        params.push_back(r.matrix(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(width), "MAF weights"));
        params.push_back(r.matrix(1, static_cast<Eigen::Index>(width), "MAF bias"));
        fan_in = width;
      }
      params.push_back(r.matrix(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(2 * dim), "MAF weights"));
      params.push_back(r.matrix(1, static_cast<Eigen::Index>(2 * dim), "MAF bias"));
      try {
        blocks.push_back(MadeNetwork::from_parameters(dim, hidden[b], orderings[b], std::move(params)));
      } catch (const ConfigError& e) {
        throw FormatError(std::string("MAF: ") + e.what());
      }
    }
    try {
      return from_parts(dim, std::move(blocks), std::move(st));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("MAF: ") + e.what());
    }
  }

  void save(const std::filesystem::path& path) const { write_file(path, to_bytes()); }
  static MafModel load(const std::filesystem::path& path) { return from_bytes(read_file(path)); }

  static void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + path.string());
  }

  static std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

 private:
  void check_dim(std::size_t d) const {
    if (d != dim_) {
      throw ShapeError("MAF: input dimension " + std::to_string(d) + " does not match model dimension " +
                       std::to_string(dim_));
    }
  }

  [[nodiscard]] Matrix row_of(std::span<const double> x) const {
    check_dim(x.size());
    Matrix row(1, static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < dim_; ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
    return row;
  }

  std::size_t dim_ = 0;
  std::vector<MadeNetwork> blocks_;
  Standardizer standardizer_;
};

/// Parameter count h of a MAF with the given architecture.
inline std::size_t maf_parameter_count(std::size_t dim, const FlowArchitecture& arch) {
  return arch.blocks * made_parameter_count(dim, arch.hidden);
}

}  // namespace pwflow
