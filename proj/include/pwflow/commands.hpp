#pragma once

// Benchmark harness and the train / sample / evaluate commands behind the
// pwflow executable. Every command is deterministic given its seed; wall
// times go to separate files so metric files compare byte for byte.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "evaluation.hpp"
#include "maf.hpp"
#include "parallel.hpp"
#include "piecewise.hpp"
#include "random.hpp"
#include "sample_io.hpp"
#include "targets.hpp"
#include "training.hpp"

namespace pwflow::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2, kTrainingFailure = 3 };

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_sizes(const std::vector<std::size_t>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(v[i]);
  }
  return out;
}

/// Fixed k or a silhouette scan over [k_min, k_max].
struct ClusterChoice {
  std::optional<std::size_t> clusters;
  std::size_t k_min = 2;
  std::size_t k_max = 12;

  [[nodiscard]] std::string describe() const {
    return clusters ? std::to_string(*clusters) : "auto:" + std::to_string(k_min) + ".." + std::to_string(k_max);
  }
};

/// Parses "MIN..MAX" (or "MIN-MAX").
inline std::pair<std::size_t, std::size_t> parse_k_range(std::string_view text) {
  auto sep = text.find("..");
  std::size_t skip = 2;
  if (sep == std::string_view::npos) {
    sep = text.find('-');
    skip = 1;
  }
  if (sep == std::string_view::npos) throw ConfigError("k range must look like MIN..MAX, got '" + std::string(text) + "'");
  try {
    const auto lo = std::stoul(std::string(text.substr(0, sep)));
    const auto hi = std::stoul(std::string(text.substr(sep + skip)));
    if (lo < 2 || hi < lo) throw ConfigError("k range needs 2 <= MIN <= MAX");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw ConfigError("k range must look like MIN..MAX, got '" + std::string(text) + "'");
  }
}

/// Parses "W,W,..." into hidden widths.
inline std::vector<std::size_t> parse_widths(std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find(',', start);
    const std::string field(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    try {
      std::size_t used = 0;
      const long v = std::stol(field, &used);
      if (used != field.size() || v < 1) throw ConfigError("");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("hidden widths must be positive integers, got '" + std::string(text) + "'");
    }
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline PiecewiseOptions piecewise_options(const FlowArchitecture& arch, const ClusterChoice& choice,
                                          std::size_t threads) {
  PiecewiseOptions o;
  o.architecture = arch;
  o.clusters = choice.clusters;
  o.k_min = choice.k_min;
  o.k_max = choice.k_max;
  o.threads = threads;
  return o;
}

// -- benchmark ---------------------------------------------------------------

struct BenchmarkOptions {
  std::vector<std::string> targets = target_names();
  std::size_t runs = 10;
  /// Single-MAF baseline runs per target; unset means `runs`.
  std::optional<std::size_t> maf_runs;
  std::uint64_t seed = 0;
  std::size_t training_samples = 10000;
  std::size_t kl_samples = 10000;
  std::size_t dump_samples = 10000;
  FlowArchitecture architecture;
  ClusterChoice clusters;
  TrainingConfig training;
  std::filesystem::path out_dir = "pwflow-benchmark";

  [[nodiscard]] std::size_t baseline_runs() const { return maf_runs.value_or(runs); }

  void validate() const {
    if (targets.empty()) throw ConfigError("benchmark: no targets given");
    for (const auto& t : targets) (void)make_target(t);
    if (runs < 1) throw ConfigError("benchmark: runs must be at least 1");
    if (baseline_runs() < 1) throw ConfigError("benchmark: baseline runs must be at least 1");
    if (training_samples < 5 * kMinClusterSize) throw ConfigError("benchmark: too few training samples");
    if (kl_samples < kMinKlSamples) throw ConfigError("benchmark: too few KL samples");
    training.validate();
  }
};

/// One training run of one method on one target.
struct RunRecord {
  std::string target;
  std::string method;  // "maf" or "pnf"
  std::size_t run = 0;
  bool trained = false;  // training finished; cost fields are valid
  bool ok = false;       // trained and the KL estimate succeeded
  std::string error;
  std::size_t k = 0;
  KlEstimate kl;
  std::size_t epochs = 0;
  double cost = 0.0;
  std::size_t parameters = 0;
  double wall_seconds = 0.0;
};

/// Aggregated row per target and method. KL statistics cover runs with an
/// estimate; cost, epochs, parameters and k cover every run that finished
/// training.
struct BenchmarkRow {
  std::string target;
  std::string method;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double kl_mean = 0.0;
  double kl_error = 0.0;
  double cost_mean = 0.0;
  double normalized_cost = 0.0;
  double epochs_mean = 0.0;
  double parameters_mean = 0.0;
  std::vector<std::size_t> k_values;
  double wall_seconds_mean = 0.0;  // timing file only

  bool operator==(const BenchmarkRow&) const = default;
};

/// Run-0 model of one method on one target.
struct RetainedFlow {
  std::string target;
  std::string method;
  PiecewiseFlow flow;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  std::vector<RunRecord> records;
  std::vector<RetainedFlow> flows;

  [[nodiscard]] bool all_ok() const {
    for (const auto& r : rows) {
      if (r.failed != 0) return false;
    }
    return true;
  }

  [[nodiscard]] const BenchmarkRow* find(std::string_view target, std::string_view method) const {
    for (const auto& r : rows) {
      if (r.target == target && r.method == method) return &r;
    }
    return nullptr;
  }

  [[nodiscard]] const PiecewiseFlow* flow(std::string_view target, std::string_view method) const {
    for (const auto& f : flows) {
      if (f.target == target && f.method == method) return &f.flow;
    }
    return nullptr;
  }
};

inline constexpr std::string_view kMetricsHeader =
    "target,method,runs,failed,kl_mean,kl_error,cost_mean,normalized_cost,epochs_mean,parameters_mean,k_values";

inline std::string format_metrics(const std::vector<BenchmarkRow>& rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.target + ',' + r.method + ',' + std::to_string(r.runs) + ',' + std::to_string(r.failed) + ',' +
           format_double(r.kl_mean) + ',' + format_double(r.kl_error) + ',' + format_double(r.cost_mean) + ',' +
           format_double(r.normalized_cost) + ',' + format_double(r.epochs_mean) + ',' +
           format_double(r.parameters_mean) + ',' + join_sizes(r.k_values, ';') + '\n';
  }
  return out;
}

/// Reads back what format_metrics wrote. Wall times are not part of it.
inline std::vector<BenchmarkRow> parse_metrics(std::string_view text) {
  std::vector<BenchmarkRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != kMetricsHeader) throw FormatError("metrics: unexpected header");
      continue;
    }
    const auto fields = pwflow::detail::split_fields(line, ',');
    if (fields.size() != 11) throw FormatError("metrics line " + std::to_string(line_no) + ": expected 11 fields");
    auto num = [&](std::size_t i) {
      const auto v = pwflow::detail::parse_double(fields[i]);
      if (!v) throw FormatError("metrics line " + std::to_string(line_no) + ": bad number in field " + std::to_string(i + 1));
      return *v;
    };
    BenchmarkRow r;
    r.target = std::string(fields[0]);
    r.method = std::string(fields[1]);
    r.runs = static_cast<std::size_t>(num(2));
    r.failed = static_cast<std::size_t>(num(3));
    r.kl_mean = num(4);
    r.kl_error = num(5);
    r.cost_mean = num(6);
    r.normalized_cost = num(7);
    r.epochs_mean = num(8);
    r.parameters_mean = num(9);
    std::string_view ks = fields[10];
    while (!ks.empty()) {
      const auto pos = ks.find(';');
      const auto v = pwflow::detail::parse_double(ks.substr(0, pos));
      if (!v) throw FormatError("metrics line " + std::to_string(line_no) + ": bad k list");
      r.k_values.push_back(static_cast<std::size_t>(*v));
      ks = pos == std::string_view::npos ? std::string_view{} : ks.substr(pos + 1);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string format_runs(const std::vector<RunRecord>& records) {
  std::string out = "target,method,run,status,k,kl,kl_error,clipped,epochs,cost,parameters\n";
  for (const auto& r : records) {
    out += r.target + ',' + r.method + ',' + std::to_string(r.run) + ',' + (r.ok ? "ok" : r.trained ? "kl_failed" : "failed") + ',' +
           std::to_string(r.k) + ',' + format_double(r.kl.value) + ',' + format_double(r.kl.mc_error) + ',' +
           std::to_string(r.kl.clipped) + ',' + std::to_string(r.epochs) + ',' + format_double(r.cost) + ',' +
           std::to_string(r.parameters) + '\n';
  }
  return out;
}

inline std::string format_timing(const BenchmarkReport& report) {
  std::string out = "target,method,run,wall_seconds\n";
  for (const auto& r : report.records) {
    out += r.target + ',' + r.method + ',' + std::to_string(r.run) + ',' + format_double(r.wall_seconds) + '\n';
  }
  return out;
}

inline std::string format_metadata(const BenchmarkOptions& o) {
  std::string out;
  auto kv = [&](std::string_view k, const std::string& v) { out += std::string(k) + '=' + v + '\n'; };
  std::string targets;
  for (std::size_t i = 0; i < o.targets.size(); ++i) targets += (i ? "," : "") + o.targets[i];
  kv("format", "pwflow-benchmark-1");
  kv("targets", targets);
  kv("seed", std::to_string(o.seed));
  kv("runs", std::to_string(o.runs));
  kv("maf_runs", std::to_string(o.baseline_runs()));
  kv("training_samples", std::to_string(o.training_samples));
  kv("kl_samples", std::to_string(o.kl_samples));
  kv("hidden", join_sizes(o.architecture.hidden, ','));
  kv("blocks", std::to_string(o.architecture.blocks));
  kv("clusters", o.clusters.describe());
  kv("max_epochs", std::to_string(o.training.max_epochs));
  kv("patience_fraction", format_double(o.training.patience_fraction));
  kv("test_fraction", format_double(o.training.test_fraction));
  kv("learning_rate", format_double(o.training.learning_rate));
  kv("batch_size", std::to_string(o.training.batch_size));
  return out;
}

/// Stable per-target stream index (FNV-1a of the name).
inline std::uint64_t name_stream(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct RunSeeds {
  std::uint64_t data, maf, pnf, kl_maf, kl_pnf, dump;

  static RunSeeds make(std::uint64_t master, std::string_view target, std::size_t run) {
    const std::uint64_t base = derive_seed(derive_seed(master, name_stream(target)), run);
    return {derive_seed(base, 0), derive_seed(base, 1), derive_seed(base, 2),
            derive_seed(base, 3), derive_seed(base, 4), derive_seed(base, 5)};
  }
};

namespace detail {

inline std::string file_stem(std::string_view target) {
  std::string s(target);
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

inline BenchmarkRow summarize(const std::string& target, const std::string& method,
                              const std::vector<RunRecord>& records) {
  BenchmarkRow row;
  row.target = target;
  row.method = method;
  std::vector<KlEstimate> kls;
  double cost = 0.0, epochs = 0.0, params = 0.0, wall = 0.0;
  std::size_t trained = 0;
  for (const auto& r : records) {
    if (r.target != target || r.method != method) continue;
    ++row.runs;
    if (!r.ok) ++row.failed;
    if (r.ok) kls.push_back(r.kl);
    if (!r.trained) continue;
    ++trained;
    cost += r.cost;
    epochs += static_cast<double>(r.epochs);
    params += static_cast<double>(r.parameters);
    wall += r.wall_seconds;
    row.k_values.push_back(r.k);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (!kls.empty()) {
    const RunAggregate agg = aggregate(kls);
    row.kl_mean = agg.mean;
    row.kl_error = agg.error;
  } else {
    row.kl_mean = row.kl_error = nan;
  }
  if (trained > 0) {
    const auto t = static_cast<double>(trained);
    row.cost_mean = cost / t;
    row.epochs_mean = epochs / t;
    row.parameters_mean = params / t;
    row.wall_seconds_mean = wall / t;
  } else {
    row.cost_mean = row.epochs_mean = row.parameters_mean = nan;
  }
  return row;
}

}  // namespace detail

/// Trains the single-MAF baseline and the PNF on every target, `runs` times
/// each, and writes metrics.csv, runs.csv, metadata.txt, timing.csv and the
/// sample dumps into `out_dir` (when non-empty).
inline BenchmarkReport cmd_benchmark(const BenchmarkOptions& opts, std::ostream* log = nullptr) {
  opts.validate();
  BenchmarkReport report;
  const std::size_t threads = thread_limit();
  const bool write = !opts.out_dir.empty();
  if (write) std::filesystem::create_directories(opts.out_dir);

  for (const auto& name : opts.targets) {
    const auto target = make_target(name);
    const std::string tname = target->name();
    const std::size_t maf_runs = opts.baseline_runs();
    const std::size_t jobs = maf_runs + opts.runs;
    std::vector<RunRecord> records(jobs);
    std::vector<std::optional<PiecewiseFlow>> first(2);

    const bool outer_parallel = threads > 1 && jobs > 1;
    parallel_for(jobs, outer_parallel ? threads : 1, [&](std::size_t job) {
      const bool is_maf = job < maf_runs;
      const std::size_t run = is_maf ? job : job - maf_runs;
      RunRecord& rec = records[job];
      rec.target = tname;
      rec.method = is_maf ? "maf" : "pnf";
      rec.run = run;
      const RunSeeds seeds = RunSeeds::make(opts.seed, tname, run);
      const auto start = std::chrono::steady_clock::now();
      try {
        const WeightedSampleSet data = target->sample(opts.training_samples, seeds.data);
        TrainingConfig cfg = opts.training;
        cfg.seed = is_maf ? seeds.maf : seeds.pnf;
        ClusterChoice choice = opts.clusters;
        if (is_maf) choice.clusters = 1;
        PiecewiseFit fit_result =
            fit(data, cfg, piecewise_options(opts.architecture, choice, outer_parallel ? 1 : threads));
        rec.k = fit_result.flow.size();
        for (const auto& r : fit_result.reports) rec.epochs += r.epochs_run;
        rec.cost = training_cost(fit_result.reports);
        rec.parameters = fit_result.flow.parameter_count();
        rec.trained = true;
        if (run == 0) first[is_maf ? 0 : 1] = fit_result.flow;
        rec.kl = kl_divergence(fit_result.flow, *target, opts.kl_samples, is_maf ? seeds.kl_maf : seeds.kl_pnf);
        rec.ok = true;
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });

    for (const auto& r : records) {
      if (log) {
        *log << tname << ' ' << r.method << " run " << r.run << ": ";
        if (r.ok) {
          *log << "k=" << r.k << " KL=" << r.kl.value << " +- " << r.kl.mc_error << " epochs=" << r.epochs
               << " cost=" << r.cost << " (" << r.wall_seconds << " s)\n";
        } else {
          *log << (r.trained ? "KL FAILED after training (cost=" + format_double(r.cost) + "): " : "FAILED: ")
               << r.error << '\n';
        }
      }
      report.records.push_back(r);
    }
    BenchmarkRow maf = detail::summarize(tname, "maf", records);
    BenchmarkRow pnf = detail::summarize(tname, "pnf", records);
    maf.normalized_cost = std::isnan(maf.cost_mean) ? std::numeric_limits<double>::quiet_NaN() : 1.0;
    pnf.normalized_cost = pnf.cost_mean / maf.cost_mean;
    report.rows.push_back(maf);
    report.rows.push_back(pnf);

    const char* methods[] = {"maf", "pnf"};
    if (write) {
      const std::string stem = detail::file_stem(tname);
      const RunSeeds seeds = RunSeeds::make(opts.seed, tname, 0);
      save_samples(opts.out_dir / ("dump_" + stem + "_data.csv"),
                   target->sample(opts.dump_samples, seeds.data));
      for (std::size_t m = 0; m < 2; ++m) {
        if (!first[m]) continue;
        save_samples(opts.out_dir / ("dump_" + stem + "_" + methods[m] + ".csv"),
                     first[m]->sample(opts.dump_samples, seeds.dump));
      }
    }
    for (std::size_t m = 0; m < 2; ++m) {
      if (first[m]) report.flows.push_back({tname, methods[m], std::move(*first[m])});
    }
  }

  if (write) {
    MafModel::write_file(opts.out_dir / "metrics.csv", format_metrics(report.rows));
    MafModel::write_file(opts.out_dir / "runs.csv", format_runs(report.records));
    MafModel::write_file(opts.out_dir / "metadata.txt", format_metadata(opts));
    MafModel::write_file(opts.out_dir / "timing.csv", format_timing(report));
  }
  return report;
}

// -- train -------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path input;
  SampleReadOptions read;
  std::filesystem::path model_out = "model.pnf";
  FlowArchitecture architecture;
  ClusterChoice clusters;
  TrainingConfig training;
  bool parity = true;
  std::size_t threads = 0;
};

inline constexpr std::size_t kMinTrainSamples = 5 * kMinClusterSize;

inline std::string format_fit_report(const PiecewiseFit& f) {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) { out += k + '=' + v + '\n'; };
  kv("k", std::to_string(f.flow.size()));
  kv("dim", std::to_string(f.flow.dim()));
  kv("component_hidden", join_sizes(f.component_architecture.hidden, ','));
  kv("component_blocks", std::to_string(f.component_architecture.blocks));
  kv("parameters", std::to_string(f.flow.parameter_count()));
  if (f.plan) {
    kv("parity_budget", std::to_string(f.plan->budget));
    kv("parity_relative_error", format_double(f.plan->relative_error()));
  }
  if (f.scan) {
    for (std::size_t i = 0; i < f.scan->candidates.size(); ++i) {
      kv("silhouette_k" + std::to_string(f.scan->candidates[i]), format_double(f.scan->scores[i]));
    }
  }
  const auto weights = f.flow.weights();
  double wall = 0.0;
  std::size_t epochs = 0;
  for (std::size_t c = 0; c < f.reports.size(); ++c) {
    const auto& r = f.reports[c];
    const std::string p = "cluster" + std::to_string(c) + "_";
    kv(p + "weight", format_double(weights[c]));
    kv(p + "samples", std::to_string(r.samples_used));
    kv(p + "epochs", std::to_string(r.epochs_run));
    kv(p + "best_epoch", std::to_string(r.best_epoch));
    kv(p + "best_test_loss", format_double(r.best_test_loss));
    wall += r.wall_time_seconds;
    epochs += r.epochs_run;
  }
  kv("total_epochs", std::to_string(epochs));
  kv("training_cost", format_double(training_cost(f.reports)));
  kv("wall_seconds", format_double(wall));
  return out;
}

inline PiecewiseFit cmd_train(const TrainOptions& opts, std::ostream& out) {
  const WeightedSampleSet data = load_samples(opts.input, opts.read);
  if (data.size() < kMinTrainSamples) {
    throw ConfigError("train: need at least " + std::to_string(kMinTrainSamples) + " samples, got " +
                      std::to_string(data.size()));
  }
  PiecewiseOptions po = piecewise_options(opts.architecture, opts.clusters, opts.threads);
  po.parity = opts.parity;
  PiecewiseFit f = fit(data, opts.training, po);
  f.flow.save(opts.model_out);
  out << "model=" << opts.model_out.string() << '\n' << format_fit_report(f);
  return f;
}

// -- sample ------------------------------------------------------------------

struct SampleOptions {
  std::filesystem::path model;
  std::size_t n = 10000;
  std::uint64_t seed = 0;
  std::filesystem::path out = "samples.csv";
  bool provenance = false;
};

/// Text rows x0..x{D-1}[,component,z0..z{D-1}].
inline std::string format_draw(const PiecewiseDraw& draw, bool provenance) {
  const std::size_t d = draw.samples.dim();
  std::string out;
  for (std::size_t j = 0; j < d; ++j) out += (j ? ",x" : "x") + std::to_string(j);
  if (provenance) {
    out += ",component";
    for (std::size_t j = 0; j < d; ++j) out += ",z" + std::to_string(j);
  }
  out += '\n';
  for (std::size_t i = 0; i < draw.samples.size(); ++i) {
    const auto row = draw.samples.point(i);
    for (std::size_t j = 0; j < d; ++j) out += (j ? "," : "") + format_double(row[j]);
    if (provenance) {
      out += ',' + std::to_string(draw.component[i]);
      for (std::size_t j = 0; j < d; ++j) {
        out += ',' + format_double(draw.base(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
    }
    out += '\n';
  }
  return out;
}

inline PiecewiseDraw cmd_sample(const SampleOptions& opts) {
  const PiecewiseFlow flow = PiecewiseFlow::load(opts.model);
  PiecewiseDraw draw = flow.sample_with_provenance(opts.n, opts.seed);
  MafModel::write_file(opts.out, format_draw(draw, opts.provenance));
  return draw;
}

// -- evaluate ----------------------------------------------------------------

struct EvaluateOptions {
  std::filesystem::path model;
  std::optional<std::string> target;
  std::optional<std::filesystem::path> samples;
  SampleReadOptions read;
  std::size_t n = 10000;
  std::uint64_t seed = 0;
};

/// key=value lines: KL against a named target, or the average held-out
/// log-likelihood of a sample file.
inline std::map<std::string, std::string> cmd_evaluate(const EvaluateOptions& opts, std::ostream& out) {
  if (opts.target.has_value() == opts.samples.has_value()) {
    throw ConfigError("evaluate: give exactly one of a target name or a sample file");
  }
  const PiecewiseFlow flow = PiecewiseFlow::load(opts.model);
  std::map<std::string, std::string> kv;
  std::vector<std::string> order;
  auto put = [&](const std::string& k, const std::string& v) {
    kv[k] = v;
    order.push_back(k);
  };
  if (opts.target) {
    const auto target = make_target(*opts.target);
    if (target->dim() != flow.dim()) {
      throw ConfigError("evaluate: model has dimension " + std::to_string(flow.dim()) + ", target has " +
                        std::to_string(target->dim()));
    }
    const KlEstimate est = kl_divergence(flow, *target, opts.n, opts.seed);
    put("target", target->name());
    put("kl", format_double(est.value));
    put("kl_error", format_double(est.mc_error));
    put("n", std::to_string(est.n_samples));
    put("clipped", std::to_string(est.clipped));
  } else {
    const WeightedSampleSet data = load_samples(*opts.samples, opts.read);
    if (data.dim() != flow.dim()) {
      throw ConfigError("evaluate: model has dimension " + std::to_string(flow.dim()) + ", data has " +
                        std::to_string(data.dim()));
    }
    const LogLikelihood ll = avg_log_likelihood(flow, data);
    put("samples", opts.samples->string());
    put("avg_log_likelihood", format_double(ll.mean));
    put("two_sigma", format_double(ll.two_sigma));
    put("n", std::to_string(data.size()));
  }
  for (const auto& k : order) out << k << '=' << kv[k] << '\n';
  return kv;
}

/// Parses key=value lines, ignoring blanks.
inline std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("line " + std::to_string(line_no) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace pwflow::cli
