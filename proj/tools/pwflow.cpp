// pwflow: benchmark, train, sample and evaluate piecewise normalizing flows.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include <pwflow/commands.hpp>

namespace {

using namespace pwflow;

struct FlowFlags {
  std::string hidden = "32,32";
  std::size_t blocks = 2;
  std::optional<std::size_t> clusters;
  std::string auto_k = "2..12";
  TrainingConfig training;
};

void add_flow_flags(CLI::App& cmd, FlowFlags& f) {
  auto* k = cmd.add_option("--clusters", f.clusters, "Fixed number of clusters");
  cmd.add_option("--auto-k", f.auto_k, "Silhouette scan range MIN..MAX")->capture_default_str()->excludes(k);
  cmd.add_option("--hidden", f.hidden, "Single-flow hidden widths W,W")->capture_default_str();
  cmd.add_option("--blocks", f.blocks, "MADE blocks per flow")->capture_default_str()->check(CLI::PositiveNumber);
  cmd.add_option("--max-epochs", f.training.max_epochs, "Epoch cap")->capture_default_str();
  cmd.add_option("--patience-frac", f.training.patience_fraction, "Patience as a fraction of --max-epochs")
      ->capture_default_str();
  cmd.add_option("--test-frac", f.training.test_fraction, "Held-out fraction")->capture_default_str();
  cmd.add_option("--lr", f.training.learning_rate, "ADAM learning rate")->capture_default_str();
  cmd.add_option("--batch-size", f.training.batch_size, "Mini-batch size, 0 for full batch")->capture_default_str();
}

FlowArchitecture architecture(const FlowFlags& f) { return {cli::parse_widths(f.hidden), f.blocks}; }

cli::ClusterChoice cluster_choice(const FlowFlags& f) {
  cli::ClusterChoice c;
  if (f.clusters) {
    c.clusters = f.clusters;
  } else {
    std::tie(c.k_min, c.k_max) = cli::parse_k_range(f.auto_k);
  }
  return c;
}

SampleReadOptions read_options(bool weighted, bool unweighted) {
  SampleReadOptions r;
  if (weighted) r.weight_column = true;
  if (unweighted) r.weight_column = false;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training allocates and frees many mid-sized matrices per step; keep them
  // on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif

  CLI::App app{"Piecewise normalizing flows: clustering plus one masked autoregressive flow per cluster"};
  app.require_subcommand(1);

  // benchmark
  cli::BenchmarkOptions bench;
  FlowFlags bench_flags;
  std::vector<std::string> bench_targets;
  std::size_t bench_maf_runs = 0;
  std::string bench_out = "pwflow-benchmark";
  auto* b = app.add_subcommand("benchmark", "Single MAF versus PNF on the toy targets");
  b->add_option("--target", bench_targets, "Targets (two_moons, circle_of_gaussians, two_rings); default all")
      ->delimiter(',');
  b->add_option("--runs", bench.runs, "Training runs per method")->capture_default_str();
  b->add_option("--maf-runs", bench_maf_runs, "Single-MAF runs per target (default --runs)");
  b->add_option("--seed", bench.seed, "Master seed")->capture_default_str();
  b->add_option("--samples", bench.training_samples, "Training samples per target")->capture_default_str();
  b->add_option("--kl-samples", bench.kl_samples, "Flow samples per KL estimate")->capture_default_str();
  b->add_option("--out", bench_out, "Output directory")->capture_default_str();
  add_flow_flags(*b, bench_flags);

  // train
  cli::TrainOptions train;
  FlowFlags train_flags;
  std::string train_input, train_out = "model.pnf";
  bool train_weighted = false, train_unweighted = false, no_parity = false;
  auto* t = app.add_subcommand("train", "Train a PNF on a sample file");
  t->add_option("input", train_input, "Sample file (delimited text or binary)")->required();
  t->add_option("--out", train_out, "Model file")->capture_default_str();
  t->add_option("--seed", train_flags.training.seed, "Seed")->capture_default_str();
  auto* tw = t->add_flag("--weights", train_weighted, "Last column holds sample weights");
  t->add_flag("--no-weights", train_unweighted, "No weight column even if the header names one")->excludes(tw);
  t->add_flag("--no-parity", no_parity, "Use --hidden per component instead of splitting the parameter budget");
  add_flow_flags(*t, train_flags);

  // sample
  cli::SampleOptions sample;
  std::string sample_model, sample_out = "samples.csv";
  auto* s = app.add_subcommand("sample", "Draw from a trained model");
  s->add_option("model", sample_model, "Model file")->required();
  s->add_option("-n", sample.n, "Number of draws")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--seed", sample.seed, "Seed")->capture_default_str();
  s->add_option("--out", sample_out, "Output sample file")->capture_default_str();
  s->add_flag("--provenance", sample.provenance, "Append the component index and base point per draw");

  // evaluate
  cli::EvaluateOptions eval;
  std::string eval_model, eval_target, eval_samples;
  bool eval_weighted = false, eval_unweighted = false;
  auto* e = app.add_subcommand("evaluate", "KL against a toy target or log-likelihood of a sample file");
  e->add_option("model", eval_model, "Model file")->required();
  auto* et = e->add_option("--target", eval_target, "Analytic target name");
  auto* es = e->add_option("--samples", eval_samples, "Held-out sample file");
  et->excludes(es);
  e->add_option("-n", eval.n, "Flow samples for the KL estimate")->capture_default_str();
  e->add_option("--seed", eval.seed, "Seed")->capture_default_str();
  auto* ew = e->add_flag("--weights", eval_weighted, "Last column holds sample weights");
  e->add_flag("--no-weights", eval_unweighted, "No weight column")->excludes(ew);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? cli::kSuccess : cli::kUsage;
  }

  try {
    if (*b) {
      bench.architecture = architecture(bench_flags);
      bench.clusters = cluster_choice(bench_flags);
      bench.training = bench_flags.training;
      if (!bench_targets.empty()) bench.targets = bench_targets;
      if (bench_maf_runs > 0) bench.maf_runs = bench_maf_runs;
      bench.out_dir = bench_out;
      const auto report = cli::cmd_benchmark(bench, &std::cerr);
      std::cout << cli::format_metrics(report.rows);
      return report.all_ok() ? cli::kSuccess : cli::kTrainingFailure;
    }
    if (*t) {
      train.input = train_input;
      train.model_out = train_out;
      train.read = read_options(train_weighted, train_unweighted);
      train.architecture = architecture(train_flags);
      train.clusters = cluster_choice(train_flags);
      train.training = train_flags.training;
      train.parity = !no_parity;
      cli::cmd_train(train, std::cout);
      return cli::kSuccess;
    }
    if (*s) {
      sample.model = sample_model;
      sample.out = sample_out;
      const auto draw = cli::cmd_sample(sample);
      std::cout << "samples=" << draw.samples.size() << "\nout=" << sample.out.string() << '\n';
      return cli::kSuccess;
    }
    if (*e) {
      eval.model = eval_model;
      if (!eval_target.empty()) eval.target = eval_target;
      if (!eval_samples.empty()) eval.samples = eval_samples;
      eval.read = read_options(eval_weighted, eval_unweighted);
      cli::cmd_evaluate(eval, std::cout);
      return cli::kSuccess;
    }
  } catch (const TrainingError& err) {
    std::cerr << "training failed: " << err.what() << '\n';
    return cli::kTrainingFailure;
  } catch (const ComponentTrainingError& err) {
    std::cerr << "training failed: " << err.what() << '\n';
    return cli::kTrainingFailure;
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return cli::kUsage;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return cli::kDataError;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return cli::kDataError;
  }
  return cli::kUsage;
}
