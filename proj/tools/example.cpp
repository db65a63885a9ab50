// Fits a piecewise flow to the two-rings target and reports its KL divergence
// next to a single MAF trained on the same samples.

#include <iostream>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <pwflow/evaluation.hpp>
#include <pwflow/piecewise.hpp>
#include <pwflow/targets.hpp>

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  using namespace pwflow;
  const std::size_t max_epochs = argc > 1 ? std::stoul(argv[1]) : 2000;

  const auto target = two_rings();
  const WeightedSampleSet data = target->sample(10000, 1);

  TrainingConfig cfg;
  cfg.max_epochs = max_epochs;
  cfg.seed = 2;

  PiecewiseOptions pnf;  // silhouette scan over k in [2, 12], parity-matched widths
  const PiecewiseFit piecewise = fit(data, cfg, pnf);

  PiecewiseOptions single;
  single.clusters = 1;
  const PiecewiseFit maf = fit(data, cfg, single);

  for (const auto* f : {&maf, &piecewise}) {
    const KlEstimate kl = kl_divergence(f->flow, *target, 10000, 3);
    std::cout << (f == &maf ? "maf" : "pnf") << ": k=" << f->flow.size() << " parameters=" << f->flow.parameter_count()
              << " KL=" << kl.value << " +- " << kl.mc_error << " cost=" << training_cost(f->reports) << '\n';
  }
  piecewise.flow.save("two_rings.pnf");
  std::cout << "saved two_rings.pnf\n";
}
