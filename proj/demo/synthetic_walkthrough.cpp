// Small end-to-end run on the synthetic cohort: pretrain X-CGM-JEPA for a few
// epochs, embed the OGTT streams and probe the home-CGM regime against PCA.
//
//   cgmjepa_demo [epochs]

#include <cstdio>
#include <cstdlib>

#include "cgmjepa/glucodensity.hpp"
#include "cgmjepa/pipeline.hpp"

using namespace cgmjepa;

int main(int argc, char** argv) {
  const int epochs = argc > 1 ? std::atoi(argv[1]) : 10;

  const auto cohort = generate_synthetic(SynthSpec{});
  std::printf("cohort: %zu subjects, %zu series\n", cohort.split.subjects.size(), cohort.series.size());

  const auto windows = pipeline::pretrain_windows(cohort.series);
  GdCache cache;
  precompute_cache(windows, cache, 8, /*save=*/false);
  const auto examples = pipeline::make_examples(windows, &cache);

  TrainConfig tc;
  tc.mode = Mode::cross;
  tc.epochs = epochs;
  const auto t = pipeline::pretrain(examples, ModelConfig{}, tc, [](const EpochRecord& e) {
    std::printf("epoch %3d  L_total %.4f  L_CGM %.4f  L_GD %.4f\n", e.epoch, e.l_total, e.l_cgm, e.l_gd);
  });

  const auto traces = probe::prepare_traces(cohort.series, cohort.split.name);
  const auto reg = probe::RegimeName::home_cgm_in_domain;
  const auto ep = probe::Endpoint::ir;

  probe::ProtocolOptions opt;
  opt.seeds = 5;
  const auto jepa = probe::run_protocol(
      probe::make_input(probe::embed_all(t.state, traces), cohort.split, probe::regime(reg), ep), reg, ep, opt);
  opt.transform = probe::pca_transform();
  const auto pca = probe::run_protocol(
      probe::make_input(probe::trace_features(traces), cohort.split, probe::regime(reg), ep), reg, ep, opt);

  std::printf("home CGM, IR:  x_cgm_jepa AUROC %.3f +/- %.3f   pca AUROC %.3f +/- %.3f\n", jepa.auroc.mean,
              jepa.auroc.std, pca.auroc.mean, pca.auroc.std);
}
