// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "ctssm/discretization.hpp"
#include "ctssm/inference.hpp"
#include "ctssm/kernels.hpp"
#include "ctssm/simulation.hpp"

using namespace ctssm;

namespace {

const SimulatedPanel &survey_panel() {
  static const SimulatedPanel panel = [] {
    PanelConfig cfg;
    cfg.individuals = 1000;
    cfg.dropout = 0.1;
    cfg.seed = 3;
    return generate_panel(cfg);
  }();
  return panel;
}

ModelSpec survey_spec(std::size_t m) {
  return ModelTemplate::negbin_spline(0.222, 1.489, 0.57, default_omega1(), default_omega2(),
                                      Grid(-9, 9, m))
      .build();
}

template <bool Parallel>
void BM_PanelLoglik(benchmark::State &state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const ModelSpec spec = survey_spec(m);
  const PanelDataset &panel = survey_panel().panel;
  MatrixCache cache;
  for (auto _ : state) {
    const double ll = Parallel ? kernels::parallel::panel_loglik(panel, spec, cache)
                               : kernels::serial::panel_loglik(panel, spec, cache);
    benchmark::DoNotOptimize(ll);
  }
  state.counters["observations"] = static_cast<double>(panel.observation_count());
}

template <bool Parallel>
void BM_TransitionMatrix(benchmark::State &state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const OUProcess proc(OUParams(0.5, 0.0, 0.5));
  const Grid grid(-3, 3, m);
  for (auto _ : state) {
    const TransitionMatrix tm = transition_matrix(proc, grid, 1.25, Parallel);
    benchmark::DoNotOptimize(tm.entries.data());
  }
}

void BM_SingleSequenceLoglik(benchmark::State &state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const ObservationSequence seq = generate_dataset(SimSetting::numbered(2, 2000, 1)).data;
  const ModelSpec spec{OUParams(0.5, 0.0, 0.5), PoissonScaleEmission(200.0), Grid(-2.5, 2.5, m), {}};
  MatrixCache cache;
  for (auto _ : state) benchmark::DoNotOptimize(forward_loglik(seq, spec, cache));
}

} // namespace

BENCHMARK(BM_PanelLoglik<false>)->Name("panel_loglik/serial")->Arg(50)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PanelLoglik<true>)->Name("panel_loglik/parallel")->Arg(50)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TransitionMatrix<false>)->Name("transition_matrix/serial")->Arg(100)->Arg(200)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_TransitionMatrix<true>)->Name("transition_matrix/parallel")->Arg(100)->Arg(200)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SingleSequenceLoglik)->Name("sequence_loglik")->Arg(50)->Arg(100)->Arg(150)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
