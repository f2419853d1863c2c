#include <benchmark/benchmark.h>

#include "epiflow/dataset.hpp"
#include "epiflow/epigraph_values.hpp"
#include "epiflow/evaluation.hpp"
#include "epiflow/flow_policy.hpp"
#include "epiflow/mlp.hpp"

using namespace epiflow;

static void BM_MlpForward(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  const int batch = static_cast<int>(state.range(1));
  Mlp net({5, width, width, 1}, 1);
  Matrix x = Matrix::Random(5, batch);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpForward)->ArgsProduct({{64, 128, 256}, {1, 256}});

static void BM_MlpForwardBackward(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  Mlp net({5, width, width, 1}, 1);
  Matrix x = Matrix::Random(5, 256);
  Matrix g = Matrix::Ones(1, 256);
  ForwardCache cache;
  for (auto _ : state) {
    net.forward(x, cache);
    benchmark::DoNotOptimize(net.backward(cache, g));
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(64)->Arg(128)->Arg(256);

static const OfflineDataset& small_dataset() {
  static const OfflineDataset ds = generate(EnvConfig{}, 50, 400, 3);
  return ds;
}

// One full value-training step (all nine networks) per iteration.
static void BM_ValueTrainingStep(benchmark::State& state) {
  ValueTrainConfig cfg;
  const int width = static_cast<int>(state.range(0));
  cfg.hidden = {width, width};
  cfg.steps = 1;
  cfg.log_every = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_values(small_dataset(), cfg));
}
BENCHMARK(BM_ValueTrainingStep)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

// Per-state action sampling for a batch of 200 states at N candidates.
static void BM_SampleActions(benchmark::State& state) {
  ValueTrainConfig vc;
  vc.hidden = {128, 128};
  vc.steps = 0;
  const auto& ds = small_dataset();
  const ValueBundle bundle(vc, InputScaling::from(ds.meta.env.box, ds.z_min, ds.z_max), ds.z_min, ds.z_max);
  ThresholdConfig tc{ds.z_min, ds.z_max, 32, static_cast<int>(state.range(1))};
  const AdvantageEvaluator adv(bundle, tc);
  FlowPolicy p;
  p.config.candidates = static_cast<int>(state.range(0));
  p.config.hidden = {128, 128};
  p.scaling = bundle.scaling;
  p.net = Mlp({5, 128, 128, 2}, 2);
  std::vector<State> states(200, State{0.0, 0.0});
  std::vector<Rng> rngs(200);
  std::vector<Rng*> ptrs;
  for (auto& r : rngs) ptrs.push_back(&r);
  for (auto _ : state) benchmark::DoNotOptimize(sample_actions(p, adv, states, ptrs));
  state.SetItemsProcessed(state.iterations() * 200);
}
BENCHMARK(BM_SampleActions)->ArgsProduct({{1, 8, 128}, {0, 64}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
