#include <benchmark/benchmark.h>

#include "thermaco/interpret.hpp"
#include "thermaco/stream.hpp"
#include "thermaco/synthgen.hpp"
#include "thermaco/training.hpp"

using namespace thermaco;

namespace {

const SessionRecord& full_session() {
  static const SessionRecord s = [] {
    synth::SynthConfig c;
    c.n_participants = 1;
    return synth::generate_participant(c, 0);
  }();
  return s;
}

const std::vector<prep::PreparedWindow>& windows() {
  static const std::vector<prep::PreparedWindow> w = [] {
    return prep::prepare_session(prep::znorm_eda(full_session()), {});
  }();
  return w;
}

train::WindowSet window_set(std::size_t n) {
  train::WindowSet set;
  for (std::size_t i = 0; i < n; ++i) set.push_back(&windows()[i % windows().size()]);
  return set;
}

void BM_GenerateSession(benchmark::State& state) {
  synth::SynthConfig c;
  c.n_participants = 1;
  for (auto _ : state) benchmark::DoNotOptimize(synth::generate_participant(c, 0));
}
BENCHMARK(BM_GenerateSession)->Unit(benchmark::kMillisecond);

void BM_ExtractWindows(benchmark::State& state) {
  const auto& s = full_session();
  for (auto _ : state) benchmark::DoNotOptimize(prep::extract_windows(s, {}));
}
BENCHMARK(BM_ExtractWindows)->Unit(benchmark::kMillisecond);

void BM_ThermalInferDesk(benchmark::State& state) {
  ModelBundle<float> b(ModelConfig::desk(), TrainerKind::kCoteach, {1.0, 1.0}, 1);
  const auto& w = windows().front();
  for (auto _ : state) benchmark::DoNotOptimize(forward_infer(b, w.thermal));
}
BENCHMARK(BM_ThermalInferDesk)->Unit(benchmark::kMillisecond);

void BM_PredictBatch(benchmark::State& state) {
  ModelBundle<float> b(ModelConfig::desk(), TrainerKind::kCoteach, {1.0, 1.0}, 1);
  const auto batch = train::make_batch<float>(window_set(state.range(0)), 0, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(predict_proba(b, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PredictBatch)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_CoteachStep(benchmark::State& state) {
  train::TrainConfig cfg;
  ModelBundle<float> b(cfg.model, cfg.kind, cfg.weights, 1);
  const auto batch = train::make_batch<float>(window_set(32), 0, 32);
  std::mt19937_64 rng(1);
  for (auto _ : state) {
    b.zero_grad();
    benchmark::DoNotOptimize(train::compute_batch_loss(b, batch, cfg, &rng, true));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_CoteachStep)->Unit(benchmark::kMillisecond);

void BM_GridShapley(benchmark::State& state) {
  ModelBundle<float> b(ModelConfig::desk(), TrainerKind::kCoteach, {1.0, 1.0}, 1);
  const auto& w = windows().front();
  std::mt19937_64 rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(interpret::grid_shapley(b, w, {8, 8}, state.range(0), rng));
}
BENCHMARK(BM_GridShapley)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_StreamReplay(benchmark::State& state) {
  ModelBundle<float> b(ModelConfig::desk(), TrainerKind::kCoteach, {1.0, 1.0}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(stream::replay_benchmark(full_session(), b, {}, {}));
}
BENCHMARK(BM_StreamReplay)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
