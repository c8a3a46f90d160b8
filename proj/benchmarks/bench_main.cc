#include <benchmark/benchmark.h>

#include "unidps/losses/guidance.h"
#include "unidps/losses/matching.h"
#include "unidps/losses/total.h"
#include "unidps/metrics/metrics.h"
#include "unidps/model/model.h"
#include "unidps/scene/generator.h"

namespace {

using namespace unidps;

Scene bench_scene(std::size_t h, std::size_t w) {
  SceneConfig c;
  c.height = h;
  c.width = w;
  Rng rng(11);
  return generate_scene(c, rng);
}

void BM_HungarianMatch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor cost({n, n / 2});
  for (double& v : cost.data()) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(hungarian_match(cost));
}
BENCHMARK(BM_HungarianMatch)->Arg(20)->Arg(100);

void BM_PanopticQuality(benchmark::State& state) {
  const Scene gt = bench_scene(256, 512);
  PanopticMap pred = gt.panoptic;
  // Shift every row by a few pixels so matching has work to do.
  for (std::size_t y = 0; y < pred.height; ++y)
    for (std::size_t x = pred.width; x-- > 3;) pred.ids[y * pred.width + x] = pred.ids[y * pred.width + x - 3];
  for (auto _ : state) benchmark::DoNotOptimize(panoptic_stats(pred, gt.panoptic));
}
BENCHMARK(BM_PanopticQuality)->Unit(benchmark::kMicrosecond);

void BM_Dpq(benchmark::State& state) {
  const Scene gt = bench_scene(256, 512);
  DepthMap d = gt.depth;
  for (double& v : d.depth) v *= 1.2;
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_scene(gt.panoptic, d, gt));
}
BENCHMARK(BM_Dpq)->Unit(benchmark::kMillisecond);

void BM_SemanticGuidanceLevel(benchmark::State& state) {
  const Scene s = bench_scene(64, 128);
  const GridSize g{8, 16};
  std::vector<std::uint32_t> labels(g.area());
  for (std::size_t y = 0; y < g.height; ++y)
    for (std::size_t x = 0; x < g.width; ++x)
      labels[y * g.width + x] = s.panoptic.at(y * 8 + 3, x * 8 + 3);
  const PatchIndex index = build_semantic_patch_index(labels, g, 5);
  Rng rng(2);
  Tensor f({g.area(), 64});
  for (double& v : f.data()) v = rng.normal();
  for (auto _ : state) {
    Tensor grad = zeros_like(f);
    benchmark::DoNotOptimize(semantic_guidance_level(f, index, 0.3, grad));
  }
}
BENCHMARK(BM_SemanticGuidanceLevel)->Unit(benchmark::kMicrosecond);

void BM_ForwardModel(benchmark::State& state) {
  const Scene s = bench_scene(64, 128);
  const ModelConfig config;
  const ModelParams params = init_model(config, 3);
  for (auto _ : state) benchmark::DoNotOptimize(forward_model(s.image, params, config));
}
BENCHMARK(BM_ForwardModel)->Unit(benchmark::kMillisecond);

void BM_TrainingStepGradient(benchmark::State& state) {
  const Scene s = bench_scene(64, 128);
  const ModelConfig config;
  const ModelParams params = init_model(config, 3);
  const LossConfig loss;
  for (auto _ : state) {
    ModelParams grads = zeros_like(params);
    benchmark::DoNotOptimize(total_loss(s, params, config, loss, &grads));
  }
}
BENCHMARK(BM_TrainingStepGradient)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
