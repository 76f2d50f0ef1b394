#include <algorithm>

#include <benchmark/benchmark.h>

#include "sam/edit.hpp"
#include "sam/fixtures.hpp"
#include "sam/generator.hpp"
#include "sam/invertibility.hpp"
#include "sam/inversion.hpp"
#include "sam/perceptual.hpp"

namespace {

const sam::StyleGenerator& toy() {
  static const sam::GeneratorHandle g = sam::load_generator("toy", 7);
  return *g;
}

sam::LatentBundle quadrant_bundle() {
  const auto& g = toy();
  const sam::SegmentMap seg = sam::segment_image(sam::overlay_target(g, 1), "grid:2");
  sam::LayerAssignment a;
  a.spaces = {0, 1, 2, 4};
  return sam::make_bundle(g, g.initial_codes(), a, seg, sam::build_masks(a, seg, g));
}

void BM_Synthesize(benchmark::State& state) {
  const auto& g = toy();
  const sam::nn::Tensor codes = g.initial_codes();
  for (auto _ : state) benchmark::DoNotOptimize(sam::synthesize(g, codes));
}
BENCHMARK(BM_Synthesize);

void BM_FormImage(benchmark::State& state) {
  const sam::LatentBundle b = quadrant_bundle();
  for (auto _ : state) benchmark::DoNotOptimize(sam::form_image(toy(), b));
}
BENCHMARK(BM_FormImage);

void BM_ApplyEdit(benchmark::State& state) {
  const sam::LatentBundle b = quadrant_bundle();
  const auto dirs = sam::synthesize_table_directions(toy(), 500, 0);
  const auto& d = *std::find_if(dirs.begin(), dirs.end(), [](const auto& e) { return e.deepest_capable() == 4; });
  for (auto _ : state) benchmark::DoNotOptimize(sam::apply_edit(toy(), b, d, 1.0, false));
}
BENCHMARK(BM_ApplyEdit);

void BM_SegmentGraph(benchmark::State& state) {
  const sam::Image img = sam::overlay_target(toy(), 2);
  for (auto _ : state) benchmark::DoNotOptimize(sam::segment_graph(img));
}
BENCHMARK(BM_SegmentGraph);

void BM_Lpips(benchmark::State& state) {
  const sam::Image x = sam::overlay_target(toy(), 3);
  const sam::Image y = sam::generated_target(toy(), 3);
  for (auto _ : state) benchmark::DoNotOptimize(sam::lpips_vgg(x, y).value);
}
BENCHMARK(BM_Lpips);

void BM_InvertStep(benchmark::State& state) {
  const auto& g = toy();
  const sam::Image x = sam::overlay_target(g, 4);
  const sam::SegmentMap seg = sam::segment_image(x, "grid:2");
  sam::LayerAssignment a;
  a.spaces = {0, 1, 2, 4};
  const sam::MaskSet masks = sam::build_masks(a, seg, g);
  const sam::LatentPrior prior{sam::estimate_style_statistics(g, 500, 0)};
  sam::OptimizationConfig cfg;
  cfg.steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sam::invert(x, g, a, seg, masks, cfg, prior));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_InvertStep)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
