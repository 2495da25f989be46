#include <benchmark/benchmark.h>

#include "mapkit/assignment.hpp"
#include "mapkit/encoding.hpp"
#include "mapkit/losses.hpp"
#include "mapkit/map_encoder.hpp"
#include "mapkit/metrics.hpp"
#include "mapkit/model.hpp"
#include "mapkit/scenegen.hpp"

namespace {

using namespace mapkit;

std::vector<Point2> random_chain(Rng& rng, std::size_t n) {
  std::vector<Point2> pts(n);
  for (auto& p : pts) p = {rng.uniform(-30, 30), rng.uniform(-15, 15)};
  return pts;
}

void BM_Hungarian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  CostMatrix c(n, n);
  for (auto& v : c.data) v = rng.uniform(0.0, 10.0);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(c).total_cost);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Hungarian)->RangeMultiplier(2)->Range(4, 64)->Complexity();

void BM_Frechet(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const auto a = random_chain(rng, n), b = random_chain(rng, n);
  for (auto _ : state) benchmark::DoNotOptimize(frechet_distance(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Frechet)->RangeMultiplier(2)->Range(8, 128)->Complexity(benchmark::oNSquared);

void BM_Chamfer(benchmark::State& state) {
  Rng rng(3);
  const auto a = random_chain(rng, 20), b = random_chain(rng, 20);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer_distance(a, b));
}
BENCHMARK(BM_Chamfer);

void BM_GenerateScene(benchmark::State& state) {
  const GenConfig cfg;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_scene(seed++, cfg));
}
BENCHMARK(BM_GenerateScene);

void BM_GraphVector(benchmark::State& state) {
  const Scene s = generate_scene(4, GenConfig{});
  const LocalView view = crop_local_view(s.sd_map, s.ego);
  const EncodingConfig ecfg;
  for (auto _ : state) benchmark::DoNotOptimize(build_graph_vector(view, ecfg).data.data());
}
BENCHMARK(BM_GraphVector);

void BM_EncoderForward(benchmark::State& state) {
  const auto lines = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  const MapEncoder enc(MapEncoderConfig{}, rng);
  GraphVector gv{lines, kPointsPerLine, 39, std::vector<double>(lines * kPointsPerLine * 39)};
  for (auto& v : gv.data) v = rng.uniform(-1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(encode_map(gv, enc).data.data());
}
BENCHMARK(BM_EncoderForward)->Arg(4)->Arg(16)->Arg(40);

ModelConfig bench_model() {
  ModelConfig m;
  m.bev.resolution = 5.0;
  return m;
}

void BM_ModelForward(benchmark::State& state) {
  const ModelConfig m = bench_model();
  const Model model(m, 6);
  const PreparedScene p = prepare_scene(generate_scene(6, GenConfig{}), m, {});
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(model.forward(p.graph, p.ego_scene.traffic_elements, true).lane_points.values().data());
  }
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const ModelConfig m = bench_model();
  const Model model(m, 7);
  const PreparedScene p = prepare_scene(generate_scene(7, GenConfig{}), m, {});
  const SceneTargets t = build_targets(p.ego_scene, m.bev, p.ego_scene.traffic_elements);
  nn::ParameterSet params = model.parameters();
  for (auto _ : state) {
    params.zero_grad();
    const HeadOutputs out = model.forward(p.graph, p.ego_scene.traffic_elements, true);
    backward(total_loss(out, t, m.bev, CostWeights{}).total);
    Tape::current().clear();
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Evaluate(benchmark::State& state) {
  std::vector<Scene> truth;
  std::vector<ScenePrediction> preds;
  const EvalConfig cfg;
  for (std::uint64_t s = 0; s < 30; ++s) {
    truth.push_back(scene_in_ego_frame(generate_scene(s, GenConfig{})));
    preds.push_back(oracle_prediction(truth.back(), cfg));
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(truth, preds, cfg).olus);
}
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
