#include <benchmark/benchmark.h>

#include "ugdet/detector.hpp"
#include "ugdet/eval.hpp"
#include "ugdet/losses.hpp"
#include "ugdet/synthdata.hpp"

using namespace ugdet;

namespace {

Scene make_scene() {
  DomainConfig cfg;
  return generate_domain(cfg, 1, 11, DomainTag::kSource)[0];
}

void BM_Forward(benchmark::State& state) {
  DetectorConfig cfg;
  DetectorParams p = DetectorParams::init(cfg, 3);
  Scene scene = make_scene();
  for (auto _ : state) {
    Tape tape;
    TapeParams tp = lift(tape, p, false);
    ForwardOut fo = forward(tape, tp, scene);
    benchmark::DoNotOptimize(fo.s2_cls.value().data());
  }
}
BENCHMARK(BM_Forward);

void BM_ForwardBackward(benchmark::State& state) {
  DetectorConfig cfg;
  DetectorParams p = DetectorParams::init(cfg, 3);
  Scene scene = make_scene();
  for (auto _ : state) {
    Tape tape;
    TapeParams tp = lift(tape, p, true);
    ForwardOut fo = forward(tape, tp, scene);
    auto m1 = match_targets(fo.anchor_boxes, scene.boxes, cfg.rpn_pos_thresh,
                            cfg.rpn_neg_thresh);
    auto m2 = match_targets(fo.proposals, scene.boxes, cfg.roi_pos_thresh,
                            cfg.roi_pos_thresh);
    LossBreakdown lb = supervised_loss(tape, fo, scene, m1, m2);
    tape.backward(lb.total);
    benchmark::DoNotOptimize(tape.grad(tp.seg[0]).data());
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_SceneGen(benchmark::State& state) {
  DomainConfig cfg;
  uint64_t seed = 0;
  for (auto _ : state) {
    auto scenes = generate_domain(cfg, 1, seed++, DomainTag::kSource);
    benchmark::DoNotOptimize(scenes[0].features.data());
  }
}
BENCHMARK(BM_SceneGen);

void BM_AveragePrecision(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 16.0);
  std::vector<ScoredBox> dets;
  std::vector<std::vector<Box>> gts(50);
  for (int s = 0; s < 50; ++s) {
    for (int i = 0; i < 8; ++i) {
      Box b{u(rng), u(rng), 1 + u(rng) / 8, 1 + u(rng) / 8};
      if (i < 4) gts[s].push_back(b);
      dets.push_back({u(rng) / 16.0, b, s});
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(average_precision(dets, gts, 0.5));
  }
}
BENCHMARK(BM_AveragePrecision);

}  // namespace

BENCHMARK_MAIN();
