#include <map>
#include <random>

#include <benchmark/benchmark.h>

#include "facerig/adapter.hpp"
#include "facerig/animation.hpp"
#include "facerig/datagen.hpp"
#include "facerig/fitter.hpp"
#include "facerig/model.hpp"
#include "facerig/rig.hpp"

using namespace facerig;

namespace {

const MorphableModel& model() {
  static const MorphableModel m = generate_synthetic_model(1, 500);
  return m;
}

const CharacterRig& rig(int k) {
  static std::map<int, CharacterRig> rigs;
  auto it = rigs.find(k);
  if (it == rigs.end()) {
    SyntheticRigOptions o;
    o.blendshapes = k;
    o.seed = 2;
    it = rigs.emplace(k, generate_synthetic_rig(model(), o)).first;
  }
  return it->second;
}

}  // namespace

static void BM_SynthesizeShape(benchmark::State& state) {
  const IdentityParams beta = IdentityParams::zero(model().identity_dim());
  ExpressionParams gamma;
  gamma.values.setConstant(0.01);
  for (auto _ : state) benchmark::DoNotOptimize(synthesize_shape(model(), beta, gamma));
}
BENCHMARK(BM_SynthesizeShape);

static void BM_FitFrame(benchmark::State& state) {
  const CharacterRig& r = rig(25);
  SyntheticSequenceOptions so;
  so.frames = 1;
  so.noise = 0.5;
  const auto frames = generate_synthetic_sequence(r, so).landmarks.camera_frames();
  const IdentityParams beta = IdentityParams::zero(model().identity_dim());
  for (auto _ : state) benchmark::DoNotOptimize(fit(model(), beta, frames[0]));
}
BENCHMARK(BM_FitFrame)->Unit(benchmark::kMicrosecond);

static void BM_AdapterForward(benchmark::State& state) {
  AdapterConfig c;
  c.out_dim = static_cast<int>(state.range(0));
  const AdapterNet net = AdapterNet::initialized(c, 1);
  ExpressionParams g;
  g.values.setConstant(0.1);
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, g));
}
BENCHMARK(BM_AdapterForward)->Arg(25)->Arg(66)->Arg(113);

static void BM_TrainEpoch(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  DatasetOptions d;
  d.count = 1000;
  d.split = {1000, 0, 0};
  const GeneratedDataset ds = generate_dataset(rig(k), model(), {}, d);
  AdapterConfig c;
  c.out_dim = k;
  TrainConfig t;
  t.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(c, t, ds));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_TrainEpoch)->Arg(25)->Arg(113)->Unit(benchmark::kMillisecond);

static void BM_ApplyBlendweights(benchmark::State& state) {
  const CharacterRig& r = rig(113);
  BlendWeights a{Eigen::VectorXd::Constant(113, 0.3)};
  for (auto _ : state) benchmark::DoNotOptimize(apply_blendweights(r, a));
}
BENCHMARK(BM_ApplyBlendweights);

BENCHMARK_MAIN();
