#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "protoseg/encoder.hpp"
#include "protoseg/patching.hpp"
#include "protoseg/prototype_head.hpp"

namespace {

using namespace protoseg;

Volume3D noise_volume(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  Volume3D v(d);
  for (float& x : v.data()) x = g(rng);
  return v;
}

LabelMask sparse_mask(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(0.05);
  LabelMask m(d);
  for (auto& x : m.data()) x = b(rng) ? 1 : 0;
  return m;
}

Dims bench_patch(const benchmark::State& state) {
  const int s = static_cast<int>(state.range(0));
  return {s, s, s / 2};
}

void BM_EncoderForward(benchmark::State& state) {
  const Parameters params = init_params(EncoderConfig{});
  const Volume3D patch = noise_volume(bench_patch(state), 1);
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, patch));
  state.SetItemsProcessed(state.iterations() * patch.dims().product());
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_EncoderForwardBackward(benchmark::State& state) {
  const Parameters params = init_params(EncoderConfig{});
  const Tensor input = Tensor::from_image(noise_volume(bench_patch(state), 2));
  for (auto _ : state) {
    TapedForward fw = forward_taped(params, input);
    benchmark::DoNotOptimize(backward(params, *fw.tape, fw.features));
  }
  state.SetItemsProcessed(state.iterations() * input.dims().product());
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Similarity(benchmark::State& state) {
  const Dims d{32, 32, 16};
  const int dim = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Tensor query(dim, d);
  for (double& x : query.data()) x = g(rng);
  std::vector<Prototype> protos(2);
  for (int k = 0; k < 2; ++k) {
    protos[k].class_id = k;
    protos[k].vector.resize(dim);
    for (double& x : protos[k].vector) x = g(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(predict(similarity(query, protos)));
  state.SetItemsProcessed(state.iterations() * d.product());
}
BENCHMARK(BM_Similarity)->Arg(16)->Arg(64);

void BM_MaskedAveragePool(benchmark::State& state) {
  const Dims d{16, 16, 8};
  const int shots = static_cast<int>(state.range(0));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<FeatureMap> feats;
  std::vector<LabelMask> masks;
  for (int s = 0; s < shots; ++s) {
    feats.emplace_back(16, d);
    for (double& x : feats.back().data()) x = g(rng);
    masks.push_back(sparse_mask(d, 10 + s));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(masked_average_pool(feats, masks, 1));
    benchmark::DoNotOptimize(background_prototype(feats, masks, 1));
  }
}
BENCHMARK(BM_MaskedAveragePool)->Arg(1)->Arg(5);

void BM_TileAndReconstruct(benchmark::State& state) {
  const Dims d{230, 230, 102};
  const Dims p{32, 32, 16};
  const Volume3D vol = noise_volume(d, 5);
  const auto mode = state.range(0) ? TilingMode::kDropPartial : TilingMode::kClamped;
  for (auto _ : state) {
    const TilingPlan plan = tile_non_overlapping(d, p, mode);
    const auto tiles = extract_tiles(plan, vol);
    std::vector<LabelMask> masks(tiles.size(), LabelMask(p));
    benchmark::DoNotOptimize(reconstruct(plan, masks));
  }
  state.SetItemsProcessed(state.iterations() * d.product());
}
BENCHMARK(BM_TileAndReconstruct)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
