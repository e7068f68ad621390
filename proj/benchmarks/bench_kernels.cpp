#include <benchmark/benchmark.h>

#include "sqp/audio.hpp"
#include "sqp/dataset.hpp"
#include "sqp/engine.hpp"
#include "sqp/random.hpp"

using namespace sqp;

namespace {

engine::PackedFeatureMap random_map(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  TensorF32 t(Shape{c, h, w});
  for (auto& v : t.data()) v = rng.bernoulli(0.5) ? 1.0F : 0.0F;
  return engine::pack_feature_map(t);
}

// Layer shapes at 449 x 120: {in channels, out channels, H, W}.
constexpr std::int64_t kShapes[][4] = {{32, 32, 224, 60}, {32, 32, 112, 30}, {32, 64, 56, 15}};

void shape_args(benchmark::internal::Benchmark* b) {
  for (std::int64_t i = 0; i < 3; ++i) b->Arg(i);
}

void BM_ConvBamFp32(benchmark::State& st) {
  const auto* s = kShapes[st.range(0)];
  const auto in = random_map(s[0], s[2], s[3], 1);
  Rng rng(2);
  TensorF32 w(Shape{static_cast<std::size_t>(s[1]), static_cast<std::size_t>(s[0]), 3, 3});
  for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  const TensorF32 b(Shape{static_cast<std::size_t>(s[1])});
  for (auto _ : st) benchmark::DoNotOptimize(engine::conv_bam(in, w, b));
}
BENCHMARK(BM_ConvBamFp32)->Apply(shape_args)->Unit(benchmark::kMillisecond);

void BM_ConvBamInt8(benchmark::State& st) {
  const auto* s = kShapes[st.range(0)];
  const auto backend = st.range(1) ? engine::ConvBackend::BitPlane : engine::ConvBackend::MaskedSum;
  const auto in = random_map(s[0], s[2], s[3], 1);
  Rng rng(2);
  Tensor<std::int8_t> w(Shape{static_cast<std::size_t>(s[1]), static_cast<std::size_t>(s[0]), 3, 3});
  for (auto& v : w.data()) v = static_cast<std::int8_t>(static_cast<int>(rng.below(256)) - 128);
  const Tensor<std::int32_t> b(Shape{static_cast<std::size_t>(s[1])});
  for (auto _ : st) benchmark::DoNotOptimize(engine::conv_bam_int8(in, w, b, backend));
  st.SetLabel(std::string(engine::to_string(backend)));
}
BENCHMARK(BM_ConvBamInt8)->ArgsProduct({{0, 1, 2}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_MaxpoolOr(benchmark::State& st) {
  const auto in = random_map(32, 449, 120, 3);
  for (auto _ : st) benchmark::DoNotOptimize(engine::maxpool_or(in));
}
BENCHMARK(BM_MaxpoolOr)->Unit(benchmark::kMicrosecond);

void BM_ThresholdPack(benchmark::State& st) {
  Rng rng(4);
  TensorF32 pre(Shape{32, 449, 120});
  for (auto& v : pre.data()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto _ : st) benchmark::DoNotOptimize(engine::threshold_pack(pre));
}
BENCHMARK(BM_ThresholdPack)->Unit(benchmark::kMicrosecond);

void BM_GlobalAvg(benchmark::State& st) {
  const auto in = random_map(64, 56, 15, 5);
  for (auto _ : st) benchmark::DoNotOptimize(engine::global_avg(in));
}
BENCHMARK(BM_GlobalAvg);

void BM_LogMel9s(benchmark::State& st) {
  data::SynthConfig sc;
  const auto wave = data::synth_waveform(sc, 0);
  audio::Frontend fe;
  for (auto _ : st) benchmark::DoNotOptimize(fe.compute(wave));
}
BENCHMARK(BM_LogMel9s)->Unit(benchmark::kMillisecond);

}  // namespace
