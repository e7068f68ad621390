#include <benchmark/benchmark.h>

#include "sqp/engine.hpp"
#include "sqp/model.hpp"
#include "sqp/quantizer.hpp"
#include "sqp/random.hpp"
#include "sqp/trainer.hpp"

using namespace sqp;

namespace {

TensorF32 random_input(std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  TensorF32 x(Shape{h, 120});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-10, 2));
  return x;
}

quant::QuantizedModel quantized(const model::ModelGraph& g, const model::WeightSet<float>& w,
                                quant::Target target) {
  std::vector<data::SampleRecord> recs;
  for (std::uint64_t i = 0; i < 4; ++i) recs.push_back({random_input(g.input_h, 10 + i), 2.0F, -1});
  return quant::quantize_model(g, w, quant::calibrate(g, w, data::make_dataset(std::move(recs))), target);
}

// range(0): input frames (449 full size, 149 desk scale).

void BM_Fp32Reference(benchmark::State& st) {
  const auto g = model::make_graph(model::Variant::Baseline, static_cast<std::size_t>(st.range(0)));
  const auto w = model::init_weights(g, 0);
  const auto x = random_input(g.input_h, 1);
  for (auto _ : st) benchmark::DoNotOptimize(model::predict(g, w, x));
}
BENCHMARK(BM_Fp32Reference)->Arg(449)->Arg(149)->Unit(benchmark::kMillisecond);

void BM_DenseInt8(benchmark::State& st) {
  const auto g = model::make_graph(model::Variant::Baseline, static_cast<std::size_t>(st.range(0)));
  const engine::DenseInt8Engine eng(quantized(g, model::init_weights(g, 0), quant::Target::Dense8));
  const auto x = random_input(g.input_h, 1);
  for (auto _ : st) benchmark::DoNotOptimize(eng.infer(x.data()));
}
BENCHMARK(BM_DenseInt8)->Arg(449)->Arg(149)->Unit(benchmark::kMillisecond);

void BM_PackedFp32(benchmark::State& st) {
  const auto g = model::make_graph(model::Variant::Bam, static_cast<std::size_t>(st.range(0)));
  const engine::PackedEngine eng({}, g, model::init_weights(g, 0));
  const auto x = random_input(g.input_h, 1);
  for (auto _ : st) benchmark::DoNotOptimize(eng.infer(x.data()));
}
BENCHMARK(BM_PackedFp32)->Arg(449)->Arg(149)->Unit(benchmark::kMillisecond);

void BM_PackedInt8(benchmark::State& st) {
  const auto g = model::make_graph(model::Variant::Bam, static_cast<std::size_t>(st.range(0)));
  const auto backend = st.range(1) ? engine::ConvBackend::BitPlane : engine::ConvBackend::MaskedSum;
  const engine::PackedEngine eng({engine::WeightPrecision::Int8, false, backend},
                                 quantized(g, model::init_weights(g, 0), quant::Target::Packed));
  const auto x = random_input(g.input_h, 1);
  for (auto _ : st) benchmark::DoNotOptimize(eng.infer(x.data()));
  st.SetLabel(std::string(engine::to_string(backend)));
}
BENCHMARK(BM_PackedInt8)->ArgsProduct({{449, 149}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& st) {
  const auto g = model::make_graph(model::Variant::Bam, 149);
  const auto w = model::init_weights(g, 0);
  const auto x = random_input(149, 1);
  model::ForwardCache<float> cache;
  auto grads = model::zero_weights<float>(g);
  Rng rng(2);
  for (auto _ : st) {
    const float p = model::forward<float>(g, w, x.data(), model::Mode::Train, &rng, cache);
    train::backward<float>(g, w, cache, p - 2.0F, {}, grads);
    benchmark::DoNotOptimize(grads.params[0].raw());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
