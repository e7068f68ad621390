#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sqp/model.hpp"
#include "sqp/quantizer.hpp"
#include "sqp/tensor.hpp"

namespace sqp::engine {

enum class WeightPrecision : std::uint8_t { Fp32, Int8 };

enum class ConvBackend : std::uint8_t {
  MaskedSum,  // add the kernel tap wherever the input bit is set
  BitPlane,   // int8 only: popcount(plane AND patch) per weight bit plane
};

std::string_view to_string(WeightPrecision p);
std::string_view to_string(ConvBackend b);
ConvBackend parse_backend(std::string_view name);  // masked-sum | bit-plane

struct EngineConfig {
  WeightPrecision conv_weights = WeightPrecision::Fp32;
  bool int8_dense_head = false;
  ConvBackend backend = ConvBackend::MaskedSum;

  /// One line, e.g. "conv=int8 dense=fp32 backend=masked-sum pool=global-avg".
  std::string describe() const;

  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

/// Binary C x H x W activation map, one bit-packed row per (channel, y).
struct PackedFeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  BitTensor bits;

  PackedFeatureMap() = default;
  PackedFeatureMap(std::size_t c, std::size_t h, std::size_t w);

  bool test(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return bits.test(c * height + y, x);
  }
  void set(std::size_t c, std::size_t y, std::size_t x) noexcept { bits.set(c * height + y, x); }

  friend bool operator==(const PackedFeatureMap&, const PackedFeatureMap&) = default;
};

/// [C, H, W] tensor of exact 0/1 values to packed form and back.
PackedFeatureMap pack_feature_map(const TensorF32& chw);
TensorF32 unpack_feature_map(const PackedFeatureMap& m);

/// 3x3, stride 1, zero pad 1 convolution of a binary map with fp32 kernels
/// [OC, C, 3, 3]. Each output starts at its bias and adds the taps whose
/// input bit is set, in (channel, ky, kx) order. Returns [OC, H, W].
TensorF32 conv_bam(const PackedFeatureMap& in, const TensorF32& weight, const TensorF32& bias);

/// Same with int8 kernels and int32 biases; the result is the int32
/// accumulator bias + sum of set taps.
Tensor<std::int32_t> conv_bam_int8(const PackedFeatureMap& in, const Tensor<std::int8_t>& weight,
                                   const Tensor<std::int32_t>& bias,
                                   ConvBackend backend = ConvBackend::MaskedSum);

/// Bit = 1 iff the value is >= 0.
PackedFeatureMap threshold_pack(const TensorF32& pre);
PackedFeatureMap threshold_pack(const Tensor<std::int32_t>& acc);

/// 2x2 OR pooling, odd trailing rows and columns dropped.
PackedFeatureMap maxpool_or(const PackedFeatureMap& in);

/// popcount / (H * W) per channel.
std::vector<float> global_avg(const PackedFeatureMap& in);

/// Optional per-inference record for tests and reports.
struct Trace {
  std::vector<PackedFeatureMap> conv_maps;  // thresholded output of each conv, before pooling
  std::vector<float> features;              // global average pool output
  std::uint64_t multiplies = 0;             // multiplications actually executed
};

/// Binary-activation inference. The first conv runs densely on the input
/// spectrogram (fp32, or uint8 x int8 with integer accumulation); every later
/// conv consumes packed maps. The dense head is fp32 unless int8_dense_head.
class PackedEngine {
 public:
  /// fp32 weights. The graph must have Heaviside convs and global average pooling.
  PackedEngine(EngineConfig cfg, const model::ModelGraph& g, const model::WeightSet<float>& w);
  /// int8 weights from a Packed-target quantized model.
  PackedEngine(EngineConfig cfg, const quant::QuantizedModel& q);

  float infer(std::span<const float> input, Trace* trace = nullptr) const;

  const EngineConfig& config() const noexcept { return cfg_; }
  const model::ModelGraph& graph() const noexcept { return graph_; }

 private:
  void check_graph() const;

  EngineConfig cfg_;
  model::ModelGraph graph_;
  model::WeightSet<float> weights_;  // effective fp32 weights (sign applied for binary kernels)
  bool has_quantized_ = false;
  quant::QuantizedModel q_;
};

/// Conventional 8-bit inference: unsigned 8-bit activations, int8 kernels,
/// int32 accumulation and per-layer requantization. Any graph.
class DenseInt8Engine {
 public:
  explicit DenseInt8Engine(const quant::QuantizedModel& q);
  float infer(std::span<const float> input) const;

 private:
  quant::QuantizedModel q_;
};

// ---------------------------------------------------------------------------
// Memory model

struct LayerMemory {
  std::string layer;
  std::size_t activations = 0;
  std::size_t bytes_fp32 = 0;
  std::size_t bytes_packed = 0;
};

/// Layer output activations plus the input. The fp32 column stores every
/// value in 4 bytes. The packed column stores binary conv maps at 1 bit, the
/// input at 1 byte (int8 input) or 4 bytes, and dense outputs at 1 byte
/// (int8 head) or 4 bytes.
struct MemoryReport {
  std::size_t input_elements = 0;
  std::size_t input_bytes_fp32 = 0;
  std::size_t input_bytes_packed = 0;
  std::vector<LayerMemory> layers;
  std::size_t total_fp32 = 0;
  std::size_t total_packed = 0;

  double ratio() const noexcept {
    return total_packed ? static_cast<double>(total_fp32) / static_cast<double>(total_packed) : 0.0;
  }
  /// One {layer, bytes_fp32, bytes_packed} line per entry, then the totals.
  std::string to_text() const;
};

MemoryReport memory_report(const model::ModelGraph& g, const EngineConfig& cfg);

// ---------------------------------------------------------------------------
// Latency benchmark

using InferFn = std::function<float(std::span<const float>)>;

struct NamedEngine {
  std::string name;
  InferFn infer;
};

struct BenchRow {
  std::string engine;
  std::size_t run = 0;
  double latency_us = 0.0;
};

struct BenchStats {
  std::string engine;
  std::size_t runs = 0;
  double median_us = 0.0;
  double mad_us = 0.0;  // median absolute deviation
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<BenchStats> stats;

  /// engine,run,latency_us
  std::string csv() const;
};

double median(std::vector<double> v);

/// Each engine runs `warmup` (>= 3) untimed inferences, then `runs` timed
/// ones cycling through `inputs`.
BenchResult benchmark(std::span<const NamedEngine> engines, std::span<const TensorF32> inputs,
                      std::size_t runs, std::size_t warmup = 3);

}  // namespace sqp::engine
