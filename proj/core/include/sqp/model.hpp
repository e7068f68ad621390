#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sqp/random.hpp"
#include "sqp/tensor.hpp"

namespace sqp::model {

enum class ActivationKind : std::uint8_t {
  Identity,
  ReLU,
  Heaviside,  // 1 for x >= 0, else 0
  Relaxed,    // x / (1 + beta |x|), the smooth stand-in for Heaviside
};

enum class PoolKind : std::uint8_t { MaxPool2x2, GlobalMax, GlobalAvg };

/// Which member of the model family a graph describes.
enum class Variant : std::uint8_t {
  Baseline,          // ReLU convs, global max pooling
  Bam,               // Heaviside convs, global average pooling
  BamBinaryWeights,  // as Bam, conv kernels pass through sign(w) in {-1, +1}
  Relaxed,           // Heaviside swapped for its smooth relaxation
};

std::string_view to_string(Variant v);
std::string_view to_string(ActivationKind a);
std::string_view to_string(PoolKind p);
/// Accepts baseline | bam | bam-binary-weights | relaxed.
Variant parse_variant(std::string_view name);

inline constexpr std::size_t kConvLayers = 4;
inline constexpr std::size_t kDenseLayers = 3;
inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kDefaultInputH = 449;
inline constexpr std::size_t kDefaultInputW = 120;

struct ConvSpec {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;  // spatial size of input and output (same padding)
  std::size_t width = 0;
  ActivationKind activation = ActivationKind::ReLU;
  bool pool_after = false;  // 2x2 max pool (floor) followed by dropout
  bool binary_weights = false;

  std::size_t pooled_height() const noexcept { return pool_after ? height / 2 : height; }
  std::size_t pooled_width() const noexcept { return pool_after ? width / 2 : width; }
  std::size_t patch_size() const noexcept { return in_channels * kKernel * kKernel; }
  std::size_t pixels() const noexcept { return height * width; }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct DenseSpec {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  ActivationKind activation = ActivationKind::ReLU;

  friend bool operator==(const DenseSpec&, const DenseSpec&) = default;
};

/// The fixed four-conv, three-dense speech quality network.
struct ModelGraph {
  Variant variant = Variant::Baseline;
  std::size_t input_h = kDefaultInputH;
  std::size_t input_w = kDefaultInputW;
  std::vector<ConvSpec> convs;
  PoolKind final_pool = PoolKind::GlobalMax;
  std::vector<DenseSpec> dense;
  float dropout_p = 0.3F;
  float beta = 5.0F;  // steepness of the relaxed activation

  /// True when the conv activations are Heaviside or its relaxation.
  bool binarized() const noexcept;
  /// Throws InvalidArgument if a binarized graph does not end in GlobalAvg,
  /// a spatial dimension collapses to zero, or beta <= 0.
  void validate() const;

  friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

ModelGraph make_graph(Variant variant, std::size_t input_h = kDefaultInputH,
                      std::size_t input_w = kDefaultInputW, float beta = 5.0F);

/// Kernels and biases in a fixed order: conv1.weight, conv1.bias, ...,
/// conv4.bias, dense1.weight, dense1.bias, ..., dense3.bias.
/// Conv kernels are [out, in, 3, 3]; dense weights are [out, in].
template <typename T>
struct WeightSet {
  std::vector<std::string> names;
  std::vector<Tensor<T>> params;

  Tensor<T>& conv_weight(std::size_t i) { return params[2 * i]; }
  Tensor<T>& conv_bias(std::size_t i) { return params[2 * i + 1]; }
  Tensor<T>& dense_weight(std::size_t i) { return params[2 * (kConvLayers + i)]; }
  Tensor<T>& dense_bias(std::size_t i) { return params[2 * (kConvLayers + i) + 1]; }
  const Tensor<T>& conv_weight(std::size_t i) const { return params[2 * i]; }
  const Tensor<T>& conv_bias(std::size_t i) const { return params[2 * i + 1]; }
  const Tensor<T>& dense_weight(std::size_t i) const { return params[2 * (kConvLayers + i)]; }
  const Tensor<T>& dense_bias(std::size_t i) const { return params[2 * (kConvLayers + i) + 1]; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
  }

  /// Index of the parameter called `name`, if any.
  std::optional<std::size_t> find(std::string_view name) const;

  template <typename U>
  WeightSet<U> cast() const {
    WeightSet<U> out;
    out.names = names;
    for (const auto& p : params) out.params.push_back(p.template cast<U>());
    return out;
  }

  void set_zero() {
    for (auto& p : params) p.fill(T{0});
  }

  friend bool operator==(const WeightSet&, const WeightSet&) = default;
};

/// Zero-filled weights with the shapes `g` requires.
template <typename T>
WeightSet<T> zero_weights(const ModelGraph& g);

/// Kaiming-uniform (fan-in, ReLU gain) kernels and zero biases.
WeightSet<float> init_weights(const ModelGraph& g, std::uint64_t seed);

/// Throws InvalidArgument unless every tensor has the shape `g` requires.
template <typename T>
void check_weights(const ModelGraph& g, const WeightSet<T>& w);

struct Network {
  ModelGraph graph;
  WeightSet<float> weights;
};

/// The network at default input size (449 x 120) unless overridden.
Network build_dnsmos(Variant variant, std::uint64_t seed = 0,
                     std::size_t input_h = kDefaultInputH, std::size_t input_w = kDefaultInputW);

// ---------------------------------------------------------------------------
// Activations

inline float heaviside(float x) noexcept { return x >= 0.0F ? 1.0F : 0.0F; }

template <typename T>
inline T relaxed(T x, T beta) noexcept {
  return x / (T{1} + beta * (x < T{0} ? -x : x));
}

/// Derivative of the fast sigmoid relaxation: 1 / (beta |x| + 1)^2.
template <typename T>
inline T superspike_deriv(T x, T beta) noexcept {
  const T d = beta * (x < T{0} ? -x : x) + T{1};
  return T{1} / (d * d);
}

template <typename T>
inline T activate(ActivationKind kind, T x, T beta) noexcept {
  switch (kind) {
    case ActivationKind::Identity: return x;
    case ActivationKind::ReLU: return x > T{0} ? x : T{0};
    case ActivationKind::Heaviside: return x >= T{0} ? T{1} : T{0};
    case ActivationKind::Relaxed: return relaxed(x, beta);
  }
  return x;
}

/// Effective binary kernel value: -1 for w < 0, +1 otherwise.
template <typename T>
inline T sign_weight(T w) noexcept {
  return w < T{0} ? T{-1} : T{1};
}

// ---------------------------------------------------------------------------
// Reference forward pass

enum class Mode : std::uint8_t { Train, Eval };

template <typename T>
struct ConvCache {
  Tensor<T> cols;                         // patch matrix (patch_size x pixels)
  Tensor<T> pre;                          // out_channels x H x W
  Tensor<T> act;                          // activation(pre)
  std::vector<std::uint32_t> pool_index;  // argmax position in act per pooled cell
  Tensor<T> pooled;                       // after max pooling (pre-dropout)
  Tensor<T> dropout_scale;                // 0 or 1/(1-p) per pooled cell; empty in Eval
  Tensor<T> out;                          // input of the next layer
  Tensor<T> effective_weight;             // sign(w) when binary weights are on
};

/// Everything backprop needs from one forward call. Reused across calls to
/// avoid reallocating the large conv buffers.
template <typename T>
struct ForwardCache {
  Variant variant = Variant::Baseline;
  std::size_t input_h = 0;
  std::size_t input_w = 0;
  Mode mode = Mode::Eval;
  std::vector<ConvCache<T>> conv;
  std::vector<std::uint32_t> global_index;  // GlobalMax argmax per channel
  Tensor<T> features;                       // final pooled vector
  std::vector<Tensor<T>> dense_pre;
  std::vector<Tensor<T>> dense_out;
  T prediction{};
};

/// Scalar quality estimate for one H x W spectrogram. In Train mode dropout
/// masks are drawn from `rng` (required); in Eval mode dropout is off.
/// Throws InvalidArgument on shape mismatch or non-finite input.
template <typename T>
T forward(const ModelGraph& g, const WeightSet<T>& w, std::span<const T> input, Mode mode,
          Rng* rng, ForwardCache<T>& cache);

float forward(const ModelGraph& g, const WeightSet<float>& w, const TensorF32& input, Mode mode,
              Rng* rng, ForwardCache<float>& cache);

/// Eval-mode prediction without exposing the cache.
float predict(const ModelGraph& g, const WeightSet<float>& w, const TensorF32& input);
float predict(const ModelGraph& g, const WeightSet<float>& w, std::span<const float> input);

/// Same graph and weights with the conv activations replaced, e.g. the
/// post-training binarization of a trained baseline (Heaviside + GlobalAvg).
ModelGraph with_conv_activation(const ModelGraph& g, ActivationKind activation, PoolKind final_pool);

// ---------------------------------------------------------------------------
// Accounting

struct LayerCount {
  std::string name;
  Shape output_shape;  // H x W x C, or 1 x N for dense layers
  std::size_t params = 0;
  std::size_t macs = 0;
  std::size_t activations = 0;
};

struct ModelCount {
  std::vector<LayerCount> layers;
  std::size_t total_params = 0;
  std::size_t total_macs = 0;
  std::size_t total_activations = 0;
};

/// Per-layer parameters, multiply-adds and output activations. A conv output
/// element costs k*k*cin + 1 multiply-adds (the bias counts as one), a dense
/// output costs in + 1.
ModelCount count_table1(const ModelGraph& g);

}  // namespace sqp::model
