#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sqp/dataset.hpp"
#include "sqp/model.hpp"
#include "sqp/tensor.hpp"

namespace sqp::quant {

inline constexpr std::int32_t kWeightQmin = -128;
inline constexpr std::int32_t kWeightQmax = 127;
inline constexpr std::int32_t kActQmin = 0;
inline constexpr std::int32_t kActQmax = 255;
inline constexpr std::size_t kHistogramBins = 2048;

/// clamp(round_half_even(x / scale) + zero_point, qmin, qmax)
std::int32_t quantize_value(float x, float scale, std::int32_t zero_point, std::int32_t qmin,
                            std::int32_t qmax) noexcept;
/// (q - zero_point) * scale
float dequantize_value(std::int32_t q, float scale, std::int32_t zero_point) noexcept;

/// Quantizes per tensor or per slice along qp.axis. Values outside the grid clamp.
template <typename Int>
QuantizedTensor<Int> quantize(const TensorF32& x, const QuantParams& qp);
template <typename Int>
TensorF32 dequantize(const QuantizedTensor<Int>& q);

/// Unsigned 8-bit affine parameters covering [lo, hi], widened to contain 0
/// so that zero maps exactly onto the zero point.
QuantParams activation_params(float lo, float hi);

/// The grid used for Heaviside outputs: scale 1/255, zero point 0.
QuantParams binary_activation_params();

/// Running min/max over a 2,048-bin histogram. When a batch widens the range,
/// existing counts move to the new bin containing their old bin center.
class HistogramObserver {
 public:
  explicit HistogramObserver(std::size_t bins = kHistogramBins);

  /// Throws InvalidArgument on non-finite values.
  void observe(std::span<const float> values);

  bool empty() const noexcept { return total_ == 0; }
  std::size_t bins() const noexcept { return counts_.size(); }
  std::uint64_t total() const noexcept { return total_; }
  float min() const noexcept { return lo_; }
  float max() const noexcept { return hi_; }
  double bin_width() const noexcept;
  double bin_center(std::size_t i) const noexcept;
  std::span<const std::uint64_t> counts() const noexcept { return counts_; }

 private:
  std::size_t bin_of(double x) const noexcept;

  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
  float lo_ = 0.0F;
  float hi_ = 0.0F;
};

struct Range {
  float lo = 0.0F;
  float hi = 0.0F;
};

/// Sum over bins of count * (center - dq(q(center)))^2 for the unsigned 8-bit
/// grid spanning `r` (after widening to contain 0).
double range_objective(const HistogramObserver& obs, Range r);

/// Coarse-to-fine search over sub-ranges [edge(a), edge(b+1)] of the histogram
/// minimizing range_objective. The full range is always a candidate; ties go
/// to the wider range. The result contains 0. Throws on an empty observer.
Range range_search(const HistogramObserver& obs);

/// Per-slice running min and max along axis 0 (output channels for kernels).
class PerChannelObserver {
 public:
  explicit PerChannelObserver(std::size_t channels);

  void observe(const TensorF32& t);

  std::size_t channels() const noexcept { return mins_.size(); }
  std::span<const float> mins() const noexcept { return mins_; }
  std::span<const float> maxs() const noexcept { return maxs_; }

  /// Signed int8 parameters with zero point 0: scale = |min| / 128 when the
  /// negative side dominates, else max / 127, so the dominant extreme maps to
  /// -128 or 127. A channel that is identically zero gets scale 1.
  QuantParams symmetric_params() const;

 private:
  std::vector<float> mins_;
  std::vector<float> maxs_;
  bool seen_ = false;
};

/// Quantization parameters for every tensor edge of the network.
struct CalibrationTable {
  QuantParams input;                       // spectrogram, unsigned 8-bit
  std::vector<QuantParams> conv_weight;    // per output channel, signed 8-bit
  std::vector<QuantParams> conv_out;       // post-activation maps
  QuantParams features;                    // global pool output
  std::vector<QuantParams> dense_weight;   // per output unit
  std::vector<QuantParams> dense_out;      // post-activation outputs
  std::size_t samples = 0;                 // calibration records seen

  friend bool operator==(const CalibrationTable&, const CalibrationTable&) = default;
};

/// round(fraction * n) records (at least one) drawn without replacement by a
/// seeded shuffle, kept in their original order.
data::Dataset calibration_subset(const data::Dataset& train, double fraction, std::uint64_t seed);

/// Runs eval-mode forward passes over `calib` and derives the table: range
/// search on histogram observers for the input, conv outputs, pooled features
/// and dense outputs; min/max per channel for the weights. Heaviside outputs
/// get binary_activation_params(). Throws on an empty set.
CalibrationTable calibrate(const model::ModelGraph& g, const model::WeightSet<float>& w,
                           const data::Dataset& calib);

enum class Target : std::uint8_t {
  Packed,  // binary activation maps between convs (BAM graphs)
  Dense8,  // unsigned 8-bit activations everywhere (any graph)
};

/// Integer weights ready for an engine. Biases are int32 with scale equal to
/// weight scale times input scale; binary inputs count as scale 1.
struct QuantizedModel {
  model::ModelGraph graph;
  Target target = Target::Packed;
  CalibrationTable table;
  std::vector<TensorI8> conv_weight;
  std::vector<Tensor<std::int32_t>> conv_bias;
  std::vector<TensorI8> dense_weight;
  std::vector<Tensor<std::int32_t>> dense_bias;
  model::WeightSet<float> float_weights;  // source weights; fp32 heads read these
};

/// Scale of the quantity entering conv layer `li` / dense layer `li`.
float conv_input_scale(const QuantizedModel& m, std::size_t li);
float dense_input_scale(const QuantizedModel& m, std::size_t li);

/// Throws InvalidArgument when the table lacks an entry for some layer or a
/// Packed target is requested for a graph without Heaviside convs.
QuantizedModel quantize_model(const model::ModelGraph& g, const model::WeightSet<float>& w,
                              const CalibrationTable& table, Target target);

/// Float weights equal to the dequantized integer weights and biases.
model::WeightSet<float> dequantized_weights(const QuantizedModel& m);

}  // namespace sqp::quant
