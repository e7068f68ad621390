#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sqp/model.hpp"
#include "sqp/quantizer.hpp"
#include "sqp/tensor.hpp"

namespace sqp::io {

// SQPW layout, little-endian:
//   "SQPW" u32 version=1
//   u32 variant, u32 input_h, u32 input_w, f32 beta, u32 tensor_count
//   per tensor: u32 name_len, name, u8 dtype (0 f32, 1 i8, 2 i32),
//               u32 ndim, u32 dims[ndim], data
//   then optional sections: 4-byte tag, u32 byte_length, payload.
//   "QNT1": u32 target, u32 entry_count, per entry: u32 name_len, name,
//           u32 channels, u32 axis, i32 qmin, i32 qmax, f32 scale[channels],
//           i32 zero_point[channels]
// Unknown sections are skipped.

using AnyTensor = std::variant<TensorF32, Tensor<std::int8_t>, Tensor<std::int32_t>>;

struct Checkpoint {
  model::Variant variant = model::Variant::Baseline;
  std::size_t input_h = model::kDefaultInputH;
  std::size_t input_w = model::kDefaultInputW;
  float beta = 5.0F;
  std::vector<std::pair<std::string, AnyTensor>> tensors;
  std::optional<quant::Target> quant_target;
  std::vector<std::pair<std::string, QuantParams>> quant_params;

  const AnyTensor* find(std::string_view name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
/// Throws FormatError on bad magic, unsupported version, unknown dtype or truncation.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// fp32 weights of a network.
Checkpoint make_checkpoint(const model::ModelGraph& g, const model::WeightSet<float>& w);
/// fp32 weights plus a calibration table (QNT1) awaiting quantization.
Checkpoint make_checkpoint(const model::ModelGraph& g, const model::WeightSet<float>& w,
                           const quant::CalibrationTable& table, quant::Target target);
/// Integer weights, the fp32 source weights under "float." names, and the
/// calibration table in a QNT1 section.
Checkpoint make_checkpoint(const quant::QuantizedModel& q);

/// The graph described by the header (make_graph of variant, shape and beta).
model::ModelGraph graph_of(const Checkpoint& ck);

/// fp32 weights; reads "float."-prefixed tensors when the checkpoint is quantized.
/// Throws InvalidArgument when a tensor is missing or has the wrong shape.
model::WeightSet<float> weights_of(const Checkpoint& ck);

/// True when integer weights are present.
bool is_quantized(const Checkpoint& ck);
bool has_calibration(const Checkpoint& ck);
/// The QNT1 table. Throws InvalidArgument if absent or incomplete.
quant::CalibrationTable table_of(const Checkpoint& ck);
/// Throws InvalidArgument unless the checkpoint holds a complete quantized model.
quant::QuantizedModel quantized_of(const Checkpoint& ck);

}  // namespace sqp::io
