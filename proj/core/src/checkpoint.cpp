#include "sqp/checkpoint.hpp"

#include "byte_io.hpp"

namespace sqp::io {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxDims = 8;
constexpr const char* kFloatPrefix = "float.";

enum class DType : std::uint8_t { F32 = 0, I8 = 1, I32 = 2 };

template <typename T>
void write_tensor(detail::ByteWriter& w, DType dt, const Tensor<T>& t) {
  w.write_u8(static_cast<std::uint8_t>(dt));
  w.write_u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.write_u32(static_cast<std::uint32_t>(d));
  w.write_array(t.data());
}

template <typename T>
Tensor<T> read_tensor(detail::ByteReader& r, const Shape& shape) {
  Tensor<T> t(shape);
  r.read_array(t.data());
  return t;
}

void write_name(detail::ByteWriter& w, const std::string& s) {
  w.write_u32(static_cast<std::uint32_t>(s.size()));
  w.write_string(s);
}

std::string read_name(detail::ByteReader& r) { return r.read_string(r.read_u32()); }

std::vector<std::uint8_t> encode_qnt1(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.write_u32(static_cast<std::uint32_t>(*ck.quant_target));
  w.write_u32(static_cast<std::uint32_t>(ck.quant_params.size()));
  for (const auto& [name, qp] : ck.quant_params) {
    write_name(w, name);
    w.write_u32(static_cast<std::uint32_t>(qp.channels()));
    w.write_u32(static_cast<std::uint32_t>(qp.axis));
    w.write_i32(qp.qmin);
    w.write_i32(qp.qmax);
    w.write_array(std::span<const float>(qp.scale));
    w.write_array(std::span<const std::int32_t>(qp.zero_point));
  }
  return std::move(w).take();
}

void decode_qnt1(std::span<const std::uint8_t> bytes, Checkpoint& ck) {
  detail::ByteReader r(bytes, "SQPW QNT1 section");
  const std::uint32_t target = r.read_u32();
  if (target > static_cast<std::uint32_t>(quant::Target::Dense8)) {
    throw FormatError("SQPW: unknown quantization target " + std::to_string(target));
  }
  ck.quant_target = static_cast<quant::Target>(target);
  const std::uint32_t n = r.read_u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = read_name(r);
    QuantParams qp;
    const std::uint32_t channels = r.read_u32();
    if (channels == 0 || channels > r.remaining()) {
      throw FormatError("SQPW: bad channel count for quant entry '" + name + "'");
    }
    qp.axis = r.read_u32();
    qp.qmin = r.read_i32();
    qp.qmax = r.read_i32();
    qp.scale.resize(channels);
    qp.zero_point.resize(channels);
    r.read_array(std::span<float>(qp.scale));
    r.read_array(std::span<std::int32_t>(qp.zero_point));
    try {
      qp.validate();
    } catch (const InvalidArgument& e) {
      throw FormatError("SQPW: quant entry '" + name + "': " + e.what());
    }
    ck.quant_params.emplace_back(std::move(name), std::move(qp));
  }
  if (r.remaining() != 0) throw FormatError("SQPW: trailing bytes in QNT1 section");
}

}  // namespace

const AnyTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.write_tag("SQPW");
  w.write_u32(kVersion);
  w.write_u32(static_cast<std::uint32_t>(ck.variant));
  w.write_u32(static_cast<std::uint32_t>(ck.input_h));
  w.write_u32(static_cast<std::uint32_t>(ck.input_w));
  w.write_f32(ck.beta);
  w.write_u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    write_name(w, name);
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, TensorF32>) write_tensor(w, DType::F32, x);
          else if constexpr (std::is_same_v<T, Tensor<std::int8_t>>) write_tensor(w, DType::I8, x);
          else write_tensor(w, DType::I32, x);
        },
        t);
  }
  if (ck.quant_target) {
    const auto payload = encode_qnt1(ck);
    w.write_tag("QNT1");
    w.write_u32(static_cast<std::uint32_t>(payload.size()));
    w.write_array(std::span<const std::uint8_t>(payload));
  }
  return std::move(w).take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "SQPW");
  if (r.read_tag() != "SQPW") throw FormatError("SQPW: bad magic");
  const std::uint32_t version = r.read_u32();
  if (version != kVersion) throw FormatError("SQPW: unsupported version " + std::to_string(version));
  Checkpoint ck;
  const std::uint32_t variant = r.read_u32();
  if (variant > static_cast<std::uint32_t>(model::Variant::Relaxed)) {
    throw FormatError("SQPW: unknown model variant " + std::to_string(variant));
  }
  ck.variant = static_cast<model::Variant>(variant);
  ck.input_h = r.read_u32();
  ck.input_w = r.read_u32();
  ck.beta = r.read_f32();
  const std::uint32_t count = r.read_u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_name(r);
    const auto dt = r.read_u8();
    const std::uint32_t ndim = r.read_u32();
    if (ndim > kMaxDims) throw FormatError("SQPW: tensor '" + name + "' has too many dimensions");
    Shape shape(ndim);
    for (auto& d : shape) d = r.read_u32();
    const std::size_t n = shape_numel(shape);
    switch (static_cast<DType>(dt)) {
      case DType::F32:
        if (n * 4 > r.remaining()) throw FormatError("SQPW: tensor '" + name + "' is truncated");
        ck.tensors.emplace_back(std::move(name), read_tensor<float>(r, shape));
        break;
      case DType::I8:
        if (n > r.remaining()) throw FormatError("SQPW: tensor '" + name + "' is truncated");
        ck.tensors.emplace_back(std::move(name), read_tensor<std::int8_t>(r, shape));
        break;
      case DType::I32:
        if (n * 4 > r.remaining()) throw FormatError("SQPW: tensor '" + name + "' is truncated");
        ck.tensors.emplace_back(std::move(name), read_tensor<std::int32_t>(r, shape));
        break;
      default:
        throw FormatError("SQPW: tensor '" + name + "' has unknown dtype " + std::to_string(dt));
    }
  }
  while (r.remaining() > 0) {
    const std::string tag = r.read_tag();
    const std::uint32_t len = r.read_u32();
    if (len > r.remaining()) throw FormatError("SQPW: section '" + tag + "' is truncated");
    const auto payload = bytes.subspan(r.position(), len);
    r.skip(len);
    if (tag == "QNT1") decode_qnt1(payload, ck);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  detail::write_file(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

Checkpoint make_checkpoint(const model::ModelGraph& g, const model::WeightSet<float>& w) {
  model::check_weights(g, w);
  Checkpoint ck;
  ck.variant = g.variant;
  ck.input_h = g.input_h;
  ck.input_w = g.input_w;
  ck.beta = g.beta;
  for (std::size_t i = 0; i < w.params.size(); ++i) ck.tensors.emplace_back(w.names[i], w.params[i]);
  return ck;
}

namespace {

std::vector<std::pair<std::string, QuantParams>> table_entries(const model::ModelGraph& g,
                                                               const quant::CalibrationTable& t) {
  std::vector<std::pair<std::string, QuantParams>> e;
  e.emplace_back("input", t.input);
  for (std::size_t i = 0; i < g.convs.size(); ++i) {
    e.emplace_back(g.convs[i].name + ".weight", t.conv_weight.at(i));
    e.emplace_back(g.convs[i].name + ".out", t.conv_out.at(i));
  }
  e.emplace_back("features", t.features);
  for (std::size_t i = 0; i < g.dense.size(); ++i) {
    e.emplace_back(g.dense[i].name + ".weight", t.dense_weight.at(i));
    e.emplace_back(g.dense[i].name + ".out", t.dense_out.at(i));
  }
  return e;
}

}  // namespace

Checkpoint make_checkpoint(const model::ModelGraph& g, const model::WeightSet<float>& w,
                           const quant::CalibrationTable& table, quant::Target target) {
  Checkpoint ck = make_checkpoint(g, w);
  ck.quant_target = target;
  ck.quant_params = table_entries(g, table);
  return ck;
}

Checkpoint make_checkpoint(const quant::QuantizedModel& q) {
  const auto& g = q.graph;
  Checkpoint ck = make_checkpoint(g, q.float_weights);
  for (auto& [name, t] : ck.tensors) name = kFloatPrefix + name;
  for (std::size_t i = 0; i < g.convs.size(); ++i) {
    ck.tensors.emplace_back(g.convs[i].name + ".weight", q.conv_weight[i].values);
    ck.tensors.emplace_back(g.convs[i].name + ".bias", q.conv_bias[i]);
  }
  for (std::size_t i = 0; i < g.dense.size(); ++i) {
    ck.tensors.emplace_back(g.dense[i].name + ".weight", q.dense_weight[i].values);
    ck.tensors.emplace_back(g.dense[i].name + ".bias", q.dense_bias[i]);
  }
  ck.quant_target = q.target;
  ck.quant_params = table_entries(g, q.table);
  return ck;
}

model::ModelGraph graph_of(const Checkpoint& ck) {
  return model::make_graph(ck.variant, ck.input_h, ck.input_w, ck.beta);
}

bool is_quantized(const Checkpoint& ck) {
  const AnyTensor* t = ck.find("conv1.weight");
  return t && std::holds_alternative<Tensor<std::int8_t>>(*t);
}

bool has_calibration(const Checkpoint& ck) { return ck.quant_target.has_value(); }

namespace {

template <typename T>
const Tensor<T>& get(const Checkpoint& ck, const std::string& name) {
  const AnyTensor* t = ck.find(name);
  if (!t) throw InvalidArgument("checkpoint: missing tensor '" + name + "'");
  const auto* typed = std::get_if<Tensor<T>>(t);
  if (!typed) throw InvalidArgument("checkpoint: tensor '" + name + "' has the wrong dtype");
  return *typed;
}

const QuantParams& get_qp(const Checkpoint& ck, const std::string& name) {
  for (const auto& [n, qp] : ck.quant_params) {
    if (n == name) return qp;
  }
  throw InvalidArgument("checkpoint: missing quantization parameters '" + name + "'");
}

}  // namespace

model::WeightSet<float> weights_of(const Checkpoint& ck) {
  const auto g = graph_of(ck);
  auto w = model::zero_weights<float>(g);
  const std::string prefix = is_quantized(ck) ? kFloatPrefix : "";
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    const auto& t = get<float>(ck, prefix + w.names[i]);
    if (t.shape() != w.params[i].shape()) {
      throw InvalidArgument("checkpoint: tensor '" + w.names[i] + "' has shape " +
                            shape_to_string(t.shape()) + ", expected " +
                            shape_to_string(w.params[i].shape()));
    }
    w.params[i] = t;
  }
  return w;
}

quant::CalibrationTable table_of(const Checkpoint& ck) {
  if (!has_calibration(ck)) throw InvalidArgument("checkpoint: no calibration table");
  const auto g = graph_of(ck);
  quant::CalibrationTable t;
  t.input = get_qp(ck, "input");
  t.features = get_qp(ck, "features");
  for (const auto& c : g.convs) {
    t.conv_weight.push_back(get_qp(ck, c.name + ".weight"));
    t.conv_out.push_back(get_qp(ck, c.name + ".out"));
  }
  for (const auto& d : g.dense) {
    t.dense_weight.push_back(get_qp(ck, d.name + ".weight"));
    t.dense_out.push_back(get_qp(ck, d.name + ".out"));
  }
  return t;
}

quant::QuantizedModel quantized_of(const Checkpoint& ck) {
  if (!is_quantized(ck) || !has_calibration(ck)) {
    throw InvalidArgument("checkpoint: not a quantized model");
  }
  quant::QuantizedModel q;
  q.graph = graph_of(ck);
  q.target = *ck.quant_target;
  q.float_weights = weights_of(ck);
  q.table = table_of(ck);
  const auto& g = q.graph;
  const auto& t = q.table;
  for (std::size_t i = 0; i < g.convs.size(); ++i) {
    const auto& c = g.convs[i];
    q.conv_weight.push_back({get<std::int8_t>(ck, c.name + ".weight"), t.conv_weight[i]});
    q.conv_bias.push_back(get<std::int32_t>(ck, c.name + ".bias"));
  }
  for (std::size_t i = 0; i < g.dense.size(); ++i) {
    const auto& d = g.dense[i];
    q.dense_weight.push_back({get<std::int8_t>(ck, d.name + ".weight"), t.dense_weight[i]});
    q.dense_bias.push_back(get<std::int32_t>(ck, d.name + ".bias"));
  }
  for (std::size_t i = 0; i < g.convs.size(); ++i) {
    if (q.conv_weight[i].values.shape() != q.float_weights.conv_weight(i).shape()) {
      throw InvalidArgument("checkpoint: integer kernel shape mismatch for " + g.convs[i].name);
    }
  }
  return q;
}

}  // namespace sqp::io
