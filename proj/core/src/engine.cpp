#include "sqp/engine.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <sstream>

#include "kernels.hpp"

namespace sqp::engine {

using model::ActivationKind;
using model::ConvSpec;

std::string_view to_string(WeightPrecision p) {
  return p == WeightPrecision::Fp32 ? "fp32" : "int8";
}

std::string_view to_string(ConvBackend b) {
  return b == ConvBackend::MaskedSum ? "masked-sum" : "bit-plane";
}

ConvBackend parse_backend(std::string_view name) {
  if (name == "masked-sum") return ConvBackend::MaskedSum;
  if (name == "bit-plane") return ConvBackend::BitPlane;
  throw InvalidArgument("unknown conv backend '" + std::string(name) + "'");
}

std::string EngineConfig::describe() const {
  std::ostringstream s;
  s << "conv=" << to_string(conv_weights) << " dense=" << (int8_dense_head ? "int8" : "fp32")
    << " backend=" << to_string(backend) << " pool=global-avg";
  return s.str();
}

// ---------------------------------------------------------------------------
// Packed maps

PackedFeatureMap::PackedFeatureMap(std::size_t c, std::size_t h, std::size_t w)
    : channels(c), height(h), width(w), bits(Shape{c, h, w}) {}

PackedFeatureMap pack_feature_map(const TensorF32& chw) {
  if (chw.rank() != 3) {
    throw InvalidArgument("pack_feature_map: expected [C, H, W], got " +
                          shape_to_string(chw.shape()));
  }
  PackedFeatureMap m(chw.dim(0), chw.dim(1), chw.dim(2));
  m.bits = pack_bitmap(chw);
  return m;
}

TensorF32 unpack_feature_map(const PackedFeatureMap& m) { return unpack_bitmap(m.bits); }

namespace {

void check_kernel(const Shape& ws, std::size_t bias_n, std::size_t in_channels, const char* who) {
  if (ws.size() != 4 || ws[1] != in_channels || ws[2] != 3 || ws[3] != 3) {
    throw InvalidArgument(std::string(who) + ": kernel shape " + shape_to_string(ws) +
                          " does not fit a " + std::to_string(in_channels) + "-channel input");
  }
  if (bias_n != ws[0]) throw InvalidArgument(std::string(who) + ": bias length mismatch");
}

// Fills mask[x] with all ones where input bit (c, sy, x + dx) is set, zero
// elsewhere (including outside the map). Returns false if nothing is set.
bool tap_mask(const PackedFeatureMap& in, std::size_t c, std::size_t sy, int dx,
              std::uint32_t* mask) {
  const std::size_t w = in.width;
  const auto row = in.bits.row(c * in.height + sy);
  std::uint32_t any = 0;
  for (std::size_t x = 0; x < w; ++x) {
    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
    std::uint32_t m = 0;
    if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) {
      const auto u = static_cast<std::size_t>(sx);
      m = 0U - static_cast<std::uint32_t>((row[u / 64] >> (u % 64)) & 1U);
    }
    mask[x] = m;
    any |= m;
  }
  return any != 0;
}

// Shared masked-sum driver. Acc is float or int32; taps are read through
// `tap(oc, k)`. Output rows start at the bias and add taps in k order.
template <typename Acc, typename Tap>
void masked_conv(const PackedFeatureMap& in, std::size_t oc_n, const Acc* bias, Tap tap, Acc* out) {
  const std::size_t h = in.height;
  const std::size_t w = in.width;
  std::vector<Acc> acc(oc_n * w);
  std::vector<std::uint32_t> mask(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t oc = 0; oc < oc_n; ++oc) std::fill_n(acc.data() + oc * w, w, bias[oc]);
    for (std::size_t ic = 0; ic < in.channels; ++ic) {
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          if (!tap_mask(in, ic, static_cast<std::size_t>(sy), static_cast<int>(kx) - 1, mask.data())) {
            continue;
          }
          const std::size_t k = (ic * 3 + ky) * 3 + kx;
          const std::uint32_t* m = mask.data();
          for (std::size_t oc = 0; oc < oc_n; ++oc) {
            const Acc t = tap(oc, k);
            Acc* a = acc.data() + oc * w;
            for (std::size_t x = 0; x < w; ++x) a[x] += m[x] ? t : Acc{0};
          }
        }
      }
    }
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      std::copy_n(acc.data() + oc * w, w, out + (oc * h + y) * w);
    }
  }
}

Tensor<std::int32_t> bitplane_conv(const PackedFeatureMap& in, const Tensor<std::int8_t>& weight,
                                   const Tensor<std::int32_t>& bias) {
  const std::size_t oc_n = weight.dim(0);
  const std::size_t k_n = in.channels * 9;
  const std::size_t words = (k_n + 63) / 64;
  const std::size_t h = in.height;
  const std::size_t w = in.width;

  // planes[(oc * 8 + j) * words + word]: bit k set iff bit j of q[oc, k] is set.
  std::vector<std::uint64_t> planes(oc_n * 8 * words, 0);
  for (std::size_t oc = 0; oc < oc_n; ++oc) {
    for (std::size_t k = 0; k < k_n; ++k) {
      const auto u = static_cast<std::uint8_t>(weight[oc * k_n + k]);
      for (std::size_t j = 0; j < 8; ++j) {
        if ((u >> j) & 1U) planes[(oc * 8 + j) * words + k / 64] |= std::uint64_t{1} << (k % 64);
      }
    }
  }
  // Two's complement: bit 7 weighs -128.
  constexpr std::int32_t coef[8] = {1, 2, 4, 8, 16, 32, 64, -128};

  Tensor<std::int32_t> out(Shape{oc_n, h, w});
  std::vector<std::uint64_t> patch(words);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::fill(patch.begin(), patch.end(), 0);
      for (std::size_t ic = 0; ic < in.channels; ++ic) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            if (in.test(ic, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx))) {
              const std::size_t k = (ic * 3 + ky) * 3 + kx;
              patch[k / 64] |= std::uint64_t{1} << (k % 64);
            }
          }
        }
      }
      for (std::size_t oc = 0; oc < oc_n; ++oc) {
        std::int32_t acc = bias[oc];
        for (std::size_t j = 0; j < 8; ++j) {
          const std::uint64_t* p = planes.data() + (oc * 8 + j) * words;
          std::int32_t cnt = 0;
          for (std::size_t i = 0; i < words; ++i) cnt += std::popcount(p[i] & patch[i]);
          acc += coef[j] * cnt;
        }
        out[(oc * h + y) * w + x] = acc;
      }
    }
  }
  return out;
}

}  // namespace

TensorF32 conv_bam(const PackedFeatureMap& in, const TensorF32& weight, const TensorF32& bias) {
  check_kernel(weight.shape(), bias.numel(), in.channels, "conv_bam");
  const std::size_t oc_n = weight.dim(0);
  const std::size_t k_n = in.channels * 9;
  TensorF32 out(Shape{oc_n, in.height, in.width});
  const float* wp = weight.raw();
  masked_conv<float>(in, oc_n, bias.raw(), [&](std::size_t oc, std::size_t k) { return wp[oc * k_n + k]; },
                     out.raw());
  return out;
}

Tensor<std::int32_t> conv_bam_int8(const PackedFeatureMap& in, const Tensor<std::int8_t>& weight,
                                   const Tensor<std::int32_t>& bias, ConvBackend backend) {
  check_kernel(weight.shape(), bias.numel(), in.channels, "conv_bam_int8");
  if (backend == ConvBackend::BitPlane) return bitplane_conv(in, weight, bias);
  const std::size_t oc_n = weight.dim(0);
  const std::size_t k_n = in.channels * 9;
  Tensor<std::int32_t> out(Shape{oc_n, in.height, in.width});
  const std::int8_t* wp = weight.raw();
  masked_conv<std::int32_t>(
      in, oc_n, bias.raw(),
      [&](std::size_t oc, std::size_t k) { return static_cast<std::int32_t>(wp[oc * k_n + k]); },
      out.raw());
  return out;
}

namespace {

template <typename T>
PackedFeatureMap threshold_impl(const Tensor<T>& pre) {
  if (pre.rank() != 3) {
    throw InvalidArgument("threshold_pack: expected [C, H, W], got " + shape_to_string(pre.shape()));
  }
  PackedFeatureMap m(pre.dim(0), pre.dim(1), pre.dim(2));
  const std::size_t rows = m.channels * m.height;
  const T* p = pre.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    auto words = m.bits.row(r);
    for (std::size_t x = 0; x < m.width; ++x) {
      if (p[r * m.width + x] >= T{0}) words[x / 64] |= std::uint64_t{1} << (x % 64);
    }
  }
  return m;
}

// Gathers the even-position bits of v into the low 32 bits.
inline std::uint64_t compact_even(std::uint64_t v) noexcept {
  v &= 0x5555555555555555ULL;
  v = (v | (v >> 1)) & 0x3333333333333333ULL;
  v = (v | (v >> 2)) & 0x0f0f0f0f0f0f0f0fULL;
  v = (v | (v >> 4)) & 0x00ff00ff00ff00ffULL;
  v = (v | (v >> 8)) & 0x0000ffff0000ffffULL;
  v = (v | (v >> 16)) & 0x00000000ffffffffULL;
  return v;
}

}  // namespace

PackedFeatureMap threshold_pack(const TensorF32& pre) { return threshold_impl(pre); }
PackedFeatureMap threshold_pack(const Tensor<std::int32_t>& acc) { return threshold_impl(acc); }

PackedFeatureMap maxpool_or(const PackedFeatureMap& in) {
  PackedFeatureMap out(in.channels, in.height / 2, in.width / 2);
  const std::size_t in_words = in.bits.words_per_row();
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t y = 0; y < out.height; ++y) {
      const auto r0 = in.bits.row(c * in.height + 2 * y);
      const auto r1 = in.bits.row(c * in.height + 2 * y + 1);
      auto dst = out.bits.row(c * out.height + y);
      for (std::size_t ow = 0; ow < dst.size(); ++ow) {
        const std::size_t i0 = 2 * ow;
        const std::size_t i1 = 2 * ow + 1;
        std::uint64_t lo = i0 < in_words ? (r0[i0] | r1[i0]) : 0;
        std::uint64_t hi = i1 < in_words ? (r0[i1] | r1[i1]) : 0;
        lo |= lo >> 1;
        hi |= hi >> 1;
        dst[ow] = compact_even(lo) | (compact_even(hi) << 32);
      }
    }
  }
  out.bits.clear_pad_bits();
  return out;
}

std::vector<float> global_avg(const PackedFeatureMap& in) {
  std::vector<float> out(in.channels, 0.0F);
  const float area = static_cast<float>(in.height * in.width);
  for (std::size_t c = 0; c < in.channels; ++c) {
    std::size_t n = 0;
    for (std::size_t y = 0; y < in.height; ++y) {
      for (auto word : in.bits.row(c * in.height + y)) n += static_cast<std::size_t>(std::popcount(word));
    }
    out[c] = static_cast<float>(n) / area;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers for the engines

namespace {

void check_input(const model::ModelGraph& g, std::span<const float> x) {
  if (x.size() != g.input_h * g.input_w) {
    throw InvalidArgument("engine: input has " + std::to_string(x.size()) +
                          " values, the graph expects " + std::to_string(g.input_h) + "x" +
                          std::to_string(g.input_w));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw InvalidArgument("engine: non-finite input value at index " + std::to_string(i));
    }
  }
}

// Zero-point-subtracted 8-bit codes of x.
std::vector<std::int32_t> quantize_codes(std::span<const float> x, const QuantParams& qp) {
  std::vector<std::int32_t> out(x.size());
  const float s = qp.scale[0];
  const std::int32_t z = qp.zero_point[0];
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = quant::quantize_value(x[i], s, z, qp.qmin, qp.qmax) - z;
  }
  return out;
}

std::vector<std::int32_t> widen(const Tensor<std::int8_t>& t) {
  return {t.data().begin(), t.data().end()};
}

// int8 dense head on real-valued features. Returns the prediction.
float int8_head(const quant::QuantizedModel& q, std::span<const float> features,
                std::uint64_t* multiplies) {
  const auto& g = q.graph;
  std::vector<std::int32_t> x = quantize_codes(features, q.table.features);
  std::uint64_t mults = features.size();
  float out = 0.0F;
  for (std::size_t li = 0; li < g.dense.size(); ++li) {
    const auto& d = g.dense[li];
    const auto& wq = q.dense_weight[li];
    const float s_in = quant::dense_input_scale(q, li);
    std::vector<float> real(d.out);
    for (std::size_t o = 0; o < d.out; ++o) {
      std::int64_t acc = q.dense_bias[li][o];
      for (std::size_t i = 0; i < d.in; ++i) {
        acc += static_cast<std::int64_t>(wq.values[o * d.in + i]) * x[i];
      }
      const double r = static_cast<double>(acc) * wq.qparams.scale[o] * s_in;
      real[o] = model::activate(d.activation, static_cast<float>(r), g.beta);
    }
    mults += d.out * d.in + d.out;
    if (li + 1 == g.dense.size()) {
      out = real[0];
    } else {
      x = quantize_codes(real, q.table.dense_out[li]);
      mults += d.out;
    }
  }
  if (multiplies) *multiplies += mults;
  return out;
}

float fp32_head(const model::ModelGraph& g, const model::WeightSet<float>& w,
                std::span<const float> features, std::uint64_t* multiplies) {
  std::vector<float> h(features.begin(), features.end());
  std::uint64_t mults = 0;
  for (std::size_t li = 0; li < g.dense.size(); ++li) {
    const auto& d = g.dense[li];
    const float* W = w.dense_weight(li).raw();
    const float* b = w.dense_bias(li).raw();
    std::vector<float> next(d.out);
    for (std::size_t o = 0; o < d.out; ++o) {
      float acc = b[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += W[o * d.in + i] * h[i];
      next[o] = model::activate(d.activation, acc, g.beta);
    }
    mults += d.out * d.in;
    h = std::move(next);
  }
  if (multiplies) *multiplies += mults;
  return h[0];
}

}  // namespace

// ---------------------------------------------------------------------------
// Packed engine

void PackedEngine::check_graph() const {
  graph_.validate();
  for (const auto& c : graph_.convs) {
    if (c.activation != ActivationKind::Heaviside) {
      throw InvalidArgument("packed engine: conv '" + c.name + "' is not a Heaviside layer");
    }
  }
  if (graph_.final_pool != model::PoolKind::GlobalAvg) {
    throw InvalidArgument("packed engine: the final pool must be global average pooling");
  }
}

PackedEngine::PackedEngine(EngineConfig cfg, const model::ModelGraph& g,
                           const model::WeightSet<float>& w)
    : cfg_(cfg), graph_(g), weights_(w) {
  check_graph();
  model::check_weights(g, w);
  if (cfg_.conv_weights != WeightPrecision::Fp32 || cfg_.int8_dense_head ||
      cfg_.backend != ConvBackend::MaskedSum) {
    throw InvalidArgument("packed engine: int8 settings need a quantized model (" +
                          cfg_.describe() + ")");
  }
  for (std::size_t li = 0; li < g.convs.size(); ++li) {
    if (!g.convs[li].binary_weights) continue;
    for (auto& v : weights_.conv_weight(li).data()) v = model::sign_weight(v);
  }
}

PackedEngine::PackedEngine(EngineConfig cfg, const quant::QuantizedModel& q)
    : cfg_(cfg), graph_(q.graph), weights_(q.float_weights), has_quantized_(true), q_(q) {
  check_graph();
  if (q.target != quant::Target::Packed) {
    throw InvalidArgument("packed engine: the quantized model was not built for the packed target");
  }
  if (cfg_.conv_weights != WeightPrecision::Int8) {
    throw InvalidArgument("packed engine: a quantized model needs conv=int8 (" + cfg_.describe() +
                          ")");
  }
  if (q.conv_weight.size() != graph_.convs.size() || q.dense_weight.size() != graph_.dense.size()) {
    throw InvalidArgument("packed engine: quantized model does not match its graph");
  }
  for (std::size_t li = 0; li < graph_.convs.size(); ++li) {
    if (!graph_.convs[li].binary_weights) continue;
    for (auto& v : weights_.conv_weight(li).data()) v = model::sign_weight(v);
  }
}

float PackedEngine::infer(std::span<const float> input, Trace* trace) const {
  check_input(graph_, input);
  const auto& g = graph_;
  std::uint64_t mults = 0;
  if (trace) {
    trace->conv_maps.clear();
    trace->features.clear();
  }

  const ConvSpec& c0 = g.convs[0];
  const std::size_t hw = c0.pixels();
  const std::size_t oc0 = c0.out_channels;
  PackedFeatureMap cur;
  if (cfg_.conv_weights == WeightPrecision::Fp32) {
    std::vector<float> cols(9 * hw);
    kernels::im2col3x3(input.data(), 1, c0.height, c0.width, cols.data());
    TensorF32 pre(Shape{oc0, c0.height, c0.width});
    const float* bias = weights_.conv_bias(0).raw();
    for (std::size_t oc = 0; oc < oc0; ++oc) std::fill_n(pre.raw() + oc * hw, hw, bias[oc]);
    kernels::gemm_nn(oc0, hw, 9, weights_.conv_weight(0).raw(), 9, cols.data(), hw, pre.raw(), hw);
    cur = threshold_pack(pre);
  } else {
    const std::vector<std::int32_t> codes = quantize_codes(input, q_.table.input);
    mults += hw;
    std::vector<std::int32_t> cols(9 * hw);
    kernels::im2col3x3(codes.data(), 1, c0.height, c0.width, cols.data());
    Tensor<std::int32_t> acc(Shape{oc0, c0.height, c0.width});
    for (std::size_t oc = 0; oc < oc0; ++oc) std::fill_n(acc.raw() + oc * hw, hw, q_.conv_bias[0][oc]);
    const std::vector<std::int32_t> w0 = widen(q_.conv_weight[0].values);
    kernels::gemm_nn(oc0, hw, 9, w0.data(), 9, cols.data(), hw, acc.raw(), hw);
    cur = threshold_pack(acc);
  }
  mults += oc0 * hw * 9;
  if (trace) trace->conv_maps.push_back(cur);

  for (std::size_t li = 1; li < g.convs.size(); ++li) {
    if (g.convs[li - 1].pool_after) cur = maxpool_or(cur);
    if (cfg_.conv_weights == WeightPrecision::Fp32) {
      cur = threshold_pack(conv_bam(cur, weights_.conv_weight(li), weights_.conv_bias(li)));
    } else {
      cur = threshold_pack(
          conv_bam_int8(cur, q_.conv_weight[li].values, q_.conv_bias[li], cfg_.backend));
    }
    if (trace) trace->conv_maps.push_back(cur);
  }

  const std::vector<float> features = global_avg(cur);
  if (trace) trace->features = features;
  const float pred = cfg_.int8_dense_head ? int8_head(q_, features, &mults)
                                          : fp32_head(g, weights_, features, &mults);
  if (trace) trace->multiplies = mults;
  return pred;
}

// ---------------------------------------------------------------------------
// Dense int8 engine

DenseInt8Engine::DenseInt8Engine(const quant::QuantizedModel& q) : q_(q) {
  q_.graph.validate();
  if (q_.target != quant::Target::Dense8) {
    throw InvalidArgument("dense int8 engine: the quantized model was built for the packed target");
  }
}

float DenseInt8Engine::infer(std::span<const float> input) const {
  const auto& g = q_.graph;
  check_input(g, input);
  std::vector<std::int32_t> x = quantize_codes(input, q_.table.input);
  std::vector<std::int32_t> cols;
  std::vector<std::int32_t> acc;
  for (std::size_t li = 0; li < g.convs.size(); ++li) {
    const ConvSpec& c = g.convs[li];
    const std::size_t hw = c.pixels();
    const std::size_t patch = c.patch_size();
    cols.resize(patch * hw);
    kernels::im2col3x3(x.data(), c.in_channels, c.height, c.width, cols.data());
    acc.resize(c.out_channels * hw);
    for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
      std::fill_n(acc.data() + oc * hw, hw, q_.conv_bias[li][oc]);
    }
    const std::vector<std::int32_t> wq = widen(q_.conv_weight[li].values);
    kernels::gemm_nn(c.out_channels, hw, patch, wq.data(), patch, cols.data(), hw, acc.data(), hw);

    // Requantize onto this layer's output grid.
    const float s_in = quant::conv_input_scale(q_, li);
    const QuantParams& oq = q_.table.conv_out[li];
    const float so = oq.scale[0];
    const std::int32_t zo = oq.zero_point[0];
    std::vector<std::int32_t> y(c.out_channels * hw);
    for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
      const double m = static_cast<double>(q_.conv_weight[li].qparams.scale[oc]) * s_in;
      for (std::size_t p = 0; p < hw; ++p) {
        const float r = model::activate(c.activation, static_cast<float>(acc[oc * hw + p] * m), g.beta);
        y[oc * hw + p] = quant::quantize_value(r, so, zo, oq.qmin, oq.qmax) - zo;
      }
    }
    if (c.pool_after) {
      const std::size_t ph = c.pooled_height();
      const std::size_t pw = c.pooled_width();
      std::vector<std::int32_t> pooled(c.out_channels * ph * pw);
      for (std::size_t ch = 0; ch < c.out_channels; ++ch) {
        const std::int32_t* plane = y.data() + ch * hw;
        for (std::size_t py = 0; py < ph; ++py) {
          for (std::size_t px = 0; px < pw; ++px) {
            const std::size_t b = 2 * py * c.width + 2 * px;
            pooled[(ch * ph + py) * pw + px] =
                std::max({plane[b], plane[b + 1], plane[b + c.width], plane[b + c.width + 1]});
          }
        }
      }
      y = std::move(pooled);
    }
    x = std::move(y);
  }

  const ConvSpec& last = g.convs.back();
  const std::size_t hw = last.pixels();
  const float so = q_.table.conv_out.back().scale[0];
  std::vector<float> features(last.out_channels);
  for (std::size_t ch = 0; ch < last.out_channels; ++ch) {
    const std::int32_t* plane = x.data() + ch * hw;
    if (g.final_pool == model::PoolKind::GlobalMax) {
      features[ch] = static_cast<float>(*std::max_element(plane, plane + hw)) * so;
    } else {
      std::int64_t sum = 0;
      for (std::size_t i = 0; i < hw; ++i) sum += plane[i];
      features[ch] = static_cast<float>(static_cast<double>(sum) * so / static_cast<double>(hw));
    }
  }
  return int8_head(q_, features, nullptr);
}

// ---------------------------------------------------------------------------
// Memory model

MemoryReport memory_report(const model::ModelGraph& g, const EngineConfig& cfg) {
  g.validate();
  const bool binary = g.binarized();
  const auto counts = model::count_table1(g);
  MemoryReport r;
  r.input_elements = g.input_h * g.input_w;
  r.input_bytes_fp32 = 4 * r.input_elements;
  r.input_bytes_packed =
      (cfg.conv_weights == WeightPrecision::Int8 ? 1 : 4) * r.input_elements;
  for (std::size_t i = 0; i < counts.layers.size(); ++i) {
    const auto& l = counts.layers[i];
    LayerMemory m;
    m.layer = l.name;
    m.activations = l.activations;
    m.bytes_fp32 = 4 * l.activations;
    const bool is_conv = i < g.convs.size();
    if (is_conv) {
      m.bytes_packed = binary ? (l.activations + 7) / 8 : 4 * l.activations;
    } else {
      m.bytes_packed = (cfg.int8_dense_head ? 1 : 4) * l.activations;
    }
    r.layers.push_back(m);
  }
  r.total_fp32 = r.input_bytes_fp32;
  r.total_packed = r.input_bytes_packed;
  for (const auto& m : r.layers) {
    r.total_fp32 += m.bytes_fp32;
    r.total_packed += m.bytes_packed;
  }
  return r;
}

std::string MemoryReport::to_text() const {
  std::ostringstream s;
  s << "{layer: input, bytes_fp32: " << input_bytes_fp32 << ", bytes_packed: " << input_bytes_packed
    << "}\n";
  for (const auto& m : layers) {
    s << "{layer: " << m.layer << ", bytes_fp32: " << m.bytes_fp32
      << ", bytes_packed: " << m.bytes_packed << "}\n";
  }
  s.setf(std::ios::fixed);
  s.precision(4);
  s << "{layer: total, bytes_fp32: " << total_fp32 << ", bytes_packed: " << total_packed << "}\n";
  s << "fp32_mb: " << static_cast<double>(total_fp32) / 1e6
    << "\npacked_mb: " << static_cast<double>(total_packed) / 1e6 << "\nratio: " << ratio() << "\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Benchmark

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

BenchResult benchmark(std::span<const NamedEngine> engines, std::span<const TensorF32> inputs,
                      std::size_t runs, std::size_t warmup) {
  if (warmup < 3) throw InvalidArgument("benchmark: at least 3 warmup runs are required");
  if (runs == 0) throw InvalidArgument("benchmark: runs must be >= 1");
  if (inputs.empty()) throw InvalidArgument("benchmark: no inputs");
  BenchResult out;
  volatile float sink = 0.0F;
  for (const auto& e : engines) {
    for (std::size_t i = 0; i < warmup; ++i) sink = sink + e.infer(inputs[i % inputs.size()].data());
    std::vector<double> lat;
    for (std::size_t r = 0; r < runs; ++r) {
      const auto& x = inputs[r % inputs.size()];
      const auto t0 = std::chrono::steady_clock::now();
      sink = sink + e.infer(x.data());
      const auto t1 = std::chrono::steady_clock::now();
      const double us = std::chrono::duration<double, std::micro>(t1 - t0).count();
      lat.push_back(us);
      out.rows.push_back({e.name, r, us});
    }
    BenchStats st;
    st.engine = e.name;
    st.runs = runs;
    st.median_us = median(lat);
    std::vector<double> dev;
    for (double v : lat) dev.push_back(std::abs(v - st.median_us));
    st.mad_us = median(dev);
    out.stats.push_back(st);
  }
  return out;
}

std::string BenchResult::csv() const {
  std::ostringstream s;
  s << "engine,run,latency_us\n";
  s.setf(std::ios::fixed);
  s.precision(3);
  for (const auto& r : rows) s << r.engine << ',' << r.run << ',' << r.latency_us << '\n';
  return s.str();
}

}  // namespace sqp::engine
