#include "sqp/model.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace sqp::model {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::Bam: return "bam";
    case Variant::BamBinaryWeights: return "bam-binary-weights";
    case Variant::Relaxed: return "relaxed";
  }
  return "?";
}

std::string_view to_string(ActivationKind a) {
  switch (a) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Heaviside: return "heaviside";
    case ActivationKind::Relaxed: return "relaxed";
  }
  return "?";
}

std::string_view to_string(PoolKind p) {
  switch (p) {
    case PoolKind::MaxPool2x2: return "maxpool2x2";
    case PoolKind::GlobalMax: return "global-max";
    case PoolKind::GlobalAvg: return "global-avg";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::Baseline, Variant::Bam, Variant::BamBinaryWeights, Variant::Relaxed}) {
    if (to_string(v) == name) return v;
  }
  throw InvalidArgument("unknown model variant '" + std::string(name) + "'");
}

bool ModelGraph::binarized() const noexcept {
  return std::any_of(convs.begin(), convs.end(), [](const ConvSpec& c) {
    return c.activation == ActivationKind::Heaviside || c.activation == ActivationKind::Relaxed;
  });
}

void ModelGraph::validate() const {
  if (convs.size() != kConvLayers || dense.size() != kDenseLayers) {
    throw InvalidArgument("model graph must have 4 conv and 3 dense layers");
  }
  if (!(beta > 0.0F)) throw InvalidArgument("relaxed activation needs beta > 0");
  if (!(dropout_p >= 0.0F && dropout_p < 1.0F)) throw InvalidArgument("dropout must be in [0, 1)");
  if (binarized() && final_pool != PoolKind::GlobalAvg) {
    throw InvalidArgument("binarized networks must use global average pooling");
  }
  if (final_pool == PoolKind::MaxPool2x2) throw InvalidArgument("final pool must be global");
  for (const auto& c : convs) {
    if (c.pooled_height() == 0 || c.pooled_width() == 0) {
      throw InvalidArgument("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                            " is too small for the pooling chain");
    }
  }
}

ModelGraph make_graph(Variant variant, std::size_t input_h, std::size_t input_w, float beta) {
  ModelGraph g;
  g.variant = variant;
  g.input_h = input_h;
  g.input_w = input_w;
  g.beta = beta;

  ActivationKind conv_act = ActivationKind::ReLU;
  switch (variant) {
    case Variant::Baseline: conv_act = ActivationKind::ReLU; break;
    case Variant::Bam:
    case Variant::BamBinaryWeights: conv_act = ActivationKind::Heaviside; break;
    case Variant::Relaxed: conv_act = ActivationKind::Relaxed; break;
  }
  g.final_pool = variant == Variant::Baseline ? PoolKind::GlobalMax : PoolKind::GlobalAvg;

  const std::size_t channels[kConvLayers + 1] = {1, 32, 32, 32, 64};
  std::size_t h = input_h;
  std::size_t w = input_w;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    ConvSpec c;
    c.name = "conv" + std::to_string(i + 1);
    c.in_channels = channels[i];
    c.out_channels = channels[i + 1];
    c.height = h;
    c.width = w;
    c.activation = conv_act;
    c.pool_after = i + 1 < kConvLayers;
    c.binary_weights = variant == Variant::BamBinaryWeights;
    h = c.pooled_height();
    w = c.pooled_width();
    g.convs.push_back(std::move(c));
  }
  g.dense = {{"dense1", 64, 64, ActivationKind::ReLU},
             {"dense2", 64, 64, ActivationKind::ReLU},
             {"dense3", 64, 1, ActivationKind::Identity}};
  g.validate();
  return g;
}

ModelGraph with_conv_activation(const ModelGraph& g, ActivationKind activation,
                                PoolKind final_pool) {
  ModelGraph out = g;
  for (auto& c : out.convs) c.activation = activation;
  out.final_pool = final_pool;
  if (activation == ActivationKind::Heaviside) {
    out.variant = g.variant == Variant::BamBinaryWeights ? g.variant : Variant::Bam;
  }
  out.validate();
  return out;
}

template <typename T>
std::optional<std::size_t> WeightSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  return std::nullopt;
}

template <typename T>
WeightSet<T> zero_weights(const ModelGraph& g) {
  WeightSet<T> w;
  for (const auto& c : g.convs) {
    w.names.push_back(c.name + ".weight");
    w.params.emplace_back(Shape{c.out_channels, c.in_channels, kKernel, kKernel});
    w.names.push_back(c.name + ".bias");
    w.params.emplace_back(Shape{c.out_channels});
  }
  for (const auto& d : g.dense) {
    w.names.push_back(d.name + ".weight");
    w.params.emplace_back(Shape{d.out, d.in});
    w.names.push_back(d.name + ".bias");
    w.params.emplace_back(Shape{d.out});
  }
  return w;
}

template <typename T>
void check_weights(const ModelGraph& g, const WeightSet<T>& w) {
  const auto expected = zero_weights<T>(g);
  if (w.params.size() != expected.params.size()) {
    throw InvalidArgument("weight set has " + std::to_string(w.params.size()) +
                          " tensors, the graph needs " + std::to_string(expected.params.size()));
  }
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    if (w.params[i].shape() != expected.params[i].shape()) {
      throw InvalidArgument("weight '" + expected.names[i] + "' has shape " +
                            shape_to_string(w.params[i].shape()) + ", expected " +
                            shape_to_string(expected.params[i].shape()));
    }
  }
}

WeightSet<float> init_weights(const ModelGraph& g, std::uint64_t seed) {
  auto w = zero_weights<float>(g);
  Rng rng(seed);
  for (std::size_t i = 0; i < w.params.size(); i += 2) {
    auto& kernel = w.params[i];
    const std::size_t fan_in = kernel.numel() / kernel.dim(0);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& x : kernel.data()) x = static_cast<float>(rng.uniform(-bound, bound));
  }
  return w;
}

Network build_dnsmos(Variant variant, std::uint64_t seed, std::size_t input_h,
                     std::size_t input_w) {
  Network net{make_graph(variant, input_h, input_w), {}};
  net.weights = init_weights(net.graph, seed);
  return net;
}

namespace {

template <typename T>
void ensure_shape(Tensor<T>& t, const Shape& shape) {
  if (t.shape() != shape) t = Tensor<T>(shape);
}

}  // namespace

template <typename T>
T forward(const ModelGraph& g, const WeightSet<T>& w, std::span<const T> input, Mode mode,
          Rng* rng, ForwardCache<T>& cache) {
  if (input.size() != g.input_h * g.input_w) {
    throw InvalidArgument("forward: input has " + std::to_string(input.size()) +
                          " values, the graph expects " + std::to_string(g.input_h) + "x" +
                          std::to_string(g.input_w));
  }
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!std::isfinite(input[i])) {
      throw InvalidArgument("forward: non-finite input value at index " + std::to_string(i));
    }
  }
  if (mode == Mode::Train && g.dropout_p > 0.0F && rng == nullptr) {
    throw InvalidArgument("forward: Train mode needs a random generator for dropout");
  }

  cache.variant = g.variant;
  cache.input_h = g.input_h;
  cache.input_w = g.input_w;
  cache.mode = mode;
  cache.conv.resize(g.convs.size());
  const T beta = static_cast<T>(g.beta);
  const T keep_scale = T{1} / (T{1} - static_cast<T>(g.dropout_p));

  const T* x = input.data();
  for (std::size_t li = 0; li < g.convs.size(); ++li) {
    const ConvSpec& c = g.convs[li];
    ConvCache<T>& cc = cache.conv[li];
    const std::size_t hw = c.pixels();
    const std::size_t patch = c.patch_size();

    ensure_shape(cc.cols, {patch, hw});
    kernels::im2col3x3(x, c.in_channels, c.height, c.width, cc.cols.raw());

    const T* kernel = w.conv_weight(li).raw();
    if (c.binary_weights) {
      ensure_shape(cc.effective_weight, w.conv_weight(li).shape());
      const auto src = w.conv_weight(li).data();
      for (std::size_t i = 0; i < src.size(); ++i) cc.effective_weight[i] = sign_weight(src[i]);
      kernel = cc.effective_weight.raw();
    }

    ensure_shape(cc.pre, {c.out_channels, c.height, c.width});
    const T* bias = w.conv_bias(li).raw();
    for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
      std::fill_n(cc.pre.raw() + oc * hw, hw, bias[oc]);
    }
    kernels::gemm_nn(c.out_channels, hw, patch, kernel, patch, cc.cols.raw(), hw, cc.pre.raw(), hw);

    ensure_shape(cc.act, cc.pre.shape());
    for (std::size_t i = 0; i < cc.pre.numel(); ++i) {
      cc.act[i] = activate(c.activation, cc.pre[i], beta);
    }

    if (!c.pool_after) {
      x = cc.act.raw();
      continue;
    }

    const std::size_t ph = c.pooled_height();
    const std::size_t pw = c.pooled_width();
    ensure_shape(cc.pooled, {c.out_channels, ph, pw});
    cc.pool_index.resize(c.out_channels * ph * pw);
    for (std::size_t ch = 0; ch < c.out_channels; ++ch) {
      const T* plane = cc.act.raw() + ch * hw;
      for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t xo = 0; xo < pw; ++xo) {
          std::size_t best = (2 * y) * c.width + 2 * xo;
          const std::size_t cand[3] = {best + 1, best + c.width, best + c.width + 1};
          for (std::size_t k : cand) {
            if (plane[k] > plane[best]) best = k;
          }
          const std::size_t o = (ch * ph + y) * pw + xo;
          cc.pooled[o] = plane[best];
          cc.pool_index[o] = static_cast<std::uint32_t>(ch * hw + best);
        }
      }
    }

    ensure_shape(cc.out, cc.pooled.shape());
    if (mode == Mode::Train && g.dropout_p > 0.0F) {
      ensure_shape(cc.dropout_scale, cc.pooled.shape());
      for (std::size_t i = 0; i < cc.pooled.numel(); ++i) {
        cc.dropout_scale[i] = rng->bernoulli(g.dropout_p) ? T{0} : keep_scale;
        cc.out[i] = cc.pooled[i] * cc.dropout_scale[i];
      }
    } else {
      cc.dropout_scale = Tensor<T>();
      std::copy(cc.pooled.data().begin(), cc.pooled.data().end(), cc.out.raw());
    }
    x = cc.out.raw();
  }

  const ConvSpec& last = g.convs.back();
  const std::size_t last_hw = last.pixels();
  ensure_shape(cache.features, {last.out_channels});
  cache.global_index.assign(last.out_channels, 0);
  for (std::size_t ch = 0; ch < last.out_channels; ++ch) {
    const T* plane = x + ch * last_hw;
    if (g.final_pool == PoolKind::GlobalMax) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < last_hw; ++i) {
        if (plane[i] > plane[best]) best = i;
      }
      cache.global_index[ch] = static_cast<std::uint32_t>(best);
      cache.features[ch] = plane[best];
    } else {
      T sum{0};
      for (std::size_t i = 0; i < last_hw; ++i) sum += plane[i];
      cache.features[ch] = sum / static_cast<T>(last_hw);
    }
  }

  cache.dense_pre.resize(g.dense.size());
  cache.dense_out.resize(g.dense.size());
  const Tensor<T>* h = &cache.features;
  for (std::size_t li = 0; li < g.dense.size(); ++li) {
    const DenseSpec& d = g.dense[li];
    ensure_shape(cache.dense_pre[li], {d.out});
    ensure_shape(cache.dense_out[li], {d.out});
    const T* W = w.dense_weight(li).raw();
    const T* b = w.dense_bias(li).raw();
    for (std::size_t o = 0; o < d.out; ++o) {
      T acc = b[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += W[o * d.in + i] * (*h)[i];
      cache.dense_pre[li][o] = acc;
      cache.dense_out[li][o] = activate(d.activation, acc, beta);
    }
    h = &cache.dense_out[li];
  }
  cache.prediction = (*h)[0];
  return cache.prediction;
}

float forward(const ModelGraph& g, const WeightSet<float>& w, const TensorF32& input, Mode mode,
              Rng* rng, ForwardCache<float>& cache) {
  return forward<float>(g, w, input.data(), mode, rng, cache);
}

float predict(const ModelGraph& g, const WeightSet<float>& w, std::span<const float> input) {
  ForwardCache<float> cache;
  return forward<float>(g, w, input, Mode::Eval, nullptr, cache);
}

float predict(const ModelGraph& g, const WeightSet<float>& w, const TensorF32& input) {
  return predict(g, w, input.data());
}

ModelCount count_table1(const ModelGraph& g) {
  ModelCount out;
  for (const auto& c : g.convs) {
    LayerCount l;
    l.name = c.name;
    l.output_shape = {c.height, c.width, c.out_channels};
    l.params = c.out_channels * c.patch_size() + c.out_channels;
    l.activations = c.pixels() * c.out_channels;
    l.macs = l.activations * (c.patch_size() + 1);
    out.layers.push_back(std::move(l));
  }
  for (const auto& d : g.dense) {
    LayerCount l;
    l.name = d.name;
    l.output_shape = {1, d.out};
    l.params = d.out * d.in + d.out;
    l.activations = d.out;
    l.macs = d.out * (d.in + 1);
    out.layers.push_back(std::move(l));
  }
  for (const auto& l : out.layers) {
    out.total_params += l.params;
    out.total_macs += l.macs;
    out.total_activations += l.activations;
  }
  return out;
}

template struct WeightSet<float>;
template struct WeightSet<double>;
template WeightSet<float> zero_weights<float>(const ModelGraph&);
template WeightSet<double> zero_weights<double>(const ModelGraph&);
template void check_weights<float>(const ModelGraph&, const WeightSet<float>&);
template void check_weights<double>(const ModelGraph&, const WeightSet<double>&);
template float forward<float>(const ModelGraph&, const WeightSet<float>&, std::span<const float>,
                              Mode, Rng*, ForwardCache<float>&);
template double forward<double>(const ModelGraph&, const WeightSet<double>&,
                                std::span<const double>, Mode, Rng*, ForwardCache<double>&);

}  // namespace sqp::model
