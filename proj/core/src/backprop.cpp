#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "sqp/trainer.hpp"

namespace sqp::train {

using model::ActivationKind;
using model::ConvSpec;
using model::PoolKind;

namespace {

template <typename T>
T activation_grad(ActivationKind kind, T pre, T graph_beta, T surrogate_beta) {
  switch (kind) {
    case ActivationKind::Identity: return T{1};
    case ActivationKind::ReLU: return pre > T{0} ? T{1} : T{0};
    case ActivationKind::Heaviside: return model::superspike_deriv(pre, surrogate_beta);
    case ActivationKind::Relaxed: return model::superspike_deriv(pre, graph_beta);
  }
  return T{0};
}

template <typename T>
struct Scratch {
  std::vector<T> d_act;
  std::vector<T> d_next;
  std::vector<T> d_cols;
  std::vector<T> kernel_t;
};

}  // namespace

template <typename T>
void backward(const model::ModelGraph& g, const model::WeightSet<T>& w,
              const model::ForwardCache<T>& cache, T dloss_dpred, const SurrogateSpec& surrogate,
              model::WeightSet<T>& grads) {
  if (cache.variant != g.variant || cache.input_h != g.input_h || cache.input_w != g.input_w ||
      cache.conv.size() != g.convs.size() || cache.dense_out.size() != g.dense.size()) {
    throw InvalidArgument("backward: cache was produced by a different graph");
  }
  if (!(surrogate.beta > 0.0)) throw InvalidArgument("backward: surrogate beta must be > 0");
  if (grads.params.size() != w.params.size()) grads = model::zero_weights<T>(g);

  const T graph_beta = static_cast<T>(g.beta);
  const T sur_beta = static_cast<T>(surrogate.beta);
  thread_local Scratch<T> s;

  // Dense head, last to first.
  std::vector<T> upstream{dloss_dpred};
  for (std::size_t li = g.dense.size(); li-- > 0;) {
    const auto& d = g.dense[li];
    const auto& pre = cache.dense_pre[li];
    const Tensor<T>& input = li == 0 ? cache.features : cache.dense_out[li - 1];
    auto& gw = grads.dense_weight(li);
    auto& gb = grads.dense_bias(li);
    const T* W = w.dense_weight(li).raw();
    std::vector<T> d_pre(d.out);
    for (std::size_t o = 0; o < d.out; ++o) {
      d_pre[o] = upstream[o] * activation_grad(d.activation, pre[o], graph_beta, sur_beta);
      gb[o] = d_pre[o];
      for (std::size_t i = 0; i < d.in; ++i) gw[o * d.in + i] = d_pre[o] * input[i];
    }
    std::vector<T> d_in(d.in, T{0});
    for (std::size_t o = 0; o < d.out; ++o) {
      for (std::size_t i = 0; i < d.in; ++i) d_in[i] += W[o * d.in + i] * d_pre[o];
    }
    upstream = std::move(d_in);
  }

  // Global pooling: gradient with respect to the last conv's activation map.
  const ConvSpec& last = g.convs.back();
  const std::size_t last_hw = last.pixels();
  s.d_act.assign(last.out_channels * last_hw, T{0});
  for (std::size_t ch = 0; ch < last.out_channels; ++ch) {
    if (g.final_pool == PoolKind::GlobalMax) {
      s.d_act[ch * last_hw + cache.global_index[ch]] = upstream[ch];
    } else {
      const T share = upstream[ch] / static_cast<T>(last_hw);
      std::fill_n(s.d_act.begin() + static_cast<std::ptrdiff_t>(ch * last_hw), last_hw, share);
    }
  }

  for (std::size_t li = g.convs.size(); li-- > 0;) {
    const ConvSpec& c = g.convs[li];
    const auto& cc = cache.conv[li];
    const std::size_t hw = c.pixels();
    const std::size_t patch = c.patch_size();

    // s.d_act holds dL/d(act) for this layer; turn it into dL/d(pre) in place.
    for (std::size_t i = 0; i < s.d_act.size(); ++i) {
      s.d_act[i] *= activation_grad(c.activation, cc.pre[i], graph_beta, sur_beta);
    }

    auto& gb = grads.conv_bias(li);
    for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
      T acc{0};
      const T* row = s.d_act.data() + oc * hw;
      for (std::size_t i = 0; i < hw; ++i) acc += row[i];
      gb[oc] = acc;
    }

    auto& gw = grads.conv_weight(li);
    gw.fill(T{0});
    kernels::gemm_nt(c.out_channels, patch, hw, s.d_act.data(), hw, cc.cols.raw(), hw, gw.raw(),
                     patch);
    if (c.binary_weights) {
      const auto latent = w.conv_weight(li).data();
      for (std::size_t i = 0; i < latent.size(); ++i) {
        if (std::abs(latent[i]) > T{1}) gw[i] = T{0};
      }
    }

    if (li == 0) break;

    const T* kernel = c.binary_weights ? cc.effective_weight.raw() : w.conv_weight(li).raw();
    s.kernel_t.resize(patch * c.out_channels);
    for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
      for (std::size_t k = 0; k < patch; ++k) s.kernel_t[k * c.out_channels + oc] = kernel[oc * patch + k];
    }
    s.d_cols.assign(patch * hw, T{0});
    kernels::gemm_nn(patch, hw, c.out_channels, s.kernel_t.data(), c.out_channels, s.d_act.data(),
                     hw, s.d_cols.data(), hw);
    s.d_next.resize(c.in_channels * hw);
    kernels::col2im3x3(s.d_cols.data(), c.in_channels, c.height, c.width, s.d_next.data());

    // s.d_next is dL/d(input of this layer) = dL/d(out of the previous layer).
    // Undo the previous layer's dropout and max pool.
    const ConvSpec& prev = g.convs[li - 1];
    const auto& pc = cache.conv[li - 1];
    if (!pc.dropout_scale.empty()) {
      for (std::size_t i = 0; i < s.d_next.size(); ++i) s.d_next[i] *= pc.dropout_scale[i];
    }
    s.d_act.assign(prev.out_channels * prev.pixels(), T{0});
    for (std::size_t i = 0; i < s.d_next.size(); ++i) s.d_act[pc.pool_index[i]] += s.d_next[i];
  }
}

template void backward<float>(const model::ModelGraph&, const model::WeightSet<float>&,
                              const model::ForwardCache<float>&, float, const SurrogateSpec&,
                              model::WeightSet<float>&);
template void backward<double>(const model::ModelGraph&, const model::WeightSet<double>&,
                               const model::ForwardCache<double>&, double, const SurrogateSpec&,
                               model::WeightSet<double>&);

}  // namespace sqp::train
