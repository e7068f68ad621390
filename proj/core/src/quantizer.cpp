#include "sqp/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sqp::quant {

std::int32_t quantize_value(float x, float scale, std::int32_t zero_point, std::int32_t qmin,
                            std::int32_t qmax) noexcept {
  const double r = std::nearbyint(static_cast<double>(x) / static_cast<double>(scale));
  const double q = r + static_cast<double>(zero_point);
  return static_cast<std::int32_t>(std::clamp(q, static_cast<double>(qmin), static_cast<double>(qmax)));
}

float dequantize_value(std::int32_t q, float scale, std::int32_t zero_point) noexcept {
  return static_cast<float>(static_cast<double>(q - zero_point) * static_cast<double>(scale));
}

namespace {

// Number of elements per slice along `axis` and the slice count.
struct SliceLayout {
  std::size_t outer = 1;  // product of dims before axis
  std::size_t count = 1;  // dim at axis
  std::size_t inner = 1;  // product of dims after axis
};

SliceLayout slice_layout(const Shape& shape, const QuantParams& qp) {
  SliceLayout l;
  if (!qp.is_per_channel()) {
    l.inner = shape_numel(shape);
    return l;
  }
  if (qp.axis >= shape.size() || shape[qp.axis] != qp.channels()) {
    throw InvalidArgument("quantize: " + std::to_string(qp.channels()) +
                          " channels do not match axis " + std::to_string(qp.axis) + " of shape " +
                          shape_to_string(shape));
  }
  for (std::size_t d = 0; d < qp.axis; ++d) l.outer *= shape[d];
  l.count = shape[qp.axis];
  for (std::size_t d = qp.axis + 1; d < shape.size(); ++d) l.inner *= shape[d];
  return l;
}

}  // namespace

template <typename Int>
QuantizedTensor<Int> quantize(const TensorF32& x, const QuantParams& qp) {
  qp.validate();
  if (qp.qmin < std::numeric_limits<Int>::min() || qp.qmax > std::numeric_limits<Int>::max()) {
    throw InvalidArgument("quantize: [qmin, qmax] does not fit the integer type");
  }
  const SliceLayout l = slice_layout(x.shape(), qp);
  QuantizedTensor<Int> out{Tensor<Int>(x.shape()), qp};
  std::size_t i = 0;
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.count; ++c) {
      const float s = qp.scale[c];
      const std::int32_t z = qp.zero_point[c];
      for (std::size_t k = 0; k < l.inner; ++k, ++i) {
        out.values[i] = static_cast<Int>(quantize_value(x[i], s, z, qp.qmin, qp.qmax));
      }
    }
  }
  return out;
}

template <typename Int>
TensorF32 dequantize(const QuantizedTensor<Int>& q) {
  q.qparams.validate();
  const SliceLayout l = slice_layout(q.values.shape(), q.qparams);
  TensorF32 out(q.values.shape());
  std::size_t i = 0;
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.count; ++c) {
      const float s = q.qparams.scale[c];
      const std::int32_t z = q.qparams.zero_point[c];
      for (std::size_t k = 0; k < l.inner; ++k, ++i) out[i] = dequantize_value(q.values[i], s, z);
    }
  }
  return out;
}

template QuantizedTensor<std::int8_t> quantize<std::int8_t>(const TensorF32&, const QuantParams&);
template QuantizedTensor<std::uint8_t> quantize<std::uint8_t>(const TensorF32&, const QuantParams&);
template QuantizedTensor<std::int32_t> quantize<std::int32_t>(const TensorF32&, const QuantParams&);
template TensorF32 dequantize<std::int8_t>(const QuantizedTensor<std::int8_t>&);
template TensorF32 dequantize<std::uint8_t>(const QuantizedTensor<std::uint8_t>&);
template TensorF32 dequantize<std::int32_t>(const QuantizedTensor<std::int32_t>&);

QuantParams activation_params(float lo, float hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
    throw InvalidArgument("activation_params: invalid range [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
  }
  lo = std::min(lo, 0.0F);
  hi = std::max(hi, 0.0F);
  if (hi == lo) return QuantParams::per_tensor(1.0F, 0, kActQmin, kActQmax);
  const float scale = static_cast<float>((static_cast<double>(hi) - lo) / (kActQmax - kActQmin));
  const double zp = std::nearbyint(kActQmin - static_cast<double>(lo) / scale);
  const auto z = static_cast<std::int32_t>(std::clamp(zp, double{kActQmin}, double{kActQmax}));
  return QuantParams::per_tensor(scale, z, kActQmin, kActQmax);
}

QuantParams binary_activation_params() {
  return QuantParams::per_tensor(1.0F / 255.0F, 0, kActQmin, kActQmax);
}

// ---------------------------------------------------------------------------
// Histogram observer

HistogramObserver::HistogramObserver(std::size_t bins) : counts_(bins, 0) {
  if (bins < 2) throw InvalidArgument("HistogramObserver: need at least 2 bins");
}

double HistogramObserver::bin_width() const noexcept {
  return (static_cast<double>(hi_) - static_cast<double>(lo_)) / static_cast<double>(counts_.size());
}

double HistogramObserver::bin_center(std::size_t i) const noexcept {
  return static_cast<double>(lo_) + (static_cast<double>(i) + 0.5) * bin_width();
}

std::size_t HistogramObserver::bin_of(double x) const noexcept {
  const double w = bin_width();
  if (!(w > 0.0)) return 0;
  const double f = std::floor((x - static_cast<double>(lo_)) / w);
  if (f <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(f), counts_.size() - 1);
}

void HistogramObserver::observe(std::span<const float> values) {
  if (values.empty()) return;
  float bmin = values[0];
  float bmax = values[0];
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!std::isfinite(v)) {
      throw InvalidArgument("HistogramObserver: non-finite value at index " + std::to_string(i));
    }
    bmin = std::min(bmin, v);
    bmax = std::max(bmax, v);
  }

  if (total_ == 0) {
    lo_ = bmin;
    hi_ = bmax;
  } else if (bmin < lo_ || bmax > hi_) {
    std::vector<std::uint64_t> old(counts_.size(), 0);
    old.swap(counts_);
    const HistogramObserver before = [&] {
      HistogramObserver h(old.size());
      h.lo_ = lo_;
      h.hi_ = hi_;
      return h;
    }();
    lo_ = std::min(lo_, bmin);
    hi_ = std::max(hi_, bmax);
    for (std::size_t i = 0; i < old.size(); ++i) {
      if (old[i] != 0) counts_[bin_of(before.bin_center(i))] += old[i];
    }
  }
  for (float v : values) ++counts_[bin_of(v)];
  total_ += values.size();
}

// ---------------------------------------------------------------------------
// Range search

namespace {

struct Mass {
  double center;
  double count;
};

std::vector<Mass> nonzero_bins(const HistogramObserver& obs) {
  std::vector<Mass> m;
  const auto counts = obs.counts();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] != 0) m.push_back({obs.bin_center(i), static_cast<double>(counts[i])});
  }
  return m;
}

double objective(std::span<const Mass> mass, Range r) {
  const QuantParams qp = activation_params(r.lo, r.hi);
  const float s = qp.scale[0];
  const std::int32_t z = qp.zero_point[0];
  double err = 0.0;
  for (const auto& m : mass) {
    const float c = static_cast<float>(m.center);
    const double d = m.center - dequantize_value(quantize_value(c, s, z, qp.qmin, qp.qmax), s, z);
    err += m.count * d * d;
  }
  return err;
}

Range widen_to_zero(Range r) { return {std::min(r.lo, 0.0F), std::max(r.hi, 0.0F)}; }

}  // namespace

double range_objective(const HistogramObserver& obs, Range r) {
  if (obs.empty()) throw InvalidArgument("range_objective: observer has seen no data");
  const auto mass = nonzero_bins(obs);
  return objective(mass, r);
}

Range range_search(const HistogramObserver& obs) {
  if (obs.empty()) throw InvalidArgument("range_search: observer has seen no data");
  const Range full = widen_to_zero({obs.min(), obs.max()});
  if (!(obs.bin_width() > 0.0)) return full;

  const auto mass = nonzero_bins(obs);
  const std::size_t n = obs.bins();
  const double lo = obs.min();
  const double w = obs.bin_width();
  auto range_of = [&](std::size_t a, std::size_t b) {
    // The outermost edges are the observed extremes themselves.
    const float rlo = a == 0 ? obs.min() : static_cast<float>(lo + static_cast<double>(a) * w);
    const float rhi = b + 1 == n ? obs.max() : static_cast<float>(lo + static_cast<double>(b + 1) * w);
    return widen_to_zero({rlo, rhi});
  };

  std::size_t best_a = 0;
  std::size_t best_b = n - 1;
  double best = objective(mass, full);
  auto consider = [&](std::size_t a, std::size_t b) {
    const double e = objective(mass, range_of(a, b));
    if (e < best || (e == best && b - a > best_b - best_a)) {
      best = e;
      best_a = a;
      best_b = b;
    }
  };

  constexpr std::size_t kCoarse = 32;
  for (std::size_t a = 0; a < n; a += kCoarse) {
    for (std::size_t b = n - 1;; b -= kCoarse) {
      if (b < a) break;
      consider(a, b);
      if (b < kCoarse) break;
    }
  }
  const std::size_t ca = best_a;
  const std::size_t cb = best_b;
  const std::size_t a_lo = ca > kCoarse ? ca - kCoarse : 0;
  const std::size_t a_hi = std::min(n - 1, ca + kCoarse);
  const std::size_t b_lo = cb > kCoarse ? cb - kCoarse : 0;
  const std::size_t b_hi = std::min(n - 1, cb + kCoarse);
  for (std::size_t a = a_lo; a <= a_hi; ++a) {
    for (std::size_t b = std::max(a, b_lo); b <= b_hi; ++b) consider(a, b);
  }
  return range_of(best_a, best_b);
}

// ---------------------------------------------------------------------------
// Per-channel observer

PerChannelObserver::PerChannelObserver(std::size_t channels)
    : mins_(channels, 0.0F), maxs_(channels, 0.0F) {
  if (channels == 0) throw InvalidArgument("PerChannelObserver: zero channels");
}

void PerChannelObserver::observe(const TensorF32& t) {
  if (t.rank() == 0 || t.dim(0) != mins_.size()) {
    throw InvalidArgument("PerChannelObserver: expected " + std::to_string(mins_.size()) +
                          " channels along axis 0, got shape " + shape_to_string(t.shape()));
  }
  const std::size_t inner = t.numel() / t.dim(0);
  if (inner == 0) return;
  for (std::size_t c = 0; c < mins_.size(); ++c) {
    const auto slice = t.data().subspan(c * inner, inner);
    const auto [mn, mx] = std::minmax_element(slice.begin(), slice.end());
    if (!std::isfinite(*mn) || !std::isfinite(*mx)) {
      throw InvalidArgument("PerChannelObserver: non-finite value in channel " + std::to_string(c));
    }
    mins_[c] = seen_ ? std::min(mins_[c], *mn) : *mn;
    maxs_[c] = seen_ ? std::max(maxs_[c], *mx) : *mx;
  }
  seen_ = true;
}

QuantParams PerChannelObserver::symmetric_params() const {
  if (!seen_) throw InvalidArgument("PerChannelObserver: no data observed");
  std::vector<float> scales(mins_.size());
  std::vector<std::int32_t> zps(mins_.size(), 0);
  for (std::size_t c = 0; c < mins_.size(); ++c) {
    // The larger side lands exactly on its end of the grid: -128 or 127.
    const double neg = -static_cast<double>(std::min(mins_[c], 0.0F));
    const double pos = std::max(maxs_[c], 0.0F);
    if (neg == 0.0 && pos == 0.0) {
      scales[c] = 1.0F;
    } else {
      scales[c] = static_cast<float>(neg >= pos ? neg / -kWeightQmin : pos / kWeightQmax);
    }
  }
  return QuantParams::per_channel(std::move(scales), std::move(zps), kWeightQmin, kWeightQmax, 0);
}

// ---------------------------------------------------------------------------
// Calibration

data::Dataset calibration_subset(const data::Dataset& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("calibration_subset: fraction must lie in (0, 1]");
  }
  if (train.records.empty()) throw InvalidArgument("calibration_subset: empty training set");
  const std::size_t n = train.size();
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, 0xca11b, 0);
  rng.shuffle(std::span(idx));
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  data::Dataset out = train;
  out.records.clear();
  for (std::size_t i : idx) out.records.push_back(train.records[i]);
  return out;
}

namespace {

// Kernels as the forward pass sees them (sign(w) for binary-weight layers).
TensorF32 effective_conv_weight(const model::ConvSpec& c, const TensorF32& w) {
  if (!c.binary_weights) return w;
  TensorF32 e(w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) e[i] = model::sign_weight(w[i]);
  return e;
}

QuantParams from_histogram(const HistogramObserver& h) {
  const Range r = range_search(h);
  return activation_params(r.lo, r.hi);
}

}  // namespace

CalibrationTable calibrate(const model::ModelGraph& g, const model::WeightSet<float>& w,
                           const data::Dataset& calib) {
  g.validate();
  model::check_weights(g, w);
  if (calib.records.empty()) throw InvalidArgument("calibrate: empty calibration set");
  if (calib.frames != g.input_h || calib.n_mels != g.input_w) {
    throw InvalidArgument("calibrate: calibration inputs do not match the graph input shape");
  }

  HistogramObserver input_obs;
  std::vector<HistogramObserver> conv_obs(g.convs.size());
  HistogramObserver feature_obs;
  std::vector<HistogramObserver> dense_obs(g.dense.size());
  model::ForwardCache<float> cache;
  for (const auto& r : calib.records) {
    model::forward<float>(g, w, r.spec.data(), model::Mode::Eval, nullptr, cache);
    input_obs.observe(r.spec.data());
    for (std::size_t li = 0; li < g.convs.size(); ++li) conv_obs[li].observe(cache.conv[li].act.data());
    feature_obs.observe(cache.features.data());
    for (std::size_t li = 0; li < g.dense.size(); ++li) dense_obs[li].observe(cache.dense_out[li].data());
  }

  CalibrationTable t;
  t.samples = calib.size();
  t.input = from_histogram(input_obs);
  for (std::size_t li = 0; li < g.convs.size(); ++li) {
    const auto& c = g.convs[li];
    PerChannelObserver wobs(c.out_channels);
    wobs.observe(effective_conv_weight(c, w.conv_weight(li)));
    t.conv_weight.push_back(wobs.symmetric_params());
    t.conv_out.push_back(c.activation == model::ActivationKind::Heaviside
                             ? binary_activation_params()
                             : from_histogram(conv_obs[li]));
  }
  t.features = from_histogram(feature_obs);
  for (std::size_t li = 0; li < g.dense.size(); ++li) {
    PerChannelObserver wobs(g.dense[li].out);
    wobs.observe(w.dense_weight(li));
    t.dense_weight.push_back(wobs.symmetric_params());
    t.dense_out.push_back(from_histogram(dense_obs[li]));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Model quantization

float conv_input_scale(const QuantizedModel& m, std::size_t li) {
  if (li == 0) return m.table.input.scale.at(0);
  if (m.target == Target::Packed) return 1.0F;
  return m.table.conv_out.at(li - 1).scale.at(0);
}

float dense_input_scale(const QuantizedModel& m, std::size_t li) {
  if (li == 0) return m.table.features.scale.at(0);
  return m.table.dense_out.at(li - 1).scale.at(0);
}

namespace {

Tensor<std::int32_t> quantize_bias(const TensorF32& b, const QuantParams& wq, float input_scale) {
  Tensor<std::int32_t> out(b.shape());
  for (std::size_t i = 0; i < b.numel(); ++i) {
    const double s = static_cast<double>(wq.scale[i]) * static_cast<double>(input_scale);
    const double q = std::nearbyint(static_cast<double>(b[i]) / s);
    out[i] = static_cast<std::int32_t>(std::clamp(
        q, static_cast<double>(std::numeric_limits<std::int32_t>::min()),
        static_cast<double>(std::numeric_limits<std::int32_t>::max())));
  }
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument("quantize_model: " + what);
}

}  // namespace

QuantizedModel quantize_model(const model::ModelGraph& g, const model::WeightSet<float>& w,
                              const CalibrationTable& table, Target target) {
  g.validate();
  model::check_weights(g, w);
  require(table.conv_weight.size() == g.convs.size(), "missing conv weight parameters");
  require(table.conv_out.size() == g.convs.size(), "missing conv activation parameters");
  require(table.dense_weight.size() == g.dense.size(), "missing dense weight parameters");
  require(table.dense_out.size() == g.dense.size(), "missing dense activation parameters");
  require(!table.input.scale.empty() && !table.features.scale.empty(),
          "missing input or feature parameters");
  if (target == Target::Packed) {
    for (const auto& c : g.convs) {
      require(c.activation == model::ActivationKind::Heaviside,
              "the packed target needs Heaviside activations in every conv layer");
    }
  }

  QuantizedModel m;
  m.graph = g;
  m.target = target;
  m.table = table;
  m.float_weights = w;
  for (std::size_t li = 0; li < g.convs.size(); ++li) {
    const auto& c = g.convs[li];
    const QuantParams& wq = table.conv_weight[li];
    require(wq.channels() == c.out_channels, "conv weight parameters have the wrong channel count");
    m.conv_weight.push_back(quantize<std::int8_t>(effective_conv_weight(c, w.conv_weight(li)), wq));
    m.conv_bias.push_back(quantize_bias(w.conv_bias(li), wq, conv_input_scale(m, li)));
  }
  for (std::size_t li = 0; li < g.dense.size(); ++li) {
    const QuantParams& wq = table.dense_weight[li];
    require(wq.channels() == g.dense[li].out, "dense weight parameters have the wrong unit count");
    m.dense_weight.push_back(quantize<std::int8_t>(w.dense_weight(li), wq));
    m.dense_bias.push_back(quantize_bias(w.dense_bias(li), wq, dense_input_scale(m, li)));
  }
  return m;
}

model::WeightSet<float> dequantized_weights(const QuantizedModel& m) {
  model::WeightSet<float> w = m.float_weights;
  auto bias_back = [](const Tensor<std::int32_t>& b, const QuantParams& wq, float input_scale) {
    TensorF32 out(b.shape());
    for (std::size_t i = 0; i < b.numel(); ++i) {
      out[i] = static_cast<float>(static_cast<double>(b[i]) * wq.scale[i] * input_scale);
    }
    return out;
  };
  for (std::size_t li = 0; li < m.graph.convs.size(); ++li) {
    w.conv_weight(li) = dequantize(m.conv_weight[li]);
    w.conv_bias(li) = bias_back(m.conv_bias[li], m.conv_weight[li].qparams, conv_input_scale(m, li));
  }
  for (std::size_t li = 0; li < m.graph.dense.size(); ++li) {
    w.dense_weight(li) = dequantize(m.dense_weight[li]);
    w.dense_bias(li) =
        bias_back(m.dense_bias[li], m.dense_weight[li].qparams, dense_input_scale(m, li));
  }
  return w;
}

}  // namespace sqp::quant
