#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "sqp/quantizer.hpp"

using namespace sqp;
using namespace sqp::quant;

TEST(Quantize, FormulaExamples) {
  EXPECT_EQ(quantize_value(1.27F, 0.1F, 0, -128, 127), 13);
  EXPECT_FLOAT_EQ(dequantize_value(13, 0.1F, 0), 1.3F);
  // Half to even.
  EXPECT_EQ(quantize_value(0.5F, 1.0F, 0, -128, 127), 0);
  EXPECT_EQ(quantize_value(1.5F, 1.0F, 0, -128, 127), 2);
  EXPECT_EQ(quantize_value(-2.5F, 1.0F, 0, -128, 127), -2);
  // Clamping.
  EXPECT_EQ(quantize_value(1e6F, 0.1F, 3, 0, 255), 255);
  EXPECT_EQ(quantize_value(-1e6F, 0.1F, 3, 0, 255), 0);
}

TEST(Quantize, ZeroTensorMapsToZeroPoint) {
  const TensorF32 x(Shape{4, 5}, 0.0F);
  const auto qp = QuantParams::per_tensor(0.037F, 91, 0, 255);
  const auto q = quantize<std::uint8_t>(x, qp);
  for (auto v : q.values.data()) EXPECT_EQ(v, 91);
  const auto dq = dequantize(q);
  for (auto v : dq.data()) EXPECT_EQ(v, 0.0F);
}

TEST(Quantize, RoundTripErrorWithinHalfScale) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const double lo = rng.uniform(-10, 0), hi = rng.uniform(0.01, 10);
    const auto qp = activation_params(static_cast<float>(lo), static_cast<float>(hi));
    const auto x = oracle::random_tensor(Shape{257}, rng, lo, hi);
    const auto dq = dequantize(quantize<std::uint8_t>(x, qp));
    const double s = qp.scale[0];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      // The grid covers [lo, hi] up to float rounding of the scale.
      const double edge_lo = (qp.qmin - qp.zero_point[0]) * s;
      const double edge_hi = (qp.qmax - qp.zero_point[0]) * s;
      if (x[i] < edge_lo || x[i] > edge_hi) continue;
      ASSERT_LE(std::abs(double(x[i]) - dq[i]), s / 2 * (1 + 1e-6)) << trial;
    }
  }
}

TEST(Quantize, IdempotentOnGridPoints) {
  const auto qp = QuantParams::per_tensor(0.125F, 7, 0, 255);
  TensorF32 x(Shape{256});
  for (int q = 0; q < 256; ++q) x[q] = dequantize_value(q, 0.125F, 7);
  const auto q1 = quantize<std::uint8_t>(x, qp);
  for (int q = 0; q < 256; ++q) EXPECT_EQ(q1.values[q], q);
  EXPECT_EQ(dequantize(q1), x);
}

TEST(Quantize, PerChannelAlongAxis) {
  TensorF32 x(Shape{2, 3}, std::vector<float>{1, 2, 3, 1, 2, 3});
  const auto qp = QuantParams::per_channel({1.0F, 0.5F}, {0, 0}, -128, 127, 0);
  const auto q = quantize<std::int8_t>(x, qp);
  EXPECT_EQ(q.values.storage(), (std::vector<std::int8_t>{1, 2, 3, 2, 4, 6}));
  const auto qp1 = QuantParams::per_channel({1.0F, 0.5F, 0.25F}, {0, 0, 0}, -128, 127, 1);
  EXPECT_EQ(quantize<std::int8_t>(x, qp1).values.storage(),
            (std::vector<std::int8_t>{1, 4, 12, 1, 4, 12}));
  EXPECT_THROW(quantize<std::int8_t>(x, QuantParams::per_channel({1, 1, 1}, {0, 0, 0}, -128, 127, 0)),
               InvalidArgument);
}

TEST(Quantize, RejectsInvalidParams) {
  TensorF32 x(Shape{2}, 1.0F);
  EXPECT_THROW(quantize<std::uint8_t>(x, QuantParams::per_tensor(0.0F, 0, 0, 255)), InvalidArgument);
  EXPECT_THROW(quantize<std::uint8_t>(x, QuantParams::per_tensor(1.0F, 300, 0, 255)), InvalidArgument);
  EXPECT_THROW(quantize<std::int8_t>(x, QuantParams::per_tensor(1.0F, 0, 0, 255)), InvalidArgument);
}

TEST(ActivationParams, ZeroExactlyRepresentable) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const float a = static_cast<float>(rng.uniform(-50, 50));
    const float b = a + static_cast<float>(rng.uniform(0, 50));
    const auto qp = activation_params(a, b);
    const int q = quantize_value(0.0F, qp.scale[0], qp.zero_point[0], qp.qmin, qp.qmax);
    ASSERT_EQ(dequantize_value(q, qp.scale[0], qp.zero_point[0]), 0.0F) << a << " " << b;
  }
  const auto deg = activation_params(0.0F, 0.0F);
  EXPECT_EQ(deg.zero_point[0], 0);
  EXPECT_THROW(activation_params(1.0F, 0.0F), InvalidArgument);
  EXPECT_THROW(activation_params(0.0F, INFINITY), InvalidArgument);
}

TEST(ActivationParams, BinaryGridHoldsZeroAndOne) {
  const auto qp = binary_activation_params();
  for (float v : {0.0F, 1.0F}) {
    const int q = quantize_value(v, qp.scale[0], qp.zero_point[0], qp.qmin, qp.qmax);
    EXPECT_FLOAT_EQ(dequantize_value(q, qp.scale[0], qp.zero_point[0]), v);
  }
}

// ---------------------------------------------------------------------------
// Histogram and range search

TEST(Histogram, TracksRangeAndMass) {
  HistogramObserver h(16);
  EXPECT_TRUE(h.empty());
  std::vector<float> a{0, 1, 2, 3};
  h.observe(a);
  EXPECT_EQ(h.min(), 0.0F);
  EXPECT_EQ(h.max(), 3.0F);
  std::vector<float> b{-1, 7};
  h.observe(b);
  EXPECT_EQ(h.min(), -1.0F);
  EXPECT_EQ(h.max(), 7.0F);
  std::uint64_t s = 0;
  for (auto c : h.counts()) s += c;
  EXPECT_EQ(s, 6U);
  EXPECT_EQ(h.total(), 6U);
  std::vector<float> bad{1, NAN};
  EXPECT_THROW(h.observe(bad), InvalidArgument);
}

TEST(RangeSearch, EmptyObserverRejected) {
  HistogramObserver h;
  EXPECT_THROW(range_search(h), InvalidArgument);
  EXPECT_THROW(range_objective(h, {0, 1}), InvalidArgument);
}

TEST(RangeSearch, ConstantDataCollapsesToZeroAndValue) {
  for (float c : {2.5F, -1.25F, 0.0F}) {
    HistogramObserver h;
    std::vector<float> v(100, c);
    h.observe(v);
    const auto r = range_search(h);
    EXPECT_EQ(r.lo, std::min(c, 0.0F));
    EXPECT_EQ(r.hi, std::max(c, 0.0F));
  }
}

namespace {

// Every [edge(a), edge(b + 1)] sub-range, widened to contain 0.
double brute_force_best(const HistogramObserver& h, Range* arg) {
  const std::size_t n = h.bins();
  const double w = h.bin_width();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      const float lo = a == 0 ? h.min() : static_cast<float>(h.min() + a * w);
      const float hi = b + 1 == n ? h.max() : static_cast<float>(h.min() + (b + 1) * w);
      const Range r{std::min(lo, 0.0F), std::max(hi, 0.0F)};
      const double e = range_objective(h, r);
      if (e < best) {
        best = e;
        if (arg) *arg = r;
      }
    }
  return best;
}

}  // namespace

TEST(RangeSearch, OutlierIsClipped) {
  // Clipping the outlier to m costs (100 - m)^2 while the grid spacing m / 255
  // costs about n (m / 255)^2 / 12 over the bulk, so with n = 4e6 the best
  // upper end sits near 16.
  Rng rng(5);
  HistogramObserver h;
  std::vector<float> v(4'000'000);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  v.push_back(100.0F);
  h.observe(v);
  Range bf;
  const double best = brute_force_best(h, &bf);
  const auto r = range_search(h);
  EXPECT_LT(bf.hi, 25.0F);
  EXPECT_LT(r.hi, 25.0F);
  EXPECT_GT(r.hi, 1.0F);
  EXPECT_LT(range_objective(h, r), 0.5 * range_objective(h, {0.0F, 100.0F}));
  EXPECT_GE(range_objective(h, r), best);
  EXPECT_LE(range_objective(h, r), 1.05 * best);
}

TEST(RangeSearch, MatchesBruteForceOnSmallHistograms) {
  // With 32 bins the fine pass reaches every candidate.
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    HistogramObserver h(32);
    std::vector<float> v(800);
    const double mu = rng.uniform(-3, 3), sd = rng.uniform(0.1, 4);
    for (auto& x : v) x = static_cast<float>(mu + sd * rng.normal());
    if (trial % 2) v[0] = static_cast<float>(mu + 40 * sd);
    h.observe(v);
    EXPECT_DOUBLE_EQ(range_objective(h, range_search(h)), brute_force_best(h, nullptr)) << trial;
  }
}

TEST(RangeSearch, NeverWorseThanFullRangeOn50Histograms) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    HistogramObserver h;
    const int batches = 1 + static_cast<int>(rng.below(3));
    for (int b = 0; b < batches; ++b) {
      std::vector<float> v(2000);
      const int kind = static_cast<int>(rng.below(3));
      const double mu = rng.uniform(-5, 5), sd = rng.uniform(0.01, 5);
      for (auto& x : v) {
        if (kind == 0) x = static_cast<float>(mu + sd * rng.normal());
        else if (kind == 1) x = static_cast<float>(rng.uniform(mu - sd, mu + sd));
        else x = static_cast<float>(std::max(0.0, mu + sd * rng.normal()));
      }
      if (rng.bernoulli(0.3)) v[0] = static_cast<float>(mu + 50 * sd);
      h.observe(v);
    }
    const auto r = range_search(h);
    const Range full{std::min(h.min(), 0.0F), std::max(h.max(), 0.0F)};
    EXPECT_LE(range_objective(h, r), range_objective(h, full)) << trial;
    EXPECT_LE(r.lo, 0.0F);
    EXPECT_GE(r.hi, 0.0F);
  }
}

// ---------------------------------------------------------------------------
// Weights

TEST(PerChannel, SymmetricParamsUseFullGrid) {
  Rng rng(9);
  auto w = oracle::random_tensor(Shape{8, 4, 3, 3}, rng, -0.7, 0.7);
  for (std::size_t i = 36 * 7; i < 36 * 8; ++i) w[i] = 0.0F;  // constant channel
  PerChannelObserver obs(8);
  obs.observe(w);
  const auto qp = obs.symmetric_params();
  ASSERT_EQ(qp.channels(), 8U);
  EXPECT_EQ(qp.scale[7], 1.0F);
  const auto q = quantize<std::int8_t>(w, qp);
  const auto dq = dequantize(q);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_EQ(qp.zero_point[c], 0);
    int lo = 0, hi = 0;
    float mn = 0, mx = 0;
    for (std::size_t i = c * 36; i < (c + 1) * 36; ++i) {
      lo = std::min<int>(lo, q.values[i]);
      hi = std::max<int>(hi, q.values[i]);
      mn = std::min(mn, w[i]);
      mx = std::max(mx, w[i]);
    }
    if (c == 7) {
      EXPECT_EQ(lo, 0);
      EXPECT_EQ(hi, 0);
      continue;
    }
    EXPECT_TRUE(lo == -128 || hi == 127) << c;
    EXPECT_EQ(-mn >= mx ? lo : hi, -mn >= mx ? -128 : 127) << c;
    for (std::size_t i = c * 36; i < (c + 1) * 36; ++i)
      EXPECT_LE(std::abs(w[i] - dq[i]), (mx - mn) / 128.0F) << c;
  }
}

TEST(PerChannel, RejectsWrongChannelCount) {
  PerChannelObserver obs(3);
  EXPECT_THROW(obs.observe(TensorF32(Shape{4, 2})), InvalidArgument);
  EXPECT_THROW(obs.symmetric_params(), InvalidArgument);
  EXPECT_THROW(PerChannelObserver(0), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Calibration and model quantization

namespace {

data::Dataset random_set(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<data::SampleRecord> recs;
  for (std::size_t i = 0; i < n; ++i)
    recs.push_back({oracle::random_tensor(Shape{h, w}, rng, -10, 2), 2.0F, -1});
  return data::make_dataset(std::move(recs));
}

}  // namespace

TEST(Calibrate, SubsetSizeAndOrder) {
  const auto ds = random_set(50, 4, 4, 1);
  const auto sub = calibration_subset(ds, 0.2, 3);
  EXPECT_EQ(sub.size(), 10U);
  EXPECT_EQ(calibration_subset(ds, 0.001, 3).size(), 1U);
  EXPECT_EQ(calibration_subset(ds, 0.2, 3).records[0].spec, sub.records[0].spec);
  EXPECT_THROW(calibration_subset(ds, 0.0, 3), InvalidArgument);
  // Original order preserved.
  std::size_t last = 0;
  for (const auto& r : sub.records) {
    std::size_t idx = 0;
    while (!(ds.records[idx].spec == r.spec)) ++idx;
    EXPECT_GE(idx, last);
    last = idx;
  }
}

TEST(Calibrate, CompleteDeterministicTable) {
  const auto g = model::make_graph(model::Variant::Baseline, 20, 12);
  const auto w = model::init_weights(g, 4);
  const auto ds = random_set(6, 20, 12, 2);
  const auto t = calibrate(g, w, ds);
  EXPECT_EQ(t.samples, 6U);
  EXPECT_EQ(t.conv_weight.size(), 4U);
  EXPECT_EQ(t.conv_out.size(), 4U);
  EXPECT_EQ(t.dense_weight.size(), 3U);
  EXPECT_EQ(t.dense_out.size(), 3U);
  EXPECT_EQ(t.conv_weight[1].channels(), 32U);
  EXPECT_EQ(t.dense_weight[2].channels(), 1U);
  EXPECT_EQ(t, calibrate(g, w, ds));

  data::Dataset one = ds;
  one.records.resize(1);
  const auto t1 = calibrate(g, w, one);
  EXPECT_NO_THROW(t1.input.validate());

  data::Dataset empty = ds;
  empty.records.clear();
  EXPECT_THROW(calibrate(g, w, empty), InvalidArgument);
}

TEST(Calibrate, HeavisideOutputsUseBinaryGrid) {
  const auto g = model::make_graph(model::Variant::Bam, 20, 12);
  const auto t = calibrate(g, model::init_weights(g, 1), random_set(3, 20, 12, 5));
  for (const auto& q : t.conv_out) EXPECT_EQ(q, binary_activation_params());
}

TEST(QuantizeModel, WeightsAndBiasesOnProductScale) {
  const auto g = model::make_graph(model::Variant::Bam, 20, 12);
  auto w = model::init_weights(g, 2);
  Rng rng(8);
  for (std::size_t li = 0; li < 4; ++li)
    for (auto& b : w.conv_bias(li).data()) b = static_cast<float>(rng.uniform(-0.3, 0.3));
  const auto t = calibrate(g, w, random_set(4, 20, 12, 6));
  const auto m = quantize_model(g, w, t, Target::Packed);
  const auto dq = dequantized_weights(m);
  for (std::size_t li = 0; li < 4; ++li) {
    const auto& qp = m.conv_weight[li].qparams;
    const float s_in = li == 0 ? t.input.scale[0] : 1.0F;
    EXPECT_EQ(conv_input_scale(m, li), s_in);
    const std::size_t per = w.conv_weight(li).numel() / qp.channels();
    for (std::size_t c = 0; c < qp.channels(); ++c) {
      const double bs = double(qp.scale[c]) * s_in;
      EXPECT_EQ(m.conv_bias[li][c], static_cast<std::int32_t>(std::nearbyint(w.conv_bias(li)[c] / bs)));
      EXPECT_LE(std::abs(dq.conv_bias(li)[c] - w.conv_bias(li)[c]), bs / 2 * 1.0001);
      // Values above the top grid point clamp to it.
      for (std::size_t i = c * per; i < (c + 1) * per; ++i) {
        const double v = w.conv_weight(li)[i], s = qp.scale[c];
        const double bound = v > 127 * s ? v - 127 * s : s / 2;
        EXPECT_LE(std::abs(dq.conv_weight(li)[i] - v), bound * 1.0001 + 1e-6);
      }
    }
  }
  // Re-quantizing the dequantized weights is exact.
  const auto m2 = quantize_model(g, dq, t, Target::Packed);
  for (std::size_t li = 0; li < 4; ++li) EXPECT_EQ(m2.conv_weight[li].values, m.conv_weight[li].values);
  for (std::size_t li = 0; li < 3; ++li) EXPECT_EQ(m2.dense_weight[li].values, m.dense_weight[li].values);
}

TEST(QuantizeModel, BinaryWeightLayersStoreSigns) {
  const auto g = model::make_graph(model::Variant::BamBinaryWeights, 20, 12);
  const auto w = model::init_weights(g, 3);
  const auto m = quantize_model(g, w, calibrate(g, w, random_set(2, 20, 12, 1)), Target::Packed);
  for (std::size_t li = 0; li < 4; ++li)
    for (auto v : m.conv_weight[li].values.data()) EXPECT_TRUE(v == 127 || v == -128);
}

TEST(QuantizeModel, RejectsIncompleteTableAndWrongTarget) {
  const auto g = model::make_graph(model::Variant::Baseline, 20, 12);
  const auto w = model::init_weights(g, 3);
  auto t = calibrate(g, w, random_set(2, 20, 12, 1));
  EXPECT_THROW(quantize_model(g, w, t, Target::Packed), InvalidArgument);
  EXPECT_NO_THROW(quantize_model(g, w, t, Target::Dense8));
  t.conv_out.pop_back();
  EXPECT_THROW(quantize_model(g, w, t, Target::Dense8), InvalidArgument);
}
