#pragma once

// Exact emulation of the int8 packed pipeline in dequantized real arithmetic.
// Every float is a dyadic rational m * 2^e, so products and sums of
// dequantized values are computed without rounding in 128-bit integers.

#include <cmath>
#include <cstdint>
#include <vector>

#include "oracles.hpp"
#include "sqp/quantizer.hpp"

namespace emulation {

struct Dyadic {
  __int128 n = 0;
  int e = 0;

  static Dyadic of(float f) {
    int ex = 0;
    const double m = std::frexp(static_cast<double>(f), &ex);
    return {static_cast<__int128>(std::ldexp(m, 24)), ex - 24};
  }
  static Dyadic of_int(std::int64_t v) { return {v, 0}; }

  friend Dyadic operator*(Dyadic a, Dyadic b) { return {a.n * b.n, a.e + b.e}; }
  friend Dyadic operator+(Dyadic a, Dyadic b) {
    if (a.n == 0) return b;
    if (b.n == 0) return a;
    if (a.e > b.e) std::swap(a, b);
    return {a.n + (b.n << (b.e - a.e)), a.e};
  }
  bool nonnegative() const { return n >= 0; }
};

/// Thresholded maps (before pooling) of every conv layer, as 0/1 doubles.
inline std::vector<std::vector<double>> packed_int8_maps(const sqp::quant::QuantizedModel& m,
                                                         const std::vector<float>& input) {
  using sqp::quant::quantize_value;
  const auto& g = m.graph;
  std::vector<std::vector<double>> maps;

  // Layer inputs as dyadic values: dequantized spectrogram, then bits.
  std::vector<Dyadic> x(input.size());
  const auto& iq = m.table.input;
  const Dyadic s_in = Dyadic::of(iq.scale[0]);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto q = quantize_value(input[i], iq.scale[0], iq.zero_point[0], iq.qmin, iq.qmax);
    x[i] = Dyadic::of_int(q - iq.zero_point[0]) * s_in;
  }
  std::size_t C = 1;
  for (std::size_t li = 0; li < g.convs.size(); ++li) {
    const auto& c = g.convs[li];
    const auto& wq = m.conv_weight[li];
    const Dyadic in_scale = li == 0 ? s_in : Dyadic::of(1.0F);
    const std::size_t H = c.height, W = c.width;
    std::vector<double> bits(c.out_channels * H * W);
    for (std::size_t o = 0; o < c.out_channels; ++o) {
      const Dyadic sw = Dyadic::of(wq.qparams.scale[o]);
      const Dyadic bias = Dyadic::of_int(m.conv_bias[li][o]) * sw * in_scale;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          Dyadic s = bias;
          for (std::size_t ci = 0; ci < C; ++ci)
            for (int ky = -1; ky <= 1; ++ky)
              for (int kx = -1; kx <= 1; ++kx) {
                const long yy = static_cast<long>(y) + ky, xs = static_cast<long>(xx) + kx;
                if (yy < 0 || xs < 0 || yy >= static_cast<long>(H) || xs >= static_cast<long>(W))
                  continue;
                const std::size_t k = ((o * C + ci) * 3 + (ky + 1)) * 3 + (kx + 1);
                const Dyadic wv = Dyadic::of_int(wq.values[k]) * sw;
                s = s + wv * x[(ci * H + yy) * W + xs];
              }
          bits[(o * H + y) * W + xx] = s.nonnegative() ? 1.0 : 0.0;
        }
    }
    maps.push_back(bits);
    const auto next = c.pool_after ? oracle::maxpool2(bits, c.out_channels, H, W) : bits;
    x.assign(next.size(), Dyadic{});
    for (std::size_t i = 0; i < next.size(); ++i) x[i] = Dyadic::of_int(next[i] != 0.0);
    C = c.out_channels;
  }
  return maps;
}

}  // namespace emulation
