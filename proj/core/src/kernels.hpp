#pragma once

// Dense kernels shared by the reference forward pass, backprop and the engines.
//
// Every output element of gemm_nn is accumulated strictly in k order starting
// from the value already in C. The packed engine relies on this: with a
// {0,1} right-hand side, "add w_k when bit k is set" walks the same sequence
// of float additions and so produces identical preactivations.

#include <algorithm>
#include <cstddef>

namespace sqp::kernels {

template <typename T>
inline constexpr std::size_t kLanes = 32 / sizeof(T);  // one 256-bit vector

template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(32)));
};
template <typename T>
using vec_t = typename Vec<T>::type;

template <typename T>
inline vec_t<T> load(const T* p) {
  vec_t<T> v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}
template <typename T>
inline void store(T* p, vec_t<T> v) {
  __builtin_memcpy(p, &v, sizeof(v));
}

/// C[M x N] += A[M x K] * B[K x N], all row-major.
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* __restrict A, std::size_t lda,
             const T* __restrict B, std::size_t ldb, T* __restrict C, std::size_t ldc) {
  using V = vec_t<T>;
  constexpr std::size_t L = kLanes<T>;
  constexpr std::size_t MR = 6;
  constexpr std::size_t NR = 2 * L;
  std::size_t n = 0;
  for (; n + NR <= N; n += NR) {
    std::size_t m = 0;
    for (; m + MR <= M; m += MR) {
      V c[MR][2];
      for (std::size_t i = 0; i < MR; ++i) {
        c[i][0] = load(C + (m + i) * ldc + n);
        c[i][1] = load(C + (m + i) * ldc + n + L);
      }
      const T* a = A + m * lda;
      const T* b = B + n;
      for (std::size_t k = 0; k < K; ++k, b += ldb) {
        const V b0 = load(b);
        const V b1 = load(b + L);
#pragma GCC unroll 6
        for (std::size_t i = 0; i < MR; ++i) {
          const V x = V{} + a[i * lda + k];
          c[i][0] += x * b0;
          c[i][1] += x * b1;
        }
      }
      for (std::size_t i = 0; i < MR; ++i) {
        store(C + (m + i) * ldc + n, c[i][0]);
        store(C + (m + i) * ldc + n + L, c[i][1]);
      }
    }
    for (; m < M; ++m) {
      V c0 = load(C + m * ldc + n);
      V c1 = load(C + m * ldc + n + L);
      const T* b = B + n;
      for (std::size_t k = 0; k < K; ++k, b += ldb) {
        const V x = V{} + A[m * lda + k];
        c0 += x * load(b);
        c1 += x * load(b + L);
      }
      store(C + m * ldc + n, c0);
      store(C + m * ldc + n + L, c1);
    }
  }
  if (n < N) {
    const std::size_t rem = N - n;
    for (std::size_t m = 0; m < M; ++m) {
      T acc[NR];
      for (std::size_t j = 0; j < rem; ++j) acc[j] = C[m * ldc + n + j];
      for (std::size_t k = 0; k < K; ++k) {
        const T x = A[m * lda + k];
        const T* b = B + k * ldb + n;
        for (std::size_t j = 0; j < rem; ++j) acc[j] += x * b[j];
      }
      for (std::size_t j = 0; j < rem; ++j) C[m * ldc + n + j] = acc[j];
    }
  }
}

/// C[M x P] += A[M x N] * B[P x N]^T (row-wise dot products over N).
template <typename T>
void gemm_nt(std::size_t M, std::size_t P, std::size_t N, const T* __restrict A, std::size_t lda,
             const T* __restrict B, std::size_t ldb, T* __restrict C, std::size_t ldc) {
  constexpr std::size_t MR = 4;
  constexpr std::size_t PR = 2;
  constexpr std::size_t L = kLanes<T>;
  const std::size_t n_vec = N - N % L;

  using V = vec_t<T>;
  auto dot_tile = [&](std::size_t m, std::size_t p, std::size_t mr, std::size_t pr) {
    V acc[MR][PR] = {};
    if (mr == MR && pr == PR) {
      for (std::size_t n = 0; n < n_vec; n += L) {
        const V b0 = load(B + p * ldb + n);
        const V b1 = load(B + (p + 1) * ldb + n);
#pragma GCC unroll 4
        for (std::size_t i = 0; i < MR; ++i) {
          const V a = load(A + (m + i) * lda + n);
          acc[i][0] += a * b0;
          acc[i][1] += a * b1;
        }
      }
    } else {
      for (std::size_t n = 0; n < n_vec; n += L) {
        for (std::size_t i = 0; i < mr; ++i) {
          const V a = load(A + (m + i) * lda + n);
          for (std::size_t q = 0; q < pr; ++q) acc[i][q] += a * load(B + (p + q) * ldb + n);
        }
      }
    }
    for (std::size_t i = 0; i < mr; ++i) {
      for (std::size_t q = 0; q < pr; ++q) {
        T s = T{0};
        for (std::size_t l = 0; l < L; ++l) s += acc[i][q][l];
        const T* a = A + (m + i) * lda;
        const T* b = B + (p + q) * ldb;
        for (std::size_t n = n_vec; n < N; ++n) s += a[n] * b[n];
        C[(m + i) * ldc + p + q] += s;
      }
    }
  };

  std::size_t m = 0;
  for (; m + MR <= M; m += MR) {
    std::size_t p = 0;
    for (; p + PR <= P; p += PR) dot_tile(m, p, MR, PR);
    for (; p < P; ++p) dot_tile(m, p, MR, 1);
  }
  for (; m < M; ++m) {
    for (std::size_t p = 0; p < P; ++p) dot_tile(m, p, 1, 1);
  }
}

/// Patch matrix for a 3x3, stride-1, zero-pad-1 convolution on a CHW input.
/// Row index is ic*9 + ky*3 + kx; column index is y*W + x.
template <typename T>
void im2col3x3(const T* __restrict in, std::size_t channels, std::size_t h, std::size_t w,
               T* __restrict cols) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = in + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = cols + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          T* dst = row + y * w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            dst[0] = T{0};
            std::copy(src, src + w - 1, dst + 1);
          } else if (kx == 1) {
            std::copy(src, src + w, dst);
          } else {
            std::copy(src + 1, src + w, dst);
            dst[w - 1] = T{0};
          }
        }
      }
    }
  }
}

/// Adjoint of im2col3x3: scatters patch gradients back onto the input.
template <typename T>
void col2im3x3(const T* __restrict cols, std::size_t channels, std::size_t h, std::size_t w,
               T* __restrict out) {
  const std::size_t hw = h * w;
  std::fill(out, out + channels * hw, T{0});
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = out + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = cols + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src = row + y * w;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            for (std::size_t x = 1; x < w; ++x) dst[x - 1] += src[x];
          } else if (kx == 1) {
            for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
          } else {
            for (std::size_t x = 0; x + 1 < w; ++x) dst[x + 1] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace sqp::kernels
