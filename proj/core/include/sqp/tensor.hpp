#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sqp/error.hpp"

namespace sqp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(std::span<const std::size_t> shape);
std::string shape_to_string(std::span<const std::size_t> shape);

/// Dense row-major array with shape metadata.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw InvalidArgument("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF32 = Tensor<float>;
using TensorF64 = Tensor<double>;

/// Affine quantization parameters, real = scale * (q - zero_point).
///
/// A single scale/zero-point pair is per-tensor; otherwise there is one entry
/// per slice along `axis` (per output channel for weights).
struct QuantParams {
  std::vector<float> scale;
  std::vector<std::int32_t> zero_point;
  std::int32_t qmin = 0;
  std::int32_t qmax = 255;
  std::size_t axis = 0;

  static QuantParams per_tensor(float scale, std::int32_t zero_point, std::int32_t qmin,
                                std::int32_t qmax);
  static QuantParams per_channel(std::vector<float> scales, std::vector<std::int32_t> zero_points,
                                 std::int32_t qmin, std::int32_t qmax, std::size_t axis = 0);

  bool is_per_channel() const noexcept { return scale.size() > 1; }
  std::size_t channels() const noexcept { return scale.size(); }

  /// Throws InvalidArgument unless every scale is finite and > 0 and every
  /// zero point lies in [qmin, qmax].
  void validate() const;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Integer tensor carrying the affine parameters that give it meaning.
template <typename Int>
struct QuantizedTensor {
  Tensor<Int> values;
  QuantParams qparams;
};

using TensorI8 = QuantizedTensor<std::int8_t>;
using TensorU8 = QuantizedTensor<std::uint8_t>;

/// Bit-packed tensor, one bit per logical element.
///
/// The last dimension is the row; every row starts on a word boundary and the
/// unused high bits of its final word (pad bits) are always 0. All leading
/// dimensions are flattened into the row index.
class BitTensor {
 public:
  using Word = std::uint64_t;
  static constexpr std::size_t kWordBits = 64;

  BitTensor() = default;
  explicit BitTensor(Shape shape);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return shape_numel(shape_); }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t words_per_row() const noexcept { return words_per_row_; }

  std::span<const Word> words() const noexcept { return words_; }
  std::span<const Word> row(std::size_t r) const noexcept {
    return {words_.data() + r * words_per_row_, words_per_row_};
  }
  std::span<Word> row(std::size_t r) noexcept {
    return {words_.data() + r * words_per_row_, words_per_row_};
  }

  bool test(std::size_t r, std::size_t c) const noexcept {
    return (words_[r * words_per_row_ + c / kWordBits] >> (c % kWordBits)) & 1U;
  }
  void set(std::size_t r, std::size_t c) noexcept {
    words_[r * words_per_row_ + c / kWordBits] |= Word{1} << (c % kWordBits);
  }
  void reset(std::size_t r, std::size_t c) noexcept {
    words_[r * words_per_row_ + c / kWordBits] &= ~(Word{1} << (c % kWordBits));
  }

  /// Flat (row-major) element access.
  bool test_flat(std::size_t i) const noexcept { return test(i / cols_, i % cols_); }

  std::size_t count() const noexcept;

  /// Mask applied to the last word of each row; all-ones when cols is a
  /// multiple of the word size.
  Word tail_mask() const noexcept;
  bool pad_bits_clear() const noexcept;

  /// Clears every pad bit. Used by word-parallel kernels after bulk writes.
  void clear_pad_bits() noexcept;

  friend bool operator==(const BitTensor&, const BitTensor&) = default;

 private:
  Shape shape_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<Word> words_;
};

/// Rectangle inside the (rows x cols) view of a BitTensor.
struct BitWindow {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Packs a {0,1}-valued tensor. Throws InvalidArgument naming the first
/// element that is not exactly 0 or 1.
BitTensor pack_bitmap(const TensorF32& src);
TensorF32 unpack_bitmap(const BitTensor& src);

/// Number of set bits inside `window`. Throws InvalidArgument if the window
/// leaves the logical bounds.
std::size_t popcount_region(const BitTensor& src, const BitWindow& window);

BitTensor bit_or(const BitTensor& a, const BitTensor& b);
BitTensor bit_and(const BitTensor& a, const BitTensor& b);

}  // namespace sqp
