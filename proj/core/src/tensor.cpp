#include "sqp/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace sqp {

std::size_t shape_numel(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(std::span<const std::size_t> shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

QuantParams QuantParams::per_tensor(float scale, std::int32_t zero_point, std::int32_t qmin,
                                    std::int32_t qmax) {
  QuantParams qp{{scale}, {zero_point}, qmin, qmax, 0};
  qp.validate();
  return qp;
}

QuantParams QuantParams::per_channel(std::vector<float> scales,
                                     std::vector<std::int32_t> zero_points, std::int32_t qmin,
                                     std::int32_t qmax, std::size_t axis) {
  QuantParams qp{std::move(scales), std::move(zero_points), qmin, qmax, axis};
  qp.validate();
  return qp;
}

void QuantParams::validate() const {
  if (scale.empty() || scale.size() != zero_point.size()) {
    throw InvalidArgument("quant params need matching, non-empty scale and zero-point arrays");
  }
  if (qmin >= qmax) throw InvalidArgument("quant params need qmin < qmax");
  for (std::size_t i = 0; i < scale.size(); ++i) {
    if (!(std::isfinite(scale[i]) && scale[i] > 0.0F)) {
      throw InvalidArgument("quant scale must be finite and positive (channel " +
                            std::to_string(i) + ")");
    }
    if (zero_point[i] < qmin || zero_point[i] > qmax) {
      throw InvalidArgument("zero point outside [qmin, qmax] (channel " + std::to_string(i) +
                            ")");
    }
  }
}

BitTensor::BitTensor(Shape shape) : shape_(std::move(shape)) {
  cols_ = shape_.empty() ? 1 : shape_.back();
  rows_ = shape_.empty() ? 1 : shape_numel(std::span(shape_).first(shape_.size() - 1));
  words_per_row_ = (cols_ + kWordBits - 1) / kWordBits;
  words_.assign(rows_ * words_per_row_, 0);
}

std::size_t BitTensor::count() const noexcept {
  std::size_t n = 0;
  for (Word w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

BitTensor::Word BitTensor::tail_mask() const noexcept {
  const std::size_t used = cols_ % kWordBits;
  return used == 0 ? ~Word{0} : (Word{1} << used) - 1;
}

bool BitTensor::pad_bits_clear() const noexcept {
  if (words_per_row_ == 0) return true;
  const Word pad = ~tail_mask();
  for (std::size_t r = 0; r < rows_; ++r) {
    if (words_[(r + 1) * words_per_row_ - 1] & pad) return false;
  }
  return true;
}

void BitTensor::clear_pad_bits() noexcept {
  if (words_per_row_ == 0) return;
  const Word mask = tail_mask();
  for (std::size_t r = 0; r < rows_; ++r) words_[(r + 1) * words_per_row_ - 1] &= mask;
}

BitTensor pack_bitmap(const TensorF32& src) {
  BitTensor out(src.shape());
  const auto data = src.data();
  const std::size_t cols = out.cols();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float v = data[i];
    if (v == 1.0F) {
      out.set(i / cols, i % cols);
    } else if (v != 0.0F) {
      throw InvalidArgument("pack_bitmap: element " + std::to_string(i) + " has value " +
                            std::to_string(v) + ", expected 0 or 1");
    }
  }
  return out;
}

TensorF32 unpack_bitmap(const BitTensor& src) {
  TensorF32 out(src.shape());
  const std::size_t cols = src.cols();
  for (std::size_t r = 0; r < src.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = src.test(r, c) ? 1.0F : 0.0F;
  }
  return out;
}

std::size_t popcount_region(const BitTensor& src, const BitWindow& w) {
  if (w.row0 + w.rows > src.rows() || w.col0 + w.cols > src.cols()) {
    throw InvalidArgument("popcount_region: window exceeds bit tensor bounds");
  }
  if (w.rows == 0 || w.cols == 0) return 0;
  using Word = BitTensor::Word;
  constexpr std::size_t kBits = BitTensor::kWordBits;
  const std::size_t first = w.col0 / kBits;
  const std::size_t last = (w.col0 + w.cols - 1) / kBits;
  const Word lo_mask = ~Word{0} << (w.col0 % kBits);
  const std::size_t end_bit = (w.col0 + w.cols) % kBits;
  const Word hi_mask = end_bit == 0 ? ~Word{0} : (Word{1} << end_bit) - 1;

  std::size_t n = 0;
  for (std::size_t r = w.row0; r < w.row0 + w.rows; ++r) {
    const auto words = src.row(r);
    for (std::size_t k = first; k <= last; ++k) {
      Word word = words[k];
      if (k == first) word &= lo_mask;
      if (k == last) word &= hi_mask;
      n += static_cast<std::size_t>(std::popcount(word));
    }
  }
  return n;
}

namespace {

template <typename Op>
BitTensor bitwise(const BitTensor& a, const BitTensor& b, Op op) {
  if (a.shape() != b.shape()) throw InvalidArgument("bitwise op on mismatched shapes");
  BitTensor out(a.shape());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row(r);
    const auto x = a.row(r);
    const auto y = b.row(r);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = op(x[k], y[k]);
  }
  out.clear_pad_bits();
  return out;
}

}  // namespace

BitTensor bit_or(const BitTensor& a, const BitTensor& b) {
  return bitwise(a, b, [](auto x, auto y) { return x | y; });
}

BitTensor bit_and(const BitTensor& a, const BitTensor& b) {
  return bitwise(a, b, [](auto x, auto y) { return x & y; });
}

}  // namespace sqp
