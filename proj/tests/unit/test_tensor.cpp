#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sqp/tensor.hpp"

using namespace sqp;

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(TensorF32({2, 3}, std::vector<float>(5)), InvalidArgument);
  EXPECT_EQ(shape_numel(Shape{2, 3, 4}), 24U);
  EXPECT_EQ(shape_to_string(Shape{2, 3}), "[2x3]");
}

TEST(QuantParams, Validate) {
  EXPECT_NO_THROW(QuantParams::per_tensor(0.5F, 3, 0, 255).validate());
  EXPECT_THROW(QuantParams::per_tensor(0.0F, 0, 0, 255).validate(), InvalidArgument);
  EXPECT_THROW(QuantParams::per_tensor(1.0F, 300, 0, 255).validate(), InvalidArgument);
  EXPECT_THROW(QuantParams::per_tensor(1.0F, 0, 5, 5).validate(), InvalidArgument);
  EXPECT_THROW(QuantParams::per_channel({1.0F, 1.0F}, {0}, -128, 127).validate(), InvalidArgument);
}

TEST(BitTensor, PackUnpackRoundTripAcrossWidths) {
  Rng rng(1);
  for (std::size_t w : {1U, 7U, 63U, 64U, 65U, 120U, 128U, 200U}) {
    const auto t = oracle::random_bits({3, 5, w}, rng);
    const auto b = pack_bitmap(t);
    EXPECT_EQ(b.rows(), 15U);
    EXPECT_EQ(b.cols(), w);
    EXPECT_EQ(b.words_per_row(), (w + 63) / 64);
    EXPECT_TRUE(b.pad_bits_clear());
    EXPECT_EQ(unpack_bitmap(b), t);
    std::size_t ones = 0;
    for (float v : t.data()) ones += v == 1.0F;
    EXPECT_EQ(b.count(), ones);
    for (std::size_t i = 0; i < t.numel(); ++i) ASSERT_EQ(b.test_flat(i), t[i] == 1.0F);
  }
}

TEST(BitTensor, PackRejectsNonBinary) {
  TensorF32 t({4}, std::vector<float>{0, 1, 0.5F, 1});
  EXPECT_THROW(pack_bitmap(t), InvalidArgument);
}

TEST(BitTensor, SetResetAndPadBits) {
  BitTensor b({2, 70});
  b.set(1, 69);
  b.set(0, 0);
  EXPECT_TRUE(b.test(1, 69));
  EXPECT_EQ(b.count(), 2U);
  b.reset(1, 69);
  EXPECT_FALSE(b.test(1, 69));
  b.row(0)[1] = ~BitTensor::Word{0};
  EXPECT_FALSE(b.pad_bits_clear());
  b.clear_pad_bits();
  EXPECT_TRUE(b.pad_bits_clear());
  EXPECT_EQ(b.count(), 1U + 6U);
}

TEST(BitTensor, PopcountRegionMatchesNaive) {
  Rng rng(2);
  const auto t = oracle::random_bits({9, 150}, rng, 0.4);
  const auto b = pack_bitmap(t);
  for (int trial = 0; trial < 300; ++trial) {
    BitWindow win;
    win.row0 = rng.below(9);
    win.col0 = rng.below(150);
    win.rows = rng.below(9 - win.row0 + 1);
    win.cols = rng.below(150 - win.col0 + 1);
    std::size_t expect = 0;
    for (std::size_t r = win.row0; r < win.row0 + win.rows; ++r)
      for (std::size_t c = win.col0; c < win.col0 + win.cols; ++c) expect += t[r * 150 + c] == 1.0F;
    ASSERT_EQ(popcount_region(b, win), expect);
  }
  EXPECT_THROW(popcount_region(b, {0, 100, 1, 51}), InvalidArgument);
  EXPECT_THROW(popcount_region(b, {8, 0, 2, 1}), InvalidArgument);
}

TEST(BitTensor, OrAndMatchElementwise) {
  Rng rng(3);
  const auto a = oracle::random_bits({4, 77}, rng);
  const auto c = oracle::random_bits({4, 77}, rng);
  const auto o = unpack_bitmap(bit_or(pack_bitmap(a), pack_bitmap(c)));
  const auto n = unpack_bitmap(bit_and(pack_bitmap(a), pack_bitmap(c)));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(o[i], std::max(a[i], c[i]));
    EXPECT_EQ(n[i], a[i] * c[i]);
  }
  EXPECT_THROW(bit_or(BitTensor({2, 3}), BitTensor({3, 2})), InvalidArgument);
}
