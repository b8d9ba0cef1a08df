#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "ows/random.hpp"

using namespace ows;

// Known-answer vectors published with the Philox4x32-10 reference implementation.
TEST(Philox, KnownAnswerZero) {
  const auto out = Philox4x32::generate({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                        {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi) {
  const auto out = Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                        {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out[0], 0xd16cfe09u);
  EXPECT_EQ(out[1], 0x94fdccebu);
  EXPECT_EQ(out[2], 0x5001e420u);
  EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(PhiloxUniform, RangeAndAddressability) {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double u = philox_uniform(7, i, 3);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_EQ(u, philox_uniform(7, i, 3));
  }
  EXPECT_NE(philox_uniform(7, 0, 0), philox_uniform(8, 0, 0));
  EXPECT_NE(philox_uniform(7, 0, 0), philox_uniform(7, 0, 1));
}

TEST(PhiloxUniform, MeanNearHalf) {
  double s = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) s += philox_uniform(1, static_cast<std::uint64_t>(i), 0);
  EXPECT_NEAR(s / n, 0.5, 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(DeriveSeed, DistinctTags) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t t = 0; t < 100; ++t) seen.insert(derive_seed(42, t));
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(derive_seed(42, 5), derive_seed(42, 5));
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  Rng a(3, 1);
  Rng b(3, 1);
  Rng c(3, 2);
  const Matrix ma = a.normal_matrix(4, 4);
  EXPECT_EQ(ma, b.normal_matrix(4, 4));
  EXPECT_NE(ma, c.normal_matrix(4, 4));
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const Matrix m = rng.normal_matrix(200, 200, 2.0);
  const double mean = m.mean();
  const double var = (m.array() - mean).square().mean();
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 4.0, 0.08);
}

TEST(Rng, BelowStaysInRange) {
  Rng rng(12);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto k = rng.below(7);
    ASSERT_LT(k, 7u);
    ++hist[k];
  }
  for (int h : hist) EXPECT_NEAR(h / 70000.0, 1.0 / 7.0, oracle::three_sigma(1.0 / 7.0, 70000));
}
