#include <gtest/gtest.h>

#include "deblurdiff/codec.hpp"
#include "deblurdiff/rng.hpp"

using namespace deblurdiff;
using T64 = Tensor<double>;

namespace {
const codec::Codec kId{codec::Kind::identity}, kDown{codec::Kind::fixed_downsample};
}

TEST(Codec, IdentityRoundTripIsExact) {
  Rng rng(1);
  const T64 x = rng.normal_tensor<double>({1, 6, 4});
  EXPECT_EQ(codec::encode(x, kId), x);
  EXPECT_EQ(codec::decode(codec::encode(x, kId), kId), x);
  EXPECT_EQ(kId.scale(), 1u);
}

TEST(Codec, DownsampleExamples) {
  EXPECT_EQ(codec::encode(T64({1, 4, 6}, 0.3), kDown), T64({1, 2, 3}, 0.3));
  EXPECT_EQ(codec::encode(T64({1, 2, 2}, std::vector<double>{1, 2, 3, 4}), kDown).item(), 2.5);
  EXPECT_THROW(codec::encode(T64({1, 3, 4}), kDown), ShapeError);
  EXPECT_EQ(kDown.scale(), 2u);
}

TEST(Codec, DownsampleRoundTripOnBlockConstantImages) {
  Rng rng(2);
  const T64 z = rng.normal_tensor<double>({2, 3, 4});
  const T64 x = codec::decode(z, kDown);
  EXPECT_EQ(x.shape(), (Shape{2, 6, 8}));
  EXPECT_EQ(codec::decode(codec::encode(x, kDown), kDown), x);
}

TEST(Codec, DecodeIsLinear) {
  Rng rng(3);
  for (const auto& c : {kId, kDown}) {
    const T64 a = rng.normal_tensor<double>({1, 3, 3}), b = rng.normal_tensor<double>({1, 3, 3});
    const double p = rng.normal(), q = rng.normal();
    const T64 l = codec::decode(axpby(p, a, q, b), c);
    const T64 r = axpby(p, codec::decode(a, c), q, codec::decode(b, c));
    EXPECT_LE(max_abs_diff(l, r), 1e-14);
  }
}

TEST(Codec, TapeDecodeMatchesPlainDecode) {
  Rng rng(4);
  const T64 z = rng.normal_tensor<double>({1, 3, 3});
  Tape<double> t;
  EXPECT_EQ(codec::decode(t.constant(z), kDown).value(), codec::decode(z, kDown));
}

TEST(Codec, ParseKind) {
  EXPECT_EQ(codec::parse_kind("identity"), codec::Kind::identity);
  EXPECT_EQ(codec::parse_kind(codec::to_string(codec::Kind::fixed_downsample)), codec::Kind::fixed_downsample);
  EXPECT_THROW(codec::parse_kind("vae"), ValueError);
}
