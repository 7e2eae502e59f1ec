#include <gtest/gtest.h>

#include "deblurdiff/gradsuite.hpp"
#include "deblurdiff/lkpn.hpp"

using namespace deblurdiff;
using T64 = Tensor<double>;

namespace {

lkpn::LkpnConfig small_config(std::size_t k = 3) { return lkpn::make_config(1, k, gradsuite::tiny_unet()); }

ParamStore<double> random_params(const lkpn::LkpnConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore<double> s;
  lkpn::init(s, cfg, rng);
  gradsuite::jitter(s, rng);
  return s;
}

}  // namespace

TEST(TimeEmbedding, Deterministic) {
  EXPECT_EQ(unet::sinusoidal_embedding<double>(17, 32), unet::sinusoidal_embedding<double>(17, 32));
}

TEST(TimeEmbedding, ZeroIsSinZeroCosOne) {
  const auto e = unet::sinusoidal_embedding<double>(0, 16);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[8 + i], 1.0);
  }
}

TEST(TimeEmbedding, DistinctStepsDiffer) {
  const std::size_t dim = unet::UNetConfig{}.time_dim;
  std::vector<T64> all;
  for (int t = 0; t < 1000; ++t) all.push_back(unet::sinusoidal_embedding<double>(t, dim));
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b) ASSERT_FALSE(all[a] == all[b]) << a << " vs " << b;
}

TEST(TimeEmbedding, OddDimThrows) { EXPECT_THROW(unet::sinusoidal_embedding<double>(1, 7), ValueError); }

TEST(ResBlock, ZeroConvsGiveIdentity) {
  Rng rng(1);
  ParamStore<double> s;
  unet::Init<double> in{s, rng};
  in.resblock("rb", 4, 4, 6);
  for (auto& [name, t] : s)
    if (name.find(".conv") != std::string::npos) t = T64(t.shape());
  const T64 x = rng.normal_tensor<double>({4, 4, 4});
  Tape<double> tape;
  unet::Ctx<double> cx{tape, s};
  EXPECT_EQ(unet::resblock(cx, "rb", tape.constant(x), tape.constant(rng.normal_tensor<double>({6}))).value(), x);
}

TEST(ResBlock, ZeroTimeProjectionIgnoresT) {
  Rng rng(2);
  ParamStore<double> s;
  unet::Init<double> in{s, rng};
  in.resblock("rb", 2, 4, 6);
  s["rb.temb.w"] = T64({4, 6});
  s["rb.temb.b"] = T64({4});
  const T64 x = rng.normal_tensor<double>({2, 4, 4});
  auto run = [&](const T64& temb) {
    Tape<double> tape;
    unet::Ctx<double> cx{tape, s};
    return unet::resblock(cx, "rb", tape.constant(x), tape.constant(temb)).value();
  };
  EXPECT_EQ(run(unet::sinusoidal_embedding<double>(3, 6)), run(unet::sinusoidal_embedding<double>(40, 6)));
}

TEST(ResBlock, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_LE(gradsuite::resblock_check(seed, {}), 1e-6);
}

TEST(Lkpn, OutputShapeContract) {
  const auto cfg = small_config(3);
  ParamStore<double> s;
  Rng rng(3);
  lkpn::init(s, cfg, rng);
  const auto f = lkpn::predict(s, cfg, rng.normal_tensor<double>({1, 8, 8}), rng.normal_tensor<double>({1, 8, 8}), 5);
  EXPECT_EQ(f.shape(), (Shape{9, 8, 8}));
  for (std::size_t k : {1, 5}) {
    const auto c2 = lkpn::make_config(2, k, gradsuite::tiny_unet());
    ParamStore<double> s2;
    lkpn::init(s2, c2, rng);
    EXPECT_EQ(lkpn::predict(s2, c2, T64({2, 4, 12}), T64({2, 4, 12}), 1).shape(), (Shape{2 * k * k, 4, 12}));
  }
}

TEST(Lkpn, ZeroHeadGivesZeroFieldAndZeroEac) {
  const auto cfg = small_config(3);
  ParamStore<double> s = random_params(cfg, 4);
  s["lkpn.head.w"] = T64(s["lkpn.head.w"].shape());
  s["lkpn.head.b"] = T64(s["lkpn.head.b"].shape());
  Rng rng(5);
  const T64 zl = rng.normal_tensor<double>({1, 8, 8});
  const auto f = lkpn::predict(s, cfg, rng.normal_tensor<double>({1, 8, 8}), zl, 9);
  EXPECT_EQ(f, T64({9, 8, 8}));
  EXPECT_EQ(eac::forward(zl, f, 3), T64({1, 8, 8}));
}

TEST(Lkpn, DeltaHeadInitStartsAtIdentityEac) {
  auto cfg = small_config(5);
  cfg.head_init = lkpn::HeadInit::delta;
  ParamStore<double> s;
  Rng rng(6);
  lkpn::init(s, cfg, rng);
  const T64 zl = rng.normal_tensor<double>({1, 8, 8});
  EXPECT_EQ(eac::forward(zl, lkpn::predict(s, cfg, rng.normal_tensor<double>({1, 8, 8}), zl, 3), 5), zl);
}

TEST(Lkpn, BadExtentsAndShapesThrow) {
  const auto cfg = small_config();
  ParamStore<double> s = random_params(cfg, 7);
  EXPECT_THROW(lkpn::predict(s, cfg, T64({1, 7, 8}), T64({1, 7, 8}), 1), ShapeError);
  EXPECT_THROW(lkpn::predict(s, cfg, T64({1, 8, 8}), T64({1, 4, 4}), 1), ShapeError);
  auto bad = cfg;
  bad.k = 4;
  EXPECT_THROW(bad.validate(), ValueError);
}

TEST(Lkpn, InputsAreNotInterchangeable) {
  const auto cfg = small_config();
  int differ = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = random_params(cfg, seed);
    Rng rng(derive_seed(seed, 9));
    const T64 a = rng.normal_tensor<double>({1, 8, 8}), b = rng.normal_tensor<double>({1, 8, 8});
    differ += !(lkpn::predict(s, cfg, a, b, 10) == lkpn::predict(s, cfg, b, a, 10));
  }
  EXPECT_GE(differ, 19);
}

TEST(Lkpn, EveryParameterGetsAGradient) {
  const auto cfg = small_config();
  const auto s = random_params(cfg, 10);
  Rng rng(11);
  Tape<double> tape;
  auto out = lkpn::forward(tape, s, cfg, tape.constant(rng.normal_tensor<double>({1, 8, 8})),
                           tape.constant(rng.normal_tensor<double>({1, 8, 8})), 12);
  const auto g = tape.backward(sum(out), s);
  for (const auto& [name, t] : g) EXPECT_GT(max_abs(t), 0.0) << name;
}

TEST(Lkpn, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 2; ++seed) EXPECT_LE(gradsuite::lkpn_check(seed, {}), 1e-6);
}
