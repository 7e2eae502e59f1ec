#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deblurdiff/gradcheck.hpp"
#include "deblurdiff/training.hpp"

// Finite-difference verification of every differentiable building block, in
// 64-bit. Each check builds a random instance from a seed, compares the tape
// gradient of a scalar loss against central differences for every input and
// parameter, and reports one norm-wise relative error over all of them.
namespace deblurdiff::gradsuite {

using Store = ParamStore<double>;
using LossFn = std::function<Var<double>(Tape<double>&, const Store&)>;

struct Options {
  double eps = 1e-5;
  // Test fixture: scales every analytic gradient by (1 + perturb) so the
  // harness can be shown to catch a wrong backward pass.
  double perturb = 0.0;
};

inline double check_store(Store store, const LossFn& loss, const Options& opt) {
  Tape<double> tape;
  auto grads = tape.backward(loss(tape, store), store);
  if (opt.perturb != 0.0)
    for (auto& [name, g] : grads)
      for (auto& v : g.storage()) v *= 1.0 + opt.perturb;
  double diff = 0, scale = 0;
  Store probe = store;
  for (const auto& [name, value] : store) {
    auto f = [&, n = name](const Tensor<double>& x) {
      probe[n] = x;
      Tape<double> t(false);
      return loss(t, probe).value().item();
    };
    const auto numeric = fd_gradient<double>(f, value, opt.eps);
    probe[name] = value;
    const auto& analytic = grads.at(name);
    diff = std::max(diff, max_abs_diff(analytic, numeric));
    scale = std::max({scale, max_abs(analytic), max_abs(numeric)});
  }
  return scale < 1e-12 ? diff : diff / scale;
}

// sum(out * R) with R ~ N(0, I) fixed by the seed: a generic loss that gives
// every output element a distinct weight.
inline Var<double> weighted_sum(Tape<double>& tape, Var<double> out, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x77));
  return sum(mul(out, tape.constant(rng.normal_tensor<double>(out.shape()))));
}

// Zero-initialised tensors (heads, zero convs) would hide whole sub-graphs
// from the check, so every parameter gets a random offset.
inline void jitter(Store& store, Rng& rng, double amount = 0.3) {
  for (auto& [name, t] : store)
    for (auto& v : t.storage()) v += rng.uniform(-amount, amount);
}

inline unet::UNetConfig tiny_unet() {
  unet::UNetConfig u;
  u.base_channels = 4;
  u.levels = 2;
  u.channel_mult = {1, 2};
  u.attention_levels = {1};
  u.time_dim = 8;
  u.temb_channels = 8;
  return u;
}

inline TrainConfig tiny_config() {
  TrainConfig c = desk_profile();
  c.batch = 1;
  c.model.k = 3;
  c.model.lkpn_unet = tiny_unet();
  c.model.denoiser_unet = tiny_unet();
  return c;
}

inline double conv2d_check(std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const std::size_t stride = 1 + seed % 2;
  Store s{{"x", rng.normal_tensor<double>({2, 5, 5})},
          {"w", rng.normal_tensor<double>({3, 2, 3, 3})},
          {"b", rng.normal_tensor<double>({3})}};
  return check_store(s, [&](Tape<double>& t, const Store& st) {
    auto y = conv2d(t.param(st, "x"), t.param(st, "w"), t.param(st, "b"), stride, 1, 1);
    return weighted_sum(t, y, seed);
  }, opt);
}

inline double group_norm_check(std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  Store s{{"x", rng.normal_tensor<double>({4, 3, 3})},
          {"g", rng.uniform_tensor<double>({4}, 0.5, 1.5)},
          {"b", rng.normal_tensor<double>({4})}};
  return check_store(s, [&](Tape<double>& t, const Store& st) {
    return weighted_sum(t, group_norm(t.param(st, "x"), 2, t.param(st, "g"), t.param(st, "b"), 1e-5), seed);
  }, opt);
}

inline double attention2d_check(std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  Store s{{"x", rng.normal_tensor<double>({3, 3, 3})}};
  for (const char* n : {"q", "k", "v", "o"}) s[n] = rng.uniform_tensor<double>({3, 3}, -0.6, 0.6);
  return check_store(s, [&](Tape<double>& t, const Store& st) {
    auto y = attention2d(t.param(st, "x"), t.param(st, "q"), t.param(st, "k"), t.param(st, "v"), t.param(st, "o"));
    return weighted_sum(t, y, seed);
  }, opt);
}

inline double resblock_check(std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  Store s;
  unet::Init<double> in{s, rng};
  in.resblock("rb", 2, 4, 3);
  jitter(s, rng);
  s["x"] = rng.normal_tensor<double>({2, 4, 4});
  s["temb"] = rng.normal_tensor<double>({3});
  return check_store(s, [&](Tape<double>& t, const Store& st) {
    unet::Ctx<double> cx{t, st};
    return weighted_sum(t, unet::resblock(cx, "rb", t.param(st, "x"), t.param(st, "temb")), seed);
  }, opt);
}

inline double eac_check(std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const std::size_t k = seed % 2 ? 3 : 5;
  Store s{{"z", rng.normal_tensor<double>({2, 5, 5})}, {"f", rng.normal_tensor<double>({2 * k * k, 5, 5})}};
  return check_store(s, [&](Tape<double>& t, const Store& st) {
    return weighted_sum(t, eac::apply(t.param(st, "z"), t.param(st, "f")), seed);
  }, opt);
}

inline double lkpn_check(std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const auto cfg = lkpn::make_config(1, 3, tiny_unet());
  Store s;
  lkpn::init(s, cfg, rng);
  jitter(s, rng);
  s["z_t"] = rng.normal_tensor<double>({1, 8, 8});
  s["z_lq"] = rng.normal_tensor<double>({1, 8, 8});
  const auto t_step = rng.uniform_int(1, 50);
  return check_store(s, [&](Tape<double>& t, const Store& st) {
    return weighted_sum(t, lkpn::forward(t, st, cfg, t.param(st, "z_t"), t.param(st, "z_lq"), t_step), seed);
  }, opt);
}

inline double denoiser_check(std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const auto cfg = diffusion::make_denoiser_config(1, tiny_unet());
  Store s;
  diffusion::init_denoiser(s, cfg, rng);
  jitter(s, rng);
  s["z_t"] = rng.normal_tensor<double>({1, 8, 8});
  s["cond"] = rng.normal_tensor<double>({2, 8, 8});
  const auto t_step = rng.uniform_int(1, 50);
  return check_store(s, [&](Tape<double>& t, const Store& st) {
    auto y = diffusion::denoiser_forward(t, st, cfg, t.param(st, "z_t"), t.param(st, "cond"), t_step);
    return weighted_sum(t, y, seed);
  }, opt);
}

// The joint objective (denoise + latent + pixel) on one 8x8 sample, checked
// against every model parameter.
inline double objective_check(std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const auto cfg = tiny_config();
  Store s = diffusion::init_model<double>(cfg.model, seed);
  jitter(s, rng, 0.1);
  training::Pair pair{rng.uniform_tensor<float>({1, 8, 8}, -1, 1), rng.uniform_tensor<float>({1, 8, 8}, -1, 1)};
  const std::vector<const training::Pair*> batch{&pair};
  const std::vector<training::Draw<double>> draws{{rng.uniform_int(1, cfg.T()), rng.normal_tensor<double>({1, 8, 8})}};
  const auto sched = cfg.model.schedule.build();
  return check_store(s, [&](Tape<double>& t, const Store& st) {
    return training::build_objective(t, st, cfg, sched, batch, draws).total;
  }, opt);
}

struct Check {
  std::string name;
  double threshold;
  std::function<double(std::uint64_t, const Options&)> run;
};

inline const std::vector<Check>& registry() {
  static const std::vector<Check> checks{
      {"conv2d", 1e-6, conv2d_check},       {"group_norm", 1e-6, group_norm_check},
      {"attention2d", 1e-6, attention2d_check}, {"resblock", 1e-6, resblock_check},
      {"eac", 1e-6, eac_check},             {"lkpn", 1e-6, lkpn_check},
      {"denoiser", 1e-6, denoiser_check},   {"objective", 1e-4, objective_check},
  };
  return checks;
}

inline const Check& find(const std::string& name) {
  for (const auto& c : registry())
    if (c.name == name) return c;
  throw ValueError("unknown gradcheck op '" + name + "'");
}

}  // namespace deblurdiff::gradsuite
