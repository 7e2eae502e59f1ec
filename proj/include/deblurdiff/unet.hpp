#pragma once

#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "deblurdiff/ops.hpp"
#include "deblurdiff/rng.hpp"

// Time-conditioned U-Net skeleton shared by the kernel predictor, the
// denoiser and its control branch.
namespace deblurdiff::unet {

struct UNetConfig {
  std::size_t in_channels = 2;
  std::size_t out_channels = 1;
  std::size_t base_channels = 32;
  std::size_t levels = 3;
  std::size_t blocks_per_level = 1;
  std::vector<std::size_t> channel_mult = {1, 2, 2};
  std::set<std::size_t> attention_levels = {2};
  std::size_t time_dim = 32;       // sinusoidal features
  std::size_t temb_channels = 64;  // projected time embedding

  std::size_t channels_at(std::size_t level) const {
    const std::size_t m = level < channel_mult.size() ? channel_mult[level]
                          : channel_mult.empty()     ? 1
                                                     : channel_mult.back();
    return base_channels * m;
  }

  void validate() const {
    if (levels < 1) throw ValueError("unet: levels must be >= 1");
    if (blocks_per_level < 1) throw ValueError("unet: blocks_per_level must be >= 1");
    if (base_channels < 1 || in_channels < 1 || out_channels < 1)
      throw ValueError("unet: channel counts must be positive");
    if (time_dim % 2) throw ValueError("unet: time_dim must be even");
  }

  void check_extents(std::size_t h, std::size_t w) const {
    const std::size_t f = std::size_t(1) << (levels - 1);
    if (h % f || w % f)
      throw ShapeError("unet: spatial extents " + std::to_string(h) + "x" + std::to_string(w) +
                       " not divisible by " + std::to_string(f) + " for " + std::to_string(levels) +
                       " levels");
  }
};

inline std::size_t norm_groups(std::size_t channels) {
  std::size_t g = std::min<std::size_t>(8, channels);
  while (channels % g) --g;
  return g;
}

// Half sin, half cos, frequencies geometric from 1 down to 1/10000.
template <typename T>
Tensor<T> sinusoidal_embedding(std::int64_t t, std::size_t dim) {
  if (t < 0) throw ValueError("time embedding: t must be >= 0");
  if (dim == 0 || dim % 2) throw ValueError("time embedding: dim must be even and positive");
  const std::size_t half = dim / 2;
  Tensor<T> e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = half > 1 ? std::exp(-std::log(10000.0) * double(i) / double(half - 1)) : 1.0;
    const double a = double(t) * freq;
    e[i] = T(std::sin(a));
    e[half + i] = T(std::cos(a));
  }
  return e;
}

// Parameter initialisation helpers. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
struct Init {
  ParamStore<T>& store;
  Rng& rng;

  void conv(const std::string& name, std::size_t co, std::size_t ci, std::size_t k) {
    const double bound = 1.0 / std::sqrt(double(ci * k * k));
    store[name + ".w"] = rng.uniform_tensor<T>({co, ci, k, k}, -bound, bound);
    store[name + ".b"] = rng.uniform_tensor<T>({co}, -bound, bound);
  }
  void zero_conv(const std::string& name, std::size_t co, std::size_t ci, std::size_t k) {
    store[name + ".w"] = Tensor<T>({co, ci, k, k});
    store[name + ".b"] = Tensor<T>({co});
  }
  void linear(const std::string& name, std::size_t out, std::size_t in) {
    const double bound = 1.0 / std::sqrt(double(in));
    store[name + ".w"] = rng.uniform_tensor<T>({out, in}, -bound, bound);
    store[name + ".b"] = rng.uniform_tensor<T>({out}, -bound, bound);
  }
  void norm(const std::string& name, std::size_t c) {
    store[name + ".g"] = Tensor<T>({c}, T(1));
    store[name + ".b"] = Tensor<T>({c});
  }
  void attention(const std::string& name, std::size_t c) {
    const double bound = 1.0 / std::sqrt(double(c));
    for (const char* p : {".q", ".k", ".v", ".o"}) store[name + p] = rng.uniform_tensor<T>({c, c}, -bound, bound);
  }
  void resblock(const std::string& name, std::size_t ci, std::size_t co, std::size_t temb) {
    norm(name + ".norm1", ci);
    conv(name + ".conv1", co, ci, 3);
    linear(name + ".temb", co, temb);
    norm(name + ".norm2", co);
    conv(name + ".conv2", co, co, 3);
    if (ci != co) conv(name + ".skip", co, ci, 1);
  }
};

// Binds a tape to a parameter store under a name prefix.
template <typename T>
struct Ctx {
  Tape<T>& tape;
  const ParamStore<T>& store;

  Var<T> p(const std::string& name) const { return tape.param(store, name); }

  Var<T> conv(const std::string& name, Var<T> x, std::size_t stride, std::size_t lo, std::size_t hi) const {
    return conv2d(x, p(name + ".w"), p(name + ".b"), stride, lo, hi);
  }
  Var<T> conv3(const std::string& name, Var<T> x) const { return conv(name, x, 1, 1, 1); }
  Var<T> conv1(const std::string& name, Var<T> x) const { return conv(name, x, 1, 0, 0); }
  Var<T> norm(const std::string& name, Var<T> x) const {
    return group_norm(x, norm_groups(x.dim(0)), p(name + ".g"), p(name + ".b"), T(1e-5));
  }
  Var<T> lin(const std::string& name, Var<T> x) const { return linear(x, p(name + ".w"), p(name + ".b")); }
  Var<T> attn(const std::string& name, Var<T> x) const {
    return attention2d(x, p(name + ".q"), p(name + ".k"), p(name + ".v"), p(name + ".o"));
  }
};

// norm -> silu -> conv3x3 -> + W temb -> norm -> silu -> conv3x3, plus a
// residual path (1x1 conv when the channel count changes).
template <typename T>
Var<T> resblock(const Ctx<T>& cx, const std::string& name, Var<T> x, Var<T> temb) {
  Var<T> h = cx.conv3(name + ".conv1", silu(cx.norm(name + ".norm1", x)));
  h = add_channel_bias(h, cx.lin(name + ".temb", temb));
  h = cx.conv3(name + ".conv2", silu(cx.norm(name + ".norm2", h)));
  const std::string skip = name + ".skip.w";
  Var<T> res = cx.store.count(skip) ? cx.conv1(name + ".skip", x) : x;
  return add(res, h);
}

// Learned projection of the sinusoidal features, followed by silu; the result
// feeds every ResBlock's per-channel time bias.
template <typename T>
Var<T> time_embedding(const Ctx<T>& cx, const std::string& prefix, const UNetConfig& cfg, std::int64_t t) {
  Var<T> s = cx.tape.constant(sinusoidal_embedding<T>(t, cfg.time_dim));
  return silu(cx.lin(prefix + ".time", s));
}

template <typename T>
void init_time(Init<T>& in, const std::string& prefix, const UNetConfig& cfg) {
  in.linear(prefix + ".time", cfg.temb_channels, cfg.time_dim);
}

template <typename T>
void init_encoder(Init<T>& in, const std::string& prefix, const UNetConfig& cfg) {
  cfg.validate();
  in.conv(prefix + ".in", cfg.channels_at(0), cfg.in_channels, 3);
  std::size_t ch = cfg.channels_at(0);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::size_t cl = cfg.channels_at(l);
    for (std::size_t b = 0; b < cfg.blocks_per_level; ++b) {
      const std::string blk = prefix + ".enc" + std::to_string(l) + "." + std::to_string(b);
      in.resblock(blk + ".res", ch, cl, cfg.temb_channels);
      if (cfg.attention_levels.count(l)) in.attention(blk + ".attn", cl);
      ch = cl;
    }
    if (l + 1 < cfg.levels) in.conv(prefix + ".enc" + std::to_string(l) + ".down", cl, cl, 3);
  }
  const std::size_t cm = cfg.channels_at(cfg.levels - 1);
  in.resblock(prefix + ".mid.res", cm, cm, cfg.temb_channels);
  if (cfg.attention_levels.count(cfg.levels - 1)) in.attention(prefix + ".mid.attn", cm);
}

template <typename T>
void init_decoder(Init<T>& in, const std::string& prefix, const UNetConfig& cfg) {
  std::size_t ch = cfg.channels_at(cfg.levels - 1);
  for (std::size_t l = cfg.levels; l-- > 0;) {
    const std::size_t cl = cfg.channels_at(l);
    for (std::size_t b = 0; b < cfg.blocks_per_level; ++b) {
      const std::string blk = prefix + ".dec" + std::to_string(l) + "." + std::to_string(b);
      const std::size_t cin = b == 0 ? ch + cl : cl;
      in.resblock(blk + ".res", cin, cl, cfg.temb_channels);
      if (cfg.attention_levels.count(l)) in.attention(blk + ".attn", cl);
      ch = cl;
    }
    if (l > 0) {
      in.conv(prefix + ".dec" + std::to_string(l) + ".up", cfg.channels_at(l - 1), cl, 3);
      ch = cfg.channels_at(l - 1);
    }
  }
  in.norm(prefix + ".out_norm", cfg.channels_at(0));
  in.conv(prefix + ".out", cfg.out_channels, cfg.channels_at(0), 3);
}

template <typename T>
void init_unet(Init<T>& in, const std::string& prefix, const UNetConfig& cfg) {
  init_time(in, prefix, cfg);
  init_encoder(in, prefix, cfg);
  init_decoder(in, prefix, cfg);
}

template <typename T>
struct EncoderOut {
  std::vector<Var<T>> skips;  // one per level, after that level's blocks
  Var<T> mid;
};

template <typename T>
EncoderOut<T> encoder(const Ctx<T>& cx, const std::string& prefix, const UNetConfig& cfg, Var<T> x,
                      Var<T> temb) {
  require_rank(x.value(), 3, "unet input");
  if (x.dim(0) != cfg.in_channels)
    throw ShapeError("unet '" + prefix + "': expected " + std::to_string(cfg.in_channels) +
                     " input channels, got " + std::to_string(x.dim(0)));
  cfg.check_extents(x.dim(1), x.dim(2));
  EncoderOut<T> out;
  Var<T> h = cx.conv3(prefix + ".in", x);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    for (std::size_t b = 0; b < cfg.blocks_per_level; ++b) {
      const std::string blk = prefix + ".enc" + std::to_string(l) + "." + std::to_string(b);
      h = resblock(cx, blk + ".res", h, temb);
      if (cfg.attention_levels.count(l)) h = cx.attn(blk + ".attn", h);
    }
    out.skips.push_back(h);
    if (l + 1 < cfg.levels) h = cx.conv(prefix + ".enc" + std::to_string(l) + ".down", h, 2, 1, 0);
  }
  h = resblock(cx, prefix + ".mid.res", h, temb);
  if (cfg.attention_levels.count(cfg.levels - 1)) h = cx.attn(prefix + ".mid.attn", h);
  out.mid = h;
  return out;
}

template <typename T>
Var<T> decoder(const Ctx<T>& cx, const std::string& prefix, const UNetConfig& cfg,
               const EncoderOut<T>& enc, Var<T> temb) {
  Var<T> h = enc.mid;
  for (std::size_t l = cfg.levels; l-- > 0;) {
    h = concat_channels(h, enc.skips[l]);
    for (std::size_t b = 0; b < cfg.blocks_per_level; ++b) {
      const std::string blk = prefix + ".dec" + std::to_string(l) + "." + std::to_string(b);
      h = resblock(cx, blk + ".res", h, temb);
      if (cfg.attention_levels.count(l)) h = cx.attn(blk + ".attn", h);
    }
    if (l > 0) h = cx.conv3(prefix + ".dec" + std::to_string(l) + ".up", upsample_nearest2x(h));
  }
  return cx.conv3(prefix + ".out", silu(cx.norm(prefix + ".out_norm", h)));
}

template <typename T>
Var<T> forward(const Ctx<T>& cx, const std::string& prefix, const UNetConfig& cfg, Var<T> x, std::int64_t t) {
  Var<T> temb = time_embedding(cx, prefix, cfg, t);
  return decoder(cx, prefix, cfg, encoder(cx, prefix, cfg, x, temb), temb);
}

}  // namespace deblurdiff::unet
