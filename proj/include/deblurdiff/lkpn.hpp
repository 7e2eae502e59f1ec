#pragma once

#include "deblurdiff/eac.hpp"
#include "deblurdiff/unet.hpp"

// Latent kernel prediction network: U-Net over concat(z_t, z_lq) producing a
// (c, h, w) feature map, followed by a 1x1 "linear" head to (c*k*k, h, w).
namespace deblurdiff::lkpn {

enum class HeadInit { zero, delta };

struct LkpnConfig {
  unet::UNetConfig unet;  // in_channels = 2c, out_channels = c
  std::size_t latent_channels = 1;
  std::size_t k = 5;
  HeadInit head_init = HeadInit::zero;
  // When false the head emits c channels that are used directly as the
  // guidance latent (the "without EAC" ablation).
  bool predict_kernels = true;

  std::size_t head_channels() const {
    return predict_kernels ? latent_channels * k * k : latent_channels;
  }

  void validate() const {
    eac::require_odd(k);
    if (unet.in_channels != 2 * latent_channels || unet.out_channels != latent_channels)
      throw ValueError("lkpn: U-Net must map 2c -> c channels");
    unet.validate();
  }
};

inline LkpnConfig make_config(std::size_t latent_channels, std::size_t k, unet::UNetConfig base) {
  LkpnConfig c;
  c.latent_channels = latent_channels;
  c.k = k;
  c.unet = std::move(base);
  c.unet.in_channels = 2 * latent_channels;
  c.unet.out_channels = latent_channels;
  return c;
}

inline const std::string kPrefix = "lkpn";

template <typename T>
void init(ParamStore<T>& store, const LkpnConfig& cfg, Rng& rng) {
  cfg.validate();
  unet::Init<T> in{store, rng};
  unet::init_unet(in, kPrefix, cfg.unet);
  const std::size_t c = cfg.latent_channels;
  in.zero_conv(kPrefix + ".head", cfg.head_channels(), c, 1);
  if (cfg.head_init == HeadInit::delta && cfg.predict_kernels) {
    const std::size_t k = cfg.k, r = (k - 1) / 2;
    auto& b = store[kPrefix + ".head.b"];
    for (std::size_t ch = 0; ch < c; ++ch) b[ch * k * k + r * k + r] = T(1);
  }
}

// Kernel field (c*k*k, h, w) for (z_t, z_lq, t); or the guidance latent
// itself when predict_kernels is false.
template <typename T>
Var<T> forward(Tape<T>& tape, const ParamStore<T>& store, const LkpnConfig& cfg, Var<T> z_t,
               Var<T> z_lq, std::int64_t t) {
  require_same_shape(z_t.value(), z_lq.value(), "lkpn inputs");
  if (z_t.dim(0) != cfg.latent_channels)
    throw ShapeError("lkpn: expected " + std::to_string(cfg.latent_channels) + " latent channels");
  unet::Ctx<T> cx{tape, store};
  Var<T> feat = unet::forward(cx, kPrefix, cfg.unet, concat_channels(z_t, z_lq), t);
  return cx.conv1(kPrefix + ".head", feat);
}

// Plain-tensor convenience wrapper (no gradient).
template <typename T>
Tensor<T> predict(const ParamStore<T>& store, const LkpnConfig& cfg, const Tensor<T>& z_t,
                  const Tensor<T>& z_lq, std::int64_t t) {
  Tape<T> tape(false);
  return forward(tape, store, cfg, tape.constant(z_t), tape.constant(z_lq), t).value();
}

}  // namespace deblurdiff::lkpn
