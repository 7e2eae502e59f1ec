#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>

#include "deblurdiff/codec.hpp"
#include "deblurdiff/diffusion.hpp"

namespace deblurdiff {

struct LossWeights {
  double denoise = 1.0, latent = 1.0, pixel = 1.0;
};

struct TrainConfig {
  double lr = 5e-5;
  std::size_t batch = 8;
  std::int64_t steps = 2000;
  std::int64_t ckpt_every = 500;
  std::uint64_t seed = 0;
  codec::Kind codec = codec::Kind::identity;
  LossWeights weights;
  diffusion::ModelConfig model;

  std::int64_t T() const { return model.schedule.T; }

  void validate() const {
    if (!(lr >= 0)) throw ValueError("config: lr must be >= 0");
    if (batch < 1) throw ValueError("config: batch must be >= 1");
    if (steps < 0) throw ValueError("config: steps must be >= 0");
    if (model.schedule.T < 1) throw ValueError("config: T must be >= 1");
    model.lkpn().validate();
  }
};

// Desk defaults: 32 base channels, 3 levels, 1 block per level, attention at
// the lowest resolution, k = 5, T = 50. Betas are the 1000-step (1e-4, 0.02)
// endpoints rescaled by 1000 / T.
inline TrainConfig desk_profile() {
  TrainConfig c;
  c.model.schedule.T = 50;
  c.model.schedule.beta_start = 1e-4 * 1000.0 / 50.0;
  c.model.schedule.beta_end = 0.02 * 1000.0 / 50.0;
  return c;
}

namespace detail {
inline nlohmann::json unet_to_json(const unet::UNetConfig& u) {
  return {{"base_channels", u.base_channels},
          {"levels", u.levels},
          {"blocks_per_level", u.blocks_per_level},
          {"channel_mult", u.channel_mult},
          {"attention_levels", u.attention_levels},
          {"time_dim", u.time_dim},
          {"temb_channels", u.temb_channels}};
}

inline void unet_from_json(const nlohmann::json& j, unet::UNetConfig& u) {
  u.base_channels = j.value("base_channels", u.base_channels);
  u.levels = j.value("levels", u.levels);
  u.blocks_per_level = j.value("blocks_per_level", u.blocks_per_level);
  u.channel_mult = j.value("channel_mult", u.channel_mult);
  u.attention_levels = j.value("attention_levels", u.attention_levels);
  u.time_dim = j.value("time_dim", u.time_dim);
  u.temb_channels = j.value("temb_channels", u.temb_channels);
}
}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
  const auto& m = c.model;
  return {{"lr", c.lr},
          {"batch", c.batch},
          {"steps", c.steps},
          {"ckpt_every", c.ckpt_every},
          {"seed", c.seed},
          {"codec", codec::to_string(c.codec)},
          {"weights", {{"denoise", c.weights.denoise}, {"latent", c.weights.latent}, {"pixel", c.weights.pixel}}},
          {"model",
           {{"latent_channels", m.latent_channels},
            {"k", m.k},
            {"head_init", m.head_init == lkpn::HeadInit::zero ? "zero" : "delta"},
            {"ablation", diffusion::to_string(m.ablation)},
            {"T", m.schedule.T},
            {"beta_start", m.schedule.beta_start},
            {"beta_end", m.schedule.beta_end},
            {"sigma", m.schedule.sigma == diffusion::SigmaKind::beta ? "beta" : "posterior"},
            {"lkpn", detail::unet_to_json(m.lkpn_unet)},
            {"denoiser", detail::unet_to_json(m.denoiser_unet)}}}};
}

// Missing keys keep the values already in `base`.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = desk_profile()) {
  try {
    TrainConfig c = std::move(base);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.steps = j.value("steps", c.steps);
    c.ckpt_every = j.value("ckpt_every", c.ckpt_every);
    c.seed = j.value("seed", c.seed);
    if (j.contains("codec")) c.codec = codec::parse_kind(j["codec"].get<std::string>());
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      c.weights.denoise = w.value("denoise", c.weights.denoise);
      c.weights.latent = w.value("latent", c.weights.latent);
      c.weights.pixel = w.value("pixel", c.weights.pixel);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      auto& mc = c.model;
      mc.latent_channels = m.value("latent_channels", mc.latent_channels);
      mc.k = m.value("k", mc.k);
      if (m.contains("head_init")) {
        const auto h = m["head_init"].get<std::string>();
        if (h != "zero" && h != "delta") throw ValueError("config: head_init must be zero|delta");
        mc.head_init = h == "zero" ? lkpn::HeadInit::zero : lkpn::HeadInit::delta;
      }
      if (m.contains("ablation")) mc.ablation = diffusion::parse_ablation(m["ablation"].get<std::string>());
      mc.schedule.T = m.value("T", mc.schedule.T);
      mc.schedule.beta_start = m.value("beta_start", mc.schedule.beta_start);
      mc.schedule.beta_end = m.value("beta_end", mc.schedule.beta_end);
      if (m.contains("sigma")) {
        const auto s = m["sigma"].get<std::string>();
        if (s != "beta" && s != "posterior") throw ValueError("config: sigma must be beta|posterior");
        mc.schedule.sigma = s == "beta" ? diffusion::SigmaKind::beta : diffusion::SigmaKind::posterior;
      }
      if (m.contains("lkpn")) detail::unet_from_json(m["lkpn"], mc.lkpn_unet);
      if (m.contains("denoiser")) detail::unet_from_json(m["denoiser"], mc.denoiser_unet);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("invalid config: ") + e.what());
  }
}

}  // namespace deblurdiff
