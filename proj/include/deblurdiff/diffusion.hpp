#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "deblurdiff/lkpn.hpp"

namespace deblurdiff::diffusion {

// ---------------------------------------------------------------------------
// Noise schedule. Tables are indexed by t - 1 for t in [1, T]; alpha_bar(0)
// is 1 by convention.

enum class SigmaKind { beta, posterior };

struct NoiseSchedule {
  std::vector<double> beta, alpha, alpha_bar, sigma;

  std::int64_t steps() const { return std::int64_t(beta.size()); }

  void check_t(std::int64_t t) const {
    if (t < 1 || t > steps())
      throw ValueError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  double alpha_at(std::int64_t t) const { return check_t(t), alpha[std::size_t(t - 1)]; }
  double beta_at(std::int64_t t) const { return check_t(t), beta[std::size_t(t - 1)]; }
  double sigma_at(std::int64_t t) const { return check_t(t), sigma[std::size_t(t - 1)]; }
  double alpha_bar_at(std::int64_t t) const {
    if (t == 0) return 1.0;
    check_t(t);
    return alpha_bar[std::size_t(t - 1)];
  }
};

// Linear beta from beta_start to beta_end inclusive; alpha_bar is the running
// product. sigma_t = sqrt(beta_t), or the posterior standard deviation
// sqrt(beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)).
inline NoiseSchedule schedule_linear(std::int64_t T, double beta_start, double beta_end,
                                     SigmaKind sigma = SigmaKind::beta) {
  if (T < 1) throw ValueError("schedule: T must be >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
    throw ValueError("schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  double prod = 1.0;
  for (std::int64_t i = 0; i < T; ++i) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * double(i) / double(T - 1);
    const double prev = prod;
    prod *= 1.0 - b;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(prod);
    s.sigma.push_back(sigma == SigmaKind::beta ? std::sqrt(b) : std::sqrt(b * (1.0 - prev) / (1.0 - prod)));
  }
  return s;
}

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. t = 0 returns z0.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, const Tensor<T>& eps, std::int64_t t, const NoiseSchedule& s) {
  require_same_shape(z0, eps, "add_noise");
  if (t != 0) s.check_t(t);
  const double ab = s.alpha_bar_at(t);
  return axpby(T(std::sqrt(ab)), z0, T(std::sqrt(1.0 - ab)), eps);
}

// One ancestral update:
//   z_{t-1} = (z_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_pred) / sqrt(alpha_t) + sigma_t * noise
template <typename T>
Tensor<T> reverse_update(const Tensor<T>& z_t, const Tensor<T>& eps_pred, const Tensor<T>& noise,
                         double alpha_t, double alpha_bar_t, double sigma_t) {
  require_same_shape(z_t, eps_pred, "reverse_update");
  require_same_shape(z_t, noise, "reverse_update");
  const double c = (1.0 - alpha_t) / std::sqrt(1.0 - alpha_bar_t);
  const double inv = 1.0 / std::sqrt(alpha_t);
  Tensor<T> out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(inv * (double(z_t[i]) - c * double(eps_pred[i])) + sigma_t * double(noise[i]));
  return out;
}

template <typename T>
T denoise_loss_value(const Tensor<T>& eps, const Tensor<T>& eps_pred) {
  return T(mse(eps, eps_pred));
}

template <typename T>
Var<T> denoise_loss(Var<T> eps, Var<T> eps_pred) {
  require_same_shape(eps.value(), eps_pred.value(), "denoise_loss");
  return mse_loss(eps, eps_pred);
}

// ---------------------------------------------------------------------------
// Controlled denoiser: a base epsilon-prediction U-Net plus a control copy of
// its encoder that reads concat(z_t, cond). Control features enter the base
// decoder through zero-initialised 1x1 convolutions at every skip and at the
// bottleneck.

struct DenoiserConfig {
  unet::UNetConfig base;  // in = out = c
  std::size_t latent_channels = 1;

  unet::UNetConfig control() const {
    auto c = base;
    c.in_channels = 3 * latent_channels;
    return c;
  }
};

inline DenoiserConfig make_denoiser_config(std::size_t latent_channels, unet::UNetConfig base) {
  DenoiserConfig d;
  d.latent_channels = latent_channels;
  d.base = std::move(base);
  d.base.in_channels = latent_channels;
  d.base.out_channels = latent_channels;
  return d;
}

inline const std::string kBase = "den.base";
inline const std::string kCtrl = "den.ctrl";
inline std::string zero_conv_name(std::size_t level) { return "den.zc" + std::to_string(level); }
inline const std::string kZeroMid = "den.zc_mid";

template <typename T>
void init_denoiser(ParamStore<T>& store, const DenoiserConfig& cfg, Rng& rng) {
  unet::Init<T> in{store, rng};
  unet::init_unet(in, kBase, cfg.base);
  const auto ctrl = cfg.control();
  unet::init_time(in, kCtrl, ctrl);
  unet::init_encoder(in, kCtrl, ctrl);
  for (std::size_t l = 0; l < cfg.base.levels; ++l) {
    const std::size_t ch = cfg.base.channels_at(l);
    in.zero_conv(zero_conv_name(l), ch, ch, 1);
  }
  const std::size_t cm = cfg.base.channels_at(cfg.base.levels - 1);
  in.zero_conv(kZeroMid, cm, cm, 1);
}

template <typename T>
Var<T> denoiser_forward(Tape<T>& tape, const ParamStore<T>& store, const DenoiserConfig& cfg, Var<T> z_t,
                        Var<T> cond, std::int64_t t) {
  require_rank(cond.value(), 3, "denoiser cond");
  if (cond.dim(0) != 2 * cfg.latent_channels || cond.dim(1) != z_t.dim(1) || cond.dim(2) != z_t.dim(2))
    throw ShapeError("denoiser: cond must be (2c,h,w), got " + shape_str(cond.shape()));
  unet::Ctx<T> cx{tape, store};
  Var<T> temb = unet::time_embedding(cx, kBase, cfg.base, t);
  auto enc = unet::encoder(cx, kBase, cfg.base, z_t, temb);

  const auto ctrl_cfg = cfg.control();
  Var<T> ctemb = unet::time_embedding(cx, kCtrl, ctrl_cfg, t);
  auto ctrl = unet::encoder(cx, kCtrl, ctrl_cfg, concat_channels(z_t, cond), ctemb);
  for (std::size_t l = 0; l < enc.skips.size(); ++l)
    enc.skips[l] = add(enc.skips[l], cx.conv1(zero_conv_name(l), ctrl.skips[l]));
  enc.mid = add(enc.mid, cx.conv1(kZeroMid, ctrl.mid));
  return unet::decoder(cx, kBase, cfg.base, enc, temb);
}

// ---------------------------------------------------------------------------
// Whole model: kernel predictor + EAC guidance + controlled denoiser.

enum class Ablation { full, no_eac, no_sd };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_eac: return "no_eac";
    case Ablation::no_sd: return "no_sd";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_eac") return Ablation::no_eac;
  if (s == "no_sd" || s == "no_sd_for_lkpn") return Ablation::no_sd;
  throw ValueError("unknown ablation '" + s + "'");
}

struct ScheduleConfig {
  std::int64_t T = 50;
  double beta_start = 2e-3;
  double beta_end = 0.4;
  SigmaKind sigma = SigmaKind::beta;

  NoiseSchedule build() const { return schedule_linear(T, beta_start, beta_end, sigma); }
};

struct ModelConfig {
  std::size_t latent_channels = 1;
  std::size_t k = 5;
  unet::UNetConfig lkpn_unet;
  unet::UNetConfig denoiser_unet;
  lkpn::HeadInit head_init = lkpn::HeadInit::zero;
  Ablation ablation = Ablation::full;
  ScheduleConfig schedule;

  lkpn::LkpnConfig lkpn() const {
    auto c = lkpn::make_config(latent_channels, k, lkpn_unet);
    c.head_init = head_init;
    c.predict_kernels = ablation != Ablation::no_eac;
    return c;
  }
  DenoiserConfig denoiser() const { return make_denoiser_config(latent_channels, denoiser_unet); }
};

template <typename T>
ParamStore<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore<T> store;
  Rng lrng(derive_seed(seed, 1)), drng(derive_seed(seed, 2));
  lkpn::init(store, cfg.lkpn(), lrng);
  init_denoiser(store, cfg.denoiser(), drng);
  return store;
}

template <typename T>
struct Guidance {
  Var<T> field;  // kernel field, or the direct prediction under no_eac
  Var<T> latent; // z^s_t
};

// k_t = LKPN(z_t, z_lq, t); z^s_t = EAC(z_lq, k_t), honouring the ablation.
template <typename T>
Guidance<T> guidance(Tape<T>& tape, const ParamStore<T>& store, const ModelConfig& cfg, Var<T> z_t,
                     Var<T> z_lq, std::int64_t t) {
  const auto lc = cfg.lkpn();
  Var<T> state = cfg.ablation == Ablation::no_sd ? z_lq : z_t;
  Var<T> field = lkpn::forward(tape, store, lc, state, z_lq, t);
  Var<T> latent = lc.predict_kernels ? eac::apply(z_lq, field) : field;
  return {field, latent};
}

template <typename T>
struct StepResult {
  Tensor<T> z_prev;
  Tensor<T> guidance;  // z^s_t
  Tensor<T> field;     // k_t
  Tensor<T> eps_pred;
};

template <typename T>
StepResult<T> sample_step(const ParamStore<T>& store, const ModelConfig& cfg, const NoiseSchedule& sched,
                          const Tensor<T>& z_t, const Tensor<T>& z_lq, std::int64_t t,
                          const Tensor<T>& noise) {
  sched.check_t(t);
  Tape<T> tape(false);
  Var<T> zt = tape.constant(z_t), zl = tape.constant(z_lq);
  auto g = guidance(tape, store, cfg, zt, zl, t);
  Var<T> eps = denoiser_forward(tape, store, cfg.denoiser(), zt, concat_channels(g.latent, zl), t);
  StepResult<T> r;
  r.z_prev = reverse_update(z_t, eps.value(), noise, sched.alpha_at(t), sched.alpha_bar_at(t),
                            sched.sigma_at(t));
  r.guidance = g.latent.value();
  r.field = g.field.value();
  r.eps_pred = eps.value();
  return r;
}

template <typename T>
struct TraceEntry {
  std::int64_t t;
  Tensor<T> guidance;
};

template <typename T>
struct SampleResult {
  Tensor<T> z0;
  std::vector<TraceEntry<T>> trace;  // t = T, ..., 1
};

// Ancestral sampling from z_T ~ N(0, I); terminal step uses zero noise.
template <typename T>
SampleResult<T> sample(const ParamStore<T>& store, const ModelConfig& cfg, const NoiseSchedule& sched,
                       const Tensor<T>& z_lq, std::uint64_t seed, bool keep_trace = true) {
  Rng rng(seed);
  Tensor<T> z = rng.normal_tensor<T>(z_lq.shape());
  SampleResult<T> out;
  for (std::int64_t t = sched.steps(); t >= 1; --t) {
    Tensor<T> noise = t > 1 ? rng.normal_tensor<T>(z_lq.shape()) : Tensor<T>(z_lq.shape());
    auto step = sample_step(store, cfg, sched, z, z_lq, t, noise);
    if (keep_trace) out.trace.push_back({t, std::move(step.guidance)});
    z = std::move(step.z_prev);
  }
  out.z0 = std::move(z);
  return out;
}

}  // namespace deblurdiff::diffusion
