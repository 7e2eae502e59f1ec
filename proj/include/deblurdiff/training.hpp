#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "deblurdiff/blur_synth.hpp"
#include "deblurdiff/config.hpp"
#include "deblurdiff/optim.hpp"

namespace deblurdiff::training {

struct CorruptCheckpoint : IoError {
  using IoError::IoError;
};

// ---------------------------------------------------------------------------
// Data

// One training pair in model range ([-1,1]), grayscale (c, H, W).
struct Pair {
  Tensor<float> sharp, blurry;
};

using Dataset = std::vector<Pair>;

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest = blur::read_manifest(dir / "manifest.json");
  Dataset ds;
  for (const auto& r : manifest.pairs) {
    auto s = image::to_luma(image::read(dir / r.sharp_path).pixels);
    auto b = image::to_luma(image::read(dir / r.blurry_path).pixels);
    require_same_shape(s, b, "dataset pair");
    ds.push_back({image::to_model_range(s), image::to_model_range(b)});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Objective

template <typename T>
struct LkpnLosses {
  Var<T> latent, pixel;
};

// L_latent = mean (z0 - z^s)^2 in latent space; L_pixel = mean (D(z0) - D(z^s))^2.
template <typename T>
LkpnLosses<T> lkpn_loss(Var<T> z0, Var<T> guidance, const codec::Codec& codec) {
  require_same_shape(z0.value(), guidance.value(), "lkpn_loss");
  return {mse_loss(z0, guidance), mse_loss(codec::decode(z0, codec), codec::decode(guidance, codec))};
}

// Plain evaluation with an explicit kernel field.
template <typename T>
std::pair<double, double> lkpn_loss_value(const Tensor<T>& z0, const Tensor<T>& z_lq, const Tensor<T>& field,
                                          const codec::Codec& codec) {
  const auto zs = eac::forward(z_lq, field, eac::infer_k(z_lq, field));
  return {mse(z0, zs), mse(codec::decode(z0, codec), codec::decode(zs, codec))};
}

struct LossReport {
  std::int64_t step = 0;
  double denoise = 0, latent = 0, pixel = 0, total = 0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

// Per-sample randomness for a training step: t ~ U[1,T], eps ~ N(0, I).
template <typename T>
struct Draw {
  std::int64_t t;
  Tensor<T> eps;
};

template <typename T>
struct Objective {
  Var<T> total;
  LossReport report;
};

// Builds the batch-mean objective on `tape`:
//   w_d L_denoise + w_l L_latent + w_p L_pixel
template <typename T>
Objective<T> build_objective(Tape<T>& tape, const ParamStore<T>& store, const TrainConfig& cfg,
                             const diffusion::NoiseSchedule& sched, const std::vector<const Pair*>& batch,
                             const std::vector<Draw<T>>& draws) {
  if (batch.empty()) throw ValueError("train_step: empty batch");
  const codec::Codec cc{cfg.codec};
  const auto dcfg = cfg.model.denoiser();
  const T inv_b = T(1) / T(batch.size());
  Objective<T> obj;
  LossReport& rep = obj.report;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor<T> z0 = codec::encode(batch[i]->sharp.cast<T>(), cc);
    const Tensor<T> zlq = codec::encode(batch[i]->blurry.cast<T>(), cc);
    const auto& d = draws[i];
    Var<T> z0v = tape.constant(z0), zlv = tape.constant(zlq);
    Var<T> ztv = tape.constant(diffusion::add_noise(z0, d.eps, d.t, sched));
    auto g = diffusion::guidance(tape, store, cfg.model, ztv, zlv, d.t);
    Var<T> eps_pred = diffusion::denoiser_forward(tape, store, dcfg, ztv, concat_channels(g.latent, zlv), d.t);
    Var<T> ld = diffusion::denoise_loss(tape.constant(d.eps), eps_pred);
    auto lk = lkpn_loss(z0v, g.latent, cc);
    Var<T> sample_total = add(add(scale(ld, T(cfg.weights.denoise)), scale(lk.latent, T(cfg.weights.latent))),
                              scale(lk.pixel, T(cfg.weights.pixel)));
    Var<T> contrib = scale(sample_total, inv_b);
    obj.total = i == 0 ? contrib : add(obj.total, contrib);
    rep.denoise += double(ld.value().item()) / double(batch.size());
    rep.latent += double(lk.latent.value().item()) / double(batch.size());
    rep.pixel += double(lk.pixel.value().item()) / double(batch.size());
  }
  rep.total = double(obj.total.value().item());
  return obj;
}

template <typename T>
std::vector<Draw<T>> draw_batch(const TrainConfig& cfg, std::int64_t step, const std::vector<const Pair*>& batch) {
  Rng rng(derive_seed(cfg.seed, 0x7472616eULL, std::uint64_t(step)));
  std::vector<Draw<T>> out;
  for (const auto* p : batch) {
    const auto t = rng.uniform_int(1, cfg.T());
    const auto shape = codec::encode(p->sharp, codec::Codec{cfg.codec}).shape();
    out.push_back({t, rng.normal_tensor<T>(shape)});
  }
  return out;
}

// Sample indices for a step: position p = step * batch + j walks through
// per-epoch permutations derived from the seed, so any step can be
// reconstructed without replaying earlier ones.
inline std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::int64_t step, std::size_t n) {
  if (n == 0) throw ValueError("training: empty dataset");
  std::vector<std::size_t> out;
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < cfg.batch; ++j) {
    const std::uint64_t pos = std::uint64_t(step) * cfg.batch + j;
    const std::uint64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(cfg.seed, 0x73687566ULL, epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[std::size_t(rng.uniform_int(0, std::int64_t(i) - 1))]);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

template <typename T>
struct TrainState {
  TrainConfig config;
  std::int64_t step = 0;
  ParamStore<T> params;
  AdamState<T> adam;
};

template <typename T>
TrainState<T> init_state(const TrainConfig& cfg) {
  cfg.validate();
  return {cfg, 0, diffusion::init_model<T>(cfg.model, cfg.seed), {}};
}

// Gradient of the step-`step` objective for the given batch (no update).
template <typename T>
std::pair<GradMap<T>, LossReport> objective_gradient(const TrainState<T>& st, const Dataset& data,
                                                     std::int64_t step) {
  const auto& cfg = st.config;
  const auto idx = batch_indices(cfg, step, data.size());
  std::vector<const Pair*> batch;
  for (auto i : idx) batch.push_back(&data[i]);
  const auto draws = draw_batch<T>(cfg, step, batch);
  const auto sched = cfg.model.schedule.build();
  Tape<T> tape;
  auto obj = build_objective(tape, st.params, cfg, sched, batch, draws);
  obj.report.step = step;
  return {tape.backward(obj.total, st.params), obj.report};
}

// One optimisation step; the report carries the losses before the update.
template <typename T>
LossReport train_step(TrainState<T>& st, const Dataset& data) {
  auto [grads, rep] = objective_gradient(st, data, st.step);
  AdamHyper h;
  h.lr = st.config.lr;
  adam_step(st.params, grads, st.adam, h);
  ++st.step;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   "DBDFCKPT" | u32 version | u32 len + config JSON | i64 step |
//   tensor list (params) | i64 adam step | tensor list (m) | tensor list (v)
// tensor list: u32 count, then per tensor u32 name len, name, u32 rank,
// u32 extents[rank], f32 values.

inline constexpr char kMagic[8] = {'D', 'B', 'D', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Writer {
  std::ostream& out;
  void bytes(const void* p, std::size_t n) { out.write(static_cast<const char*>(p), std::streamsize(n)); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void tensors(const ParamStore<T>& m) {
    u32(std::uint32_t(m.size()));
    for (const auto& [name, t] : m) {
      str(name);
      u32(std::uint32_t(t.rank()));
      for (auto e : t.shape()) u32(std::uint32_t(e));
      for (auto v : t.values()) {
        const float f = float(v);
        bytes(&f, 4);
      }
    }
  }
};

struct Reader {
  std::istream& in;
  const std::string& path;
  void bytes(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(in.gcount()) != n) throw CorruptCheckpoint("corrupt checkpoint (truncated): " + path);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str(std::size_t limit) {
    const auto n = u32();
    if (n > limit) throw CorruptCheckpoint("corrupt checkpoint (bad string length): " + path);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  template <typename T>
  ParamStore<T> tensors(const ParamStore<T>& reference) {
    ParamStore<T> out;
    const auto count = u32();
    if (count > reference.size()) throw CorruptCheckpoint("corrupt checkpoint (tensor count): " + path);
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto name = str(4096);
      auto ref = reference.find(name);
      if (ref == reference.end()) throw CorruptCheckpoint("unknown tensor name '" + name + "' in " + path);
      const auto rank = u32();
      if (rank == 0 || rank > 8) throw CorruptCheckpoint("corrupt checkpoint (rank): " + path);
      Shape shape(rank);
      for (auto& e : shape) e = u32();
      if (shape != ref->second.shape())
        throw CorruptCheckpoint("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                shape_str(ref->second.shape()));
      std::vector<float> raw(shape_numel(shape));
      bytes(raw.data(), raw.size() * 4);
      Tensor<T> t(shape);
      for (std::size_t k = 0; k < raw.size(); ++k) t[k] = T(raw[k]);
      out.emplace(name, std::move(t));
    }
    return out;
  }
};
}  // namespace detail

template <typename T>
void checkpoint_save(const std::filesystem::path& path, const TrainState<T>& st) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  detail::Writer w{out};
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.str(to_json(st.config).dump());
  w.i64(st.step);
  w.tensors(st.params);
  w.i64(st.adam.step);
  w.tensors(st.adam.m);
  w.tensors(st.adam.v);
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

template <typename T>
TrainState<T> checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string p = path.string();
  detail::Reader r{in, p};
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw CorruptCheckpoint("corrupt checkpoint (bad magic): " + p);
  const auto version = r.u32();
  if (version != kVersion)
    throw CorruptCheckpoint("checkpoint version " + std::to_string(version) + " not supported (expected " +
                            std::to_string(kVersion) + "): " + p);
  TrainState<T> st;
  try {
    st.config = config_from_json(nlohmann::json::parse(r.str(1 << 20)));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint("corrupt checkpoint (config): " + p);
  }
  st.step = r.i64();
  const auto reference = diffusion::init_model<T>(st.config.model, 0);
  st.params = r.tensors(reference);
  if (st.params.size() != reference.size()) throw CorruptCheckpoint("checkpoint is missing parameters: " + p);
  st.adam.step = r.i64();
  st.adam.m = r.tensors(reference);
  st.adam.v = r.tensors(reference);
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptCheckpoint("corrupt checkpoint (trailing bytes): " + p);
  return st;
}

// ---------------------------------------------------------------------------
// Loop

struct LoopHooks {
  std::function<void(const LossReport&)> on_step;
  // Called after every ckpt_every steps and at the end with the step count.
  std::function<void(std::int64_t)> on_checkpoint;
};

template <typename T>
std::vector<LossReport> train_loop(TrainState<T>& st, const Dataset& data, const LoopHooks& hooks = {}) {
  if (data.empty()) throw ValueError("train_loop: dataset is empty");
  std::vector<LossReport> reports;
  while (st.step < st.config.steps) {
    reports.push_back(train_step(st, data));
    if (hooks.on_step) hooks.on_step(reports.back());
    if (hooks.on_checkpoint && st.config.ckpt_every > 0 && st.step % st.config.ckpt_every == 0 &&
        st.step < st.config.steps)
      hooks.on_checkpoint(st.step);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(st.step);
  return reports;
}

inline void write_loss_csv(std::ostream& out, const std::vector<LossReport>& rows, bool header = true) {
  if (header) out << "step,denoise,latent,pixel,total\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step), r.denoise, r.latent,
                  r.pixel, r.total);
    out << buf;
  }
}

}  // namespace deblurdiff::training
