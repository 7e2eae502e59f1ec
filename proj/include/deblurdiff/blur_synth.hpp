#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "deblurdiff/image_io.hpp"
#include "deblurdiff/rng.hpp"

// Motion-blur data synthesis: random camera/object trajectories rasterised
// into normalised PSFs, uniform and region-wise blur, and paired datasets.
namespace deblurdiff::blur {

struct MotionTrajectory {
  std::vector<std::array<double, 2>> points;  // (x, y) in PSF pixel coordinates
};

struct TrajectoryParams {
  double step = 1.0;         // mean step length in pixels
  double step_jitter = 0.3;  // relative std of the step length
  double turn_sigma = 0.35;  // heading change per step, radians
};

inline void require_odd_support(int support) {
  if (support < 1 || support % 2 == 0)
    throw ValueError("PSF support must be odd and positive, got " + std::to_string(support));
}

// Inertial random walk starting at the centre of the support square. The
// length is uniform in [1, max_len]; walls reflect the walk and the path is
// finally re-centred on its centroid (clamped to the square).
inline MotionTrajectory gen_trajectory(Rng& rng, int max_len, int support,
                                       const TrajectoryParams& p = {}) {
  require_odd_support(support);
  if (max_len < 1) throw ValueError("trajectory max_len must be >= 1");
  const double hi = support - 1, centre = hi / 2;
  const auto len = rng.uniform_int(1, max_len);
  MotionTrajectory tr;
  double x = centre, y = centre, heading = rng.uniform(0.0, 2 * std::numbers::pi);
  tr.points.push_back({x, y});
  auto reflect = [hi](double v) {
    if (hi == 0) return 0.0;
    for (int i = 0; i < 4 && (v < 0 || v > hi); ++i) v = v < 0 ? -v : 2 * hi - v;
    return std::clamp(v, 0.0, hi);
  };
  for (std::int64_t i = 1; i < len; ++i) {
    heading += rng.normal(0.0, p.turn_sigma);
    const double s = std::max(0.0, p.step * (1.0 + p.step_jitter * rng.normal()));
    x = reflect(x + s * std::cos(heading));
    y = reflect(y + s * std::sin(heading));
    tr.points.push_back({x, y});
  }
  double mx = 0, my = 0;
  for (const auto& q : tr.points) mx += q[0], my += q[1];
  mx /= double(tr.points.size());
  my /= double(tr.points.size());
  for (auto& q : tr.points) {
    q[0] = std::clamp(q[0] + centre - mx, 0.0, hi);
    q[1] = std::clamp(q[1] + centre - my, 0.0, hi);
  }
  return tr;
}

struct PSF {
  Tensor<double> values;  // (s, s), row = y, col = x

  int support() const { return int(values.dim(0)); }
};

// Each point deposits unit mass split bilinearly over its four neighbouring
// cells; the result is divided by the total mass.
inline PSF rasterize_psf(const MotionTrajectory& tr, int support) {
  require_odd_support(support);
  if (tr.points.empty()) throw ValueError("rasterize_psf: empty trajectory");
  const auto s = std::size_t(support);
  PSF psf{Tensor<double>({s, s})};
  auto deposit = [&](long cx, long cy, double w) {
    if (w == 0 || cx < 0 || cy < 0 || cx >= long(s) || cy >= long(s)) return;
    psf.values[std::size_t(cy) * s + std::size_t(cx)] += w;
  };
  for (const auto& [x, y] : tr.points) {
    const double fx = std::floor(x), fy = std::floor(y);
    const double ax = x - fx, ay = y - fy;
    const long ix = long(fx), iy = long(fy);
    deposit(ix, iy, (1 - ax) * (1 - ay));
    deposit(ix + 1, iy, ax * (1 - ay));
    deposit(ix, iy + 1, (1 - ax) * ay);
    deposit(ix + 1, iy + 1, ax * ay);
  }
  double total = 0;
  for (double v : psf.values.values()) total += v;
  if (!(total > 0)) throw NumericError("rasterize_psf: trajectory deposited no mass");
  for (auto& v : psf.values.storage()) v /= total;
  return psf;
}

inline PSF delta_psf(int support) {
  require_odd_support(support);
  PSF p{Tensor<double>({std::size_t(support), std::size_t(support)})};
  const std::size_t r = std::size_t(support) / 2;
  p.values[r * std::size_t(support) + r] = 1.0;
  return p;
}

// True 2-D convolution (kernel flipped) per channel with replicate padding.
inline Tensor<float> apply_uniform_blur(const Tensor<float>& img, const PSF& psf) {
  require_rank(img, 3, "apply_uniform_blur");
  const long s = psf.support(), r = s / 2;
  const long C = long(img.dim(0)), H = long(img.dim(1)), W = long(img.dim(2));
  if (s > H || s > W) throw ShapeError("apply_uniform_blur: PSF larger than image");
  Tensor<float> out(img.shape());
  for (long c = 0; c < C; ++c)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double acc = 0;
        for (long i = 0; i < s; ++i) {
          const long sy = std::clamp(y - (i - r), 0L, H - 1);
          for (long j = 0; j < s; ++j) {
            const long sx = std::clamp(x - (j - r), 0L, W - 1);
            acc += psf.values[std::size_t(i * s + j)] * double(img.at(std::size_t(c), std::size_t(sy), std::size_t(sx)));
          }
        }
        out.at(std::size_t(c), std::size_t(y), std::size_t(x)) = float(acc);
      }
  return out;
}

struct RegionMask {
  std::size_t height = 0, width = 0;
  int id = 0;
  std::vector<std::uint8_t> bits;  // row-major, 1 = inside

  bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
};

inline void check_partition(const std::vector<RegionMask>& masks, std::size_t H, std::size_t W) {
  if (masks.empty()) throw ValueError("regional blur: no masks");
  for (const auto& m : masks)
    if (m.height != H || m.width != W || m.bits.size() != H * W)
      throw ShapeError("regional blur: mask extents do not match the image");
  for (std::size_t i = 0; i < H * W; ++i) {
    int cover = 0;
    for (const auto& m : masks) cover += m.bits[i] ? 1 : 0;
    if (cover != 1) throw ValueError("regional blur: masks must be disjoint and cover the image");
  }
}

// out = sum_i mask_i * blur(img, psf_i); masks are a partition so each pixel
// takes exactly one blurred value.
inline Tensor<float> apply_regional_blur(const Tensor<float>& img, const std::vector<RegionMask>& masks,
                                         const std::vector<PSF>& psfs) {
  require_rank(img, 3, "apply_regional_blur");
  if (masks.size() != psfs.size()) throw ValueError("regional blur: need one PSF per mask");
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  check_partition(masks, H, W);
  Tensor<float> out(img.shape());
  for (std::size_t r = 0; r < masks.size(); ++r) {
    const Tensor<float> blurred = apply_uniform_blur(img, psfs[r]);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          if (masks[r].at(y, x)) out.at(c, y, x) = blurred.at(c, y, x);
  }
  return out;
}

enum class PartitionKind { half_plane, rectangle, ellipse };

// Two-region geometric partition standing in for object segmentation.
inline std::vector<RegionMask> random_partition(Rng& rng, std::size_t H, std::size_t W) {
  for (;;) {
    const auto kind = PartitionKind(rng.uniform_int(0, 2));
    RegionMask inside{H, W, 1, std::vector<std::uint8_t>(H * W)};
    const double cx = rng.uniform(0.25, 0.75) * double(W), cy = rng.uniform(0.25, 0.75) * double(H);
    const double a = rng.uniform(0.0, std::numbers::pi);
    const double rx = rng.uniform(0.2, 0.45) * double(W), ry = rng.uniform(0.2, 0.45) * double(H);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dx = double(x) + 0.5 - cx, dy = double(y) + 0.5 - cy;
        bool in = false;
        switch (kind) {
          case PartitionKind::half_plane: in = dx * std::cos(a) + dy * std::sin(a) > 0; break;
          case PartitionKind::rectangle: in = std::abs(dx) < rx && std::abs(dy) < ry; break;
          case PartitionKind::ellipse: in = (dx * dx) / (rx * rx) + (dy * dy) / (ry * ry) < 1; break;
        }
        inside.bits[y * W + x] = in ? 1 : 0;
      }
    RegionMask outside{H, W, 0, std::vector<std::uint8_t>(H * W)};
    std::size_t n_in = 0;
    for (std::size_t i = 0; i < H * W; ++i) {
      outside.bits[i] = inside.bits[i] ? 0 : 1;
      n_in += inside.bits[i];
    }
    if (n_in > 0 && n_in < H * W) return {outside, inside};
  }
}

// Procedural piecewise-constant scene (rectangles, ellipses, bars) used as a
// source of sharp images when no photo collection is at hand.
inline Tensor<float> procedural_scene(Rng& rng, std::size_t H, std::size_t W) {
  Tensor<float> img({1, H, W});
  const double g0 = rng.uniform(0.1, 0.9), gx = rng.uniform(-0.3, 0.3), gy = rng.uniform(-0.3, 0.3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      img.at(0, y, x) = float(std::clamp(g0 + gx * (double(x) / double(W) - 0.5) + gy * (double(y) / double(H) - 0.5), 0.0, 1.0));
  const auto shapes = rng.uniform_int(3, 8);
  for (std::int64_t s = 0; s < shapes; ++s) {
    const auto kind = rng.uniform_int(0, 2);
    const float v = float(rng.uniform(0.0, 1.0));
    const double cx = rng.uniform(0, double(W)), cy = rng.uniform(0, double(H));
    const double rx = rng.uniform(2, double(W) / 3), ry = rng.uniform(2, double(H) / 3);
    const double a = rng.uniform(0.0, std::numbers::pi);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dx = double(x) + 0.5 - cx, dy = double(y) + 0.5 - cy;
        const double u = dx * std::cos(a) + dy * std::sin(a), w = -dx * std::sin(a) + dy * std::cos(a);
        bool in = false;
        if (kind == 0) in = std::abs(u) < rx && std::abs(w) < ry;
        else if (kind == 1) in = (u * u) / (rx * rx) + (w * w) / (ry * ry) < 1;
        else in = std::abs(w) < 1.0 + ry / 8 && std::abs(u) < rx * 1.5;
        if (in) img.at(0, y, x) = v;
      }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Paired dataset synthesis.

enum class BlurKind { uniform, regional };

inline std::string to_string(BlurKind k) { return k == BlurKind::uniform ? "uniform" : "regional"; }
inline BlurKind parse_blur_kind(const std::string& s) {
  if (s == "uniform") return BlurKind::uniform;
  if (s == "regional") return BlurKind::regional;
  throw ValueError("unknown blur kind '" + s + "'");
}

struct SynthSpec {
  BlurKind kind = BlurKind::uniform;
  int support = 7;
  int max_len = 13;
  std::uint64_t seed = 0;
  std::size_t crop = 0;  // 0 keeps the whole source image
};

struct PairRecord {
  std::size_t id = 0;
  std::string sharp_path;   // relative to the dataset directory
  std::string blurry_path;  // relative to the dataset directory
  std::uint64_t seed = 0;
  int support = 0;
  BlurKind kind = BlurKind::uniform;
  int max_len = 0;
  std::size_t crop = 0;
  std::string source;       // absolute path of the sharp source image
};

struct Manifest {
  SynthSpec spec;
  std::vector<PairRecord> pairs;
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["version"] = 1;
  j["spec"] = {{"kind", to_string(m.spec.kind)},
               {"support", m.spec.support},
               {"max_len", m.spec.max_len},
               {"seed", m.spec.seed},
               {"crop", m.spec.crop}};
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : m.pairs)
    j["pairs"].push_back({{"id", p.id},
                          {"sharp_path", p.sharp_path},
                          {"blurry_path", p.blurry_path},
                          {"seed", p.seed},
                          {"support", p.support},
                          {"kind", to_string(p.kind)},
                          {"max_len", p.max_len},
                          {"crop", p.crop},
                          {"source", p.source}});
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    const auto& s = j.at("spec");
    m.spec.kind = parse_blur_kind(s.at("kind").get<std::string>());
    m.spec.support = s.at("support").get<int>();
    m.spec.max_len = s.at("max_len").get<int>();
    m.spec.seed = s.at("seed").get<std::uint64_t>();
    m.spec.crop = s.value("crop", std::size_t{0});
    for (const auto& p : j.at("pairs")) {
      PairRecord r;
      r.id = p.at("id").get<std::size_t>();
      r.sharp_path = p.at("sharp_path").get<std::string>();
      r.blurry_path = p.at("blurry_path").get<std::string>();
      r.seed = p.at("seed").get<std::uint64_t>();
      r.support = p.at("support").get<int>();
      r.kind = parse_blur_kind(p.at("kind").get<std::string>());
      r.max_len = p.value("max_len", m.spec.max_len);
      r.crop = p.value("crop", m.spec.crop);
      r.source = p.value("source", std::string{});
      m.pairs.push_back(std::move(r));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("cannot parse manifest " + path.string() + ": " + e.what());
  }
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << to_json(m).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct SynthPair {
  Tensor<float> sharp, blurry;
};

// Deterministic function of (source pixels, record): the pair RNG stream is
// seeded by record.seed alone.
inline SynthPair synth_pair(const Tensor<float>& source, const PairRecord& rec) {
  Rng rng(rec.seed);
  Tensor<float> sharp = source;
  if (rec.crop > 0) {
    const std::size_t C = source.dim(0), H = source.dim(1), W = source.dim(2);
    if (rec.crop > H || rec.crop > W) throw ShapeError("synth: crop larger than source image");
    const auto oy = std::size_t(rng.uniform_int(0, std::int64_t(H - rec.crop)));
    const auto ox = std::size_t(rng.uniform_int(0, std::int64_t(W - rec.crop)));
    sharp = Tensor<float>({C, rec.crop, rec.crop});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < rec.crop; ++y)
        for (std::size_t x = 0; x < rec.crop; ++x) sharp.at(c, y, x) = source.at(c, oy + y, ox + x);
  }
  auto make_psf = [&] { return rasterize_psf(gen_trajectory(rng, rec.max_len, rec.support), rec.support); };
  if (rec.kind == BlurKind::uniform) return {sharp, apply_uniform_blur(sharp, make_psf())};
  auto masks = random_partition(rng, sharp.dim(1), sharp.dim(2));
  std::vector<PSF> psfs;
  for (std::size_t i = 0; i < masks.size(); ++i) psfs.push_back(make_psf());
  return {sharp, apply_regional_blur(sharp, masks, psfs)};
}

inline std::string pair_name(const char* stem, std::size_t id, std::size_t channels) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.%s", stem, id, channels == 1 ? "pgm" : "ppm");
  return buf;
}

// Writes `count` (sharp, blurry) pairs plus manifest.json into out_dir.
// Pair i draws from source image i mod N (sorted by name) and owns the RNG
// stream derive_seed(spec.seed, i).
inline Manifest synth_dataset(const std::filesystem::path& sharp_dir, const std::filesystem::path& out_dir,
                              std::size_t count, const SynthSpec& spec) {
  require_odd_support(spec.support);
  if (spec.max_len < 1) throw ValueError("synth: max_len must be >= 1");
  Manifest m;
  m.spec = spec;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());
  if (count == 0) {
    write_manifest(out_dir / "manifest.json", m);
    return m;
  }
  const auto sources = list_images(sharp_dir);
  if (sources.empty()) throw IoError("no PGM/PPM images in " + sharp_dir.string());
  for (std::size_t i = 0; i < count; ++i) {
    const auto& src = sources[i % sources.size()];
    const image::Image img = image::read(src);
    PairRecord r;
    r.id = i;
    r.seed = derive_seed(spec.seed, i);
    r.support = spec.support;
    r.kind = spec.kind;
    r.max_len = spec.max_len;
    r.crop = spec.crop;
    r.source = std::filesystem::absolute(src).string();
    r.sharp_path = pair_name("sharp", i, img.pixels.dim(0));
    r.blurry_path = pair_name("blurry", i, img.pixels.dim(0));
    const auto pair = synth_pair(img.pixels, r);
    image::write(out_dir / r.sharp_path, pair.sharp, img.maxval);
    image::write(out_dir / r.blurry_path, pair.blurry, img.maxval);
    m.pairs.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

// Re-creates every pair listed in a manifest into out_dir.
inline void regenerate(const Manifest& m, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& r : m.pairs) {
    const image::Image img = image::read(r.source);
    const auto pair = synth_pair(img.pixels, r);
    image::write(out_dir / r.sharp_path, pair.sharp, img.maxval);
    image::write(out_dir / r.blurry_path, pair.blurry, img.maxval);
  }
  write_manifest(out_dir / "manifest.json", m);
}

}  // namespace deblurdiff::blur
