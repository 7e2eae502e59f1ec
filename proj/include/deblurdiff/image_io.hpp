#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deblurdiff/tensor.hpp"

// Binary PGM (P5) / PPM (P6) with 8- or 16-bit samples. 16-bit samples are
// big-endian as the format requires. Images load as (c, H, W) in [0, 1].
namespace deblurdiff::image {

struct Image {
  Tensor<float> pixels;  // (c,H,W), c = 1 or 3, values in [0,1]
  int maxval = 255;
};

namespace detail {
inline void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      return;
    }
  }
}

inline long read_header_int(std::istream& in, const std::string& path) {
  skip_ws_and_comments(in);
  long v = -1;
  if (!(in >> v) || v <= 0) throw IoError("malformed image header in " + path);
  return v;
}
}  // namespace detail

inline Image read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw IoError("not a binary PGM/PPM file: " + path.string());
  const std::size_t channels = magic[1] == '5' ? 1 : 3;
  const long w = detail::read_header_int(in, path.string());
  const long h = detail::read_header_int(in, path.string());
  const long maxval = detail::read_header_int(in, path.string());
  if (maxval > 65535) throw IoError("maxval out of range in " + path.string());
  in.get();  // single whitespace before the raster
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  const std::size_t n = std::size_t(w) * std::size_t(h) * channels;
  std::vector<unsigned char> raw(n * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (std::size_t(in.gcount()) != raw.size()) throw IoError("truncated raster in " + path.string());

  Image img;
  img.maxval = int(maxval);
  img.pixels = Tensor<float>({channels, std::size_t(h), std::size_t(w)});
  const std::size_t plane = std::size_t(w) * std::size_t(h);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t k = i * channels + c;
      const unsigned v = bytes_per == 1 ? raw[k] : (unsigned(raw[2 * k]) << 8) | raw[2 * k + 1];
      img.pixels[c * plane + i] = float(v) / float(maxval);
    }
  return img;
}

inline std::uint16_t quantize(float v, int maxval) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return std::uint16_t(std::lround(double(c) * maxval));
}

// Values are clamped to [0,1] and rounded to the nearest level.
inline void write(const std::filesystem::path& path, const Tensor<float>& pixels, int maxval = 255) {
  require_rank(pixels, 3, "image write");
  const std::size_t channels = pixels.dim(0);
  if (channels != 1 && channels != 3) throw ShapeError("image write: need 1 or 3 channels");
  if (maxval < 1 || maxval > 65535) throw ValueError("image write: maxval out of range");
  const std::size_t h = pixels.dim(1), w = pixels.dim(2), plane = h * w;
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(plane * channels * bytes_per);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t k = i * channels + c;
      const std::uint16_t q = quantize(pixels[c * plane + i], maxval);
      if (bytes_per == 1) {
        raw[k] = static_cast<unsigned char>(q);
      } else {
        raw[2 * k] = static_cast<unsigned char>(q >> 8);
        raw[2 * k + 1] = static_cast<unsigned char>(q & 0xff);
      }
    }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << (channels == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << '\n' << maxval << '\n';
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// ITU-R BT.601 luma for colour images; grayscale passes through.
inline Tensor<float> to_luma(const Tensor<float>& img) {
  require_rank(img, 3, "to_luma");
  if (img.dim(0) == 1) return img;
  if (img.dim(0) != 3) throw ShapeError("to_luma: need 1 or 3 channels");
  const std::size_t plane = img.dim(1) * img.dim(2);
  Tensor<float> out({1, img.dim(1), img.dim(2)});
  for (std::size_t i = 0; i < plane; ++i)
    out[i] = 0.299f * img[i] + 0.587f * img[plane + i] + 0.114f * img[2 * plane + i];
  return out;
}

// Maps between [0,1] pixels and the [-1,1] range the models work in.
inline Tensor<float> to_model_range(const Tensor<float>& px) {
  Tensor<float> out = px;
  for (auto& v : out.storage()) v = 2.0f * v - 1.0f;
  return out;
}
template <typename T>
Tensor<float> from_model_range(const Tensor<T>& z) {
  Tensor<float> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::clamp(float(0.5 * (double(z[i]) + 1.0)), 0.0f, 1.0f);
  return out;
}

}  // namespace deblurdiff::image
