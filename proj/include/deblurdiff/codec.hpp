#pragma once

#include <string>

#include "deblurdiff/ops.hpp"

// Frozen stand-in for an image autoencoder. Both kinds are fixed linear maps,
// so they carry no parameters and never receive gradients.
namespace deblurdiff::codec {

enum class Kind { identity, fixed_downsample };

inline std::string to_string(Kind k) { return k == Kind::identity ? "identity" : "fixed_downsample"; }

inline Kind parse_kind(const std::string& s) {
  if (s == "identity") return Kind::identity;
  if (s == "fixed_downsample") return Kind::fixed_downsample;
  throw ValueError("unknown codec kind '" + s + "'");
}

struct Codec {
  Kind kind = Kind::identity;

  std::size_t scale() const { return kind == Kind::identity ? 1 : 2; }
};

// Pixel image (c,H,W) -> latent. fixed_downsample is a 2x2 mean pool.
template <typename T>
Tensor<T> encode(const Tensor<T>& x, const Codec& codec) {
  require_rank(x, 3, "codec encode");
  if (codec.kind == Kind::identity) return x;
  if (x.dim(1) % 2 || x.dim(2) % 2)
    throw ShapeError("codec encode: extents " + shape_str(x.shape()) + " not divisible by 2");
  return avg_pool2x(x);
}

// Latent -> pixel image. fixed_downsample decodes by nearest-neighbour 2x.
template <typename T>
Tensor<T> decode(const Tensor<T>& z, const Codec& codec) {
  require_rank(z, 3, "codec decode");
  return codec.kind == Kind::identity ? z : upsample_nearest2x(z);
}

template <typename T>
Var<T> decode(Var<T> z, const Codec& codec) {
  return codec.kind == Kind::identity ? z : upsample_nearest2x(z);
}

}  // namespace deblurdiff::codec
