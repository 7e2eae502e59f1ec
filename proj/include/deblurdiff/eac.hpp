#pragma once

#include <utility>

#include "deblurdiff/ops.hpp"

// Element-wise adaptive convolution: every (channel, row, col) position of a
// latent grid gets its own k x k kernel, read from a (c*k*k, h, w) field.
//
//   out(c,y,x) = sum_{n,m in [-r,r]} F(c*k*k + (n+r)*k + (m+r), y, x) * z(c, y-n, x-m)
//
// with r = (k-1)/2 and z read as zero outside the grid. Taps are summed in
// row-major (n, m) order.
namespace deblurdiff::eac {

template <typename T>
struct KernelField {
  Tensor<T> values;  // (c*k*k, h, w)
  std::size_t k = 1;

  std::size_t channels() const { return values.dim(0) / (k * k); }
  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
};

inline void require_odd(std::size_t k) {
  if (k == 0 || k % 2 == 0) throw ValueError("eac: kernel extent must be odd, got " + std::to_string(k));
}

template <typename T>
void check_extents(const Tensor<T>& z, const Tensor<T>& f, std::size_t k) {
  require_odd(k);
  require_rank(z, 3, "eac latent");
  require_rank(f, 3, "eac kernel field");
  if (f.dim(0) != z.dim(0) * k * k || f.dim(1) != z.dim(1) || f.dim(2) != z.dim(2))
    throw ShapeError("eac: kernel field " + shape_str(f.shape()) + " does not match latent " +
                     shape_str(z.shape()) + " with k=" + std::to_string(k));
}

// Infers k from the field/latent channel ratio.
template <typename T>
std::size_t infer_k(const Tensor<T>& z, const Tensor<T>& f) {
  require_rank(z, 3, "eac latent");
  require_rank(f, 3, "eac kernel field");
  const std::size_t ratio = f.dim(0) / z.dim(0);
  std::size_t k = 1;
  while (k * k < ratio) ++k;
  if (k * k != ratio || f.dim(0) % z.dim(0) != 0)
    throw ShapeError("eac: field channels " + std::to_string(f.dim(0)) +
                     " is not c*k*k for latent channels " + std::to_string(z.dim(0)));
  return k;
}

template <typename T>
Tensor<T> forward(const Tensor<T>& z, const Tensor<T>& f, std::size_t k) {
  check_extents(z, f, k);
  const long C = long(z.dim(0)), H = long(z.dim(1)), W = long(z.dim(2)), r = long(k - 1) / 2;
  const std::size_t plane = std::size_t(H * W);
  Tensor<T> out(z.shape());
  for (long c = 0; c < C; ++c)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        T acc = 0;
        for (long n = -r; n <= r; ++n) {
          const long sy = y - n;
          if (sy < 0 || sy >= H) continue;
          for (long m = -r; m <= r; ++m) {
            const long sx = x - m;
            if (sx < 0 || sx >= W) continue;
            const std::size_t tap = std::size_t(c) * k * k + std::size_t((n + r) * long(k) + (m + r));
            acc += f[tap * plane + std::size_t(y * W + x)] * z.at(std::size_t(c), std::size_t(sy), std::size_t(sx));
          }
        }
        out.at(std::size_t(c), std::size_t(y), std::size_t(x)) = acc;
      }
  return out;
}

template <typename T>
Tensor<T> forward(const Tensor<T>& z, const KernelField<T>& f) {
  return forward(z, f.values, f.k);
}

// Returns (grad_z, grad_f) for upstream gradient grad_out.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& z, const Tensor<T>& f, std::size_t k,
                                         const Tensor<T>& grad_out) {
  check_extents(z, f, k);
  require_same_shape(z, grad_out, "eac backward");
  const long C = long(z.dim(0)), H = long(z.dim(1)), W = long(z.dim(2)), r = long(k - 1) / 2;
  const std::size_t plane = std::size_t(H * W);
  Tensor<T> gz(z.shape()), gf(f.shape());
  for (long c = 0; c < C; ++c)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        const T g = grad_out.at(std::size_t(c), std::size_t(y), std::size_t(x));
        for (long n = -r; n <= r; ++n) {
          const long sy = y - n;
          if (sy < 0 || sy >= H) continue;
          for (long m = -r; m <= r; ++m) {
            const long sx = x - m;
            if (sx < 0 || sx >= W) continue;
            const std::size_t tap = std::size_t(c) * k * k + std::size_t((n + r) * long(k) + (m + r));
            const std::size_t fi = tap * plane + std::size_t(y * W + x);
            gf[fi] += g * z.at(std::size_t(c), std::size_t(sy), std::size_t(sx));
            gz.at(std::size_t(c), std::size_t(sy), std::size_t(sx)) += g * f[fi];
          }
        }
      }
  return {std::move(gz), std::move(gf)};
}

// Field whose EAC is the identity map: weight 1 on the centre tap.
template <typename T>
KernelField<T> delta_kernel_field(std::size_t c, std::size_t h, std::size_t w, std::size_t k) {
  require_odd(k);
  KernelField<T> f{Tensor<T>({c * k * k, h, w}), k};
  const std::size_t r = (k - 1) / 2, centre = r * k + r;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) f.values[(ch * k * k + centre) * h * w + i] = T(1);
  return f;
}

// Tape op; k is inferred from the channel ratio of the field.
template <typename T>
Var<T> apply(Var<T> z, Var<T> f) {
  const std::size_t k = infer_k(z.value(), f.value());
  check_extents(z.value(), f.value(), k);
  return z.tape->record(
      "eac", {z, f}, [k](const auto& in) { return forward(*in[0], *in[1], k); },
      [k](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        auto [gz, gf] = backward(*in[0], *in[1], k, g);
        if (gin[0])
          for (std::size_t i = 0; i < gz.size(); ++i) (*gin[0])[i] += gz[i];
        if (gin[1])
          for (std::size_t i = 0; i < gf.size(); ++i) (*gin[1])[i] += gf[i];
      });
}

}  // namespace deblurdiff::eac
