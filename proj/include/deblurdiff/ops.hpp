#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "deblurdiff/autodiff.hpp"

// Differentiable op set. Every op validates shapes eagerly, records itself on
// the tape of its first input and knows how to push gradients back.
// Reductions always run in row-major index order.
namespace deblurdiff {

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

struct ConvGeom {
  std::size_t ci, h, w, co, kh, kw, stride, pad_lo, pad_hi, ho, wo;
  std::size_t K() const { return ci * kh * kw; }
  std::size_t P() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad_lo == 0 && pad_hi == 0; }
};

inline std::size_t conv_extent(std::size_t n, std::size_t k, std::size_t stride, std::size_t lo,
                               std::size_t hi) {
  const std::size_t padded = n + lo + hi;
  if (padded < k) throw ShapeError("conv2d: kernel larger than padded input");
  if ((padded - k) % stride != 0)
    throw ShapeError("conv2d: non-integer output extent (" + std::to_string(padded - k) + "/" +
                     std::to_string(stride) + ")");
  return (padded - k) / stride + 1;
}

template <typename T>
ConvGeom conv_geom(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                   std::size_t pad_lo, std::size_t pad_hi) {
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require_rank(b, 1, "conv2d bias");
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (w.dim(1) != x.dim(0))
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                     std::to_string(x.dim(0)));
  if (b.dim(0) != w.dim(0)) throw ShapeError("conv2d: bias length does not match output channels");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), w.dim(3), stride, pad_lo, pad_hi, 0, 0};
  g.ho = conv_extent(g.h, g.kh, stride, pad_lo, pad_hi);
  g.wo = conv_extent(g.w, g.kw, stride, pad_lo, pad_hi);
  return g;
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  for (std::size_t c = 0; c < g.ci; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.P();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = long(oy * g.stride + ky) - long(g.pad_lo);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= long(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + std::size_t(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = long(ox * g.stride + kx) - long(g.pad_lo);
            dst[ox] = (ix < 0 || ix >= long(g.w)) ? T(0) : src[ix];
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* gx) {
  for (std::size_t c = 0; c < g.ci; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.P();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = long(oy * g.stride + ky) - long(g.pad_lo);
          if (iy < 0 || iy >= long(g.h)) continue;
          T* dst = gx + (c * g.h + std::size_t(iy)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = long(ox * g.stride + kx) - long(g.pad_lo);
            if (ix >= 0 && ix < long(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvGeom& g) {
  Tensor<T> out({g.co, g.ho, g.wo});
  MapR<T> Y(out.data(), long(g.co), long(g.P()));
  CMapR<T> W(w.data(), long(g.co), long(g.K()));
  if (g.pointwise()) {
    Y.noalias() = W * CMapR<T>(x.data(), long(g.ci), long(g.P()));
  } else {
    AlignedVector<T> col(g.K() * g.P());
    im2col(x.data(), g, col.data());
    Y.noalias() = W * CMapR<T>(col.data(), long(g.K()), long(g.P()));
  }
  for (std::size_t o = 0; o < g.co; ++o) Y.row(long(o)).array() += b[o];
  return out;
}

}  // namespace detail

// Cross-correlation with zero padding; pad_lo/pad_hi apply to top/left and
// bottom/right respectively.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad_lo,
              std::size_t pad_hi) {
  const auto g = detail::conv_geom(x.value(), w.value(), b.value(), stride, pad_lo, pad_hi);
  return x.tape->record(
      "conv2d", {x, w, b},
      [g](const auto& in) { return detail::conv2d_forward(*in[0], *in[1], *in[2], g); },
      [g](const auto& in, const Tensor<T>&, const Tensor<T>& gout, const auto& gin) {
        using namespace detail;
        CMapR<T> G(gout.data(), long(g.co), long(g.P()));
        AlignedVector<T> colbuf;
        const T* colp = in[0]->data();
        if (!g.pointwise() && gin[1]) {
          colbuf.resize(g.K() * g.P());
          im2col(in[0]->data(), g, colbuf.data());
          colp = colbuf.data();
        }
        if (gin[1]) {
          MapR<T> GW(gin[1]->data(), long(g.co), long(g.K()));
          GW.noalias() += G * CMapR<T>(colp, long(g.K()), long(g.P())).transpose();
        }
        if (gin[2])
          for (std::size_t o = 0; o < g.co; ++o) (*gin[2])[o] += G.row(long(o)).sum();
        if (gin[0]) {
          CMapR<T> W(in[1]->data(), long(g.co), long(g.K()));
          if (g.pointwise()) {
            MapR<T>(gin[0]->data(), long(g.ci), long(g.P())).noalias() += W.transpose() * G;
          } else {
            MatR<T> gcol = W.transpose() * G;
            col2im_add(gcol.data(), g, gin[0]->data());
          }
        }
      });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride = 1, std::size_t pad = 0) {
  return conv2d(x, w, b, stride, pad, pad);
}

enum class Elementwise { add, sub, mul };

namespace detail {
template <typename T>
Var<T> binary(const char* name, Elementwise kind, Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), name);
  return a.tape->record(
      name, {a, b},
      [kind](const auto& in) {
        const auto& x = *in[0];
        const auto& y = *in[1];
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i)
          out[i] = kind == Elementwise::add ? x[i] + y[i]
                   : kind == Elementwise::sub ? x[i] - y[i]
                                              : x[i] * y[i];
        return out;
      },
      [kind](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (kind) {
            case Elementwise::add:
              if (gin[0]) (*gin[0])[i] += g[i];
              if (gin[1]) (*gin[1])[i] += g[i];
              break;
            case Elementwise::sub:
              if (gin[0]) (*gin[0])[i] += g[i];
              if (gin[1]) (*gin[1])[i] -= g[i];
              break;
            case Elementwise::mul:
              if (gin[0]) (*gin[0])[i] += g[i] * (*in[1])[i];
              if (gin[1]) (*gin[1])[i] += g[i] * (*in[0])[i];
              break;
          }
        }
      });
}
}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary("add", Elementwise::add, a, b);
}
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary("sub", Elementwise::sub, a, b);
}
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary("mul", Elementwise::mul, a, b);
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return a.tape->record(
      "scale", {a},
      [s](const auto& in) { return scaled(*in[0], s); },
      [s](const auto&, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += s * g[i];
      });
}

template <typename T>
T sigmoid(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

// x * sigmoid(x), evaluated as x / (1 + exp(-x)) through Eigen's vectorised exp.
template <typename T>
Var<T> silu(Var<T> a) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using CMapA = Eigen::Map<const Arr>;
  using MapA = Eigen::Map<Arr>;
  return a.tape->record(
      "silu", {a},
      [](const auto& in) {
        Tensor<T> out(in[0]->shape());
        CMapA x(in[0]->data(), long(out.size()));
        MapA(out.data(), long(out.size())) = x / (T(1) + (-x).exp());
        return out;
      },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        const long n = long(g.size());
        CMapA x(in[0]->data(), n), gy(g.data(), n);
        const Arr s = T(1) / (T(1) + (-x).exp());
        MapA(gin[0]->data(), n) += gy * (s + x * s * (T(1) - s));
      });
}

template <typename T>
Var<T> square(Var<T> a) {
  return a.tape->record(
      "square", {a},
      [](const auto& in) {
        Tensor<T> out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * (*in[0])[i];
        return out;
      },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += T(2) * (*in[0])[i] * g[i];
      });
}

template <typename T>
Var<T> sum(Var<T> a) {
  return a.tape->record(
      "sum", {a},
      [](const auto& in) {
        T acc = 0;
        for (auto v : in[0]->values()) acc += v;
        return Tensor<T>::scalar(acc);
      },
      [](const auto&, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        for (auto& v : gin[0]->storage()) v += g[0];
      });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const T n = T(a.value().size());
  return scale(sum(a), T(1) / n);
}

// mean((a - b)^2)
template <typename T>
Var<T> mse_loss(Var<T> a, Var<T> b) {
  return mean(square(sub(a, b)));
}

// Element-wise kind dispatch matching the op table: add, sub, mul,
// scale-by-scalar, silu, square.
enum class OpKind { add, sub, mul, scale, silu, square };

template <typename T>
Var<T> elementwise(OpKind kind, Var<T> a, Var<T>* b = nullptr, T scalar = T(1)) {
  auto need_b = [&]() -> Var<T> {
    if (!b) throw ShapeError("elementwise: binary kind requires a second operand");
    return *b;
  };
  switch (kind) {
    case OpKind::add: return add(a, need_b());
    case OpKind::sub: return sub(a, need_b());
    case OpKind::mul: return mul(a, need_b());
    case OpKind::scale: return scale(a, scalar);
    case OpKind::silu: return silu(a);
    case OpKind::square: return square(a);
  }
  throw ValueError("elementwise: unknown kind");
}

// x(c,h,w) + b(c) broadcast over the spatial extents.
template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> b) {
  require_rank(x.value(), 3, "add_channel_bias");
  require_rank(b.value(), 1, "add_channel_bias");
  if (b.dim(0) != x.dim(0)) throw ShapeError("add_channel_bias: bias length != channels");
  return x.tape->record(
      "add_channel_bias", {x, b},
      [](const auto& in) {
        Tensor<T> out = *in[0];
        const std::size_t hw = out.dim(1) * out.dim(2);
        for (std::size_t c = 0; c < out.dim(0); ++c)
          for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] += (*in[1])[c];
        return out;
      },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        const std::size_t hw = g.dim(1) * g.dim(2);
        if (gin[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
          for (std::size_t c = 0; c < g.dim(0); ++c) {
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i) acc += g[c * hw + i];
            (*gin[1])[c] += acc;
          }
        (void)in;
      });
}

// y = W x + b for a vector x.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  require_rank(x.value(), 1, "linear input");
  require_rank(w.value(), 2, "linear weight");
  require_rank(b.value(), 1, "linear bias");
  if (w.dim(1) != x.dim(0) || w.dim(0) != b.dim(0)) throw ShapeError("linear: shape mismatch");
  return x.tape->record(
      "linear", {x, w, b},
      [](const auto& in) {
        const auto& W = *in[1];
        const std::size_t m = W.dim(0), n = W.dim(1);
        Tensor<T> out({m});
        for (std::size_t i = 0; i < m; ++i) {
          T acc = (*in[2])[i];
          for (std::size_t j = 0; j < n; ++j) acc += W[i * n + j] * (*in[0])[j];
          out[i] = acc;
        }
        return out;
      },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        const auto& W = *in[1];
        const std::size_t m = W.dim(0), n = W.dim(1);
        for (std::size_t i = 0; i < m; ++i) {
          if (gin[2]) (*gin[2])[i] += g[i];
          for (std::size_t j = 0; j < n; ++j) {
            if (gin[1]) (*gin[1])[i * n + j] += g[i] * (*in[0])[j];
            if (gin[0]) (*gin[0])[j] += g[i] * W[i * n + j];
          }
        }
      });
}

namespace detail {
struct GroupStats {
  std::vector<double> mean, rstd;
};

template <typename T>
GroupStats group_stats(const Tensor<T>& x, std::size_t groups, T eps) {
  const std::size_t cg = x.dim(0) / groups, hw = x.dim(1) * x.dim(2), n = cg * hw;
  GroupStats s{std::vector<double>(groups), std::vector<double>(groups)};
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* p = x.data() + gi * n;
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += p[i];
    m /= double(n);
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) v += (p[i] - m) * (p[i] - m);
    v /= double(n);
    s.mean[gi] = m;
    s.rstd[gi] = 1.0 / std::sqrt(v + double(eps));
  }
  return s;
}
}  // namespace detail

template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gamma, Var<T> beta, T eps) {
  require_rank(x.value(), 3, "group_norm");
  const std::size_t c = x.dim(0);
  if (groups == 0 || c % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  if (!(eps > 0)) throw ValueError("group_norm: eps must be positive");
  if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c})
    throw ShapeError("group_norm: gamma/beta must have one entry per channel");
  return x.tape->record(
      "group_norm", {x, gamma, beta},
      [groups, eps](const auto& in) {
        const auto& X = *in[0];
        const auto s = detail::group_stats(X, groups, eps);
        const std::size_t cg = X.dim(0) / groups, hw = X.dim(1) * X.dim(2);
        Tensor<T> out(X.shape());
        for (std::size_t ch = 0; ch < X.dim(0); ++ch) {
          const std::size_t gi = ch / cg;
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t k = ch * hw + i;
            const T xhat = T((X[k] - s.mean[gi]) * s.rstd[gi]);
            out[k] = (*in[1])[ch] * xhat + (*in[2])[ch];
          }
        }
        return out;
      },
      [groups, eps](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        const auto& X = *in[0];
        const auto s = detail::group_stats(X, groups, eps);
        const std::size_t cg = X.dim(0) / groups, hw = X.dim(1) * X.dim(2), n = cg * hw;
        for (std::size_t gi = 0; gi < groups; ++gi) {
          double sum_gx = 0, sum_gx_xhat = 0;
          for (std::size_t ch = gi * cg; ch < (gi + 1) * cg; ++ch) {
            double gb = 0, gg = 0;
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = ch * hw + i;
              const double xhat = (X[k] - s.mean[gi]) * s.rstd[gi];
              gb += g[k];
              gg += g[k] * xhat;
              const double gxhat = double(g[k]) * double((*in[1])[ch]);
              sum_gx += gxhat;
              sum_gx_xhat += gxhat * xhat;
            }
            if (gin[1]) (*gin[1])[ch] += T(gg);
            if (gin[2]) (*gin[2])[ch] += T(gb);
          }
          if (!gin[0]) continue;
          const double mg = sum_gx / double(n), mgx = sum_gx_xhat / double(n);
          for (std::size_t ch = gi * cg; ch < (gi + 1) * cg; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = ch * hw + i;
              const double xhat = (X[k] - s.mean[gi]) * s.rstd[gi];
              const double gxhat = double(g[k]) * double((*in[1])[ch]);
              (*gin[0])[k] += T(s.rstd[gi] * (gxhat - mg - xhat * mgx));
            }
        }
      });
}

// Single-head self-attention over the h*w tokens of a (c,h,w) map, scale
// 1/sqrt(c), with the residual connection: out = x + Wo (V softmax(QᵀK)ᵀ).
template <typename T>
Var<T> attention2d(Var<T> x, Var<T> wq, Var<T> wk, Var<T> wv, Var<T> wo) {
  require_rank(x.value(), 3, "attention2d");
  const std::size_t c = x.dim(0);
  for (auto* w : {&wq, &wk, &wv, &wo})
    if (w->value().shape() != Shape{c, c})
      throw ShapeError("attention2d: projection weights must be (c,c)");

  struct Fwd {
    detail::MatR<T> Q, K, V, A, O;
  };
  auto compute = [](const typename Tape<T>::Inputs& in) {
    using namespace detail;
    const auto& X = *in[0];
    const long c = long(X.dim(0)), n = long(X.dim(1) * X.dim(2));
    CMapR<T> Xm(X.data(), c, n);
    Fwd f;
    f.Q = CMapR<T>(in[1]->data(), c, c) * Xm;
    f.K = CMapR<T>(in[2]->data(), c, c) * Xm;
    f.V = CMapR<T>(in[3]->data(), c, c) * Xm;
    const T sc = T(1) / std::sqrt(T(c));
    MatR<T> S = (f.Q.transpose() * f.K) * sc;
    f.A.resize(n, n);
    for (long i = 0; i < n; ++i) {
      const T m = S.row(i).maxCoeff();
      T z = 0;
      for (long j = 0; j < n; ++j) {
        f.A(i, j) = std::exp(S(i, j) - m);
        z += f.A(i, j);
      }
      f.A.row(i) /= z;
    }
    f.O = f.V * f.A.transpose();
    return f;
  };
  return x.tape->record(
      "attention2d", {x, wq, wk, wv, wo},
      [compute](const auto& in) {
        using namespace detail;
        auto f = compute(in);
        const auto& X = *in[0];
        const long c = long(X.dim(0)), n = long(X.dim(1) * X.dim(2));
        Tensor<T> out = X;
        MapR<T>(out.data(), c, n).noalias() += CMapR<T>(in[4]->data(), c, c) * f.O;
        return out;
      },
      [compute](const auto& in, const Tensor<T>&, const Tensor<T>& gout, const auto& gin) {
        using namespace detail;
        auto f = compute(in);
        const auto& X = *in[0];
        const long c = long(X.dim(0)), n = long(X.dim(1) * X.dim(2));
        const T sc = T(1) / std::sqrt(T(c));
        CMapR<T> G(gout.data(), c, n), Xm(X.data(), c, n);
        CMapR<T> Wq(in[1]->data(), c, c), Wk(in[2]->data(), c, c), Wv(in[3]->data(), c, c),
            Wo(in[4]->data(), c, c);
        if (gin[4]) MapR<T>(gin[4]->data(), c, c).noalias() += G * f.O.transpose();
        MatR<T> gO = Wo.transpose() * G;
        MatR<T> gV = gO * f.A;
        MatR<T> gA = gO.transpose() * f.V;
        MatR<T> gS(n, n);
        for (long i = 0; i < n; ++i) {
          T dot = 0;
          for (long j = 0; j < n; ++j) dot += gA(i, j) * f.A(i, j);
          for (long j = 0; j < n; ++j) gS(i, j) = f.A(i, j) * (gA(i, j) - dot) * sc;
        }
        MatR<T> gQ = f.K * gS.transpose();
        MatR<T> gK = f.Q * gS;
        if (gin[1]) MapR<T>(gin[1]->data(), c, c).noalias() += gQ * Xm.transpose();
        if (gin[2]) MapR<T>(gin[2]->data(), c, c).noalias() += gK * Xm.transpose();
        if (gin[3]) MapR<T>(gin[3]->data(), c, c).noalias() += gV * Xm.transpose();
        if (gin[0]) {
          MapR<T> gX(gin[0]->data(), c, n);
          gX += G;
          gX.noalias() += Wq.transpose() * gQ;
          gX.noalias() += Wk.transpose() * gK;
          gX.noalias() += Wv.transpose() * gV;
        }
      });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  // Validates eagerly through the plain helper.
  (void)concat_channels(a.value(), b.value());
  return a.tape->record(
      "concat_channels", {a, b}, [](const auto& in) { return concat_channels(*in[0], *in[1]); },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        const std::size_t na = in[0]->size();
        if (gin[0])
          for (std::size_t i = 0; i < na; ++i) (*gin[0])[i] += g[i];
        if (gin[1])
          for (std::size_t i = 0; i < in[1]->size(); ++i) (*gin[1])[i] += g[na + i];
      });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  require_rank(x, 3, "upsample_nearest2x");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = x.at(ch, y / 2, xx / 2);
  return out;
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> x) {
  require_rank(x.value(), 3, "upsample_nearest2x");
  return x.tape->record(
      "upsample_nearest2x", {x}, [](const auto& in) { return upsample_nearest2x(*in[0]); },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& g, const auto& gin) {
        const std::size_t c = in[0]->dim(0), h = in[0]->dim(1), w = in[0]->dim(2);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx) gin[0]->at(ch, y / 2, xx / 2) += g.at(ch, y, xx);
      });
}

template <typename T>
Tensor<T> avg_pool2x(const Tensor<T>& x) {
  require_rank(x, 3, "avg_pool2x");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2x: extents must be even, got " + shape_str(x.shape()));
  Tensor<T> out({c, h / 2, w / 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h / 2; ++y)
      for (std::size_t xx = 0; xx < w / 2; ++xx)
        out.at(ch, y, xx) = (x.at(ch, 2 * y, 2 * xx) + x.at(ch, 2 * y, 2 * xx + 1) +
                             x.at(ch, 2 * y + 1, 2 * xx) + x.at(ch, 2 * y + 1, 2 * xx + 1)) /
                            T(4);
  return out;
}

}  // namespace deblurdiff
