#pragma once

#include <functional>

#include "deblurdiff/tensor.hpp"

namespace deblurdiff {

// Central finite differences: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
template <typename T>
Tensor<T> fd_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
  if (!(eps > 0)) throw ValueError("fd_gradient: eps must be positive");
  Tensor<T> g(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T fp = f(probe);
    probe[i] = orig - eps;
    const T fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (T(2) * eps);
  }
  return g;
}

// Norm-wise relative error max|a - b| / max(max|a|, max|b|). Two tensors that
// are both (numerically) zero compare as error 0.
template <typename T>
T relative_error(const Tensor<T>& analytic, const Tensor<T>& numeric) {
  const T diff = max_abs_diff(analytic, numeric);
  const T scale = std::max(max_abs(analytic), max_abs(numeric));
  if (scale < T(1e-12)) return diff;
  return diff / scale;
}

}  // namespace deblurdiff
