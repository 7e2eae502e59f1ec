#pragma once

#include <cmath>
#include <cstdint>

#include "deblurdiff/autodiff.hpp"

namespace deblurdiff {

struct AdamHyper {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  ParamStore<T> m;
  ParamStore<T> v;
};

// Bias-corrected Adam. Moments for parameters seen for the first time are
// created lazily as zeros. Parameters without a gradient entry are skipped.
template <typename T>
void adam_step(ParamStore<T>& params, const GradMap<T>& grads, AdamState<T>& state,
               const AdamHyper& h) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ValueError("adam_step: gradient for unknown parameter '" + name + "'");
    require_same_shape(it->second, g, "adam_step");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, double(state.step));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const auto& g = git->second;
    auto& m = state.m.try_emplace(name, p.shape()).first->second;
    auto& v = state.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = T(h.beta1 * m[i] + (1.0 - h.beta1) * g[i]);
      v[i] = T(h.beta2 * v[i] + (1.0 - h.beta2) * double(g[i]) * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] = T(p[i] - h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
  }
}

}  // namespace deblurdiff
