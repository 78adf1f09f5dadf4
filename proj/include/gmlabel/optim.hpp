#pragma once

#include <cmath>
#include <vector>

#include "gmlabel/params.hpp"

namespace gmlabel {

inline constexpr double kDefaultLearningRate = 0.001;
inline constexpr double kDefaultMomentum = 0.9;

template <class T>
struct OptState {
  T lr = T(kDefaultLearningRate);
  T momentum = T(kDefaultMomentum);
  std::vector<Tensor<T>> velocity;  // lazily sized on first step

  OptState() = default;
  OptState(T lr_, T momentum_) : lr(lr_), momentum(momentum_) {}
};

// Classical momentum: v <- mu*v + g; theta <- theta - lr*v.
template <class T>
void sgd_step(ParamSet<T>& params, const GradientBundle<T>& grads, OptState<T>& state) {
  if (!grads.aligned_with(params)) throw ShapeError("sgd_step: gradients not aligned with params");
  if (!grads.all_finite()) throw NumericError("sgd_step: non-finite gradient");
  if (state.velocity.empty()) {
    for (const auto& t : params.tensors) state.velocity.push_back(Tensor<T>::zeros_like(t));
  } else if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd_step: optimizer state not aligned with params");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = state.velocity[i];
    auto& p = params.tensors[i];
    const auto& g = grads.grads[i];
    if (v.shape() != p.shape()) throw ShapeError("sgd_step: optimizer state not aligned with params");
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j];
      p[j] -= state.lr * v[j];
    }
  }
}

// Rescales grads in place so their global L2 norm is at most max_norm
// (no-op when max_norm <= 0). Returns the norm before clipping.
template <class T>
double clip_grad_norm(GradientBundle<T>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads.grads)
    for (auto x : g.storage()) sq += static_cast<double>(x) * static_cast<double>(x);
  const double n = std::sqrt(sq);
  if (max_norm > 0 && n > max_norm) {
    const T s = static_cast<T>(max_norm / n);
    for (auto& g : grads.grads)
      for (auto& x : g.storage()) x *= s;
  }
  return n;
}

}  // namespace gmlabel
