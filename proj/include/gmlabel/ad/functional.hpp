#pragma once

#include <span>

#include "gmlabel/ad/ops.hpp"
#include "gmlabel/params.hpp"

namespace gmlabel::ad {

// Reverse-mode gradient of a scalar loss over a parameter set. `loss_fn` is
// called with the parameters bound as Var leaves and must return a scalar Var.
template <class T, class LossFn>
GradientBundle<T> grad(LossFn&& loss_fn, const ParamSet<T>& params) {
  auto leaves = as_leaves(params);
  Var<T> loss = loss_fn(std::span<const Var<T>>(leaves));
  auto gs = grad(loss, leaves, false);
  GradientBundle<T> out;
  out.grads.reserve(gs.size());
  for (auto& g : gs) out.grads.push_back(g.value());
  if (!out.all_finite()) throw NumericError("grad: non-finite gradient");
  return out;
}

// Same, also returning the loss value.
template <class T, class LossFn>
std::pair<T, GradientBundle<T>> value_and_grad(LossFn&& loss_fn, const ParamSet<T>& params) {
  auto leaves = as_leaves(params);
  Var<T> loss = loss_fn(std::span<const Var<T>>(leaves));
  const T value = loss.value().item();
  auto gs = grad(loss, leaves, false);
  GradientBundle<T> out;
  out.grads.reserve(gs.size());
  for (auto& g : gs) out.grads.push_back(g.value());
  if (!out.all_finite()) throw NumericError("grad: non-finite gradient");
  return {value, std::move(out)};
}

// Gradients for the parameter tensors listed in `subset` only; the others are
// returned as zeros.
template <class T, class LossFn>
std::pair<T, GradientBundle<T>> value_and_grad(LossFn&& loss_fn, const ParamSet<T>& params,
                                               const std::vector<std::size_t>& subset) {
  auto leaves = as_leaves(params);
  Var<T> loss = loss_fn(std::span<const Var<T>>(leaves));
  const T value = loss.value().item();
  std::vector<Var<T>> wrt;
  wrt.reserve(subset.size());
  for (auto i : subset) wrt.push_back(leaves.at(i));
  auto gs = grad(loss, wrt, false);
  GradientBundle<T> out;
  out.grads.reserve(leaves.size());
  for (const auto& l : leaves) out.grads.push_back(Tensor<T>::zeros_like(l.value()));
  for (std::size_t k = 0; k < subset.size(); ++k) out.grads[subset[k]] = gs[k].value();
  if (!out.all_finite()) throw NumericError("grad: non-finite gradient");
  return {value, std::move(out)};
}

// Forward-mode directional derivative d/de f(params + e * tangent) at e = 0.
template <class T, class Fn>
Tensor<T> jvp(Fn&& fn, const ParamSet<T>& params, const GradientBundle<T>& tangent) {
  auto duals = as_duals(params, tangent);
  Dual<T> out = fn(std::span<const Dual<T>>(duals));
  return out.tangent_or_zero();
}

}  // namespace gmlabel::ad
