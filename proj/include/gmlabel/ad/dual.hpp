#pragma once

#include <utility>

#include "gmlabel/tensor.hpp"

namespace gmlabel::ad {

// Forward-mode value: primal plus directional derivative. An empty tangent
// means the value does not depend on the perturbed inputs.
template <class T>
struct Dual {
  using value_type = T;

  Tensor<T> value;
  Tensor<T> tangent;

  Dual() = default;
  explicit Dual(Tensor<T> v) : value(std::move(v)) {}
  Dual(Tensor<T> v, Tensor<T> t) : value(std::move(v)), tangent(std::move(t)) {
    if (!tangent.empty()) require_same_shape(value, tangent, "dual tangent");
  }

  bool has_tangent() const noexcept { return !tangent.empty(); }
  const Shape& shape() const { return value.shape(); }

  Tensor<T> tangent_or_zero() const { return has_tangent() ? tangent : Tensor<T>::zeros_like(value); }
};

}  // namespace gmlabel::ad
