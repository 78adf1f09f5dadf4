#pragma once

#include "gmlabel/ad/ops.hpp"

namespace gmlabel::gm {

// Mean over pixels of -log softmax(logits)[target].
template <class V>
V pixel_cross_entropy(const V& logits, const LabelMap& target) {
  const auto& s = ad::value_of(logits).shape();
  if (s.size() != 3 || s[1] != target.height || s[2] != target.width)
    throw ShapeError("pixel_cross_entropy: logits " + to_string(s) + " vs mask " + std::to_string(target.height) + "x" +
                     std::to_string(target.width));
  using T = typename V::value_type;
  return ad::scale(ad::mean(ad::gather_channels(ad::log_softmax(logits), target)), T(-1));
}

// Mean over pixels of -sum_c target_c * log softmax(logits)_c. Linear in target.
template <class V>
V pixel_cross_entropy(const V& logits, const V& target) {
  const auto& s = ad::value_of(logits).shape();
  if (ad::value_of(target).shape() != s)
    throw ShapeError("pixel_cross_entropy: logits " + to_string(s) + " vs soft target " +
                     to_string(ad::value_of(target).shape()));
  using T = typename V::value_type;
  return ad::scale(ad::sum(ad::mul(target, ad::log_softmax(logits))), T(-1) / T(s[1] * s[2]));
}

}  // namespace gmlabel::gm
