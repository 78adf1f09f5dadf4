#pragma once

// Layerwise cosine gradient distance. For each selected layer, the weight
// gradient is split into nodes (slices along the layer's node axis) and the
// layer distance is the sum over nodes of 1 - cos(A_j, B_j); the objective is
// the mean of the layer distances. Node pairs with |A_j||B_j| < 1e-16 are
// skipped and contribute nothing.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gmlabel/ad/var.hpp"
#include "gmlabel/params.hpp"

namespace gmlabel::gm {

inline constexpr double kDeadNodeThreshold = 1e-16;

struct LayerSelection {
  std::vector<std::size_t> indices;  // positions in the segmentor ParamSet

  bool contains(std::size_t i) const { return std::find(indices.begin(), indices.end(), i) != indices.end(); }
};

// Spec items: "all", a group name (encoder, backbone, decoder, head) or an
// explicit layer id. Biases are only eligible when include_biases is set.
template <class T>
LayerSelection select_layers(const ParamSet<T>& p, const std::vector<std::string>& items, bool include_biases = false) {
  if (items.empty()) throw ConfigError("layer selection: empty selection");
  auto eligible = [&](std::size_t i) {
    const auto& l = p.layers[i];
    if (l.kind == LayerKind::bias) return include_biases && l.group != LayerGroup::none;
    return l.matchable;
  };
  LayerSelection sel;
  auto push = [&](std::size_t i) {
    if (!sel.contains(i)) sel.indices.push_back(i);
  };
  for (const auto& item : items) {
    bool matched = false;
    if (item == "all") {
      for (std::size_t i = 0; i < p.size(); ++i)
        if (eligible(i)) push(i), matched = true;
    } else if (item == "encoder" || item == "backbone" || item == "decoder" || item == "head") {
      const LayerGroup g = parse_group(item);
      for (std::size_t i = 0; i < p.size(); ++i)
        if (eligible(i) && p.layers[i].group == g) push(i), matched = true;
    } else {
      const std::size_t i = p.index_of(item);
      if (!eligible(i)) throw ConfigError("layer selection: layer '" + item + "' is not matchable");
      push(i);
      matched = true;
    }
    if (!matched) throw ConfigError("layer selection: '" + item + "' selects no matchable layer");
  }
  std::sort(sel.indices.begin(), sel.indices.end());
  return sel;
}

namespace detail {

struct NodeView {
  std::size_t outer, nodes, inner;
  std::size_t index(std::size_t o, std::size_t j, std::size_t i) const { return (o * nodes + j) * inner + i; }
};

inline NodeView node_view(const Shape& s, std::size_t axis) {
  NodeView v{1, s.empty() ? 1 : s[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) v.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) v.inner *= s[d];
  return v;
}

template <class T>
void check_aligned(const GradientBundle<T>& a, const GradientBundle<T>& b, const std::vector<LayerInfo>& layers,
                   const LayerSelection& sel) {
  if (sel.indices.empty()) throw ConfigError("gradient distance: empty layer selection");
  if (!a.aligned_with(b) || a.size() != layers.size())
    throw ShapeError("gradient distance: bundles are not aligned with the parameter layout");
  for (auto i : sel.indices)
    if (i >= layers.size()) throw ShapeError("gradient distance: selected layer index out of range");
}

}  // namespace detail

// Per-layer distances d_i for the selected layers, in selection order.
template <class T>
std::vector<double> layer_distances(const GradientBundle<T>& a, const GradientBundle<T>& b,
                                    const std::vector<LayerInfo>& layers, const LayerSelection& sel) {
  detail::check_aligned(a, b, layers, sel);
  std::vector<double> out;
  for (auto li : sel.indices) {
    const auto v = detail::node_view(a[li].shape(), layers[li].node_axis);
    double d = 0;
    for (std::size_t j = 0; j < v.nodes; ++j) {
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const double x = a[li][v.index(o, j, i)], y = b[li][v.index(o, j, i)];
          ab += x * y;
          aa += x * x;
          bb += y * y;
        }
      const double prod = std::sqrt(aa) * std::sqrt(bb);
      if (prod < kDeadNodeThreshold) continue;
      d += 1.0 - ab / prod;
    }
    out.push_back(d);
  }
  return out;
}

template <class T>
double layerwise_gradient_distance(const GradientBundle<T>& a, const GradientBundle<T>& b,
                                   const std::vector<LayerInfo>& layers, const LayerSelection& sel) {
  const auto d = layer_distances(a, b, layers, sel);
  double s = 0;
  for (double x : d) s += x;
  return s / static_cast<double>(d.size());
}

// Closed-form gradient of the distance with respect to the second bundle.
// Unselected layers and dead nodes get zero.
template <class T>
GradientBundle<T> distance_grad_b(const GradientBundle<T>& a, const GradientBundle<T>& b,
                                  const std::vector<LayerInfo>& layers, const LayerSelection& sel) {
  detail::check_aligned(a, b, layers, sel);
  GradientBundle<T> g;
  for (const auto& t : b.grads) g.grads.push_back(Tensor<T>::zeros_like(t));
  const double inv_layers = 1.0 / static_cast<double>(sel.indices.size());
  for (auto li : sel.indices) {
    const auto v = detail::node_view(a[li].shape(), layers[li].node_axis);
    for (std::size_t j = 0; j < v.nodes; ++j) {
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const double x = a[li][v.index(o, j, i)], y = b[li][v.index(o, j, i)];
          ab += x * y;
          aa += x * x;
          bb += y * y;
        }
      const double na = std::sqrt(aa), nb = std::sqrt(bb);
      if (na * nb < kDeadNodeThreshold) continue;
      const double cos = ab / (na * nb);
      for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
          const std::size_t k = v.index(o, j, i);
          const double dcos = a[li][k] / (na * nb) - cos * b[li][k] / (nb * nb);
          g[li][k] = static_cast<T>(-inv_layers * dcos);
        }
    }
  }
  return g;
}

// The distance as a graph node over Var gradients of the second bundle, with
// the first bundle held constant; its backward is the closed form above.
template <class T>
ad::Var<T> distance_var(const GradientBundle<T>& a, const std::vector<ad::Var<T>>& b, const std::vector<LayerInfo>& layers,
                        const LayerSelection& sel) {
  GradientBundle<T> bv;
  for (const auto& v : b) bv.grads.push_back(v.value());
  const double d = layerwise_gradient_distance(a, bv, layers, sel);
  const auto dgb = distance_grad_b(a, bv, layers, sel);
  return ad::make_op<T>("gradient_distance", Tensor<T>::scalar(static_cast<T>(d)), b,
                        [dgb](const ad::Var<T>& up) {
                          const T u = up.value().item();
                          std::vector<ad::Var<T>> out;
                          for (const auto& g : dgb.grads) {
                            Tensor<T> t = g;
                            for (auto& x : t.storage()) x *= u;
                            out.push_back(ad::Var<T>::constant(std::move(t)));
                          }
                          return out;
                        });
}

}  // namespace gmlabel::gm
