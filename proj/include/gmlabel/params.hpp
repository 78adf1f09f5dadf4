#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "gmlabel/ad/ops.hpp"
#include "gmlabel/tensor.hpp"

namespace gmlabel {

enum class LayerKind { conv, dense, bias, norm_affine };
enum class LayerGroup { none, backbone, decoder, head };

inline std::string_view kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
    case LayerKind::bias: return "bias";
    case LayerKind::norm_affine: return "norm-affine";
  }
  return "?";
}

inline LayerKind parse_kind(std::string_view s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "dense") return LayerKind::dense;
  if (s == "bias") return LayerKind::bias;
  if (s == "norm-affine") return LayerKind::norm_affine;
  throw CorruptCheckpoint("unknown layer kind '" + std::string(s) + "'");
}

inline std::string_view group_name(LayerGroup g) {
  switch (g) {
    case LayerGroup::none: return "none";
    case LayerGroup::backbone: return "encoder";
    case LayerGroup::decoder: return "decoder";
    case LayerGroup::head: return "head";
  }
  return "?";
}

inline LayerGroup parse_group(std::string_view s) {
  if (s == "none") return LayerGroup::none;
  if (s == "encoder" || s == "backbone") return LayerGroup::backbone;
  if (s == "decoder") return LayerGroup::decoder;
  if (s == "head") return LayerGroup::head;
  throw ConfigError("unknown layer group '" + std::string(s) + "'");
}

struct LayerInfo {
  std::string id;
  LayerKind kind = LayerKind::conv;
  // Axis of the weight tensor that enumerates neural nodes (output channels).
  std::size_t node_axis = 0;
  bool matchable = false;
  LayerGroup group = LayerGroup::none;

  friend bool operator==(const LayerInfo&, const LayerInfo&) = default;
};

template <class T>
struct ParamSet {
  std::vector<LayerInfo> layers;
  std::vector<Tensor<T>> tensors;

  std::size_t size() const noexcept { return tensors.size(); }

  void add(LayerInfo info, Tensor<T> t) {
    if (info.node_axis >= std::max<std::size_t>(t.rank(), 1))
      throw ShapeError("layer '" + info.id + "': node axis outside tensor rank");
    for (const auto& l : layers)
      if (l.id == info.id) throw ConfigError("duplicate layer id '" + info.id + "'");
    layers.push_back(std::move(info));
    tensors.push_back(std::move(t));
  }

  std::size_t index_of(std::string_view id) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].id == id) return i;
    throw ConfigError("unknown layer id '" + std::string(id) + "'");
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    out.layers = layers;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

// Per-layer gradients aligned to a ParamSet ordering.
template <class T>
struct GradientBundle {
  std::vector<Tensor<T>> grads;

  std::size_t size() const noexcept { return grads.size(); }
  const Tensor<T>& operator[](std::size_t i) const { return grads[i]; }
  Tensor<T>& operator[](std::size_t i) { return grads[i]; }

  static GradientBundle zeros_like(const ParamSet<T>& p) {
    GradientBundle b;
    for (const auto& t : p.tensors) b.grads.push_back(Tensor<T>::zeros_like(t));
    return b;
  }

  bool aligned_with(const ParamSet<T>& p) const {
    if (grads.size() != p.tensors.size()) return false;
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (grads[i].shape() != p.tensors[i].shape()) return false;
    return true;
  }

  bool aligned_with(const GradientBundle& o) const {
    if (grads.size() != o.grads.size()) return false;
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (grads[i].shape() != o.grads[i].shape()) return false;
    return true;
  }

  GradientBundle& operator+=(const GradientBundle& o) {
    if (!aligned_with(o)) throw ShapeError("gradient bundles are not aligned");
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += o.grads[i][j];
    return *this;
  }

  GradientBundle& operator*=(T s) {
    for (auto& g : grads)
      for (auto& v : g.storage()) v *= s;
    return *this;
  }

  friend GradientBundle operator+(GradientBundle a, const GradientBundle& b) { return a += b; }
  friend GradientBundle operator*(GradientBundle a, T s) { return a *= s; }

  T dot(const GradientBundle& o) const {
    if (!aligned_with(o)) throw ShapeError("gradient bundles are not aligned");
    T s = 0;
    for (std::size_t i = 0; i < grads.size(); ++i) s += gmlabel::dot(grads[i], o.grads[i]);
    return s;
  }

  bool all_finite() const {
    for (const auto& g : grads)
      if (!g.all_finite()) return false;
    return true;
  }

  friend bool operator==(const GradientBundle&, const GradientBundle&) = default;
};

// FNV-1a over the raw bytes of every tensor; used to assert parameter stability.
template <class T>
std::uint64_t param_hash(const ParamSet<T>& p) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : p.tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

// Binds parameters to value kind V (Tensor, Var leaves, or Dual with tangents).
template <class T>
std::vector<Tensor<T>> as_values(const ParamSet<T>& p) {
  return p.tensors;
}

template <class T>
std::vector<ad::Var<T>> as_leaves(const ParamSet<T>& p) {
  std::vector<ad::Var<T>> out;
  out.reserve(p.size());
  for (const auto& t : p.tensors) out.push_back(ad::Var<T>::leaf(t));
  return out;
}

template <class T>
std::vector<ad::Var<T>> as_constants(const ParamSet<T>& p) {
  std::vector<ad::Var<T>> out;
  out.reserve(p.size());
  for (const auto& t : p.tensors) out.push_back(ad::Var<T>::constant(t));
  return out;
}

template <class T>
std::vector<ad::Dual<T>> as_duals(const ParamSet<T>& p, const GradientBundle<T>& tangent) {
  if (!tangent.aligned_with(p)) throw ShapeError("jvp: tangent is not shape-aligned with params");
  std::vector<ad::Dual<T>> out;
  out.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& t = tangent.grads[i].storage();
    const bool zero = std::all_of(t.begin(), t.end(), [](T v) { return v == T(0); });
    if (zero)
      out.emplace_back(p.tensors[i]);
    else
      out.emplace_back(p.tensors[i], tangent.grads[i]);
  }
  return out;
}

template <class T>
std::vector<ad::Dual<T>> as_duals(const ParamSet<T>& p) {
  std::vector<ad::Dual<T>> out;
  out.reserve(p.size());
  for (const auto& t : p.tensors) out.emplace_back(t);
  return out;
}

}  // namespace gmlabel
