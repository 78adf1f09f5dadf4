#pragma once

// Gradient of the matching objective D(grad_theta L_l, grad_theta L_g(omega))
// with respect to the annotator parameters omega, with grad_theta L_l held
// constant.
//
// Strategy A differentiates through the theta-gradient computation itself
// (a second-order reverse pass).
//
// Strategy B uses linearity in the soft target. With
//   L_g = (1/B) sum_j mean_p sum_c -a_jpc(omega) * log softmax(S_theta(x_j))_pc
// the vector-Jacobian product of D through grad_theta L_g is
//   dD/domega = (1/B) sum_j mean_p sum_c (da_jpc/domega) * (-t_jpc),
// where v = dD/dg (closed form) and t_j = jvp of log softmax(S_theta(x_j))
// along v. One forward-mode pass per sample and one reverse pass through the
// annotator on that pseudo-loss give the exact gradient.

#include <span>
#include <string>
#include <vector>

#include "gmlabel/ad/functional.hpp"
#include "gmlabel/gm/distance.hpp"
#include "gmlabel/gm/losses.hpp"
#include "gmlabel/models/models.hpp"

namespace gmlabel::gm {

enum class Strategy { A, B };

inline Strategy parse_strategy(std::string_view s) {
  if (s == "A" || s == "a") return Strategy::A;
  if (s == "B" || s == "b") return Strategy::B;
  throw Error("strategy_unsupported", "meta-gradient strategy '" + std::string(s) + "' is not one of A, B");
}

inline std::string_view strategy_name(Strategy s) { return s == Strategy::A ? "A" : "B"; }

template <class T>
struct LabeledBatch {
  std::vector<Tensor<T>> x;
  std::vector<LabelMap> y;
  std::size_t size() const noexcept { return x.size(); }
};

template <class T>
struct SyntheticBatch {
  std::vector<Tensor<T>> x;
  std::vector<std::vector<Tensor<T>>> h;
  std::size_t size() const noexcept { return x.size(); }
};

template <class T>
struct MetaGradResult {
  GradientBundle<T> grad_omega;
  double distance = 0;  // L_gm
  double loss_g = 0;
  double loss_l = 0;
  GradientBundle<T> grad_l;
  GradientBundle<T> grad_g;
};

namespace detail {

template <class V, class T>
std::vector<V> lift_all(const std::vector<Tensor<T>>& ts) {
  std::vector<V> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(ad::constant<V>(t));
  return out;
}

template <class T>
void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw ConfigError(std::string("meta_grad: empty ") + what);
}

// Full gradient, or only the tensors in `only` with zeros elsewhere.
template <class T, class LossFn>
std::pair<double, GradientBundle<T>> loss_grad(LossFn&& fn, const ParamSet<T>& params, const LayerSelection* only) {
  if (only == nullptr) return ad::value_and_grad(std::forward<LossFn>(fn), params);
  return ad::value_and_grad(std::forward<LossFn>(fn), params, only->indices);
}

}  // namespace detail

// Mean hard-label CE of the segmentor over a labeled batch, and its theta-gradient.
template <class T>
std::pair<double, GradientBundle<T>> labeled_loss_grad(const models::Segmentor<T>& seg, const LabeledBatch<T>& batch,
                                                       const LayerSelection* only = nullptr) {
  detail::require_nonempty<T>(batch.size(), "labeled batch");
  const T inv = T(1) / static_cast<T>(batch.size());
  return detail::loss_grad(
      [&](std::span<const ad::Var<T>> w) {
        ad::Var<T> total;
        for (std::size_t j = 0; j < batch.size(); ++j) {
          auto l = ad::scale(pixel_cross_entropy(seg.template forward<ad::Var<T>>(w, ad::Var<T>::constant(batch.x[j])), batch.y[j]), inv);
          total = j == 0 ? l : ad::add(total, l);
        }
        return total;
      },
      seg.params, only);
}

// Soft labels of the annotator for each synthetic sample.
template <class T>
std::vector<Tensor<T>> annotate(const models::Annotator<T>& ann, const SyntheticBatch<T>& batch) {
  std::vector<Tensor<T>> out;
  for (const auto& h : batch.h) out.push_back(models::soft_labels(ann.logits(h)));
  return out;
}

// Mean soft-label CE of the segmentor over a synthetic batch with fixed targets.
template <class T>
std::pair<double, GradientBundle<T>> synthetic_loss_grad(const models::Segmentor<T>& seg, const SyntheticBatch<T>& batch,
                                                         const std::vector<Tensor<T>>& targets,
                                                         const LayerSelection* only = nullptr) {
  detail::require_nonempty<T>(batch.size(), "synthetic batch");
  const T inv = T(1) / static_cast<T>(batch.size());
  return detail::loss_grad(
      [&](std::span<const ad::Var<T>> w) {
        ad::Var<T> total;
        for (std::size_t j = 0; j < batch.size(); ++j) {
          auto logits = seg.template forward<ad::Var<T>>(w, ad::Var<T>::constant(batch.x[j]));
          auto l = ad::scale(pixel_cross_entropy(logits, ad::Var<T>::constant(targets[j])), inv);
          total = j == 0 ? l : ad::add(total, l);
        }
        return total;
      },
      seg.params, only);
}

// The literal matching objective for given parameters; the finite-difference
// target for meta-gradient checks.
template <class T>
double matching_loss(const models::Segmentor<T>& seg, const models::Annotator<T>& ann, const GradientBundle<T>& grad_l,
                     const SyntheticBatch<T>& batch, const LayerSelection& sel) {
  auto [lg, gg] = synthetic_loss_grad(seg, batch, annotate(ann, batch));
  (void)lg;
  return layerwise_gradient_distance(grad_l, gg, seg.params.layers, sel);
}

template <class T>
MetaGradResult<T> meta_grad_b(const models::Segmentor<T>& seg, const models::Annotator<T>& ann,
                              const GradientBundle<T>& grad_l, const SyntheticBatch<T>& batch, const LayerSelection& sel) {
  MetaGradResult<T> r;
  const auto targets = annotate(ann, batch);
  std::tie(r.loss_g, r.grad_g) = synthetic_loss_grad(seg, batch, targets, &sel);
  r.distance = layerwise_gradient_distance(grad_l, r.grad_g, seg.params.layers, sel);
  const auto v = distance_grad_b(grad_l, r.grad_g, seg.params.layers, sel);

  std::vector<Tensor<T>> m;  // -t_j / (B * H * W), the pseudo-loss weights
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& xj = batch.x[j];
    Tensor<T> t = ad::jvp(
        [&](std::span<const ad::Dual<T>> w) {
          return ad::log_softmax(seg.template forward<ad::Dual<T>>(w, ad::Dual<T>(xj)));
        },
        seg.params, v);
    const T s = T(-1) / static_cast<T>(batch.size() * t.dim(1) * t.dim(2));
    for (auto& x : t.storage()) x *= s;
    m.push_back(std::move(t));
  }
  r.grad_omega = ad::grad(
      [&](std::span<const ad::Var<T>> w) {
        ad::Var<T> total;
        for (std::size_t j = 0; j < batch.size(); ++j) {
          auto h = detail::lift_all<ad::Var<T>>(batch.h[j]);
          auto a = ad::softmax(ann.template forward<ad::Var<T>>(w, std::span<const ad::Var<T>>(h)));
          auto l = ad::sum(ad::mul(a, ad::Var<T>::constant(m[j])));
          total = j == 0 ? l : ad::add(total, l);
        }
        return total;
      },
      ann.params);
  r.grad_l = grad_l;
  return r;
}

template <class T>
MetaGradResult<T> meta_grad_a(const models::Segmentor<T>& seg, const models::Annotator<T>& ann,
                              const GradientBundle<T>& grad_l, const SyntheticBatch<T>& batch, const LayerSelection& sel) {
  MetaGradResult<T> r;
  auto omega = as_leaves(ann.params);
  auto theta = as_leaves(seg.params);
  const T inv = T(1) / static_cast<T>(batch.size());
  ad::Var<T> lg;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    auto h = detail::lift_all<ad::Var<T>>(batch.h[j]);
    auto a = ad::softmax(ann.template forward<ad::Var<T>>(std::span<const ad::Var<T>>(omega), std::span<const ad::Var<T>>(h)));
    auto logits = seg.template forward<ad::Var<T>>(std::span<const ad::Var<T>>(theta), ad::Var<T>::constant(batch.x[j]));
    auto l = ad::scale(pixel_cross_entropy(logits, a), inv);
    lg = j == 0 ? l : ad::add(lg, l);
  }
  r.loss_g = lg.value().item();
  auto gb = ad::grad(lg, theta, true);
  for (const auto& g : gb) r.grad_g.grads.push_back(g.value());
  auto d = distance_var(grad_l, gb, seg.params.layers, sel);
  r.distance = d.value().item();
  auto go = ad::grad(d, omega, false);
  for (const auto& g : go) r.grad_omega.grads.push_back(g.value());
  if (!r.grad_omega.all_finite()) throw NumericError("meta_grad: non-finite annotator gradient");
  r.grad_l = grad_l;
  return r;
}

template <class T>
MetaGradResult<T> meta_grad(const models::Segmentor<T>& seg, const models::Annotator<T>& ann,
                            const LabeledBatch<T>& labeled, const SyntheticBatch<T>& synthetic, const LayerSelection& sel,
                            Strategy strategy) {
  detail::require_nonempty<T>(synthetic.size(), "synthetic batch");
  auto [ll, gl] = labeled_loss_grad(seg, labeled, &sel);
  auto r = strategy == Strategy::A ? meta_grad_a(seg, ann, gl, synthetic, sel) : meta_grad_b(seg, ann, gl, synthetic, sel);
  r.loss_l = ll;
  if (!std::isfinite(r.distance) || !r.grad_omega.all_finite())
    throw NumericError("meta_grad: non-finite matching loss or annotator gradient");
  return r;
}

}  // namespace gmlabel::gm
