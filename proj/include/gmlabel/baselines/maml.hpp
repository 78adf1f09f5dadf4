#pragma once

// K-step MAML annotator learning. The real segmentor is copied into a
// differentiable clone, the clone takes K plain-SGD steps on one
// annotator-labeled synthetic batch, and the labeled loss at the adapted
// parameters is differentiated back to the annotator through the unrolled
// updates.

#include "gmlabel/gm/train.hpp"

namespace gmlabel::baselines {

inline constexpr double kDefaultInnerLearningRate = 0.1;

struct MamlConfig {
  gm::GmConfig outer;
  std::size_t inner_steps = 1;
  double inner_lr = kDefaultInnerLearningRate;
  std::size_t max_unroll = 8;

  void validate() const {
    outer.validate();
    if (inner_steps < 1) throw ConfigError("maml: inner_steps must be >= 1");
    if (!(inner_lr > 0)) throw ConfigError("maml: inner_lr must be positive");
    if (inner_steps > max_unroll)
      throw Error("unroll_unsupported", "maml: " + std::to_string(inner_steps) + " inner steps exceed the unroll limit of " +
                                            std::to_string(max_unroll));
  }
};

// The meta loss L_l(theta') for given parameters; the finite-difference target
// for the MAML meta-gradient.
template <class T>
double maml_meta_loss(const models::Segmentor<T>& seg, const models::Annotator<T>& ann, const gm::LabeledBatch<T>& labeled,
                      const gm::SyntheticBatch<T>& synthetic, std::size_t inner_steps, double inner_lr) {
  auto adapted = seg;
  const auto targets = gm::annotate(ann, synthetic);
  for (std::size_t k = 0; k < inner_steps; ++k) {
    auto [l, g] = gm::synthetic_loss_grad(adapted, synthetic, targets);
    (void)l;
    for (std::size_t i = 0; i < adapted.params.size(); ++i)
      for (std::size_t j = 0; j < g[i].size(); ++j) adapted.params.tensors[i][j] -= static_cast<T>(inner_lr) * g[i][j];
  }
  return gm::labeled_loss_grad(adapted, labeled).first;
}

// Gradient of L_l(theta'(omega)) w.r.t. omega by reverse mode through the
// unrolled inner updates. r.distance and r.loss_l hold the meta loss; r.loss_g
// is the synthetic loss at the unadapted parameters.
template <class T>
gm::MetaGradResult<T> maml_meta_grad(const models::Segmentor<T>& seg, const models::Annotator<T>& ann,
                                     const gm::LabeledBatch<T>& labeled, const gm::SyntheticBatch<T>& synthetic,
                                     std::size_t inner_steps, double inner_lr) {
  if (labeled.size() == 0 || synthetic.size() == 0) throw ConfigError("maml: empty batch");
  gm::MetaGradResult<T> r;
  auto omega = as_leaves(ann.params);
  auto theta = as_leaves(seg.params);
  const T inv_s = T(1) / static_cast<T>(synthetic.size());
  const T inv_l = T(1) / static_cast<T>(labeled.size());

  std::vector<ad::Var<T>> targets;
  for (const auto& h : synthetic.h) {
    auto hv = gm::detail::lift_all<ad::Var<T>>(h);
    targets.push_back(ad::softmax(ann.template forward<ad::Var<T>>(std::span<const ad::Var<T>>(omega), std::span<const ad::Var<T>>(hv))));
  }
  for (std::size_t k = 0; k < inner_steps; ++k) {
    ad::Var<T> lg;
    for (std::size_t j = 0; j < synthetic.size(); ++j) {
      auto logits = seg.template forward<ad::Var<T>>(std::span<const ad::Var<T>>(theta), ad::Var<T>::constant(synthetic.x[j]));
      auto l = ad::scale(gm::pixel_cross_entropy(logits, targets[j]), inv_s);
      lg = j == 0 ? l : ad::add(lg, l);
    }
    if (k == 0) r.loss_g = lg.value().item();
    auto g = ad::grad(lg, theta, true);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = ad::sub(theta[i], ad::scale(g[i], static_cast<T>(inner_lr)));
  }
  ad::Var<T> meta;
  for (std::size_t j = 0; j < labeled.size(); ++j) {
    auto logits = seg.template forward<ad::Var<T>>(std::span<const ad::Var<T>>(theta), ad::Var<T>::constant(labeled.x[j]));
    auto l = ad::scale(gm::pixel_cross_entropy(logits, labeled.y[j]), inv_l);
    meta = j == 0 ? l : ad::add(meta, l);
  }
  r.loss_l = r.distance = meta.value().item();
  auto go = ad::grad(meta, omega, false);
  for (const auto& g : go) r.grad_omega.grads.push_back(g.value());
  if (!std::isfinite(r.distance) || !r.grad_omega.all_finite())
    throw NumericError("maml: non-finite meta loss or annotator gradient");
  return r;
}

// Algorithm A.2. Uses the same loop, data streams and segmentor policy as
// gm_train so both methods see identical latent and labeled-batch sequences.
template <class T>
gm::TrainResult<T> train_maml(const MamlConfig& cfg, const world::WorldConfig& wc, const world::LabeledSet& labeled,
                              models::Annotator<T> ann, models::Segmentor<T> seg, const gm::MetricsSink& sink = {},
                              const gm::StepObserver<T>& observe = {}) {
  cfg.validate();
  return gm::run_outer_loop(
      cfg.outer, wc, labeled, std::move(ann), std::move(seg),
      [&](const models::Segmentor<T>& s, const models::Annotator<T>& a, const gm::LabeledBatch<T>& lb,
          const gm::SyntheticBatch<T>& sb, const gm::LayerSelection&) {
        return maml_meta_grad(s, a, lb, sb, cfg.inner_steps, cfg.inner_lr);
      },
      sink, observe);
}

}  // namespace gmlabel::baselines
