#pragma once

#include "gmlabel/gm/meta_grad.hpp"

namespace gmlabel::gm {

// L_l(theta - eta*g_g) - [L_l(theta) - eta*<g_l, g_g>]: the error of the
// first-order model of one SGD step on the synthetic loss.
template <class T, class LossFn>
double taylor_residual(const ParamSet<T>& theta, LossFn&& loss_l, const GradientBundle<T>& grad_l,
                       const GradientBundle<T>& grad_g, double eta) {
  if (!(eta >= 0)) throw ConfigError("taylor_residual: eta must be nonnegative");
  ParamSet<T> stepped = theta;
  for (std::size_t i = 0; i < stepped.size(); ++i)
    for (std::size_t j = 0; j < stepped.tensors[i].size(); ++j)
      stepped.tensors[i][j] -= static_cast<T>(eta) * grad_g[i][j];
  const double l0 = loss_l(theta);
  const double l1 = loss_l(stepped);
  return l1 - (l0 - eta * static_cast<double>(grad_l.dot(grad_g)));
}

template <class T>
double labeled_loss(const models::Segmentor<T>& seg, const ParamSet<T>& theta, const LabeledBatch<T>& batch) {
  double total = 0;
  for (std::size_t j = 0; j < batch.size(); ++j)
    total += pixel_cross_entropy(seg.template forward<Tensor<T>>(std::span<const Tensor<T>>(theta.tensors), batch.x[j]),
                                 batch.y[j])
                 .item();
  return total / static_cast<double>(batch.size());
}

struct TaylorProbe {
  double residual = 0;
  double predicted_change = 0;  // -eta * <g_l, g_g>
  double realized_change = 0;   // L_l(theta - eta*g_g) - L_l(theta)
};

template <class T>
TaylorProbe taylor_probe(const models::Segmentor<T>& seg, const models::Annotator<T>& ann, const LabeledBatch<T>& labeled,
                         const SyntheticBatch<T>& synthetic, double eta) {
  auto [ll, gl] = labeled_loss_grad(seg, labeled);
  auto [lg, gg] = synthetic_loss_grad(seg, synthetic, annotate(ann, synthetic));
  (void)lg;
  auto loss = [&](const ParamSet<T>& th) { return labeled_loss(seg, th, labeled); };
  TaylorProbe p;
  p.residual = taylor_residual(seg.params, loss, gl, gg, eta);
  p.predicted_change = -eta * static_cast<double>(gl.dot(gg));
  p.realized_change = p.residual + p.predicted_change;
  (void)ll;
  return p;
}

template <class T>
double taylor_residual(const models::Segmentor<T>& seg, const models::Annotator<T>& ann, const LabeledBatch<T>& labeled,
                       const SyntheticBatch<T>& synthetic, double eta) {
  return taylor_probe(seg, ann, labeled, synthetic, eta).residual;
}

}  // namespace gmlabel::gm
