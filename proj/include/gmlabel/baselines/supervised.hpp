#pragma once

#include <functional>
#include <vector>

#include "gmlabel/gm/train.hpp"

namespace gmlabel::baselines {

struct SupervisedConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 2;
  double lr = kDefaultLearningRate;
  double momentum = kDefaultMomentum;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw ConfigError("supervised: steps must be >= 1");
    if (batch_size < 1) throw ConfigError("supervised: batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("supervised: lr must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("supervised: momentum must be in [0,1)");
  }
};

// Per-example annotator training targets: a hard mask or a per-pixel class
// distribution.
struct AnnotatorExamples {
  std::vector<std::vector<Tensor<float>>> h;
  std::vector<LabelMap> masks;
  std::vector<Tensor<float>> soft;  // empty for hard targets

  std::size_t size() const noexcept { return h.size(); }
  bool is_soft() const noexcept { return !soft.empty(); }
};

template <class T>
struct SupervisedResult {
  models::Annotator<T> annotator;
  double initial_loss = 0;
  double final_loss = 0;
};

namespace detail {

template <class T>
ad::Var<T> example_loss(const models::Annotator<T>& ann, std::span<const ad::Var<T>> w, const AnnotatorExamples& ex,
                        std::size_t i) {
  auto h = gm::detail::lift_all<ad::Var<T>>(gm::cast_pyramid<T>(ex.h[i]));
  auto logits = ann.template forward<ad::Var<T>>(w, std::span<const ad::Var<T>>(h));
  if (ex.is_soft()) return gm::pixel_cross_entropy(logits, ad::Var<T>::constant(gm::cast_tensor<T>(ex.soft[i])));
  return gm::pixel_cross_entropy(logits, ex.masks[i]);
}

}  // namespace detail

// Mean per-example pixel cross-entropy of the annotator over a target set.
template <class T>
double annotator_loss(const models::Annotator<T>& ann, const AnnotatorExamples& ex) {
  double total = 0;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    auto h = gm::cast_pyramid<T>(ex.h[i]);
    auto logits = ann.logits(h);
    total += ex.is_soft() ? gm::pixel_cross_entropy(logits, gm::cast_tensor<T>(ex.soft[i])).item()
                          : gm::pixel_cross_entropy(logits, ex.masks[i]).item();
  }
  return total / static_cast<double>(ex.size());
}

template <class T>
SupervisedResult<T> fit_annotator(const SupervisedConfig& cfg, const AnnotatorExamples& ex, models::Annotator<T> ann) {
  cfg.validate();
  if (ex.size() == 0) throw ConfigError("supervised: no training examples");
  SupervisedResult<T> out;
  out.initial_loss = annotator_loss(ann, ex);
  auto opt = gm::make_opt<T>(cfg.lr, cfg.momentum);
  gm::LabeledSampler sampler(ex.size(), cfg.seed);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const auto idx = sampler.next(cfg.batch_size);
    const T inv = T(1) / static_cast<T>(idx.size());
    auto g = ad::grad(
        [&](std::span<const ad::Var<T>> w) {
          ad::Var<T> total;
          for (std::size_t j = 0; j < idx.size(); ++j) {
            auto l = ad::scale(detail::example_loss(ann, w, ex, idx[j]), inv);
            total = j == 0 ? l : ad::add(total, l);
          }
          return total;
        },
        ann.params);
    sgd_step(ann.params, g, opt);
  }
  out.final_loss = annotator_loss(ann, ex);
  out.annotator = std::move(ann);
  return out;
}

inline AnnotatorExamples examples_from(const world::LabeledSet& set) {
  if (!set.has_features())
    throw ConfigError("supervised annotator training requires a synthetic-mode set with features");
  AnnotatorExamples ex;
  for (const auto& e : set.examples) {
    ex.h.push_back(e.h);
    ex.masks.push_back(e.y);
  }
  return ex;
}

// Oracle upper bound: the annotator is fit directly to ground-truth masks.
template <class T>
SupervisedResult<T> train_supervised_annotator(const SupervisedConfig& cfg, const world::LabeledSet& set,
                                               models::Annotator<T> ann) {
  return fit_annotator(cfg, examples_from(set), std::move(ann));
}

}  // namespace gmlabel::baselines
