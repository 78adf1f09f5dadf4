#pragma once

#include "gmlabel/baselines/supervised.hpp"

namespace gmlabel::baselines {

struct PseudoConfig {
  std::size_t segmentor_steps = 2000;
  std::size_t pool_size = 256;
  bool soft = false;
  double lr_segmentor = kDefaultLearningRate;
  SupervisedConfig annotator;  // stage (iii); its seed also drives stage (i)

  void validate() const {
    annotator.validate();
    if (segmentor_steps < 1) throw ConfigError("pseudo: segmentor_steps must be >= 1");
    if (pool_size < 1) throw ConfigError("pseudo: pool_size must be >= 1");
    if (!(lr_segmentor > 0)) throw ConfigError("pseudo: lr_segmentor must be positive");
  }
};

// Maps an image to a per-pixel class distribution (C,H,W). Stage (ii) sees
// nothing but images through this interface.
using ImageLabeler = std::function<Tensor<float>(const Tensor<float>& image)>;

template <class T>
ImageLabeler segmentor_labeler(const models::Segmentor<T>& seg) {
  return [&seg](const Tensor<float>& x) {
    auto p = models::soft_labels(seg.logits(gm::cast_tensor<T>(x)));
    if constexpr (std::is_same_v<T, float>)
      return p;
    else
      return p.template cast<float>();
  };
}

// Stage (ii): fresh generator draws labeled by `labeler`. Hard masks are the
// argmax of the labeler output with lowest-index ties; soft targets are kept
// only when requested.
inline AnnotatorExamples pseudo_label(const ImageLabeler& labeler, world::LatentStream& stream, std::size_t n, bool soft) {
  AnnotatorExamples ex;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = stream.next_sample();
    auto p = labeler(s.x);
    ex.masks.push_back(models::argmax_labels(p));
    if (soft) ex.soft.push_back(std::move(p));
    ex.h.push_back(std::move(s.h));
  }
  return ex;
}

template <class T>
struct PseudoResult {
  models::Annotator<T> annotator;
  models::Segmentor<T> segmentor;  // stage (i) model
  AnnotatorExamples pool;
};

// Stages (ii) and (iii) with an arbitrary labeler.
template <class T>
PseudoResult<T> pseudo_label_and_fit(const PseudoConfig& cfg, const world::WorldConfig& wc, const ImageLabeler& labeler,
                                     models::Annotator<T> ann) {
  cfg.validate();
  PseudoResult<T> out;
  world::LatentStream stream(wc, cfg.annotator.seed, Stream::train_synthetic);
  out.pool = pseudo_label(labeler, stream, cfg.pool_size, cfg.soft);
  out.annotator = fit_annotator(cfg.annotator, out.pool, std::move(ann)).annotator;
  return out;
}

// Pseudo-labeling baseline: (i) segmentor trained on the labeled set,
// (ii) argmax pseudo-masks on generated images, (iii) supervised annotator fit.
template <class T>
PseudoResult<T> train_pseudo_labeling(const PseudoConfig& cfg, const world::WorldConfig& wc,
                                      const world::LabeledSet& labeled, models::Annotator<T> ann,
                                      models::Segmentor<T> seg) {
  cfg.validate();
  if (labeled.size() == 0) throw ConfigError("pseudo: labeled set is empty");
  auto opt = gm::make_opt<T>(cfg.lr_segmentor, cfg.annotator.momentum);
  gm::LabeledSampler sampler(labeled.size(), mix_seed(cfg.annotator.seed, 0x9e5du));
  gm::train_segmentor_supervised(seg, opt, labeled, sampler, cfg.segmentor_steps, cfg.annotator.batch_size);
  auto out = pseudo_label_and_fit(cfg, wc, segmentor_labeler(seg), std::move(ann));
  out.segmentor = std::move(seg);
  return out;
}

}  // namespace gmlabel::baselines
