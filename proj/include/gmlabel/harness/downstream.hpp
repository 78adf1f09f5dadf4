#pragma once

#include "gmlabel/gm/train.hpp"
#include "gmlabel/harness/dataset.hpp"

namespace gmlabel::harness {

struct DownstreamConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 2;
  double lr = kDefaultLearningRate;
  double momentum = kDefaultMomentum;
  std::uint64_t seed = 0;
  std::size_t test_size = 64;
  std::uint64_t test_seed = 0;
  bool hard_labels = false;  // train on stored argmax masks instead of soft labels

  void validate() const {
    if (steps < 1) throw ConfigError("downstream: steps must be >= 1");
    if (batch_size < 1) throw ConfigError("downstream: batch_size must be >= 1");
    if (test_size < 1) throw ConfigError("downstream: test_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("downstream: lr must be positive");
  }
};

template <class T>
struct DownstreamResult {
  models::Segmentor<T> segmentor;
  double test_miou = 0;
  double test_fg_miou = 0;
  std::vector<double> test_class_iou;
};

// Oracle-labeled held-out test split. Only evaluation ever reads this stream.
inline world::LabeledSet test_split(const world::WorldConfig& wc, std::size_t n, std::uint64_t seed) {
  return world::make_labeled_set(wc, static_cast<std::int64_t>(n), world::SetMode::real, seed, Stream::test);
}

template <class T>
void evaluate_segmentor(const models::Segmentor<T>& seg, const world::LabeledSet& test, DownstreamResult<T>& out) {
  auto c = gm::segmentor_confusion(seg, test);
  out.test_miou = c.miou(true);
  out.test_fg_miou = c.miou(false);
  out.test_class_iou = c.class_iou();
}

// Trains a fresh segmentor on an (image, label) dataset and scores it on the
// held-out test split.
template <class T>
DownstreamResult<T> train_downstream(const Dataset& data, const world::WorldConfig& wc, const models::SegmentorSpec& spec,
                                     const DownstreamConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError("downstream: dataset is empty");
  DownstreamResult<T> out;
  out.segmentor = models::init_segmentor<T>(spec, stream_seed(cfg.seed, Stream::init, 0xd0));
  auto opt = gm::make_opt<T>(cfg.lr, cfg.momentum);
  gm::LabeledSampler sampler(data.size(), mix_seed(cfg.seed, 0xd1));
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const auto idx = sampler.next(cfg.batch_size);
    if (cfg.hard_labels) {
      gm::LabeledBatch<T> b;
      for (auto i : idx) {
        b.x.push_back(gm::cast_tensor<T>(data.images[i]));
        b.y.push_back(data.masks[i]);
      }
      sgd_step(out.segmentor.params, gm::labeled_loss_grad(out.segmentor, b).second, opt);
    } else {
      gm::SyntheticBatch<T> b;
      std::vector<Tensor<T>> targets;
      for (auto i : idx) {
        b.x.push_back(gm::cast_tensor<T>(data.images[i]));
        b.h.emplace_back();
        targets.push_back(gm::cast_tensor<T>(data.soft[i]));
      }
      sgd_step(out.segmentor.params, gm::synthetic_loss_grad(out.segmentor, b, targets).second, opt);
    }
  }
  evaluate_segmentor(out.segmentor, test_split(wc, cfg.test_size, cfg.test_seed), out);
  return out;
}

}  // namespace gmlabel::harness
