#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "gmlabel/gm/meta_grad.hpp"
#include "gmlabel/harness/metrics.hpp"
#include "gmlabel/world/labeled.hpp"

namespace gmlabel::gm {

template <class T>
Tensor<T> cast_tensor(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>)
    return t;
  else
    return t.template cast<T>();
}

template <class T>
std::vector<Tensor<T>> cast_pyramid(const std::vector<Tensor<float>>& h) {
  std::vector<Tensor<T>> out;
  out.reserve(h.size());
  for (const auto& t : h) out.push_back(cast_tensor<T>(t));
  return out;
}

// Fresh generator draws; every call consumes new latents from the stream.
template <class T>
SyntheticBatch<T> draw_synthetic(world::LatentStream& stream, std::size_t n, std::vector<LabelMap>* oracle = nullptr) {
  SyntheticBatch<T> b;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = stream.next_sample();
    b.x.push_back(cast_tensor<T>(s.x));
    b.h.push_back(cast_pyramid<T>(s.h));
    if (oracle) oracle->push_back(std::move(s.y_star));
  }
  return b;
}

// Draws labeled batches by cycling through seeded random permutations.
class LabeledSampler {
 public:
  LabeledSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(stream_seed(seed, Stream::labeled_batch)) {
    if (n == 0) throw ConfigError("labeled set is empty");
  }

  std::vector<std::size_t> next(std::size_t b) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < b; ++i) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.uniform_index(i)]);
    pos_ = 0;
  }

  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

template <class T>
LabeledBatch<T> gather_labeled(const world::LabeledSet& set, const std::vector<std::size_t>& idx) {
  LabeledBatch<T> b;
  for (auto i : idx) {
    b.x.push_back(cast_tensor<T>(set.examples[i].x));
    b.y.push_back(set.examples[i].y);
  }
  return b;
}

// Annotator argmax against oracle masks of a feature-carrying set.
template <class T>
harness::Confusion annotator_confusion(const models::Annotator<T>& ann, const world::LabeledSet& set) {
  if (!set.has_features()) throw ConfigError("annotator evaluation requires a set with features");
  harness::Confusion c(ann.spec.num_classes);
  for (const auto& e : set.examples) c.add(models::argmax_labels(ann.logits(cast_pyramid<T>(e.h))), e.y);
  return c;
}

template <class T>
harness::Confusion segmentor_confusion(const models::Segmentor<T>& seg, const world::LabeledSet& set) {
  harness::Confusion c(seg.spec.num_classes);
  for (const auto& e : set.examples) c.add(models::argmax_labels(seg.logits(cast_tensor<T>(e.x))), e.y);
  return c;
}

template <class T>
Tensor<T> one_hot(const LabelMap& m, std::size_t num_classes) {
  Tensor<T> t({num_classes, m.height, m.width});
  for (std::size_t p = 0; p < m.size(); ++p) t[m.data[p] * m.size() + p] = T(1);
  return t;
}

}  // namespace gmlabel::gm
