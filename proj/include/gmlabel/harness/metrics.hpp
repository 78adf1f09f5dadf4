#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmlabel/tensor.hpp"

namespace gmlabel::harness {

// Dataset-level confusion counts: rows are ground truth, columns predictions.
class Confusion {
 public:
  explicit Confusion(std::size_t num_classes) : c_(num_classes), m_(num_classes * num_classes, 0) {
    if (num_classes < 1) throw ConfigError("Confusion: num_classes must be positive");
  }

  void add(const LabelMap& pred, const LabelMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
      throw ShapeError("miou: prediction is " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                       ", ground truth is " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (pred.data[i] >= c_ || gt.data[i] >= c_)
        throw Error("invalid_class", "miou: class index out of range [0," + std::to_string(c_) + ")");
      ++m_[gt.data[i] * c_ + pred.data[i]];
    }
  }

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return m_[gt * c_ + pred]; }
  std::size_t num_classes() const noexcept { return c_; }

  // Per-class IoU; negative for classes absent from both prediction and ground truth.
  std::vector<double> class_iou() const {
    std::vector<double> iou(c_, -1.0);
    for (std::size_t k = 0; k < c_; ++k) {
      std::uint64_t row = 0, col = 0;
      for (std::size_t j = 0; j < c_; ++j) {
        row += at(k, j);
        col += at(j, k);
      }
      const std::uint64_t uni = row + col - at(k, k);
      if (uni > 0) iou[k] = static_cast<double>(at(k, k)) / static_cast<double>(uni);
    }
    return iou;
  }

  double miou(bool include_background) const {
    const auto iou = class_iou();
    double s = 0;
    std::size_t n = 0;
    for (std::size_t k = include_background ? 0 : 1; k < c_; ++k)
      if (iou[k] >= 0) {
        s += iou[k];
        ++n;
      }
    return n == 0 ? 1.0 : s / static_cast<double>(n);  // vacuously perfect when no class is present
  }

 private:
  std::size_t c_;
  std::vector<std::uint64_t> m_;
};

inline double miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts, std::size_t num_classes,
                   bool include_background = true) {
  if (preds.size() != gts.size())
    throw ShapeError("miou: " + std::to_string(preds.size()) + " predictions vs " + std::to_string(gts.size()) +
                     " ground-truth masks");
  Confusion c(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) c.add(preds[i], gts[i]);
  return c.miou(include_background);
}

inline double miou(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes, bool include_background = true) {
  return miou(std::span<const LabelMap>(&pred, 1), std::span<const LabelMap>(&gt, 1), num_classes, include_background);
}

}  // namespace gmlabel::harness
