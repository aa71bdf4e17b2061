#include "regen/eval.hpp"

#include <stdexcept>
#include <string>

namespace regen::eval {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

ConfusionMatrix::ConfusionMatrix(int num_classes, std::vector<std::uint64_t> counts)
    : classes_(num_classes), counts_(std::move(counts)) {
  if (counts_.size() != static_cast<std::size_t>(num_classes) * num_classes) {
    throw std::invalid_argument("ConfusionMatrix: count table has wrong size");
  }
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("accumulate: prediction " + std::to_string(pred.height) + "x" +
                                std::to_string(pred.width) + " vs ground truth " +
                                std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::uint8_t g = gt.data[i];
    if (g == kIgnoreIndex) continue;
    const std::uint8_t p = pred.data[i];
    if (g >= classes_ || p >= classes_) {
      throw std::invalid_argument("accumulate: label " + std::to_string(g >= classes_ ? g : p) +
                                  " out of range");
    }
    ++counts_[static_cast<std::size_t>(g) * classes_ + p];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("ConfusionMatrix: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

IoUReport iou(const ConfusionMatrix& cm, std::span<const bool> subset, UndefinedPolicy policy) {
  const int C = cm.num_classes();
  IoUReport r;
  r.subset.assign(C, true);
  if (!subset.empty()) {
    if (subset.size() != static_cast<std::size_t>(C)) {
      throw std::invalid_argument("iou: subset mask has " + std::to_string(subset.size()) +
                                  " entries for " + std::to_string(C) + " classes");
    }
    r.subset.assign(subset.begin(), subset.end());
  }
  bool any = false;
  for (bool b : r.subset) any = any || b;
  if (!any) throw std::invalid_argument("iou: empty class subset");

  std::uint64_t diag = 0;
  double sum = 0.0;
  int counted = 0;
  r.per_class.resize(C);
  for (int c = 0; c < C; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int k = 0; k < C; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    diag += tp;
    const std::uint64_t denom = row + col - tp;
    if (denom > 0) r.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    if (!r.subset[c]) continue;
    if (r.per_class[c]) {
      sum += *r.per_class[c];
      ++counted;
    } else if (policy == UndefinedPolicy::kCountZero) {
      ++counted;
    }
  }
  r.miou = counted > 0 ? sum / counted : 0.0;
  r.evaluated_pixels = cm.total();
  r.pixel_accuracy = r.evaluated_pixels > 0 ? static_cast<double>(diag) / r.evaluated_pixels : 0.0;
  return r;
}

}  // namespace regen::eval
