#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "regen/types.hpp"

namespace regen::eval {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);
  ConfusionMatrix(int num_classes, std::vector<std::uint64_t> counts);

  // Counts every pixel whose ground truth is not kIgnoreIndex.
  void accumulate(const LabelMap& pred, const LabelMap& gt);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  int num_classes() const { return classes_; }
  std::uint64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * classes_ + pred];
  }
  std::uint64_t total() const;
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

enum class UndefinedPolicy {
  kExclude,    // classes with a zero IoU denominator are left out of the mean
  kCountZero,  // ...or counted as IoU 0
};

struct IoUReport {
  std::vector<std::optional<double>> per_class;  // nullopt: undefined
  std::vector<bool> subset;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::uint64_t evaluated_pixels = 0;
  int evaluated_images = 0;
};

// subset: one flag per class; empty means every class.
IoUReport iou(const ConfusionMatrix& cm, std::span<const bool> subset = {},
              UndefinedPolicy policy = UndefinedPolicy::kExclude);

}  // namespace regen::eval
