#pragma once

#include <span>
#include <utility>
#include <vector>

#include "regen/types.hpp"

namespace regen::labels {

// Hard encoding; ignore pixels become all-zero columns.
OneHotMap one_hot(const LabelMap& labels, int num_classes);

// Per-pixel arg-max (ties go to the lower class) and its probability.
std::pair<LabelMap, ConfidenceMap> argmax_labels(const ProbMap& probs);

// Number of pixels kept out of n at the given fraction: ceil(fraction * n).
// A 1e-9 slack absorbs binary rounding (0.33 * 100 must give 33, not 34).
std::size_t kept_count(double keep_fraction, std::size_t n);

// Class-wise confidence filter: per class, keeps the kept_count() most
// confident pixels (ties broken toward the lower row-major index) and demotes
// the rest to kIgnoreIndex.
LabelMap filter_by_class_confidence(const LabelMap& labels, const ConfidenceMap& conf,
                                    double keep_fraction);

// Same rule with the per-class ranking taken over a whole collection of maps.
std::vector<LabelMap> filter_by_class_confidence(std::span<const LabelMap> labels,
                                                 std::span<const ConfidenceMap> conf,
                                                 double keep_fraction);

}  // namespace regen::labels
