#include "regen/labelops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace regen::labels {

namespace {

void check_fraction(double f) {
  if (!(f > 0.0 && f <= 1.0)) {
    throw std::invalid_argument("keep_fraction must be in (0, 1], got " + std::to_string(f));
  }
}

struct Candidate {
  double conf;
  std::size_t image;
  std::size_t pixel;
};

}  // namespace

OneHotMap one_hot(const LabelMap& labels, int num_classes) {
  OneHotMap out{num_classes, labels.height, labels.width,
                std::vector<double>(static_cast<std::size_t>(num_classes) * labels.size(), 0.0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t y = labels.data[i];
    if (y == kIgnoreIndex) continue;
    if (y >= num_classes) {
      throw std::invalid_argument("one_hot: label value " + std::to_string(y) +
                                  " out of range for " + std::to_string(num_classes) + " classes");
    }
    out.data[static_cast<std::size_t>(y) * labels.size() + i] = 1.0;
  }
  return out;
}

std::pair<LabelMap, ConfidenceMap> argmax_labels(const ProbMap& probs) {
  LabelMap lab(probs.height, probs.width);
  ConfidenceMap conf{probs.height, probs.width, std::vector<double>(probs.plane())};
  const std::size_t plane = probs.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    double best_v = probs.data[p];
    for (int c = 1; c < probs.classes; ++c) {
      const double v = probs.data[static_cast<std::size_t>(c) * plane + p];
      if (v > best_v) {
        best = c;
        best_v = v;
      }
    }
    lab.data[p] = static_cast<std::uint8_t>(best);
    conf.data[p] = best_v;
  }
  return {std::move(lab), std::move(conf)};
}

std::size_t kept_count(double keep_fraction, std::size_t n) {
  const double k = std::ceil(keep_fraction * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

std::vector<LabelMap> filter_by_class_confidence(std::span<const LabelMap> labels,
                                                 std::span<const ConfidenceMap> conf,
                                                 double keep_fraction) {
  check_fraction(keep_fraction);
  if (labels.size() != conf.size()) throw std::invalid_argument("filter: label/confidence count mismatch");
  std::vector<std::vector<Candidate>> per_class(256);
  for (std::size_t m = 0; m < labels.size(); ++m) {
    if (labels[m].size() != conf[m].data.size()) {
      throw std::invalid_argument("filter: label/confidence shape mismatch");
    }
    for (std::size_t p = 0; p < labels[m].size(); ++p) {
      const std::uint8_t y = labels[m].data[p];
      if (y != kIgnoreIndex) per_class[y].push_back({conf[m].data[p], m, p});
    }
  }
  std::vector<LabelMap> out(labels.begin(), labels.end());
  for (auto& cands : per_class) {
    if (cands.empty()) continue;
    const std::size_t k = kept_count(keep_fraction, cands.size());
    // Descending confidence; ties keep the earlier (image, row-major) position.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.conf > b.conf; });
    for (std::size_t i = k; i < cands.size(); ++i) {
      out[cands[i].image].data[cands[i].pixel] = kIgnoreIndex;
    }
  }
  return out;
}

LabelMap filter_by_class_confidence(const LabelMap& labels, const ConfidenceMap& conf,
                                    double keep_fraction) {
  return std::move(filter_by_class_confidence(std::span(&labels, 1), std::span(&conf, 1),
                                              keep_fraction)[0]);
}

}  // namespace regen::labels
