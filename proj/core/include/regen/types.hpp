#pragma once

// Plain value types shared across modules. All spatial data is row-major with
// channel-major layout (C x H x W) to match ad::Var's NCHW convention.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "regen/autograd.hpp"

namespace regen {

inline constexpr std::uint8_t kIgnoreIndex = 255;

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

// Per-pixel confidence of the arg-max class.
struct ConfidenceMap {
  int height = 0;
  int width = 0;
  std::vector<double> data;
};

// C x H x W class probabilities.
struct ProbMap {
  int classes = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double at(int c, int y, int x) const {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
};

// Hard or soft C x H x W encoding of a label map.
struct OneHotMap {
  int classes = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
};

// 3 x H x W image with values in [-1, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

// Stacks images into an (N,3,H,W) leaf; all images must share a size.
ad::Var to_var(std::span<const Image> images);
ad::Var to_var(const OneHotMap& m);
Image image_from_var(const ad::Var& v, int index = 0);
ProbMap probmap_from_var(const ad::Var& v, int index = 0);

}  // namespace regen
