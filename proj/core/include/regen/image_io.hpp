#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "regen/types.hpp"

namespace regen::io {

// 8-bit RGB buffer, interleaved.
struct Rgb8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

std::uint8_t to_byte(double v);  // [-1,1] -> [0,255], clamped and rounded
double from_byte(std::uint8_t b);

Rgb8 to_rgb8(const Image& img);
Image from_rgb8(const Rgb8& rgb);

void write_png_rgb(const std::filesystem::path& path, const Rgb8& rgb);
Rgb8 read_png_rgb(const std::filesystem::path& path);

void write_png_gray(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_png_gray(const std::filesystem::path& path);

void write_image_png(const std::filesystem::path& path, const Image& img);
Image read_image_png(const std::filesystem::path& path);

}  // namespace regen::io
