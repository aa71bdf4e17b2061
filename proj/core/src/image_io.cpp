#include "regen/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace regen::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               int channels, const std::uint8_t* pixels) {
  auto f = open_or_throw(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw std::runtime_error("PNG flush failed: " + path.string());
}

// Reads any 8-bit PNG, converted to the requested channel count (1 or 3).
std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int channels, int& width,
                                   int& height) {
  auto f = open_or_throw(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG read failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
  if (channels == 1 && !is_gray) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("expected single-channel PNG: " + path.string());
  }
  png_read_update_info(png, info);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height * channels);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, pixels.data() + static_cast<std::size_t>(y) * width * channels, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

}  // namespace

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((c + 1.0) * 127.5));
}

double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

Rgb8 to_rgb8(const Image& img) {
  Rgb8 out{img.height, img.width, std::vector<std::uint8_t>(img.plane() * 3)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = to_byte(img.at(c, y, x));
  return out;
}

Image from_rgb8(const Rgb8& rgb) {
  Image img(rgb.height, rgb.width);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = from_byte(rgb.pixels[(static_cast<std::size_t>(y) * rgb.width + x) * 3 + c]);
  return img;
}

void write_png_rgb(const std::filesystem::path& path, const Rgb8& rgb) {
  write_png(path, rgb.width, rgb.height, PNG_COLOR_TYPE_RGB, 3, rgb.pixels.data());
}

Rgb8 read_png_rgb(const std::filesystem::path& path) {
  Rgb8 out;
  out.pixels = read_png(path, 3, out.width, out.height);
  return out;
}

void write_png_gray(const std::filesystem::path& path, const LabelMap& labels) {
  write_png(path, labels.width, labels.height, PNG_COLOR_TYPE_GRAY, 1, labels.data.data());
}

LabelMap read_png_gray(const std::filesystem::path& path) {
  LabelMap out;
  out.data = read_png(path, 1, out.width, out.height);
  return out;
}

void write_image_png(const std::filesystem::path& path, const Image& img) {
  write_png_rgb(path, to_rgb8(img));
}

Image read_image_png(const std::filesystem::path& path) { return from_rgb8(read_png_rgb(path)); }

}  // namespace regen::io
