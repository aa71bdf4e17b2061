#include "regen/types.hpp"

#include <algorithm>
#include <stdexcept>

namespace regen {

ad::Var to_var(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("to_var: empty image batch");
  const int h = images[0].height;
  const int w = images[0].width;
  std::vector<double> data;
  data.reserve(images.size() * 3 * static_cast<std::size_t>(h) * w);
  for (const auto& img : images) {
    if (img.height != h || img.width != w) throw std::invalid_argument("to_var: mixed image sizes");
    data.insert(data.end(), img.data.begin(), img.data.end());
  }
  return ad::Var::leaf(ad::Shape{static_cast<int>(images.size()), 3, h, w}, std::move(data));
}

ad::Var to_var(const OneHotMap& m) {
  return ad::Var::leaf(ad::Shape{1, m.classes, m.height, m.width}, m.data);
}

Image image_from_var(const ad::Var& v, int index) {
  const auto s = v.shape();
  if (s.c != 3 || index < 0 || index >= s.n) throw std::invalid_argument("image_from_var: bad shape");
  Image img(s.h, s.w);
  const auto begin = v.value().begin() + static_cast<std::ptrdiff_t>(index) * 3 * s.plane();
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(3 * s.plane()), img.data.begin());
  return img;
}

ProbMap probmap_from_var(const ad::Var& v, int index) {
  const auto s = v.shape();
  if (index < 0 || index >= s.n) throw std::invalid_argument("probmap_from_var: bad index");
  ProbMap p{s.c, s.h, s.w, {}};
  const auto begin = v.value().begin() + static_cast<std::ptrdiff_t>(index) * s.c * s.plane();
  p.data.assign(begin, begin + static_cast<std::ptrdiff_t>(s.c * s.plane()));
  return p;
}

}  // namespace regen
