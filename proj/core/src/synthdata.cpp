#include "regen/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "regen/image_io.hpp"
#include "regen/rng.hpp"

namespace regen::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTargetIndexBase = 1'000'000;
constexpr std::uint64_t kHoldoutIndexBase = 2'000'000;
constexpr std::uint64_t kShiftStream = 0x5EED5EED;

struct Rgb {
  double r, g, b;
};

// [-1,1] RGB from HSV with h in degrees, s and v in [0,1].
Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double hh = h / 60.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  double r, g, b;
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {2 * r - 1, 2 * g - 1, 2 * b - 1};
}

Rgb class_colour(int cls, int num_classes) {
  if (cls == 0) return {-0.45, -0.35, -0.2};
  const double hue = 15.0 + 360.0 * (cls - 1) / std::max(1, num_classes - 1);
  return hsv_to_rgb(hue, 0.75, 0.85);
}

// Class-specific luminance texture in roughly [-1, 1].
double class_texture(int cls, int y, int x) {
  if (cls == 0) return 0.0;
  switch ((cls - 1) % 4) {
    case 0: return (y / 2) % 2 == 0 ? 1.0 : -1.0;
    case 1: return (x / 2) % 2 == 0 ? 1.0 : -1.0;
    case 2: return ((x / 3) + (y / 3)) % 2 == 0 ? 1.0 : -1.0;
    default: return std::sin(0.9 * (x + y));
  }
}

struct Point {
  double x, y;
};

bool inside_polygon(const std::vector<Point>& poly, double px, double py) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

std::uint64_t scene_index(Split s, std::uint64_t i) {
  switch (s) {
    case Split::kSource: return i;
    case Split::kTarget: return kTargetIndexBase + i;
    case Split::kTargetHoldout: return kHoldoutIndexBase + i;
  }
  return i;
}

Split parse_split(const std::string& name) {
  if (name == "source") return Split::kSource;
  if (name == "target") return Split::kTarget;
  if (name == "target_holdout") return Split::kTargetHoldout;
  throw std::runtime_error("unknown split '" + name + "' in manifest");
}

json scene_json(const SceneSpec& s) {
  return {{"seed", s.seed},         {"height", s.height},         {"width", s.width},
          {"num_classes", s.num_classes}, {"shapes_min", s.shapes_min}, {"shapes_max", s.shapes_max}};
}

json shift_json(const DomainShiftParams& p) {
  return {{"hue_rotation", p.hue_rotation},
          {"brightness_offsets", p.brightness_offsets},
          {"texture_noise_amplitude", p.texture_noise_amplitude},
          {"blur_radius", p.blur_radius}};
}

void box_blur(Image& img, int radius) {
  const int h = img.height, w = img.width;
  std::vector<double> tmp(img.plane());
  for (int c = 0; c < 3; ++c) {
    double* plane = img.data.data() + static_cast<std::size_t>(c) * img.plane();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int d = -radius; d <= radius; ++d) acc += plane[y * w + std::clamp(x + d, 0, w - 1)];
        tmp[static_cast<std::size_t>(y) * w + x] = acc / (2 * radius + 1);
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int d = -radius; d <= radius; ++d) acc += tmp[static_cast<std::size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
        plane[y * w + x] = acc / (2 * radius + 1);
      }
    }
  }
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 16 || width < 16) {
    throw std::invalid_argument("SceneSpec: height and width must be >= 16 (got " +
                                std::to_string(height) + "x" + std::to_string(width) + ")");
  }
  if (num_classes < 2 || num_classes > 255) {
    throw std::invalid_argument("SceneSpec: num_classes must be in [2, 255] (got " +
                                std::to_string(num_classes) + ")");
  }
  if (shapes_min < 0 || shapes_max < shapes_min) {
    throw std::invalid_argument("SceneSpec: invalid shapes range");
  }
}

void DomainShiftParams::validate() const {
  for (double b : brightness_offsets) {
    if (b < -0.3 || b > 0.3) {
      throw std::invalid_argument("DomainShiftParams: brightness offset " + std::to_string(b) +
                                  " outside [-0.3, 0.3]");
    }
  }
  if (texture_noise_amplitude < 0) throw std::invalid_argument("DomainShiftParams: negative noise");
  if (blur_radius < 0) throw std::invalid_argument("DomainShiftParams: negative blur radius");
}

bool DomainShiftParams::is_identity() const {
  return hue_rotation == 0.0 && texture_noise_amplitude == 0.0 && blur_radius == 0 &&
         std::all_of(brightness_offsets.begin(), brightness_offsets.end(),
                     [](double b) { return b == 0.0; });
}

void rotate_hue(double& r, double& g, double& b, double degrees) {
  const double R = (r + 1) / 2, G = (g + 1) / 2, B = (b + 1) / 2;
  const double mx = std::max({R, G, B});
  const double mn = std::min({R, G, B});
  const double delta = mx - mn;
  if (delta <= 0.0) return;  // achromatic: hue undefined, nothing to rotate
  double h;
  if (mx == R) {
    h = 60.0 * std::fmod((G - B) / delta, 6.0);
  } else if (mx == G) {
    h = 60.0 * ((B - R) / delta + 2.0);
  } else {
    h = 60.0 * ((R - G) / delta + 4.0);
  }
  const Rgb out = hsv_to_rgb(h + degrees, delta / mx, mx);
  r = out.r;
  g = out.g;
  b = out.b;
}

std::pair<Image, LabelMap> generate_scene(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  const int H = spec.height, W = spec.width, C = spec.num_classes;
  Rng rng(derive_seed(spec.seed, index));

  LabelMap labels(H, W, 0);
  const double unit = std::min(H, W) / 64.0;
  const int n_shapes = rng.uniform_int(spec.shapes_min, spec.shapes_max);
  for (int s = 0; s < n_shapes; ++s) {
    const auto cls = static_cast<std::uint8_t>(rng.uniform_int(1, C - 1));
    const bool ellipse = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.1 * W, 0.9 * W);
    const double cy = rng.uniform(0.1 * H, 0.9 * H);
    const double r0 = rng.uniform(6.0, 16.0) * unit;
    const double r1 = rng.uniform(6.0, 16.0) * unit;
    const double angle = rng.uniform(0.0, std::numbers::pi);
    std::vector<Point> poly;
    if (!ellipse) {
      const int k = rng.uniform_int(3, 5);
      std::vector<double> angles(k);
      for (auto& a : angles) a = rng.uniform(0.0, 2 * std::numbers::pi);
      std::sort(angles.begin(), angles.end());
      for (double a : angles) poly.push_back({cx + r0 * std::cos(a), cy + r1 * std::sin(a)});
    }
    const double ca = std::cos(angle), sa = std::sin(angle);
    // The one-pixel frame stays background so class 0 is always present.
    for (int y = 1; y < H - 1; ++y) {
      for (int x = 1; x < W - 1; ++x) {
        bool hit;
        if (ellipse) {
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          const double u = (dx * ca + dy * sa) / r0;
          const double v = (-dx * sa + dy * ca) / r1;
          hit = u * u + v * v <= 1.0;
        } else {
          hit = inside_polygon(poly, x + 0.5, y + 0.5);
        }
        if (hit) labels.at(y, x) = cls;
      }
    }
  }

  Image img(H, W);
  const double gradient_sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int cls = labels.at(y, x);
      const Rgb base = class_colour(cls, C);
      double lum = 0.12 * class_texture(cls, y, x);
      if (cls == 0) lum += gradient_sign * 0.2 * (static_cast<double>(y) / H - 0.5);
      lum += 0.02 * rng.normal();
      img.at(0, y, x) = std::clamp(base.r + lum, -1.0, 1.0);
      img.at(1, y, x) = std::clamp(base.g + lum, -1.0, 1.0);
      img.at(2, y, x) = std::clamp(base.b + lum, -1.0, 1.0);
    }
  }
  return {std::move(img), std::move(labels)};
}

Image apply_domain_shift(const Image& img, const LabelMap& labels, const DomainShiftParams& params,
                         std::uint64_t seed) {
  if (img.height != labels.height || img.width != labels.width) {
    throw std::invalid_argument("apply_domain_shift: image " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " vs labels " +
                                std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  params.validate();
  Image out = img;
  if (params.is_identity()) return out;

  if (params.hue_rotation != 0.0) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        rotate_hue(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x), params.hue_rotation);
      }
    }
  }
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t cls = labels.at(y, x);
      if (cls < params.brightness_offsets.size()) {
        for (int c = 0; c < 3; ++c) out.at(c, y, x) += params.brightness_offsets[cls];
      }
    }
  }
  if (params.texture_noise_amplitude > 0.0) {
    Rng rng(derive_seed(seed, kShiftStream));
    for (double& v : out.data) v += params.texture_noise_amplitude * rng.normal();
  }
  if (params.blur_radius > 0) box_blur(out, params.blur_radius);
  for (double& v : out.data) v = std::clamp(v, -1.0, 1.0);
  return out;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kSource: return "source";
    case Split::kTarget: return "target";
    case Split::kTargetHoldout: return "target_holdout";
  }
  return "unknown";
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

DatasetManifest build_dataset(const SceneSpec& spec, const DatasetCounts& counts,
                              const DomainShiftParams& shift, const fs::path& out_dir) {
  spec.validate();
  shift.validate();
  if (counts.n_source < 0 || counts.n_target < 0 || counts.n_holdout < 0) {
    throw std::invalid_argument("build_dataset: negative split count");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m{out_dir, spec, shift, {}};
  auto emit = [&](Split split, int count) {
    const std::string dir = split_name(split);
    fs::create_directories(out_dir / dir, ec);
    if (ec) throw std::runtime_error("cannot create " + (out_dir / dir).string());
    for (int i = 0; i < count; ++i) {
      const std::uint64_t idx = scene_index(split, static_cast<std::uint64_t>(i));
      auto [img, labels] = generate_scene(spec, idx);
      const std::uint64_t sample_seed = derive_seed(spec.seed, idx);
      if (split != Split::kSource) img = apply_domain_shift(img, labels, shift, sample_seed);
      char name[32];
      std::snprintf(name, sizeof(name), "%05d", i);
      ManifestEntry e{split, dir + "/image_" + name + ".png", dir + "/label_" + name + ".png",
                      sample_seed, idx};
      io::write_image_png(out_dir / e.image_path, img);
      io::write_png_gray(out_dir / e.label_path, labels);
      m.entries.push_back(std::move(e));
    }
  };
  emit(Split::kSource, counts.n_source);
  emit(Split::kTarget, counts.n_target);
  emit(Split::kTargetHoldout, counts.n_holdout);

  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"split", split_name(e.split)},
                       {"image_path", e.image_path},
                       {"label_path", e.label_path},
                       {"seed", e.seed},
                       {"index", e.index}});
  }
  json doc = {
      {"format", "regen-dataset/1"},
      {"scene", scene_json(spec)},
      {"shift", shift_json(shift)},
      {"splits",
       {{"source", {{"count", counts.n_source}, {"labels", "train"}}},
        {"target", {{"count", counts.n_target}, {"labels", "evaluation-only"}}},
        {"target_holdout", {{"count", counts.n_holdout}, {"labels", "evaluation-only"}}}}},
      {"entries", entries}};
  const fs::path manifest = out_dir / "manifest.json";
  std::ofstream f(manifest, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + manifest.string());
  f << doc.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + manifest.string());
  return m;
}

DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream f(path);
  if (!f) throw std::runtime_error("missing dataset manifest: " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = dir;
  const auto& s = doc.at("scene");
  m.scene = {s.at("seed").get<std::uint64_t>(), s.at("height").get<int>(), s.at("width").get<int>(),
             s.at("num_classes").get<int>(), s.at("shapes_min").get<int>(),
             s.at("shapes_max").get<int>()};
  const auto& sh = doc.at("shift");
  m.shift.hue_rotation = sh.at("hue_rotation").get<double>();
  m.shift.brightness_offsets = sh.at("brightness_offsets").get<std::vector<double>>();
  m.shift.texture_noise_amplitude = sh.at("texture_noise_amplitude").get<double>();
  m.shift.blur_radius = sh.at("blur_radius").get<int>();
  for (const auto& e : doc.at("entries")) {
    m.entries.push_back({parse_split(e.at("split").get<std::string>()),
                         e.at("image_path").get<std::string>(),
                         e.at("label_path").get<std::string>(), e.at("seed").get<std::uint64_t>(),
                         e.at("index").get<std::uint64_t>()});
  }
  return m;
}

std::vector<std::pair<Image, LabelMap>> load_source_pairs(const DatasetManifest& m) {
  std::vector<std::pair<Image, LabelMap>> out;
  for (const auto* e : m.split(Split::kSource)) {
    out.emplace_back(io::read_image_png(m.root / e->image_path),
                     io::read_png_gray(m.root / e->label_path));
  }
  return out;
}

std::vector<Image> load_images(const DatasetManifest& m, Split s) {
  std::vector<Image> out;
  for (const auto* e : m.split(s)) out.push_back(io::read_image_png(m.root / e->image_path));
  return out;
}

std::vector<LabelMap> load_evaluation_labels(const DatasetManifest& m, Split s) {
  std::vector<LabelMap> out;
  for (const auto* e : m.split(s)) out.push_back(io::read_png_gray(m.root / e->label_path));
  return out;
}

}  // namespace regen::synth
