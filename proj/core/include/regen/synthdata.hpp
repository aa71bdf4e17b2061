#pragma once

// Procedural paired segmentation domains. A scene is a background plus a few
// overlapping textured shapes; the target domain re-renders the same kind of
// scene under a colour/texture/blur style shift while keeping its labels.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "regen/types.hpp"

namespace regen::synth {

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int num_classes = 5;
  int shapes_min = 3;
  int shapes_max = 6;

  void validate() const;
};

struct DomainShiftParams {
  double hue_rotation = 0.0;               // degrees
  std::vector<double> brightness_offsets;  // per class, each in [-0.3, 0.3]; missing = 0
  double texture_noise_amplitude = 0.0;
  int blur_radius = 0;

  void validate() const;
  bool is_identity() const;
};

// Source-style rendering and exact labels; a pure function of (spec, index).
std::pair<Image, LabelMap> generate_scene(const SceneSpec& spec, std::uint64_t index);

// Target-style re-rendering. Labels are only read (per-class brightness).
Image apply_domain_shift(const Image& img, const LabelMap& labels, const DomainShiftParams& params,
                         std::uint64_t seed);

// HSV hue rotation of a single [-1,1] RGB triple.
void rotate_hue(double& r, double& g, double& b, double degrees);

enum class Split { kSource, kTarget, kTargetHoldout };
std::string split_name(Split s);

struct ManifestEntry {
  Split split = Split::kSource;
  std::string image_path;  // relative to the dataset directory
  std::string label_path;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
};

struct DatasetCounts {
  int n_source = 0;
  int n_target = 0;
  int n_holdout = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  SceneSpec scene;
  DomainShiftParams shift;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(Split s) const;
};

// Writes every split as PNGs plus manifest.json under out_dir.
DatasetManifest build_dataset(const SceneSpec& spec, const DatasetCounts& counts,
                              const DomainShiftParams& shift, const std::filesystem::path& out_dir);

DatasetManifest read_manifest(const std::filesystem::path& dir);

// Loaders. Target splits expose images through load_images only; their labels
// are reachable solely through load_evaluation_labels.
std::vector<std::pair<Image, LabelMap>> load_source_pairs(const DatasetManifest& m);
std::vector<Image> load_images(const DatasetManifest& m, Split s);
std::vector<LabelMap> load_evaluation_labels(const DatasetManifest& m, Split s);

}  // namespace regen::synth
