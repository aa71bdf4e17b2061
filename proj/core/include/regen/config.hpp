#pragma once

// Experiment configuration. A config file is a JSON object laid over the full
// default document: unknown keys and type mismatches are rejected with the
// dotted path of the offending field, and missing keys take their defaults.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "regen/eval.hpp"
#include "regen/losses.hpp"
#include "regen/synthdata.hpp"

namespace regen::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string dir;  // empty: <output_dir>/data
  synth::SceneSpec scene;
  synth::DatasetCounts counts{200, 200, 16};
  synth::DomainShiftParams shift;
};

enum class FilterScope { kImage, kDataset };

struct Schedule {
  int pretrain_epochs = 20;
  int pretrain_batch = 4;
  double pretrain_lr = 1e-3;
  int warmup_rounds = 3;
  int warmup_epochs_per_round = 1;
  long iter_tr = 2000;
  long iter_joint = 2000;
  int batch_translation = 1;
  int batch_joint = 2;
  double seg_lr = 2.5e-4;
  double seg_momentum = 0.9;
  double seg_weight_decay = 5e-4;
  double poly_power = 0.8;
  double gen_lr = 1e-4;
  double disc_lr = 4e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.9;
  double filter_keep_fraction = 0.33;
  FilterScope filter_scope = FilterScope::kImage;
  bool hard_onehot = false;
  long checkpoint_interval = 500;
  long log_interval = 10;
};

struct LossToggles {
  bool perceptual = true;
  bool consistency = true;
  bool kld = true;
  bool feature_matching = true;
  bool adversarial = true;
  bool seg_target_ce = true;
  bool seg_generated_ce = true;
  bool seg_perceptual = true;
  bool seg_feature_matching = true;
  bool seg_kld = true;
};

struct EvalConfig {
  std::vector<int> subset;  // class ids; empty: all classes
  long eval_interval = 250;
  eval::UndefinedPolicy undefined_policy = eval::UndefinedPolicy::kExclude;
  int probe_images = 4;

  std::vector<bool> subset_mask(int num_classes) const;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string device = "cpu";
  DatasetConfig dataset;
  Schedule schedule;
  loss::LossWeights weights;
  LossToggles toggles;
  EvalConfig eval;

  // Weights with disabled terms zeroed.
  loss::TranslationWeights translation_weights() const;
  loss::SegmentationWeights segmentation_weights() const;

  nlohmann::json to_json() const;
  std::string canonical() const;  // to_json().dump() with sorted keys
  std::string hash() const;       // SHA-256 of canonical()
  std::string dataset_dir() const;
};

nlohmann::json default_json();

// Overlays `user` onto the defaults and validates the result.
ExperimentConfig from_json(const nlohmann::json& user);
// Parses JSON text; syntax errors report line and column.
ExperimentConfig parse(const std::string& text);
ExperimentConfig load(const std::string& path);

// Every leaf path (e.g. "loss.lambda_pseg") accepted by from_json.
std::vector<std::string> leaf_paths();
// Returns a copy of `cfg` with `path` set to `value`; unknown paths throw a
// ConfigError listing the valid ones.
ExperimentConfig with_override(const ExperimentConfig& cfg, const std::string& path,
                               const nlohmann::json& value);

}  // namespace regen::config
