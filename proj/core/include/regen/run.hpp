#pragma once

// Layout of a run directory:
//   config.json                 canonical copy of the experiment config
//   manifest.json               hashes, seeds and phase records
//   metrics.csv                 append-only metrics log
//   checkpoints/<phase>/        model.ckpt, phase.json and periodic snapshots
//   report/                     report.json, curves and probe panels
//   data/                       generated dataset (unless dataset.dir is set)

#include <filesystem>
#include <string>

#include "json.hpp"
#include "regen/config.hpp"
#include "regen/nets.hpp"
#include "regen/trainer.hpp"

namespace regen::run {

inline constexpr const char* kPhases[] = {"pretrain", "warmup", "translation", "joint"};

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path metrics() const { return root / "metrics.csv"; }
  std::filesystem::path phase_dir(const std::string& phase) const {
    return root / "checkpoints" / phase;
  }
  std::filesystem::path model(const std::string& phase) const {
    return phase_dir(phase) / "model.ckpt";
  }
  std::filesystem::path marker(const std::string& phase) const {
    return phase_dir(phase) / "phase.json";
  }
  std::filesystem::path snapshot(const std::string& phase, long iteration) const;
  std::filesystem::path report_dir() const { return root / "report"; }
};

nlohmann::json read_json(const std::filesystem::path& path);
// Pretty-printed, written through a temporary file and renamed into place.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

// Freshly initialised networks for a config.
nets::SegNet make_segnet(const config::ExperimentConfig& cfg);

// Networks restored from a checkpoint; segmenters are stored under "seg.",
// the translator under "gen." and "disc.".
nets::SegNet load_segnet(const std::filesystem::path& ckpt, const config::ExperimentConfig& cfg);
train::Translator load_translator(const std::filesystem::path& ckpt,
                                  const config::ExperimentConfig& cfg);

}  // namespace regen::run
