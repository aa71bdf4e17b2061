#pragma once

// Workflow commands. Each one reads and writes a run directory
// (config.output_dir); failures throw CommandError with a diagnostic that names
// the offending path or field.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "regen/config.hpp"

namespace regen::cmd {

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  bool force = false;        // overwrite completed phases
  std::ostream* progress = nullptr;  // human-readable progress lines
};

void generate_data(const config::ExperimentConfig& cfg, const Options& opt);
void pretrain(const config::ExperimentConfig& cfg, const Options& opt);
void warmup(const config::ExperimentConfig& cfg, const Options& opt);
void train_translation(const config::ExperimentConfig& cfg, const Options& opt);
void train_joint(const config::ExperimentConfig& cfg, const Options& opt);

// Evaluates a segmenter checkpoint on the target split and writes
// eval_<phase>.json into the run directory. The pretrain checkpoint is labelled
// "baseline". Without a checkpoint the joint model is used.
nlohmann::json evaluate(const config::ExperimentConfig& cfg,
                        const std::optional<std::filesystem::path>& checkpoint,
                        const Options& opt);

nlohmann::json report(const std::filesystem::path& run_dir);

// generate-data, pretrain, warmup, train-translation, train-joint, evaluate,
// report.
nlohmann::json run_all(const config::ExperimentConfig& cfg, const Options& opt);

struct SweepPoint {
  nlohmann::json value;
  std::filesystem::path run_dir;
  double final_miou = 0.0;
};

// Runs the whole pipeline once per value of `axis` under
// <output_dir>/sweep/<axis>_<i>/ and writes <output_dir>/sweep.csv.
std::vector<SweepPoint> sweep(const config::ExperimentConfig& cfg, const std::string& axis,
                              const std::vector<nlohmann::json>& values, const Options& opt);

}  // namespace regen::cmd
