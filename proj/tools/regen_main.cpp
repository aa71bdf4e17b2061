// regen: command-line driver for the adaptation workflow.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "regen/commands.hpp"
#include "regen/config.hpp"

namespace {

using nlohmann::json;
using regen::config::ExperimentConfig;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> filter_scope;
  bool hard_onehot = false;
  std::optional<std::string> device;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("-c,--config", f.config_path, "JSON config file (defaults when omitted)");
  app->add_option("--seed", f.seed, "Override the experiment seed");
  app->add_option("-o,--output-dir", f.output_dir, "Override the run directory");
  app->add_option("--filter-scope", f.filter_scope, "Pseudo-label filter scope")
      ->check(CLI::IsMember({"image", "dataset"}));
  app->add_flag("--hard-onehot", f.hard_onehot, "Straight-through hard one-hot conditioning");
  app->add_option("--device", f.device, "Compute device (advisory; only cpu is implemented)");
  app->add_flag("--force", f.force, "Overwrite completed phases");
  app->add_flag("-q,--quiet", f.quiet, "Suppress progress output");
}

ExperimentConfig resolve(const CommonFlags& f) {
  using regen::config::with_override;
  ExperimentConfig cfg = f.config_path.empty() ? regen::config::from_json(json::object())
                                               : regen::config::load(f.config_path);
  if (f.seed) cfg = with_override(cfg, "seed", *f.seed);
  if (f.output_dir) cfg = with_override(cfg, "output_dir", *f.output_dir);
  if (f.filter_scope) cfg = with_override(cfg, "schedule.filter_scope", *f.filter_scope);
  if (f.hard_onehot) cfg = with_override(cfg, "schedule.hard_onehot", true);
  if (f.device) {
    if (*f.device != "cpu") {
      std::cerr << "warning: device '" << *f.device << "' is advisory; running on cpu\n";
    }
    cfg = with_override(cfg, "device", *f.device);
  }
  return cfg;
}

regen::cmd::Options options(const CommonFlags& f) {
  regen::cmd::Options o;
  o.force = f.force;
  o.progress = f.quiet ? nullptr : &std::cerr;
  return o;
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;  // bare strings such as dataset
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regen: source-free domain adaptation with label-conditioned image translation"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::optional<std::string> checkpoint;
  std::string run_dir;
  std::string axis;
  std::vector<std::string> values;

  struct Step {
    const char* name;
    const char* help;
    void (*fn)(const ExperimentConfig&, const regen::cmd::Options&);
  };
  const Step steps[] = {
      {"generate-data", "Generate the synthetic source/target dataset", regen::cmd::generate_data},
      {"pretrain", "Train the segmenter on labelled source data", regen::cmd::pretrain},
      {"warmup", "Self-training warm-up on the target split", regen::cmd::warmup},
      {"train-translation", "Train the label-conditioned translator", regen::cmd::train_translation},
      {"train-joint", "Joint translation and segmentation training", regen::cmd::train_joint},
  };
  std::vector<std::pair<CLI::App*, const Step*>> step_apps;
  for (const auto& s : steps) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, flags);
    step_apps.emplace_back(sub, &s);
  }
  auto* eval_app = app.add_subcommand("evaluate", "Evaluate a segmenter checkpoint on the target split");
  add_common(eval_app, flags);
  eval_app->add_option("--checkpoint", checkpoint, "Checkpoint file (default: joint model)");

  auto* report_app = app.add_subcommand("report", "Write report.json, curves and probe panels");
  report_app->add_option("run_dir", run_dir, "Run directory")->required();

  auto* all_app = app.add_subcommand("run-all", "Run every phase followed by evaluate and report");
  add_common(all_app, flags);

  auto* sweep_app = app.add_subcommand("sweep", "Run the pipeline once per value of a config field");
  add_common(sweep_app, flags);
  sweep_app->add_option("--axis", axis, "Dotted config path, e.g. loss.lambda_pseg")->required();
  sweep_app->add_option("--values", values, "Values (JSON literals)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [sub, step] : step_apps) {
      if (sub->parsed()) step->fn(resolve(flags), options(flags));
    }
    if (eval_app->parsed()) {
      std::optional<std::filesystem::path> ck;
      if (checkpoint) ck = *checkpoint;
      std::cout << regen::cmd::evaluate(resolve(flags), ck, options(flags)).dump(2) << "\n";
    }
    if (report_app->parsed()) {
      std::cout << regen::cmd::report(run_dir).dump(2) << "\n";
    }
    if (all_app->parsed()) {
      std::cout << regen::cmd::run_all(resolve(flags), options(flags)).dump(2) << "\n";
    }
    if (sweep_app->parsed()) {
      std::vector<json> parsed;
      for (const auto& v : values) parsed.push_back(parse_value(v));
      for (const auto& p : regen::cmd::sweep(resolve(flags), axis, parsed, options(flags))) {
        std::cout << p.value.dump() << "," << p.final_miou << "\n";
      }
    }
  } catch (const regen::config::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const regen::cmd::CommandError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
