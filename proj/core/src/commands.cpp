#include "regen/commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "regen/checkpoint.hpp"
#include "regen/metrics.hpp"
#include "regen/report.hpp"
#include "regen/run.hpp"
#include "regen/synthdata.hpp"
#include "regen/trainer.hpp"

namespace regen::cmd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const Options& opt, const std::string& line) {
  if (opt.progress) *opt.progress << line << std::endl;
}

void require_file(const fs::path& p, const std::string& what, const std::string& producer) {
  if (!fs::exists(p)) {
    throw CommandError("missing prerequisite: " + what + " at " + p.string() + " (produced by `" +
                       producer + "`)");
  }
}

std::vector<std::string> row_phases(const std::string& phase) {
  if (phase == "pretrain") return {"pretrain", "baseline"};
  return {phase};
}

// Drops every metrics row written by an earlier run of `phase`.
void prune_metrics(const fs::path& path, const std::string& phase) {
  if (!fs::exists(path)) return;
  const auto drop = row_phases(phase);
  std::ifstream in(path);
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (!header) {
      const auto a = line.find(',');
      const auto b = line.find(',', a + 1);
      const std::string p = line.substr(a + 1, b - a - 1);
      if (std::find(drop.begin(), drop.end(), p) != drop.end()) continue;
    }
    header = false;
    kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << kept;
}

class Run {
 public:
  Run(const config::ExperimentConfig& cfg, const Options& opt)
      : cfg_(cfg), opt_(opt), paths_{cfg.output_dir} {
    fs::create_directories(paths_.root);
    if (fs::exists(paths_.config())) {
      const auto existing = config::from_json(run::read_json(paths_.config()));
      if (existing.hash() != cfg_.hash() && !opt_.force) {
        throw CommandError("run directory " + paths_.root.string() +
                           " was created with a different config (hash " + existing.hash() +
                           "); pass --force or choose another output_dir");
      }
    }
    run::write_json(paths_.config(), cfg_.to_json());
    manifest_ = fs::exists(paths_.manifest()) ? run::read_json(paths_.manifest()) : json::object();
    manifest_["format"] = "regen-run/1";
    manifest_["config_hash"] = cfg_.hash();
    manifest_["seed"] = cfg_.seed;
    manifest_["dataset_dir"] = cfg_.dataset_dir();
    manifest_["metrics_schema"] = metrics::kSchemaVersion;
    manifest_["metrics_header"] = metrics::header(cfg_.dataset.scene.num_classes);
    if (!manifest_.contains("phases")) manifest_["phases"] = json::object();
    save_manifest();
  }

  const config::ExperimentConfig& cfg() const { return cfg_; }
  const run::RunPaths& paths() const { return paths_; }
  const Options& opt() const { return opt_; }
  int classes() const { return cfg_.dataset.scene.num_classes; }

  void begin_phase(const std::string& phase) {
    if (fs::exists(paths_.marker(phase))) {
      if (!opt_.force) {
        throw CommandError("phase '" + phase + "' is already complete in " +
                           paths_.phase_dir(phase).string() + "; pass --force to overwrite it");
      }
    }
    fs::remove_all(paths_.phase_dir(phase));
    manifest_["phases"].erase(phase);
    save_manifest();
    prune_metrics(paths_.metrics(), phase);
    fs::create_directories(paths_.phase_dir(phase));
    writer_ = std::make_unique<metrics::CsvWriter>(paths_.metrics(), classes());
    say(opt_, "[" + phase + "] start");
  }

  void finish_phase(const std::string& phase, json record) {
    record["completed"] = true;
    manifest_["phases"][phase] = record;
    save_manifest();
    json marker = record;
    marker["phase"] = phase;
    marker["config_hash"] = cfg_.hash();
    run::write_json(paths_.marker(phase), marker);
    say(opt_, "[" + phase + "] done " + record.dump());
  }

  json phase_record(const std::string& phase) const {
    return manifest_["phases"].contains(phase) ? manifest_["phases"][phase] : json();
  }

  synth::DatasetManifest dataset() const {
    const fs::path dir = cfg_.dataset_dir();
    require_file(dir / "manifest.json", "dataset manifest", "regen generate-data");
    return synth::read_manifest(dir);
  }

  train::Hooks hooks(const std::string& phase, const std::vector<Image>* target,
                     const std::vector<LabelMap>* labels) {
    train::Hooks h;
    h.log = [this, phase](const metrics::Row& r) {
      writer_->write(r);
      if (r.get("miou") || r.get("holdout_ce") || r.iteration % cfg_.eval.eval_interval == 0) {
        std::ostringstream line;
        line << "[" << phase << "] iter " << r.iteration;
        for (const auto& [k, v] : r.values) line << " " << k << "=" << metrics::format_number(v);
        say(opt_, line.str());
      }
    };
    if (target && labels) {
      h.evaluate = [this, target, labels](nets::SegNet& g) {
        return train::evaluate_segmenter(g, *target, *labels, cfg_.eval, classes());
      };
    }
    return h;
  }

  void log(const metrics::Row& r) { writer_->write(r); }

  json meta(const std::string& phase, long iteration) const {
    return {{"phase", phase}, {"iteration", iteration}, {"config_hash", cfg_.hash()},
            {"seed", cfg_.seed}};
  }

 private:
  void save_manifest() { run::write_json(paths_.manifest(), manifest_); }

  config::ExperimentConfig cfg_;
  Options opt_;
  run::RunPaths paths_;
  json manifest_;
  std::unique_ptr<metrics::CsvWriter> writer_;
};

std::vector<nets::TensorRef> frozen_refs(nets::SegNet& g) {
  const auto names = g.frozen_tensor_names();
  const std::set<std::string> keep(names.begin(), names.end());
  std::vector<nets::TensorRef> out;
  for (auto& t : g.tensors()) {
    if (keep.count(t.name)) out.push_back(t);
  }
  return out;
}

json report_json(const eval::IoUReport& r) {
  json per_class = json::array();
  for (const auto& v : r.per_class) per_class.push_back(v ? json(*v) : json(nullptr));
  return {{"miou", r.miou},
          {"pixel_accuracy", r.pixel_accuracy},
          {"per_class_iou", per_class},
          {"evaluated_images", r.evaluated_images},
          {"evaluated_pixels", r.evaluated_pixels}};
}

void save_segnet(const fs::path& p, const json& meta, nets::SegNet& g) {
  ckpt::save(p, meta, {{"seg.", g.tensors()}});
}

void save_translator(const fs::path& p, const json& meta, train::Translator& t,
                     nets::SegNet* student) {
  std::vector<ckpt::TensorGroup> groups;
  if (student) groups.push_back({"seg.", student->tensors()});
  groups.push_back({"gen.", t.gen.tensors()});
  groups.push_back({"disc.", t.disc.tensors()});
  ckpt::save(p, meta, groups);
}

}  // namespace

void generate_data(const config::ExperimentConfig& cfg, const Options& opt) {
  Run run(cfg, opt);
  const fs::path dir = cfg.dataset_dir();
  if (fs::exists(dir / "manifest.json") && !opt.force) {
    throw CommandError("dataset already exists at " + dir.string() +
                       "; pass --force to regenerate it");
  }
  if (opt.force) fs::remove_all(dir);
  say(opt, "[generate-data] writing " + dir.string());
  const auto m = synth::build_dataset(cfg.dataset.scene, cfg.dataset.counts, cfg.dataset.shift, dir);
  say(opt, "[generate-data] " + std::to_string(m.entries.size()) + " samples");
}

void pretrain(const config::ExperimentConfig& cfg, const Options& opt) {
  Run run(cfg, opt);
  const auto data = run.dataset();
  const auto source = synth::load_source_pairs(data);
  if (source.empty()) throw CommandError("pretrain: the source split of the dataset is empty");
  const auto target = synth::load_images(data, synth::Split::kTarget);
  const auto labels = synth::load_evaluation_labels(data, synth::Split::kTarget);
  run.begin_phase("pretrain");

  auto g = run::make_segnet(cfg);
  auto hooks = run.hooks("pretrain", &target, &labels);
  hooks.checkpoint = [&](long it) {
    save_segnet(run.paths().snapshot("pretrain", it), run.meta("pretrain", it), g);
  };
  const auto result = train::pretrain_source(g, source, cfg, hooks);
  json record = {{"source_miou", result.source_miou}};
  if (!target.empty()) {
    const auto base = hooks.evaluate(g);
    metrics::Row row{0, "baseline", {}};
    train::put_report(row, base);
    run.log(row);
    record["target_miou"] = base.miou;
  }
  const long steps = static_cast<long>((source.size() + cfg.schedule.pretrain_batch - 1) /
                                       cfg.schedule.pretrain_batch) *
                     cfg.schedule.pretrain_epochs;
  auto meta = run.meta("pretrain", steps);
  meta.update(record);
  save_segnet(run.paths().model("pretrain"), meta, g);
  record["iterations"] = steps;
  record["seg_hash"] = ckpt::tensors_hash(g.tensors());
  record["frozen_hash"] = ckpt::tensors_hash(frozen_refs(g));
  run.finish_phase("pretrain", record);
}

void warmup(const config::ExperimentConfig& cfg, const Options& opt) {
  Run run(cfg, opt);
  require_file(run.paths().model("pretrain"), "pretrained source checkpoint", "regen pretrain");
  const auto data = run.dataset();
  const auto target = synth::load_images(data, synth::Split::kTarget);
  const auto labels = synth::load_evaluation_labels(data, synth::Split::kTarget);
  run.begin_phase("warmup");

  auto g = run::load_segnet(run.paths().model("pretrain"), cfg);
  const auto hooks = run.hooks("warmup", &target, &labels);
  train::warmup_selftrain(g, target, cfg, hooks);
  json record = {{"rounds", cfg.schedule.warmup_rounds}};
  if (!target.empty()) record["target_miou"] = hooks.evaluate(g).miou;
  auto meta = run.meta("warmup", cfg.schedule.warmup_rounds);
  meta.update(record);
  save_segnet(run.paths().model("warmup"), meta, g);
  record["seg_hash"] = ckpt::tensors_hash(g.tensors());
  record["frozen_hash"] = ckpt::tensors_hash(frozen_refs(g));
  run.finish_phase("warmup", record);
}

void train_translation(const config::ExperimentConfig& cfg, const Options& opt) {
  Run run(cfg, opt);
  require_file(run.paths().model("warmup"), "warm-up checkpoint", "regen warmup");
  const auto data = run.dataset();
  const auto target = synth::load_images(data, synth::Split::kTarget);
  const auto holdout = synth::load_images(data, synth::Split::kTargetHoldout);
  run.begin_phase("translation");

  // The fixed teacher is the warm-started segmenter that the student also starts from.
  auto teacher = run::load_segnet(run.paths().model("warmup"), cfg);
  auto t = train::Translator::fresh(cfg);
  auto hooks = run.hooks("translation", nullptr, nullptr);
  hooks.checkpoint = [&](long it) {
    save_translator(run.paths().snapshot("translation", it), run.meta("translation", it), t,
                    nullptr);
  };
  const auto r = train::train_translation(t, teacher, target, holdout, cfg, hooks);
  json record = {{"iterations", cfg.schedule.iter_tr}};
  if (!holdout.empty()) {
    record["holdout_ce_initial"] = r.holdout_ce_initial;
    record["holdout_ce_final"] = r.holdout_ce_final;
  }
  auto meta = run.meta("translation", cfg.schedule.iter_tr);
  meta.update(record);
  save_translator(run.paths().model("translation"), meta, t, nullptr);
  run.finish_phase("translation", record);
}

void train_joint(const config::ExperimentConfig& cfg, const Options& opt) {
  Run run(cfg, opt);
  const auto& paths = run.paths();
  require_file(paths.model("pretrain"), "pretrained source checkpoint", "regen pretrain");
  require_file(paths.model("warmup"), "warm-up checkpoint", "regen warmup");
  require_file(paths.model("translation"), "translation checkpoint", "regen train-translation");
  const auto data = run.dataset();
  const auto target = synth::load_images(data, synth::Split::kTarget);
  const auto labels = synth::load_evaluation_labels(data, synth::Split::kTarget);
  run.begin_phase("joint");

  auto teacher = run::load_segnet(paths.model("warmup"), cfg);
  auto student = run::load_segnet(paths.model("warmup"), cfg);
  student.freeze_partial();
  auto t = run::load_translator(paths.model("translation"), cfg);

  const json pre = run::read_json(paths.marker("pretrain"));
  const json warm = run::read_json(paths.marker("warmup"));
  const std::string teacher_hash = ckpt::tensors_hash(teacher.tensors());
  const auto probe_before = train::predict(teacher, std::span<const Image>(target).first(1));

  auto hooks = run.hooks("joint", &target, &labels);
  hooks.checkpoint = [&](long it) {
    save_translator(paths.snapshot("joint", it), run.meta("joint", it), t, &student);
  };
  auto result = train::train_joint(t, student, teacher, target, cfg, hooks);
  if (!result.evaluated) {
    result.final_report = hooks.evaluate(student);
    metrics::Row row{cfg.schedule.iter_joint, "joint", {}};
    train::put_report(row, result.final_report);
    run.log(row);
  }

  // Contracts: the teacher is bit-identical to the warm-up model, and the
  // frozen part of the student still matches the source-pretrained network.
  const std::string teacher_after = ckpt::tensors_hash(teacher.tensors());
  const std::string frozen_after = ckpt::tensors_hash(frozen_refs(student));
  const auto probe_after = train::predict(teacher, std::span<const Image>(target).first(1));
  json contracts = {
      {"teacher_hash_initial", warm.value("seg_hash", "")},
      {"teacher_hash_final", teacher_after},
      {"teacher_unchanged", warm.value("seg_hash", "") == teacher_after && teacher_hash == teacher_after},
      {"teacher_probe_identical", probe_before[0].data == probe_after[0].data},
      {"frozen_hash_pretrain", pre.value("frozen_hash", "")},
      {"frozen_hash_final", frozen_after},
      {"frozen_unchanged", pre.value("frozen_hash", "") == frozen_after},
  };
  contracts["verified"] = contracts["teacher_unchanged"].get<bool>() &&
                          contracts["teacher_probe_identical"].get<bool>() &&
                          contracts["frozen_unchanged"].get<bool>();

  json record = {{"iterations", cfg.schedule.iter_joint},
                 {"target_miou", result.final_report.miou},
                 {"contracts", contracts}};
  auto meta = run.meta("joint", cfg.schedule.iter_joint);
  meta["target_miou"] = result.final_report.miou;
  save_translator(paths.model("joint"), meta, t, &student);
  run.finish_phase("joint", record);
  if (!contracts["verified"].get<bool>()) {
    throw CommandError("joint: teacher/freeze contract violated: " + contracts.dump());
  }
}

json evaluate(const config::ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint,
              const Options& opt) {
  Run run(cfg, opt);
  const fs::path path = checkpoint.value_or(run.paths().model("joint"));
  require_file(path, "segmenter checkpoint", "regen train-joint");
  const auto c = ckpt::load(path);
  const std::string phase = c.meta.value("phase", "");
  if (phase == "translation") {
    throw CommandError("evaluate: " + path.string() + " holds no segmentation network");
  }
  const std::string label = phase == "pretrain" ? "baseline" : phase;
  auto g = run::make_segnet(cfg);
  c.restore("seg.", g.tensors());
  const auto data = run.dataset();
  const auto target = synth::load_images(data, synth::Split::kTarget);
  const auto labels = synth::load_evaluation_labels(data, synth::Split::kTarget);
  json doc = report_json(train::evaluate_segmenter(g, target, labels, cfg.eval, run.classes()));
  doc["phase"] = label;
  doc["split"] = "target";
  doc["checkpoint"] = path.string();
  run::write_json(run.paths().root / ("eval_" + label + ".json"), doc);
  say(opt, "[evaluate] " + label + " miou=" + metrics::format_number(doc["miou"].get<double>()));
  return doc;
}

json report(const fs::path& run_dir) {
  try {
    return report::emit_report(run_dir);
  } catch (const std::runtime_error& e) {
    throw CommandError(e.what());
  }
}

json run_all(const config::ExperimentConfig& cfg, const Options& opt) {
  generate_data(cfg, opt);
  pretrain(cfg, opt);
  warmup(cfg, opt);
  train_translation(cfg, opt);
  train_joint(cfg, opt);
  evaluate(cfg, std::nullopt, opt);
  return report(cfg.output_dir);
}

std::vector<SweepPoint> sweep(const config::ExperimentConfig& cfg, const std::string& axis,
                              const std::vector<json>& values, const Options& opt) {
  if (values.empty()) throw CommandError("sweep: no values given for " + axis);
  std::vector<config::ExperimentConfig> points;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto pc = config::with_override(cfg, axis, values[i]);
    pc.output_dir = (fs::path(cfg.output_dir) / "sweep" / (axis + "_" + std::to_string(i))).string();
    points.push_back(std::move(pc));
  }
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    say(opt, "[sweep] " + axis + " = " + values[i].dump());
    const json rep = run_all(points[i], opt);
    out.push_back({values[i], points[i].output_dir, rep["final"]["miou"].get<double>()});
  }
  fs::create_directories(cfg.output_dir);
  const fs::path csv = fs::path(cfg.output_dir) / "sweep.csv";
  std::ofstream f(csv, std::ios::binary | std::ios::trunc);
  if (!f) throw CommandError("cannot write " + csv.string());
  f << "value,final_miou\n";
  for (const auto& p : out) f << p.value.dump() << "," << metrics::format_number(p.final_miou) << "\n";
  return out;
}

}  // namespace regen::cmd
