// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes. Criteria 5-8 share the seed-0 default run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "regen/checkpoint.hpp"
#include "regen/commands.hpp"
#include "regen/eval.hpp"
#include "regen/labelops.hpp"
#include "regen/losses.hpp"
#include "regen/metrics.hpp"
#include "regen/ops.hpp"
#include "regen/run.hpp"
#include "regen/synthdata.hpp"
#include "regen/trainer.hpp"

using namespace regen;
using ad::Var;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------------ criterion 1

Outcome gradient_correctness() {
  constexpr int kTrials = 20;
  const auto t0 = Clock::now();
  const nets::PerceptualExtractor phi;
  const std::vector<double> layers(loss::kPerceptualLayerWeights.begin(),
                                   loss::kPerceptualLayerWeights.end());
  const ad::Shape img{1, 3, 8, 8};
  const ad::Shape logits_shape{1, 5, 8, 8};

  struct Tally {
    std::string name;
    std::size_t elements = 0, failed = 0, failed_fine = 0;
    std::vector<int> trials;
    std::string worst;
  };
  std::vector<Tally> tallies;
  int trial = 0;
  // The verdict uses h = 1e-4 only. Failing cases are re-run at h = 1e-5 so
  // that the report can tell a wrong gradient from a stencil that straddles a
  // point where the loss is not differentiable.
  using Check = std::function<testing::GradCheckResult(double)>;
  auto record = [&](const std::string& name, const Check& check) {
    const auto r = check(1e-4);
    auto it = std::find_if(tallies.begin(), tallies.end(), [&](const Tally& t) { return t.name == name; });
    if (it == tallies.end()) it = tallies.insert(tallies.end(), Tally{name});
    it->elements += r.checked;
    it->failed += r.failed;
    if (r.ok()) return;
    it->trials.push_back(trial);
    it->failed_fine += check(1e-5).failed;
    if (it->worst.empty()) it->worst = r.worst_where;
  };

  for (trial = 0; trial < kTrials; ++trial) {
    Rng rng(derive_seed(0xACCE, trial));
    {
      Var a = testing::random_leaf(img, rng, 0.5);
      Var b = testing::random_leaf(img, rng, 0.5);
      record("perceptual", [&](double h) {
        return testing::gradcheck([&] { return loss::perceptual_loss(phi, a, b, layers); }, {a, b}, h);
      });
    }
    {
      Var logits = testing::random_leaf(logits_shape, rng, 2.0);
      std::vector<std::uint8_t> labels(64);
      for (auto& l : labels) l = rng.uniform() < 0.1 ? kIgnoreIndex : static_cast<std::uint8_t>(rng.uniform_int(0, 4));
      record("semantic_consistency", [&](double h) {
        return testing::gradcheck(
            [&] { return loss::semantic_consistency_loss(ad::softmax_channels(logits), labels).value; }, {logits}, h);
      });
    }
    {
      nets::MultiScalePatchDiscriminator d({2, derive_seed(0xD15C, trial)});
      Var real = testing::random_leaf(img, rng, 0.5);
      Var fake = testing::random_leaf(img, rng, 0.5);
      record("feature_matching", [&](double h) {
        return testing::gradcheck([&] { return loss::feature_matching_loss(d, real, fake); }, {fake}, h);
      });
    }
    {
      Var mu = testing::random_leaf({1, 64, 1, 1}, rng);
      Var lv = testing::random_leaf({1, 64, 1, 1}, rng, 0.5);
      record("kld", [&](double h) { return testing::gradcheck([&] { return loss::kld_loss(mu, lv); }, {mu, lv}, h); });
    }
    {
      std::vector<Var> real{testing::random_leaf({1, 1, 8, 8}, rng), testing::random_leaf({1, 1, 4, 4}, rng)};
      std::vector<Var> fake{testing::random_leaf({1, 1, 8, 8}, rng), testing::random_leaf({1, 1, 4, 4}, rng)};
      record("hinge_d", [&](double h) {
        return testing::gradcheck([&] { return loss::hinge_d_loss(real, fake); }, {real[0], real[1], fake[0], fake[1]},
                                  h);
      });
      record("hinge_g", [&](double h) {
        return testing::gradcheck([&] { return loss::hinge_g_loss(fake); }, {fake[0], fake[1]}, h);
      });
    }
    {
      std::vector<Var> c;
      for (int i = 0; i < 5; ++i) c.push_back(testing::random_leaf({1, 1, 1, 1}, rng));
      record("translation_loss", [&](double h) {
        return testing::gradcheck([&] { return loss::translation_loss({c[0], c[1], c[2], c[3], c[4]}, {}); }, c, h);
      });
      record("segmentation_loss", [&](double h) {
        return testing::gradcheck([&] { return loss::segmentation_loss({c[0], c[1], c[2], c[3], c[4]}, {}); }, c, h);
      });
    }
  }
  const double secs = seconds_since(t0);
  bool ok = secs < 120.0;
  std::string detail;
  for (const auto& t : tallies) {
    ok = ok && t.failed == 0;
    detail += t.name + " " + std::to_string(t.failed) + "/" + std::to_string(t.elements) + " bad";
    if (t.failed) {
      detail += " [trials";
      for (int k : t.trials) detail += " " + std::to_string(k);
      detail += "; worst " + t.worst + "; " + std::to_string(t.failed_fine) + " still bad at h=1e-5]";
    }
    detail += "; ";
  }
  detail += std::to_string(kTrials) + " trials each, " + fmt("%.1f s", secs);
  return {ok, detail};
}

// ------------------------------------------------------------------ criterion 2

Outcome closed_forms() {
  const Var uniform = Var::filled({1, 5, 8, 8}, 0.2);
  std::vector<std::uint8_t> labels(64);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 5);
  const double ce = loss::semantic_consistency_loss(uniform, labels).value.item();
  const double kld = loss::kld_loss(Var::scalar(1.0), Var::scalar(0.0)).item();

  Rng rng(2);
  const nets::PerceptualExtractor phi;
  const Var a = testing::random_leaf({1, 3, 8, 8}, rng, 0.5, false);
  const std::vector<double> layers(loss::kPerceptualLayerWeights.begin(),
                                   loss::kPerceptualLayerWeights.end());
  const double lp = loss::perceptual_loss(phi, a, a, layers).item();
  nets::MultiScalePatchDiscriminator d({2, 3});
  const double lf = loss::feature_matching_loss(d, a, a).item();

  const bool ok = std::abs(ce - std::log(5.0)) <= 1e-6 && std::abs(kld - 0.5) <= 1e-9 && lp == 0.0 &&
                  lf == 0.0;
  return {ok, "CE(uniform)-ln5 = " + fmt("%.3g", ce - std::log(5.0)) + ", KLD(1,0) = " +
                  fmt("%.17g", kld) + ", L_p(x,x) = " + fmt("%g", lp) + ", L_f(x,x) = " + fmt("%g", lf)};
}

// ------------------------------------------------------------------ criterion 3

// Sort-based reference filter: per class, order by (confidence desc, index asc)
// and keep the first ceil(keep * n) pixels, with the ceiling taken in integers.
LabelMap oracle_filter(const LabelMap& labels, const ConfidenceMap& conf, int keep_percent) {
  LabelMap out = labels;
  for (int c = 0; c < 256; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels.data[i] == c && c != kIgnoreIndex) idx.push_back(i);
    if (idx.empty()) continue;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
      if (conf.data[x] != conf.data[y]) return conf.data[x] > conf.data[y];
      return x < y;
    });
    const std::size_t keep = (idx.size() * keep_percent + 99) / 100;
    for (std::size_t k = keep; k < idx.size(); ++k) out.data[idx[k]] = kIgnoreIndex;
  }
  return out;
}

Outcome filter_law() {
  Rng rng(3);
  int exact = 0, monotone = 0;
  constexpr int kInstances = 100;
  const int percents[] = {10, 20, 33, 50, 75, 100};
  for (int inst = 0; inst < kInstances; ++inst) {
    const int h = rng.uniform_int(4, 16), w = rng.uniform_int(4, 16);
    LabelMap labels(h, w);
    ConfidenceMap conf{h, w, std::vector<double>(labels.size())};
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels.data[i] = rng.uniform() < 0.05 ? kIgnoreIndex : static_cast<std::uint8_t>(rng.uniform_int(0, 4));
      // Coarse confidences make ties common.
      conf.data[i] = inst % 2 ? rng.uniform() : std::round(rng.uniform() * 8) / 8;
    }
    const auto got = labels::filter_by_class_confidence(labels, conf, 0.33);
    bool counts_ok = got == oracle_filter(labels, conf, 33);
    for (int c = 0; c < 5; ++c) {
      const auto n = std::count(labels.data.begin(), labels.data.end(), c);
      const auto kept = std::count(got.data.begin(), got.data.end(), c);
      counts_ok = counts_ok && kept == static_cast<long>(std::ceil(0.33 * static_cast<double>(n) - 1e-9)) &&
                  kept == (n * 33 + 99) / 100;
    }
    exact += counts_ok;

    bool mono = true;
    LabelMap prev;
    for (int p : percents) {
      const auto cur = labels::filter_by_class_confidence(labels, conf, p / 100.0);
      if (!prev.data.empty()) {
        for (std::size_t i = 0; i < cur.size(); ++i)
          if (prev.data[i] != kIgnoreIndex && cur.data[i] != prev.data[i]) mono = false;
      }
      prev = cur;
    }
    monotone += mono;
  }
  return {exact == kInstances && monotone == kInstances,
          std::to_string(exact) + "/100 instances match the sort oracle and ceil(0.33 n_c); " +
              std::to_string(monotone) + "/100 monotone over keep in {0.1..1.0}"};
}

// ------------------------------------------------------------------ criterion 4

double oracle_miou(const LabelMap& pred, const LabelMap& gt, int classes) {
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < classes; ++c) {
    std::set<std::size_t> p, g;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.data[i] == kIgnoreIndex) continue;
      if (pred.data[i] == c) p.insert(i);
      if (gt.data[i] == c) g.insert(i);
    }
    std::vector<std::size_t> inter, uni;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(inter));
    std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(uni));
    if (uni.empty()) continue;
    sum += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    ++defined;
  }
  return defined ? sum / defined : 0.0;
}

Outcome miou_oracle() {
  Rng rng(4);
  int equal = 0;
  for (int k = 0; k < 50; ++k) {
    LabelMap pred(8, 8), gt(8, 8);
    for (std::size_t i = 0; i < 64; ++i) {
      pred.data[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
      gt.data[i] = rng.uniform() < 0.15 ? kIgnoreIndex : static_cast<std::uint8_t>(rng.uniform_int(0, 4));
    }
    eval::ConfusionMatrix cm(5);
    cm.accumulate(pred, gt);
    equal += eval::iou(cm).miou == oracle_miou(pred, gt, 5);
  }
  const double hand = eval::iou(eval::ConfusionMatrix(2, {3, 1, 2, 4})).miou;
  const double expected = (3.0 / 6.0 + 4.0 / 7.0) / 2.0;
  return {equal == 50 && std::abs(hand - 0.5357) <= 1e-4 && hand == expected,
          std::to_string(equal) + "/50 exact matches; hand case mIoU " + fmt("%.6f", hand)};
}

// --------------------------------------------------------------- default runs

struct PipelineRun {
  fs::path dir;
  double seconds = 0.0;
  double translation_seconds = 0.0;
  json report;
};

PipelineRun run_pipeline(const config::ExperimentConfig& cfg, bool verbose) {
  fs::remove_all(cfg.output_dir);
  cmd::Options opt;
  opt.progress = verbose ? &std::cerr : nullptr;
  PipelineRun r{cfg.output_dir, 0.0, 0.0, {}};
  const auto t0 = Clock::now();
  cmd::generate_data(cfg, opt);
  cmd::pretrain(cfg, opt);
  cmd::warmup(cfg, opt);
  const auto t_tr = Clock::now();
  cmd::train_translation(cfg, opt);
  r.translation_seconds = seconds_since(t_tr);
  cmd::train_joint(cfg, opt);
  cmd::evaluate(cfg, std::nullopt, opt);
  r.report = cmd::report(cfg.output_dir);
  r.seconds = seconds_since(t0);
  return r;
}

config::ExperimentConfig default_config(const fs::path& dir, std::uint64_t seed) {
  auto cfg = config::from_json({{"seed", seed}, {"output_dir", dir.string()}});
  return cfg;
}

Outcome translation_consistency(const PipelineRun& run) {
  const auto& tr = run.report["translation"];
  if (!tr["ratio"].is_number()) return {false, "no held-out consistency recorded"};
  const double ratio = tr["ratio"].get<double>();
  const bool ok = ratio <= 0.7 && run.translation_seconds <= 600.0;
  return {ok, "held-out CE " + fmt("%.4f", tr["holdout_ce_initial"].get<double>()) + " -> " +
                  fmt("%.4f", tr["holdout_ce_final"].get<double>()) + " (ratio " + fmt("%.3f", ratio) +
                  "), translation phase " + fmt("%.0f s", run.translation_seconds)};
}

Outcome end_to_end(const PipelineRun& run) {
  const auto& m = run.report["miou"];
  if (!m["baseline"].is_number() || !m["warmup"].is_number() || !m["joint"].is_number()) {
    return {false, "report lacks baseline/warm-up/joint mIoU: " + m.dump()};
  }
  const double base = m["baseline"].get<double>();
  const double joint = m["joint"].get<double>();
  const bool ok = joint - base >= 0.05 && run.seconds <= 1800.0;
  return {ok, "baseline " + fmt("%.4f", base) + ", warm-up " + fmt("%.4f", m["warmup"].get<double>()) +
                  ", joint " + fmt("%.4f", joint) + " (delta " + fmt("%+.4f", joint - base) + "), pipeline " +
                  fmt("%.0f s", run.seconds)};
}

Outcome contracts(const PipelineRun& run) {
  const run::RunPaths p{run.dir};
  const auto manifest = run::read_json(p.manifest());
  const auto& phases = manifest["phases"];
  const auto& c = phases["joint"]["contracts"];
  const auto cfg = config::from_json(run::read_json(p.config()));

  // Recompute from the stored checkpoints as well as trusting the manifest.
  auto teacher = run::load_segnet(p.model("warmup"), cfg);
  auto pre = run::load_segnet(p.model("pretrain"), cfg);
  auto student = run::load_segnet(p.model("joint"), cfg);
  auto frozen = [](nets::SegNet& g) {
    const auto names = g.frozen_tensor_names();
    const std::set<std::string> keep(names.begin(), names.end());
    std::vector<nets::TensorRef> out;
    for (auto& t : g.tensors())
      if (keep.count(t.name)) out.push_back(t);
    return ckpt::tensors_hash(out);
  };
  const bool teacher_ok = ckpt::tensors_hash(teacher.tensors()) == phases["warmup"]["seg_hash"] &&
                          c.value("teacher_unchanged", false) && c.value("teacher_probe_identical", false);
  const std::string frozen_pre = frozen(pre);
  const bool frozen_ok = frozen_pre == phases["pretrain"]["frozen_hash"] &&
                         frozen_pre == phases["warmup"]["frozen_hash"] && frozen(student) == frozen_pre &&
                         c.value("frozen_unchanged", false);
  return {teacher_ok && frozen_ok && c.value("verified", false),
          std::string("teacher hash ") + (teacher_ok ? "constant" : "CHANGED") + ", frozen layers " +
              (frozen_ok ? "unchanged" : "CHANGED") + " (" + frozen_pre.substr(0, 12) + ")"};
}

// ------------------------------------------------------------------ criterion 7

// Re-runs only the joint phase of a finished run under a different loss
// configuration, starting from that run's warm-up and translation checkpoints.
double joint_only(const fs::path& run_dir, const config::ExperimentConfig& cfg) {
  const run::RunPaths p{run_dir};
  const auto m = synth::read_manifest(cfg.dataset_dir());
  const auto target = synth::load_images(m, synth::Split::kTarget);
  const auto labels = synth::load_evaluation_labels(m, synth::Split::kTarget);
  auto teacher = run::load_segnet(p.model("warmup"), cfg);
  auto student = run::load_segnet(p.model("warmup"), cfg);
  student.freeze_partial();
  auto t = run::load_translator(p.model("translation"), cfg);
  train::Hooks hooks;
  hooks.evaluate = [&](nets::SegNet& g) {
    return train::evaluate_segmenter(g, target, labels, cfg.eval, cfg.dataset.scene.num_classes);
  };
  auto r = train::train_joint(t, student, teacher, target, cfg, hooks);
  if (!r.evaluated) r.final_report = hooks.evaluate(student);
  return r.final_report.miou;
}

Outcome ablation(const fs::path& work, const PipelineRun& seed0, bool verbose) {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    PipelineRun full;
    if (seed == 0) {
      full = seed0;
    } else {
      full = run_pipeline(default_config(work / ("seed_" + std::to_string(seed)), seed), verbose);
    }
    const double with_lp = full.report["miou"]["joint"].get<double>();
    auto cfg = config::with_override(config::from_json(run::read_json(run::RunPaths{full.dir}.config())),
                                     "loss.enable_seg_perceptual", false);
    const double without_lp = joint_only(full.dir, cfg);
    wins += with_lp >= without_lp;
    detail += "seed " + std::to_string(seed) + ": " + fmt("%.4f", with_lp) + " vs " + fmt("%.4f", without_lp) +
              "; ";
  }
  return {wins >= 2, detail + std::to_string(wins) + "/3 seeds favour the full objective"};
}

// ------------------------------------------------------------------ criterion 9

Outcome determinism(const fs::path& work, bool verbose) {
  json small = {{"dataset", {{"height", 32}, {"width", 32}, {"n_source", 24}, {"n_target", 24}, {"n_holdout", 4}}},
                {"schedule", {{"pretrain_epochs", 2}, {"iter_tr", 40}, {"iter_joint", 40}, {"checkpoint_interval", 20}}},
                {"eval", {{"eval_interval", 20}}}};
  small["output_dir"] = (work / "det_a").string();
  const auto a = run_pipeline(config::from_json(small), verbose);
  small["output_dir"] = (work / "det_b").string();
  const auto b = run_pipeline(config::from_json(small), verbose);
  const auto ca = slurp(run::RunPaths{a.dir}.metrics());
  const auto cb = slurp(run::RunPaths{b.dir}.metrics());
  const auto rows = std::count(ca.begin(), ca.end(), '\n');
  return {!ca.empty() && ca == cb,
          std::to_string(rows) + "-line metrics CSVs " + (ca == cb ? "byte-identical" : "DIFFER") + " (" +
              std::to_string(ca.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the adaptation workflow"};
  std::vector<int> only;
  std::string work = "acceptance_work";
  bool verbose = false;
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--work-dir", work, "Scratch directory for runs");
  app.add_flag("-v,--verbose", verbose, "Stream training progress to stderr");
  CLI11_PARSE(app, argc, argv);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const fs::path work_dir = fs::absolute(work);
  fs::create_directories(work_dir);
  bool all = true;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    if (!selected.count(id)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("%s  %d  %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient correctness", gradient_correctness);
  report(2, "closed-form loss values", closed_forms);
  report(3, "filter count law", filter_law);
  report(4, "mIoU oracle equivalence", miou_oracle);

  const bool needs_run = selected.count(5) || selected.count(6) || selected.count(7) || selected.count(8);
  std::optional<PipelineRun> seed0;
  std::string run_error;
  if (needs_run) {
    try {
      seed0 = run_pipeline(default_config(work_dir / "seed_0", 0), verbose);
    } catch (const std::exception& e) {
      run_error = e.what();
    }
  }
  auto with_run = [&](const std::function<Outcome(const PipelineRun&)>& f) {
    return [&, f] { return seed0 ? f(*seed0) : Outcome{false, "default run failed: " + run_error}; };
  };
  report(5, "translation semantic consistency", with_run(translation_consistency));
  report(6, "end-to-end adaptation", with_run(end_to_end));
  report(7, "perceptual ablation direction",
         with_run([&](const PipelineRun& r) { return ablation(work_dir, r, verbose); }));
  report(8, "fixed-teacher and freeze contracts", with_run(contracts));
  report(9, "determinism", [&] { return determinism(work_dir, verbose); });
  return all ? 0 : 1;
}
