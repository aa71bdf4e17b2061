#include "regen/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "regen/labelops.hpp"
#include "regen/metrics.hpp"
#include "regen/run.hpp"
#include "regen/synthdata.hpp"
#include "regen/trainer.hpp"

namespace regen::report {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 10> kPalette = {{{40, 40, 40},
                                                                   {230, 60, 60},
                                                                   {60, 180, 75},
                                                                   {60, 110, 230},
                                                                   {240, 200, 40},
                                                                   {150, 70, 200},
                                                                   {70, 210, 210},
                                                                   {240, 130, 50},
                                                                   {200, 200, 200},
                                                                   {130, 90, 40}}};

struct Canvas {
  io::Rgb8 img;

  Canvas(int w, int h) {
    img.width = w;
    img.height = h;
    img.pixels.assign(static_cast<std::size_t>(w) * h * 3, 255);
  }
  void put(int x, int y, const std::array<std::uint8_t, 3>& c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    auto* p = &img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3];
    std::copy(c.begin(), c.end(), p);
  }
  // Bresenham.
  void line(int x0, int y0, int x1, int y1, const std::array<std::uint8_t, 3>& c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      put(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
};

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json phase_record(const json& manifest, const char* phase) {
  if (manifest.contains("phases") && manifest["phases"].contains(phase)) {
    return manifest["phases"][phase];
  }
  return nullptr;
}

json number_at(const json& record, const char* key) {
  return record.is_object() && record.contains(key) ? record[key] : json(nullptr);
}

json delta(const json& a, const json& b) {
  if (!a.is_number() || !b.is_number()) return nullptr;
  return a.get<double>() - b.get<double>();
}

std::vector<fs::path> write_curves(const metrics::Table& table, const fs::path& dir) {
  std::vector<fs::path> written;
  const std::array<std::uint8_t, 3> blue{40, 90, 200}, red{200, 50, 50};
  for (const char* phase : run::kPhases) {
    Series total{{}, {}, blue};
    Series secondary{{}, {}, red};
    for (const auto& r : table.rows) {
      if (r.phase != phase) continue;
      const auto seg = r.get("seg_total");
      const auto tr = r.get("loss_total");
      if (std::string(phase) == "joint") {
        if (seg) total.x.push_back(r.iteration), total.y.push_back(*seg);
        if (tr) secondary.x.push_back(r.iteration), secondary.y.push_back(*tr);
      } else if (std::string(phase) == "translation") {
        if (tr) total.x.push_back(r.iteration), total.y.push_back(*tr);
        if (auto d = r.get("l_d")) secondary.x.push_back(r.iteration), secondary.y.push_back(*d);
      } else if (seg) {
        total.x.push_back(r.iteration);
        total.y.push_back(*seg);
      }
    }
    if (total.x.size() < 2) continue;
    std::vector<Series> series{total};
    if (secondary.x.size() >= 2) series.push_back(secondary);
    const fs::path p = dir / ("curve_loss_" + std::string(phase) + ".png");
    io::write_png_rgb(p, line_plot(series));
    written.push_back(p);
  }
  Series miou{{}, {}, blue};
  double x = 0;
  for (const auto& r : table.rows) {
    if (auto m = r.get("miou")) {
      miou.x.push_back(x++);
      miou.y.push_back(*m);
    }
  }
  if (miou.x.size() >= 2) {
    const fs::path p = dir / "curve_miou.png";
    io::write_png_rgb(p, line_plot({miou}));
    written.push_back(p);
  }
  return written;
}

json last_phase_miou(const metrics::Table& table, const std::string& phase) {
  for (auto it = table.rows.rbegin(); it != table.rows.rend(); ++it) {
    if (it->phase != phase) continue;
    if (const auto v = it->get("miou")) return *v;
  }
  return nullptr;
}

std::vector<fs::path> write_panels(const run::RunPaths& paths, const config::ExperimentConfig& cfg,
                                   const fs::path& dir) {
  std::vector<fs::path> written;
  if (cfg.eval.probe_images == 0 || !fs::exists(paths.model("joint")) ||
      !fs::exists(paths.model("warmup"))) {
    return written;
  }
  const auto manifest = synth::read_manifest(cfg.dataset_dir());
  const auto target = synth::load_images(manifest, synth::Split::kTarget);
  if (target.empty()) return written;
  auto teacher = run::load_segnet(paths.model("warmup"), cfg);
  auto student = run::load_segnet(paths.model("joint"), cfg);
  auto translator = run::load_translator(paths.model("joint"), cfg);

  const auto pl = train::pseudo_label(teacher, target);
  const auto filtered = train::filter_pseudo_labels(pl, cfg.schedule.filter_keep_fraction,
                                                    cfg.schedule.filter_scope);
  const int n = std::min<int>(cfg.eval.probe_images, static_cast<int>(target.size()));
  const int C = cfg.dataset.scene.num_classes;
  fs::create_directories(dir / "panels");
  for (int i = 0; i < n; ++i) {
    const std::span<const Image> one(&target[i], 1);
    Image generated;
    {
      ad::NoGradGuard guard;
      const auto cond = train::one_hot_batch(std::span<const LabelMap>(&pl.labels[i], 1), C);
      generated = image_from_var(translator.gen.translate(cond, translator.gen.prior_mean(1)));
    }
    const auto student_pred = labels::argmax_labels(train::predict(student, one)[0]).first;
    const std::vector<io::Rgb8> tiles = {io::to_rgb8(target[i]), colorize(pl.labels[i]),
                                         colorize(filtered[i]), io::to_rgb8(generated),
                                         colorize(student_pred)};
    char name[32];
    std::snprintf(name, sizeof name, "probe_%02d.png", i);
    const fs::path p = dir / "panels" / name;
    io::write_png_rgb(p, hstack(tiles));
    written.push_back(p);
  }
  return written;
}

}  // namespace

io::Rgb8 line_plot(const std::vector<Series>& series, int width, int height) {
  Canvas cv(width, height);
  constexpr int kMargin = 16;
  const std::array<std::uint8_t, 3> axis{120, 120, 120};
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  cv.line(kMargin, height - kMargin, width - kMargin, height - kMargin, axis);
  cv.line(kMargin, kMargin, kMargin, height - kMargin, axis);
  if (!std::isfinite(xmin)) return cv.img;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const auto px = [&](double x) {
    return kMargin + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (width - 2 * kMargin)));
  };
  const auto py = [&](double y) {
    return height - kMargin -
           static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (height - 2 * kMargin)));
  };
  for (const auto& s : series) {
    bool have = false;
    int lx = 0, ly = 0;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      const int x = px(s.x[i]), y = py(s.y[i]);
      if (have) {
        cv.line(lx, ly, x, y, s.color);
      } else {
        cv.put(x, y, s.color);
      }
      lx = x;
      ly = y;
      have = true;
    }
  }
  return cv.img;
}

io::Rgb8 colorize(const LabelMap& labels) {
  io::Rgb8 out;
  out.height = labels.height;
  out.width = labels.width;
  out.pixels.reserve(labels.size() * 3);
  for (std::uint8_t v : labels.data) {
    const auto c = v == kIgnoreIndex ? std::array<std::uint8_t, 3>{0, 0, 0}
                                     : kPalette[v % kPalette.size()];
    out.pixels.insert(out.pixels.end(), c.begin(), c.end());
  }
  return out;
}

io::Rgb8 hstack(const std::vector<io::Rgb8>& tiles) {
  if (tiles.empty()) throw std::invalid_argument("hstack: no tiles");
  const int h = tiles[0].height;
  io::Rgb8 out;
  out.height = h;
  for (const auto& t : tiles) {
    if (t.height != h) throw std::invalid_argument("hstack: tile heights differ");
    out.width += t.width;
  }
  out.pixels.resize(static_cast<std::size_t>(out.width) * h * 3);
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int y = 0; y < h; ++y) {
      std::copy_n(&t.pixels[static_cast<std::size_t>(y) * t.width * 3], t.width * 3,
                  &out.pixels[(static_cast<std::size_t>(y) * out.width + x0) * 3]);
    }
    x0 += t.width;
  }
  return out;
}

json emit_report(const fs::path& run_dir) {
  const run::RunPaths paths{run_dir};
  if (!fs::exists(paths.metrics())) {
    throw std::runtime_error("report: missing metrics file " + paths.metrics().string());
  }
  const auto table = metrics::read_csv(paths.metrics());
  const auto cfg = config::from_json(run::read_json(paths.config()));
  const json manifest = fs::exists(paths.manifest()) ? run::read_json(paths.manifest()) : json();
  const int C = cfg.dataset.scene.num_classes;

  json doc;
  doc["format"] = "regen-report/1";
  doc["config_hash"] = cfg.hash();
  doc["seed"] = cfg.seed;

  json final_block = nullptr;
  if (const auto* last = table.last_eval()) {
    json per_class = json::array();
    for (int c = 0; c < C; ++c) per_class.push_back(optional_number(last->get("iou_" + std::to_string(c))));
    final_block = {{"phase", last->phase},
                   {"iteration", last->iteration},
                   {"miou", *last->get("miou")},
                   {"pixel_accuracy", optional_number(last->get("pixel_acc"))},
                   {"per_class_iou", per_class}};
  }
  doc["final"] = final_block;

  const json pre = phase_record(manifest, "pretrain");
  const json warm = phase_record(manifest, "warmup");
  const json tr = phase_record(manifest, "translation");
  const json joint = phase_record(manifest, "joint");
  // Phase scores come from the CSV so that they match the logged rows digit
  // for digit; the manifest is the fallback for runs logged elsewhere.
  auto phase_miou = [&](const char* phase, const json& record) -> json {
    const json logged = last_phase_miou(table, phase);
    return logged.is_number() ? logged : number_at(record, "target_miou");
  };
  const json base = phase_miou("baseline", pre);
  const json warm_miou = phase_miou("warmup", warm);
  const json joint_miou = phase_miou("joint", joint);
  doc["miou"] = {{"source", number_at(pre, "source_miou")},
                 {"baseline", base},
                 {"warmup", warm_miou},
                 {"joint", joint_miou}};
  doc["deltas"] = {{"warmup_vs_baseline", delta(warm_miou, base)},
                   {"joint_vs_baseline", delta(joint_miou, base)}};
  json ratio = nullptr;
  const json ce0 = number_at(tr, "holdout_ce_initial");
  const json ce1 = number_at(tr, "holdout_ce_final");
  if (ce0.is_number() && ce1.is_number() && ce0.get<double>() > 0) {
    ratio = ce1.get<double>() / ce0.get<double>();
  }
  doc["translation"] = {{"holdout_ce_initial", ce0}, {"holdout_ce_final", ce1}, {"ratio", ratio}};
  doc["contracts"] = number_at(joint, "contracts");

  fs::create_directories(paths.report_dir());
  json artifacts = json::array();
  for (const auto& p : write_curves(table, paths.report_dir())) {
    artifacts.push_back(fs::relative(p, run_dir).string());
  }
  for (const auto& p : write_panels(paths, cfg, paths.report_dir())) {
    artifacts.push_back(fs::relative(p, run_dir).string());
  }
  doc["artifacts"] = artifacts;
  run::write_json(paths.report_dir() / "report.json", doc);
  return doc;
}

}  // namespace regen::report
