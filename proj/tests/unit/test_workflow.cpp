#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "regen/commands.hpp"
#include "regen/image_io.hpp"
#include "regen/metrics.hpp"
#include "regen/report.hpp"
#include "regen/run.hpp"
#include "tiny.hpp"

using namespace regen;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// One full tiny run shared by the read-only checks below.
const fs::path& full_run() {
  static const fs::path dir = [] {
    const auto d = testing::scratch_dir("workflow_full");
    cmd::run_all(testing::tiny_config(d), {});
    return d;
  }();
  return dir;
}

std::string command_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const cmd::CommandError& e) {
    return e.what();
  }
  return {};
}

int cli(const std::string& args) {
  const std::string line = std::string(REGEN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(line.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("workflow") {
  TEST_CASE("a full run leaves the documented layout") {
    const run::RunPaths p{full_run()};
    CHECK(fs::exists(p.config()));
    CHECK(fs::exists(p.manifest()));
    CHECK(fs::exists(p.metrics()));
    for (const char* phase : run::kPhases) {
      CHECK(fs::exists(p.model(phase)));
      CHECK(fs::exists(p.marker(phase)));
    }
    CHECK(fs::exists(p.snapshot("translation", 2)));
    CHECK(fs::exists(p.snapshot("joint", 2)));
    CHECK_FALSE(fs::exists(p.snapshot("joint", 4)));
    CHECK(fs::exists(p.root / "eval_joint.json"));
    CHECK(fs::exists(p.report_dir() / "report.json"));
    const auto manifest = run::read_json(p.manifest());
    CHECK(manifest["config_hash"] == testing::tiny_config(full_run()).hash());
    CHECK(manifest["phases"]["joint"]["contracts"]["verified"] == true);
  }

  TEST_CASE("metrics CSV has the fixed header and a baseline row") {
    const auto t = metrics::read_csv(run::RunPaths{full_run()}.metrics());
    CHECK(t.header == metrics::header(5));
    bool baseline = false;
    for (const auto& r : t.rows) baseline = baseline || (r.phase == "baseline" && r.get("miou"));
    CHECK(baseline);
    long translation_rows = 0;
    for (const auto& r : t.rows) translation_rows += r.phase == "translation" && r.get("loss_total");
    CHECK(translation_rows == 4);
  }

  TEST_CASE("report mIoU equals the last evaluated CSV row") {
    const run::RunPaths p{full_run()};
    const auto rep = run::read_json(p.report_dir() / "report.json");
    const auto t = metrics::read_csv(p.metrics());
    const auto* last = t.last_eval();
    REQUIRE(last != nullptr);
    CHECK(rep["final"]["miou"].get<double>() == *last->get("miou"));
    CHECK(rep["final"]["phase"] == last->phase);
    CHECK(rep["miou"]["joint"].get<double>() == *last->get("miou"));
    CHECK(rep["deltas"]["joint_vs_baseline"].get<double>() ==
          doctest::Approx(rep["miou"]["joint"].get<double>() - rep["miou"]["baseline"].get<double>()));
  }

  TEST_CASE("panels are five tiles wide and curves exist") {
    const run::RunPaths p{full_run()};
    const auto panel = io::read_png_rgb(p.report_dir() / "panels" / "probe_00.png");
    CHECK(panel.width == report::kPanelTiles * 16);
    CHECK(panel.height == 16);
    CHECK(fs::exists(p.report_dir() / "panels" / "probe_01.png"));
    CHECK_FALSE(fs::exists(p.report_dir() / "panels" / "probe_02.png"));
    CHECK(fs::exists(p.report_dir() / "curve_miou.png"));
    CHECK(fs::exists(p.report_dir() / "curve_loss_joint.png"));
  }

  TEST_CASE("evaluating the pretrained checkpoint is labelled baseline") {
    const auto cfg = testing::tiny_config(full_run());
    const auto doc = cmd::evaluate(cfg, run::RunPaths{full_run()}.model("pretrain"), {});
    CHECK(doc["phase"] == "baseline");
    CHECK(fs::exists(full_run() / "eval_baseline.json"));
    const auto err = command_error(
        [&] { cmd::evaluate(cfg, run::RunPaths{full_run()}.model("translation"), {}); });
    CHECK(err.find("no segmentation network") != std::string::npos);
  }

  TEST_CASE("the individual commands reproduce run-all byte for byte") {
    const auto dir = testing::scratch_dir("workflow_steps");
    const auto cfg = testing::tiny_config(dir);
    cmd::generate_data(cfg, {});
    cmd::pretrain(cfg, {});
    cmd::warmup(cfg, {});
    cmd::train_translation(cfg, {});
    cmd::train_joint(cfg, {});
    cmd::evaluate(cfg, std::nullopt, {});
    cmd::report(dir);
    CHECK(slurp(dir / "metrics.csv") == slurp(full_run() / "metrics.csv"));
    CHECK(slurp(dir / "eval_joint.json").size() > 0);
  }

  TEST_CASE("missing prerequisites name the expected path and the producing command") {
    const auto dir = testing::scratch_dir("workflow_missing");
    const auto cfg = testing::tiny_config(dir);
    cmd::generate_data(cfg, {});
    const auto err = command_error([&] { cmd::train_joint(cfg, {}); });
    CHECK(err.find("missing prerequisite") != std::string::npos);
    CHECK(err.find((dir / "checkpoints" / "pretrain" / "model.ckpt").string()) != std::string::npos);
    CHECK(err.find("regen pretrain") != std::string::npos);
    CHECK(command_error([&] { cmd::train_translation(cfg, {}); }).find("regen warmup") != std::string::npos);
    const auto rep = command_error([&] { cmd::report(testing::scratch_dir("workflow_empty")); });
    CHECK(rep.find("metrics.csv") != std::string::npos);
  }

  TEST_CASE("completed phases are not overwritten without force") {
    const auto dir = testing::scratch_dir("workflow_force");
    const auto cfg = testing::tiny_config(dir);
    cmd::generate_data(cfg, {});
    cmd::pretrain(cfg, {});
    const auto before = slurp(dir / "metrics.csv");
    CHECK(command_error([&] { cmd::pretrain(cfg, {}); }).find("already complete") != std::string::npos);
    cmd::pretrain(cfg, {true, nullptr});
    CHECK(slurp(dir / "metrics.csv") == before);

    auto other = cfg;
    other.seed = 9;
    CHECK(command_error([&] { cmd::warmup(other, {}); }).find(dir.string()) != std::string::npos);
  }

  TEST_CASE("a report after pretraining alone carries only the baseline") {
    const auto dir = testing::scratch_dir("workflow_partial");
    const auto cfg = testing::tiny_config(dir);
    cmd::generate_data(cfg, {});
    cmd::pretrain(cfg, {});
    const auto rep = cmd::report(dir);
    CHECK(rep["miou"]["baseline"].is_number());
    CHECK(rep["miou"]["joint"].is_null());
    CHECK(rep["final"]["phase"] == "baseline");
    CHECK_FALSE(fs::exists(dir / "report" / "panels"));
  }

  TEST_CASE("sweep writes one row per value") {
    const auto dir = testing::scratch_dir("workflow_sweep");
    auto cfg = testing::tiny_config(dir);
    cfg.schedule.iter_tr = 2;
    cfg.schedule.iter_joint = 2;
    const auto pts = cmd::sweep(cfg, "schedule.filter_keep_fraction", {json(0.2), json(0.5)}, {});
    REQUIRE(pts.size() == 2);
    const auto csv = slurp(dir / "sweep.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.rfind("value,final_miou\n", 0) == 0);
    CHECK(fs::exists(dir / "sweep" / "schedule.filter_keep_fraction_1" / "report" / "report.json"));
    CHECK(command_error([&] { cmd::sweep(cfg, "schedule.iter_tr", {}, {}); }).find("no values") !=
          std::string::npos);
  }

  TEST_CASE("command-line exit codes") {
    const auto dir = testing::scratch_dir("workflow_cli");
    {
      std::ofstream(dir / "bad.json") << R"({"loss": {"lambda_q": 1}})";
      std::ofstream(dir / "ok.json") << testing::tiny_json(dir / "run").dump();
    }
    CHECK(cli("--help") == 0);
    CHECK(cli("pretrain -c " + (dir / "bad.json").string()) == 2);
    CHECK(cli("train-joint -c " + (dir / "ok.json").string()) == 3);
    CHECK(cli("generate-data -c " + (dir / "ok.json").string() + " -q") == 0);
    CHECK(fs::exists(dir / "run" / "data" / "manifest.json"));
    CHECK(cli("no-such-command") != 0);
  }
}
