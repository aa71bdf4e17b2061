#include "regen/run.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "regen/checkpoint.hpp"
#include "regen/rng.hpp"

namespace regen::run {

std::filesystem::path RunPaths::snapshot(const std::string& phase, long iteration) const {
  char name[32];
  std::snprintf(name, sizeof name, "iter_%06ld.ckpt", iteration);
  return phase_dir(phase) / name;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << doc.dump(2) << '\n';
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nets::SegNet make_segnet(const config::ExperimentConfig& cfg) {
  return nets::SegNet({cfg.dataset.scene.num_classes, derive_seed(cfg.seed, 1)});
}

nets::SegNet load_segnet(const std::filesystem::path& ckpt, const config::ExperimentConfig& cfg) {
  auto g = make_segnet(cfg);
  ckpt::load(ckpt).restore("seg.", g.tensors());
  return g;
}

train::Translator load_translator(const std::filesystem::path& ckpt,
                                  const config::ExperimentConfig& cfg) {
  auto t = train::Translator::fresh(cfg);
  const auto c = ckpt::load(ckpt);
  c.restore("gen.", t.gen.tensors());
  c.restore("disc.", t.disc.tensors());
  return t;
}

}  // namespace regen::run
