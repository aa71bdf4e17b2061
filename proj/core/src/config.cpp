#include "regen/config.hpp"

#include <fstream>
#include <sstream>

#include "regen/checkpoint.hpp"

namespace regen::config {

using nlohmann::json;

namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

std::string type_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool compatible(const json& def, const json& val) {
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_number()) return val.is_number();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) return val.is_array();
  return false;
}

void overlay(json& target, const json& user, const std::string& path) {
  if (!user.is_object()) {
    throw ConfigError("config: '" + (path.empty() ? std::string("<root>") : path) +
                      "' must be an object, got " + type_name(user));
  }
  for (const auto& [key, val] : user.items()) {
    const std::string p = join(path, key);
    if (!target.contains(key)) throw ConfigError("config: unknown key '" + p + "'");
    json& def = target[key];
    if (def.is_object()) {
      overlay(def, val, p);
    } else if (!compatible(def, val)) {
      throw ConfigError("config: field '" + p + "' expects " + type_name(def) + ", got " +
                        type_name(val));
    } else {
      def = val;
    }
  }
}

void collect_leaves(const json& j, const std::string& path, std::vector<std::string>& out) {
  for (const auto& [key, val] : j.items()) {
    if (val.is_object()) {
      collect_leaves(val, join(path, key), out);
    } else {
      out.push_back(join(path, key));
    }
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: field '" + join(path, key) + "': " + e.what());
  }
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError("config: field '" + field + "' " + what);
}

std::string scope_name(FilterScope s) { return s == FilterScope::kImage ? "image" : "dataset"; }

std::string policy_name(eval::UndefinedPolicy p) {
  return p == eval::UndefinedPolicy::kExclude ? "exclude" : "zero";
}

}  // namespace

std::vector<bool> EvalConfig::subset_mask(int num_classes) const {
  if (subset.empty()) return std::vector<bool>(num_classes, true);
  std::vector<bool> mask(num_classes, false);
  for (int c : subset) {
    if (c < 0 || c >= num_classes) {
      throw ConfigError("config: field 'eval.subset' names class " + std::to_string(c) +
                        " outside [0, " + std::to_string(num_classes) + ")");
    }
    mask[c] = true;
  }
  return mask;
}

loss::TranslationWeights ExperimentConfig::translation_weights() const {
  loss::TranslationWeights w = weights.translation;
  if (!toggles.perceptual) w.lambda_p = 0;
  if (!toggles.consistency) w.lambda_c = 0;
  if (!toggles.kld) w.lambda_kld = 0;
  if (!toggles.feature_matching) w.lambda_f = 0;
  if (!toggles.adversarial) w.lambda_adv = 0;
  return w;
}

loss::SegmentationWeights ExperimentConfig::segmentation_weights() const {
  loss::SegmentationWeights w = weights.segmentation;
  if (!toggles.seg_target_ce) w.lambda_tgt = 0;
  if (!toggles.seg_generated_ce) w.lambda_gen = 0;
  if (!toggles.seg_perceptual) w.lambda_pseg = 0;
  if (!toggles.seg_feature_matching) w.lambda_f = 0;
  if (!toggles.seg_kld) w.lambda_kld = 0;
  return w;
}

json ExperimentConfig::to_json() const {
  const auto& d = dataset;
  const auto& s = schedule;
  const auto& t = weights.translation;
  const auto& g = weights.segmentation;
  return {
      {"seed", seed},
      {"output_dir", output_dir},
      {"device", device},
      {"dataset",
       {{"dir", d.dir},
        {"height", d.scene.height},
        {"width", d.scene.width},
        {"num_classes", d.scene.num_classes},
        {"shapes_min", d.scene.shapes_min},
        {"shapes_max", d.scene.shapes_max},
        {"n_source", d.counts.n_source},
        {"n_target", d.counts.n_target},
        {"n_holdout", d.counts.n_holdout},
        {"shift",
         {{"hue_rotation", d.shift.hue_rotation},
          {"brightness_offsets", d.shift.brightness_offsets},
          {"texture_noise_amplitude", d.shift.texture_noise_amplitude},
          {"blur_radius", d.shift.blur_radius}}}}},
      {"schedule",
       {{"pretrain_epochs", s.pretrain_epochs},
        {"pretrain_batch", s.pretrain_batch},
        {"pretrain_lr", s.pretrain_lr},
        {"warmup_rounds", s.warmup_rounds},
        {"warmup_epochs_per_round", s.warmup_epochs_per_round},
        {"iter_tr", s.iter_tr},
        {"iter_joint", s.iter_joint},
        {"batch_translation", s.batch_translation},
        {"batch_joint", s.batch_joint},
        {"seg_lr", s.seg_lr},
        {"seg_momentum", s.seg_momentum},
        {"seg_weight_decay", s.seg_weight_decay},
        {"poly_power", s.poly_power},
        {"gen_lr", s.gen_lr},
        {"disc_lr", s.disc_lr},
        {"adam_beta1", s.adam_beta1},
        {"adam_beta2", s.adam_beta2},
        {"filter_keep_fraction", s.filter_keep_fraction},
        {"filter_scope", scope_name(s.filter_scope)},
        {"hard_onehot", s.hard_onehot},
        {"checkpoint_interval", s.checkpoint_interval},
        {"log_interval", s.log_interval}}},
      {"loss",
       {{"lambda_p", t.lambda_p},
        {"lambda_c", t.lambda_c},
        {"lambda_kld", t.lambda_kld},
        {"lambda_f", t.lambda_f},
        {"lambda_adv", t.lambda_adv},
        {"lambda_tgt", g.lambda_tgt},
        {"lambda_gen", g.lambda_gen},
        {"lambda_pseg", g.lambda_pseg},
        {"seg_lambda_f", g.lambda_f},
        {"seg_lambda_kld", g.lambda_kld},
        {"perceptual_layer_weights", weights.perceptual_layers},
        {"enable_perceptual", toggles.perceptual},
        {"enable_consistency", toggles.consistency},
        {"enable_kld", toggles.kld},
        {"enable_feature_matching", toggles.feature_matching},
        {"enable_adversarial", toggles.adversarial},
        {"enable_seg_target_ce", toggles.seg_target_ce},
        {"enable_seg_generated_ce", toggles.seg_generated_ce},
        {"enable_seg_perceptual", toggles.seg_perceptual},
        {"enable_seg_feature_matching", toggles.seg_feature_matching},
        {"enable_seg_kld", toggles.seg_kld}}},
      {"eval",
       {{"subset", eval.subset},
        {"eval_interval", eval.eval_interval},
        {"undefined_policy", policy_name(eval.undefined_policy)},
        {"probe_images", eval.probe_images}}},
  };
}

std::string ExperimentConfig::canonical() const { return to_json().dump(); }

std::string ExperimentConfig::hash() const { return ckpt::sha256_hex(canonical()); }

std::string ExperimentConfig::dataset_dir() const {
  return dataset.dir.empty() ? output_dir + "/data" : dataset.dir;
}

json default_json() {
  ExperimentConfig cfg;
  cfg.dataset.shift.hue_rotation = 40.0;
  cfg.dataset.shift.brightness_offsets = {0.1, -0.2, 0.15, -0.15, 0.2};
  cfg.dataset.shift.texture_noise_amplitude = 0.15;
  cfg.dataset.shift.blur_radius = 1;
  return cfg.to_json();
}

ExperimentConfig from_json(const json& user) {
  json doc = default_json();
  overlay(doc, user, "");

  ExperimentConfig cfg;
  cfg.seed = get<std::uint64_t>(doc, "seed", "");
  cfg.output_dir = get<std::string>(doc, "output_dir", "");
  cfg.device = get<std::string>(doc, "device", "");
  require(!cfg.output_dir.empty(), "output_dir", "must not be empty");

  const json& d = doc["dataset"];
  cfg.dataset.dir = get<std::string>(d, "dir", "dataset");
  cfg.dataset.scene.seed = cfg.seed;
  cfg.dataset.scene.height = get<int>(d, "height", "dataset");
  cfg.dataset.scene.width = get<int>(d, "width", "dataset");
  cfg.dataset.scene.num_classes = get<int>(d, "num_classes", "dataset");
  cfg.dataset.scene.shapes_min = get<int>(d, "shapes_min", "dataset");
  cfg.dataset.scene.shapes_max = get<int>(d, "shapes_max", "dataset");
  cfg.dataset.counts.n_source = get<int>(d, "n_source", "dataset");
  cfg.dataset.counts.n_target = get<int>(d, "n_target", "dataset");
  cfg.dataset.counts.n_holdout = get<int>(d, "n_holdout", "dataset");
  const json& sh = d["shift"];
  cfg.dataset.shift.hue_rotation = get<double>(sh, "hue_rotation", "dataset.shift");
  cfg.dataset.shift.brightness_offsets =
      get<std::vector<double>>(sh, "brightness_offsets", "dataset.shift");
  cfg.dataset.shift.texture_noise_amplitude =
      get<double>(sh, "texture_noise_amplitude", "dataset.shift");
  cfg.dataset.shift.blur_radius = get<int>(sh, "blur_radius", "dataset.shift");
  try {
    cfg.dataset.scene.validate();
    cfg.dataset.shift.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: dataset: ") + e.what());
  }
  require(cfg.dataset.scene.height % 8 == 0 && cfg.dataset.scene.width % 8 == 0,
          "dataset.height/width", "must be divisible by 8");
  require(cfg.dataset.counts.n_source >= 0, "dataset.n_source", "must be >= 0");
  require(cfg.dataset.counts.n_target >= 0, "dataset.n_target", "must be >= 0");
  require(cfg.dataset.counts.n_holdout >= 0, "dataset.n_holdout", "must be >= 0");

  const json& s = doc["schedule"];
  auto& sc = cfg.schedule;
  sc.pretrain_epochs = get<int>(s, "pretrain_epochs", "schedule");
  sc.pretrain_batch = get<int>(s, "pretrain_batch", "schedule");
  sc.pretrain_lr = get<double>(s, "pretrain_lr", "schedule");
  sc.warmup_rounds = get<int>(s, "warmup_rounds", "schedule");
  sc.warmup_epochs_per_round = get<int>(s, "warmup_epochs_per_round", "schedule");
  sc.iter_tr = get<long>(s, "iter_tr", "schedule");
  sc.iter_joint = get<long>(s, "iter_joint", "schedule");
  sc.batch_translation = get<int>(s, "batch_translation", "schedule");
  sc.batch_joint = get<int>(s, "batch_joint", "schedule");
  sc.seg_lr = get<double>(s, "seg_lr", "schedule");
  sc.seg_momentum = get<double>(s, "seg_momentum", "schedule");
  sc.seg_weight_decay = get<double>(s, "seg_weight_decay", "schedule");
  sc.poly_power = get<double>(s, "poly_power", "schedule");
  sc.gen_lr = get<double>(s, "gen_lr", "schedule");
  sc.disc_lr = get<double>(s, "disc_lr", "schedule");
  sc.adam_beta1 = get<double>(s, "adam_beta1", "schedule");
  sc.adam_beta2 = get<double>(s, "adam_beta2", "schedule");
  sc.filter_keep_fraction = get<double>(s, "filter_keep_fraction", "schedule");
  const auto scope = get<std::string>(s, "filter_scope", "schedule");
  require(scope == "image" || scope == "dataset", "schedule.filter_scope",
          "must be 'image' or 'dataset'");
  sc.filter_scope = scope == "image" ? FilterScope::kImage : FilterScope::kDataset;
  sc.hard_onehot = get<bool>(s, "hard_onehot", "schedule");
  sc.checkpoint_interval = get<long>(s, "checkpoint_interval", "schedule");
  sc.log_interval = get<long>(s, "log_interval", "schedule");
  for (const char* k : {"pretrain_epochs", "warmup_rounds", "warmup_epochs_per_round", "iter_tr",
                        "iter_joint"}) {
    require(s[k].get<long>() >= 0, std::string("schedule.") + k, "must be >= 0");
  }
  for (const char* k : {"pretrain_batch", "batch_translation", "batch_joint", "checkpoint_interval",
                        "log_interval"}) {
    require(s[k].get<long>() > 0, std::string("schedule.") + k, "must be > 0");
  }
  for (const char* k : {"pretrain_lr", "seg_lr", "gen_lr", "disc_lr"}) {
    require(s[k].get<double>() > 0, std::string("schedule.") + k, "must be > 0");
  }
  require(sc.filter_keep_fraction > 0 && sc.filter_keep_fraction <= 1,
          "schedule.filter_keep_fraction", "must be in (0, 1]");
  require(sc.adam_beta1 >= 0 && sc.adam_beta1 < 1 && sc.adam_beta2 >= 0 && sc.adam_beta2 < 1,
          "schedule.adam_beta1/adam_beta2", "must be in [0, 1)");

  const json& l = doc["loss"];
  auto& tw = cfg.weights.translation;
  auto& sw = cfg.weights.segmentation;
  tw.lambda_p = get<double>(l, "lambda_p", "loss");
  tw.lambda_c = get<double>(l, "lambda_c", "loss");
  tw.lambda_kld = get<double>(l, "lambda_kld", "loss");
  tw.lambda_f = get<double>(l, "lambda_f", "loss");
  tw.lambda_adv = get<double>(l, "lambda_adv", "loss");
  sw.lambda_tgt = get<double>(l, "lambda_tgt", "loss");
  sw.lambda_gen = get<double>(l, "lambda_gen", "loss");
  sw.lambda_pseg = get<double>(l, "lambda_pseg", "loss");
  sw.lambda_f = get<double>(l, "seg_lambda_f", "loss");
  sw.lambda_kld = get<double>(l, "seg_lambda_kld", "loss");
  cfg.weights.perceptual_layers = get<std::vector<double>>(l, "perceptual_layer_weights", "loss");
  auto& tg = cfg.toggles;
  tg.perceptual = get<bool>(l, "enable_perceptual", "loss");
  tg.consistency = get<bool>(l, "enable_consistency", "loss");
  tg.kld = get<bool>(l, "enable_kld", "loss");
  tg.feature_matching = get<bool>(l, "enable_feature_matching", "loss");
  tg.adversarial = get<bool>(l, "enable_adversarial", "loss");
  tg.seg_target_ce = get<bool>(l, "enable_seg_target_ce", "loss");
  tg.seg_generated_ce = get<bool>(l, "enable_seg_generated_ce", "loss");
  tg.seg_perceptual = get<bool>(l, "enable_seg_perceptual", "loss");
  tg.seg_feature_matching = get<bool>(l, "enable_seg_feature_matching", "loss");
  tg.seg_kld = get<bool>(l, "enable_seg_kld", "loss");
  try {
    cfg.weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: loss: ") + e.what());
  }

  const json& e = doc["eval"];
  cfg.eval.subset = get<std::vector<int>>(e, "subset", "eval");
  cfg.eval.eval_interval = get<long>(e, "eval_interval", "eval");
  const auto policy = get<std::string>(e, "undefined_policy", "eval");
  require(policy == "exclude" || policy == "zero", "eval.undefined_policy",
          "must be 'exclude' or 'zero'");
  cfg.eval.undefined_policy =
      policy == "exclude" ? eval::UndefinedPolicy::kExclude : eval::UndefinedPolicy::kCountZero;
  cfg.eval.probe_images = get<int>(e, "probe_images", "eval");
  require(cfg.eval.eval_interval > 0, "eval.eval_interval", "must be > 0");
  require(cfg.eval.probe_images >= 0, "eval.probe_images", "must be >= 0");
  const auto mask = cfg.eval.subset_mask(cfg.dataset.scene.num_classes);
  require(std::find(mask.begin(), mask.end(), true) != mask.end(), "eval.subset",
          "selects no class");
  return cfg;
}

ExperimentConfig parse(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset -> line/column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("config: syntax error at line " + std::to_string(line) + ", column " +
                      std::to_string(col) + ": " + e.what());
  }
  if (user.is_null()) user = json::object();
  return from_json(user);
}

ExperimentConfig load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::vector<std::string> leaf_paths() {
  std::vector<std::string> out;
  collect_leaves(default_json(), "", out);
  return out;
}

ExperimentConfig with_override(const ExperimentConfig& cfg, const std::string& path,
                               const json& value) {
  json doc = cfg.to_json();
  json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  bool ok = !parts.empty();
  for (std::size_t i = 0; ok && i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      ok = false;
      break;
    }
    node = &(*node)[parts[i]];
  }
  if (!ok || node->is_object()) {
    std::string valid;
    for (const auto& p : leaf_paths()) valid += "\n  " + p;
    throw ConfigError("unknown config path '" + path + "'; valid paths:" + valid);
  }
  json patch = json::object();
  json* cursor = &patch;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) cursor = &(*cursor)[parts[i]];
  (*cursor)[parts.back()] = value;
  doc.merge_patch(patch);
  return from_json(doc);
}

}  // namespace regen::config
