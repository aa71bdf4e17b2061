#include <benchmark/benchmark.h>

#include "regen/config.hpp"
#include "regen/labelops.hpp"
#include "regen/losses.hpp"
#include "regen/ops.hpp"
#include "regen/synthdata.hpp"
#include "regen/trainer.hpp"

using namespace regen;
using ad::Var;

namespace {

Var random_var(ad::Shape s, Rng& rng) {
  std::vector<double> v(s.size());
  for (double& x : v) x = rng.normal();
  return Var::leaf(s, std::move(v), true);
}

std::vector<Image> random_images(int n, int size, Rng& rng) {
  std::vector<Image> out(n, Image(size, size));
  for (auto& img : out)
    for (double& x : img.data) x = rng.uniform(-1.0, 1.0);
  return out;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(1);
  Var x = random_var({2, 16, size, size}, rng);
  Var w = random_var({32, 16, 3, 3}, rng);
  Var b = random_var({1, 32, 1, 1}, rng);
  for (auto _ : state) {
    Var y = ad::mean(ad::conv2d(x, w, b));
    y.backward();
    benchmark::DoNotOptimize(w.grad().data());
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SegNetForward(benchmark::State& state) {
  Rng rng(2);
  nets::SegNet g({5, 3});
  const auto images = random_images(static_cast<int>(state.range(0)), 64, rng);
  for (auto _ : state) benchmark::DoNotOptimize(train::predict(g, images));
}
BENCHMARK(BM_SegNetForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_PerceptualLoss(benchmark::State& state) {
  Rng rng(3);
  const nets::PerceptualExtractor phi;
  Var a = random_var({1, 3, 64, 64}, rng);
  Var b = random_var({1, 3, 64, 64}, rng);
  const std::vector<double> layers(loss::kPerceptualLayerWeights.begin(), loss::kPerceptualLayerWeights.end());
  for (auto _ : state) {
    Var l = loss::perceptual_loss(phi, a, b, layers);
    l.backward();
    a.zero_grad();
  }
}
BENCHMARK(BM_PerceptualLoss)->Unit(benchmark::kMillisecond);

void BM_TranslationStep(benchmark::State& state) {
  auto cfg = config::from_json(nlohmann::json::object());
  Rng rng(4);
  nets::SegNet teacher({5, 5});
  teacher.freeze_all();
  auto t = train::Translator::fresh(cfg);
  const nets::PerceptualExtractor phi;
  const auto images = random_images(cfg.schedule.batch_translation, 64, rng);
  const auto labels = train::pseudo_label(teacher, images).labels;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train::translation_step(t, teacher, phi, images, labels, cfg, rng));
  }
}
BENCHMARK(BM_TranslationStep)->Unit(benchmark::kMillisecond);

void BM_SegmentationStep(benchmark::State& state) {
  auto cfg = config::from_json(nlohmann::json::object());
  Rng rng(5);
  nets::SegNet student({5, 6});
  student.freeze_partial();
  auto t = train::Translator::fresh(cfg);
  const nets::PerceptualExtractor phi;
  optim::Sgd sgd(student.trainable_parameters(), cfg.schedule.seg_momentum, cfg.schedule.seg_weight_decay);
  const auto images = random_images(cfg.schedule.batch_joint, 64, rng);
  const auto pl = train::pseudo_label(student, images);
  const auto filtered = train::filter_pseudo_labels(pl, cfg.schedule.filter_keep_fraction, cfg.schedule.filter_scope);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        train::segmentation_step(student, t, phi, sgd, cfg.schedule.seg_lr, images, pl.labels, filtered, cfg));
  }
}
BENCHMARK(BM_SegmentationStep)->Unit(benchmark::kMillisecond);

void BM_ClassConfidenceFilter(benchmark::State& state) {
  Rng rng(6);
  std::vector<LabelMap> labels(200, LabelMap(64, 64));
  std::vector<ConfidenceMap> conf(200, ConfidenceMap{64, 64, std::vector<double>(64 * 64)});
  for (std::size_t m = 0; m < labels.size(); ++m)
    for (std::size_t i = 0; i < labels[m].size(); ++i) {
      labels[m].data[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
      conf[m].data[i] = rng.uniform();
    }
  for (auto _ : state) benchmark::DoNotOptimize(labels::filter_by_class_confidence(labels, conf, 0.33));
}
BENCHMARK(BM_ClassConfidenceFilter)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
