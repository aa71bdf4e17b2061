#pragma once

// Training phases of the adaptation workflow: source pretraining, self-training
// warm-up, translation pretraining and joint training. The phases never see
// target labels; target-split evaluation is supplied by the caller through
// Hooks::evaluate.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "regen/config.hpp"
#include "regen/eval.hpp"
#include "regen/metrics.hpp"
#include "regen/nets.hpp"
#include "regen/optim.hpp"
#include "regen/rng.hpp"
#include "regen/types.hpp"

namespace regen::train {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Hooks {
  std::function<void(const metrics::Row&)> log;
  std::function<eval::IoUReport(nets::SegNet&)> evaluate;  // target split
  std::function<void(long iteration)> checkpoint;          // every checkpoint_interval
};

// Adds miou, pixel_acc and iou_<c> columns (undefined classes left empty).
void put_report(metrics::Row& row, const eval::IoUReport& r);

// Forward-only segmentation of a set of images in kEval mode.
std::vector<ProbMap> predict(nets::SegNet& g, std::span<const Image> images, int batch = 8);

eval::IoUReport evaluate_segmenter(nets::SegNet& g, std::span<const Image> images,
                                   std::span<const LabelMap> labels, const config::EvalConfig& cfg,
                                   int num_classes);

// Pseudo labels Y' and their confidences for every image.
struct PseudoLabels {
  std::vector<LabelMap> labels;
  std::vector<ConfidenceMap> confidence;
};
PseudoLabels pseudo_label(nets::SegNet& g, std::span<const Image> images);

// Y'' for a set of pseudo labels under the configured filter scope.
std::vector<LabelMap> filter_pseudo_labels(const PseudoLabels& p, double keep_fraction,
                                           config::FilterScope scope);

// (N,C,H,W) hard one-hot stack.
ad::Var one_hot_batch(std::span<const LabelMap> labels, int num_classes);
std::vector<std::uint8_t> flatten(std::span<const LabelMap> labels);

struct PretrainResult {
  double source_miou = 0.0;
};

// Cross-entropy training of every parameter on labelled source pairs.
PretrainResult pretrain_source(nets::SegNet& g,
                               std::span<const std::pair<Image, LabelMap>> source,
                               const config::ExperimentConfig& cfg, const Hooks& hooks);

// Applies freeze_partial() and runs warmup_rounds rounds of self-training; each
// round pseudo-labels the target set with the round-start model.
void warmup_selftrain(nets::SegNet& g, std::span<const Image> target,
                      const config::ExperimentConfig& cfg, const Hooks& hooks);

// Generator and discriminator with their optimisers. Optimiser state starts
// fresh whenever a Translator is constructed.
struct Translator {
  nets::TranslationGenerator gen;
  nets::MultiScalePatchDiscriminator disc;
  optim::Adam opt_g;
  optim::Adam opt_d;

  Translator(nets::TranslationGenerator g, nets::MultiScalePatchDiscriminator d,
             const config::Schedule& s);
  static Translator fresh(const config::ExperimentConfig& cfg);
};

struct TranslationLosses {
  double total = 0, p = 0, c = 0, kld = 0, f = 0, adv = 0, d = 0;
};

// One discriminator step followed by one generator step on a batch of target
// images with the teacher's labels for them.
TranslationLosses translation_step(Translator& t, nets::SegNet& teacher,
                                   const nets::PerceptualExtractor& phi,
                                   std::span<const Image> images,
                                   std::span<const LabelMap> teacher_labels,
                                   const config::ExperimentConfig& cfg, Rng& rng);

// CE(G_fixed(T_g(one_hot(Y'), 0)), Y') over a batch, Y' = argmax G_fixed(X).
double holdout_consistency(Translator& t, nets::SegNet& teacher, std::span<const Image> images);

struct TranslationResult {
  double holdout_ce_initial = 0.0;
  double holdout_ce_final = 0.0;
};

TranslationResult train_translation(Translator& t, nets::SegNet& teacher,
                                    std::span<const Image> target, std::span<const Image> holdout,
                                    const config::ExperimentConfig& cfg, const Hooks& hooks);

struct SegmentationLosses {
  double total = 0, tgt = 0, gen = 0, p = 0, f = 0, kld = 0;
};

// One SGD step on the segmentation objective; T is frozen during the step.
SegmentationLosses segmentation_step(nets::SegNet& student, Translator& t,
                                     const nets::PerceptualExtractor& phi, optim::Sgd& sgd,
                                     double lr, std::span<const Image> images,
                                     std::span<const LabelMap> teacher_labels,
                                     std::span<const LabelMap> filtered,
                                     const config::ExperimentConfig& cfg);

struct JointResult {
  eval::IoUReport final_report;
  bool evaluated = false;
};

JointResult train_joint(Translator& t, nets::SegNet& student, nets::SegNet& teacher,
                        std::span<const Image> target, const config::ExperimentConfig& cfg,
                        const Hooks& hooks);

// Seeded epoch-wise shuffling batch sampler.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, int batch, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t n_;
  int batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace regen::train
