#include <cmath>
#include <set>

#include "doctest.h"
#include "regen/checkpoint.hpp"
#include "regen/optim.hpp"
#include "regen/run.hpp"
#include "regen/synthdata.hpp"
#include "regen/trainer.hpp"
#include "tiny.hpp"

using namespace regen;

namespace {

struct TinyData {
  config::ExperimentConfig cfg;
  std::vector<std::pair<Image, LabelMap>> source;
  std::vector<Image> target;
  std::vector<Image> holdout;
};

TinyData tiny_data(const std::string& name) {
  const auto dir = testing::scratch_dir(name);
  TinyData d{testing::tiny_config(dir), {}, {}, {}};
  const auto m = synth::build_dataset(d.cfg.dataset.scene, d.cfg.dataset.counts, d.cfg.dataset.shift,
                                      d.cfg.dataset_dir());
  d.source = synth::load_source_pairs(m);
  d.target = synth::load_images(m, synth::Split::kTarget);
  d.holdout = synth::load_images(m, synth::Split::kTargetHoldout);
  return d;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("poly learning rate") {
    CHECK(optim::poly_lr(2.5e-4, 0, 2000, 0.8) == 2.5e-4);
    CHECK(optim::poly_lr(2.5e-4, 2000, 2000, 0.8) == 0.0);
    CHECK(optim::poly_lr(2.5e-4, 2500, 2000, 0.8) == 0.0);
    CHECK(optim::poly_lr(1.0, 1000, 2000, 0.8) == doctest::Approx(0.57435).epsilon(1e-5));
    CHECK(optim::poly_lr(1.0, 1000, 2000, 0.8) == doctest::Approx(std::pow(0.5, 0.8)).epsilon(1e-15));
  }

  TEST_CASE("batch sampler visits every index once per epoch and is seeded") {
    train::BatchSampler a(10, 3, 5), b(10, 3, 5), c(10, 3, 6);
    std::multiset<std::size_t> seen;
    std::vector<std::size_t> first_a, first_c;
    for (int i = 0; i < 10; ++i) {
      const auto ba = a.next();
      CHECK(ba.size() == 3);
      CHECK(ba == b.next());
      const auto bc = c.next();
      first_a.insert(first_a.end(), ba.begin(), ba.end());
      first_c.insert(first_c.end(), bc.begin(), bc.end());
    }
    for (std::size_t i = 0; i < 30; ++i) seen.insert(first_a[i]);
    for (std::size_t k = 0; k < 10; ++k) CHECK(seen.count(k) == 3);
    CHECK(first_a != first_c);
  }

  TEST_CASE("zero pretraining epochs leave the parameters untouched") {
    auto d = tiny_data("zero_epochs");
    d.cfg.schedule.pretrain_epochs = 0;
    auto g = run::make_segnet(d.cfg);
    const auto before = ckpt::tensors_hash(g.tensors());
    train::pretrain_source(g, d.source, d.cfg, {});
    CHECK(ckpt::tensors_hash(g.tensors()) == before);
  }

  TEST_CASE("warm-up keeps the frozen layers fixed and logs every round") {
    auto d = tiny_data("warmup");
    auto g = run::make_segnet(d.cfg);
    train::pretrain_source(g, d.source, d.cfg, {});
    std::vector<nets::TensorRef> frozen;
    const auto names = g.frozen_tensor_names();
    for (const auto& t : g.tensors())
      if (std::find(names.begin(), names.end(), t.name) != names.end()) frozen.push_back(t);
    const auto before = ckpt::tensors_hash(frozen);
    const auto all_before = ckpt::tensors_hash(g.tensors());
    train::warmup_selftrain(g, d.target, d.cfg, {});
    CHECK(g.partially_frozen());
    CHECK(ckpt::tensors_hash(frozen) == before);
    CHECK(ckpt::tensors_hash(g.tensors()) != all_before);
  }

  TEST_CASE("one translation iteration moves both generator and discriminator") {
    auto d = tiny_data("translation_step");
    auto teacher = run::make_segnet(d.cfg);
    teacher.freeze_all();
    auto t = train::Translator::fresh(d.cfg);
    const auto g0 = ckpt::tensors_hash(t.gen.tensors());
    const auto d0 = ckpt::tensors_hash(t.disc.tensors());
    const auto tg0 = ckpt::tensors_hash(teacher.tensors());
    const nets::PerceptualExtractor phi;
    const auto pl = train::pseudo_label(teacher, std::span<const Image>(d.target).first(1));
    Rng rng(1);
    const auto l = train::translation_step(t, teacher, phi, std::span<const Image>(d.target).first(1),
                                           pl.labels, d.cfg, rng);
    CHECK(ckpt::tensors_hash(t.gen.tensors()) != g0);
    CHECK(ckpt::tensors_hash(t.disc.tensors()) != d0);
    CHECK(ckpt::tensors_hash(teacher.tensors()) == tg0);
    CHECK(std::isfinite(l.total));
    const auto w = d.cfg.translation_weights();
    CHECK(l.total == doctest::Approx(w.lambda_p * l.p + w.lambda_c * l.c + w.lambda_kld * l.kld +
                                     w.lambda_f * l.f + w.lambda_adv * l.adv)
                         .epsilon(1e-9));
  }

  TEST_CASE("translation and joint phases run their exact iteration counts") {
    auto d = tiny_data("phases");
    auto g = run::make_segnet(d.cfg);
    train::pretrain_source(g, d.source, d.cfg, {});
    train::warmup_selftrain(g, d.target, d.cfg, {});
    auto teacher = g.clone();

    std::vector<long> tr_iters, joint_iters, checkpoints;
    train::Hooks hooks;
    hooks.log = [&](const metrics::Row& r) {
      (r.phase == "translation" ? tr_iters : joint_iters).push_back(r.iteration);
    };
    hooks.checkpoint = [&](long it) { checkpoints.push_back(it); };
    auto t = train::Translator::fresh(d.cfg);
    const auto tr = train::train_translation(t, teacher, d.target, d.holdout, d.cfg, hooks);
    CHECK(tr.holdout_ce_initial > 0.0);
    CHECK(t.opt_g.steps() == d.cfg.schedule.iter_tr);
    CHECK(t.opt_d.steps() == d.cfg.schedule.iter_tr);
    CHECK(checkpoints == std::vector<long>{2});

    const auto tg = ckpt::tensors_hash(teacher.tensors());
    hooks.evaluate = [](nets::SegNet&) { return eval::IoUReport{}; };
    checkpoints.clear();
    const auto jr = train::train_joint(t, g, teacher, d.target, d.cfg, hooks);
    CHECK(jr.evaluated);
    CHECK(t.opt_g.steps() == d.cfg.schedule.iter_tr + d.cfg.schedule.iter_joint);
    CHECK(checkpoints == std::vector<long>{2});
    CHECK(ckpt::tensors_hash(teacher.tensors()) == tg);
    CHECK(std::set<long>(joint_iters.begin(), joint_iters.end()) == std::set<long>{1, 2, 3, 4});
  }

  TEST_CASE("segmentation step with every term disabled is a no-op on the student") {
    auto d = tiny_data("seg_noop");
    auto cfg = d.cfg;
    for (const char* key : {"enable_seg_target_ce", "enable_seg_generated_ce", "enable_seg_perceptual",
                            "enable_seg_feature_matching", "enable_seg_kld"}) {
      cfg = config::with_override(cfg, std::string("loss.") + key, false);
    }
    auto g = run::make_segnet(cfg);
    g.freeze_partial();
    auto t = train::Translator::fresh(cfg);
    const nets::PerceptualExtractor phi;
    optim::Sgd sgd(g.trainable_parameters(), 0.9, 0.0);
    const auto images = std::span<const Image>(d.target).first(2);
    const auto pl = train::pseudo_label(g, images);
    // Batch-norm running statistics still move in training mode, so compare parameters only.
    auto params_hash = [&] {
      std::vector<nets::TensorRef> refs;
      for (const auto& r : g.tensors())
        if (r.is_param) refs.push_back(r);
      return ckpt::tensors_hash(refs);
    };
    const auto before = params_hash();
    const auto l = train::segmentation_step(g, t, phi, sgd, 1e-2, images, pl.labels, pl.labels, cfg);
    CHECK(l.total == 0.0);
    CHECK(params_hash() == before);
  }
}
