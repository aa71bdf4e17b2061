#include "regen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "regen/labelops.hpp"
#include "regen/losses.hpp"
#include "regen/ops.hpp"

namespace regen::train {

using ad::Var;
using nets::Mode;

namespace {

enum PhaseTag : std::uint64_t { kPretrainTag = 101, kWarmupTag, kTranslationTag, kJointTag };

template <typename T>
std::vector<T> gather(std::span<const T> items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

bool should_log(long it, long total, long interval) { return it % interval == 0 || it == total; }

void check_finite(double v, const char* phase, long it) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(phase) + ": non-finite loss at iteration " +
                          std::to_string(it));
  }
}

double value_or_zero(const Var& v) { return v.defined() ? v.item() : 0.0; }

void emit(const Hooks& hooks, const metrics::Row& row) {
  if (hooks.log) hooks.log(row);
}

}  // namespace

void put_report(metrics::Row& row, const eval::IoUReport& r) {
  row.set("miou", r.miou).set("pixel_acc", r.pixel_accuracy);
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    if (r.per_class[c]) row.set("iou_" + std::to_string(c), *r.per_class[c]);
  }
}

BatchSampler::BatchSampler(std::size_t n, int batch, std::uint64_t seed)
    : n_(n), batch_(batch), rng_(seed), order_(n) {
  if (n == 0) throw std::invalid_argument("BatchSampler: empty dataset");
  if (batch <= 0) throw std::invalid_argument("BatchSampler: batch must be positive");
  pos_ = n_;  // shuffle on first use
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out;
  while (static_cast<int>(out.size()) < batch_) {
    if (pos_ == n_) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      for (std::size_t i = n_; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(order_[i - 1], order_[j]);
      }
      pos_ = 0;
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

std::vector<ProbMap> predict(nets::SegNet& g, std::span<const Image> images, int batch) {
  ad::NoGradGuard guard;
  std::vector<ProbMap> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); i += batch) {
    const auto chunk = images.subspan(i, std::min<std::size_t>(batch, images.size() - i));
    const auto res = g.forward(to_var(chunk), Mode::kEval);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      out.push_back(probmap_from_var(res.probs, static_cast<int>(k)));
    }
  }
  return out;
}

eval::IoUReport evaluate_segmenter(nets::SegNet& g, std::span<const Image> images,
                                   std::span<const LabelMap> labels, const config::EvalConfig& cfg,
                                   int num_classes) {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("evaluate_segmenter: image/label count mismatch");
  }
  eval::ConfusionMatrix cm(num_classes);
  const auto probs = predict(g, images);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cm.accumulate(labels::argmax_labels(probs[i]).first, labels[i]);
  }
  const auto mask = cfg.subset_mask(num_classes);
  const auto flags = std::make_unique<bool[]>(mask.size());
  std::copy(mask.begin(), mask.end(), flags.get());
  auto report =
      eval::iou(cm, std::span<const bool>(flags.get(), mask.size()), cfg.undefined_policy);
  report.evaluated_images = static_cast<int>(images.size());
  return report;
}

PseudoLabels pseudo_label(nets::SegNet& g, std::span<const Image> images) {
  PseudoLabels out;
  for (const auto& p : predict(g, images)) {
    auto [lab, conf] = labels::argmax_labels(p);
    out.labels.push_back(std::move(lab));
    out.confidence.push_back(std::move(conf));
  }
  return out;
}

std::vector<LabelMap> filter_pseudo_labels(const PseudoLabels& p, double keep_fraction,
                                           config::FilterScope scope) {
  if (scope == config::FilterScope::kDataset) {
    return labels::filter_by_class_confidence(std::span<const LabelMap>(p.labels),
                                              std::span<const ConfidenceMap>(p.confidence),
                                              keep_fraction);
  }
  std::vector<LabelMap> out;
  out.reserve(p.labels.size());
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    out.push_back(labels::filter_by_class_confidence(p.labels[i], p.confidence[i], keep_fraction));
  }
  return out;
}

Var one_hot_batch(std::span<const LabelMap> labels, int num_classes) {
  if (labels.empty()) throw std::invalid_argument("one_hot_batch: empty batch");
  const int h = labels[0].height;
  const int w = labels[0].width;
  std::vector<double> data;
  data.reserve(labels.size() * num_classes * static_cast<std::size_t>(h) * w);
  for (const auto& l : labels) {
    const auto oh = labels::one_hot(l, num_classes);
    data.insert(data.end(), oh.data.begin(), oh.data.end());
  }
  return Var::leaf(ad::Shape{static_cast<int>(labels.size()), num_classes, h, w}, std::move(data));
}

std::vector<std::uint8_t> flatten(std::span<const LabelMap> labels) {
  std::vector<std::uint8_t> out;
  for (const auto& l : labels) out.insert(out.end(), l.data.begin(), l.data.end());
  return out;
}

// ------------------------------------------------------------ pretraining

PretrainResult pretrain_source(nets::SegNet& g,
                               std::span<const std::pair<Image, LabelMap>> source,
                               const config::ExperimentConfig& cfg, const Hooks& hooks) {
  if (source.empty()) throw std::invalid_argument("pretrain_source: the source split is empty");
  const auto& s = cfg.schedule;
  const long steps_per_epoch =
      static_cast<long>((source.size() + s.pretrain_batch - 1) / s.pretrain_batch);
  const long total = steps_per_epoch * s.pretrain_epochs;
  optim::Adam adam(g.trainable_parameters(), optim::AdamOptions{0.9, 0.999, 1e-8});
  BatchSampler sampler(source.size(), s.pretrain_batch, derive_seed(cfg.seed, kPretrainTag));

  for (long it = 1; it <= total; ++it) {
    std::vector<Image> imgs;
    std::vector<LabelMap> labs;
    for (std::size_t i : sampler.next()) {
      imgs.push_back(source[i].first);
      labs.push_back(source[i].second);
    }
    adam.zero_grad();
    const auto out = g.forward(to_var(imgs), Mode::kTrain);
    const auto flat = flatten(labs);
    const Var loss = loss::semantic_consistency_loss(out.probs, flat).value;
    const double v = loss.item();
    check_finite(v, "pretrain", it);
    loss.backward();
    adam.step(s.pretrain_lr);
    if (should_log(it, total, s.log_interval)) {
      metrics::Row row{it, "pretrain", {}};
      row.set("lr", s.pretrain_lr).set("seg_total", v).set("seg_tgt", v);
      emit(hooks, row);
    }
    if (hooks.checkpoint && it % s.checkpoint_interval == 0 && it != total) hooks.checkpoint(it);
  }

  std::vector<Image> imgs;
  std::vector<LabelMap> labs;
  for (const auto& [img, lab] : source) {
    imgs.push_back(img);
    labs.push_back(lab);
  }
  PretrainResult r;
  r.source_miou =
      evaluate_segmenter(g, imgs, labs, cfg.eval, g.config().num_classes).miou;
  return r;
}

// ---------------------------------------------------------------- warm-up

void warmup_selftrain(nets::SegNet& g, std::span<const Image> target,
                      const config::ExperimentConfig& cfg, const Hooks& hooks) {
  const auto& s = cfg.schedule;
  g.freeze_partial();
  if (s.warmup_rounds == 0) return;
  if (target.empty()) throw std::invalid_argument("warmup_selftrain: the target split is empty");
  const long steps_per_round = static_cast<long>((target.size() + s.batch_joint - 1) /
                                                 s.batch_joint) *
                               s.warmup_epochs_per_round;
  const long total = steps_per_round * s.warmup_rounds;
  optim::Sgd sgd(g.trainable_parameters(), s.seg_momentum, s.seg_weight_decay);
  BatchSampler sampler(target.size(), s.batch_joint, derive_seed(cfg.seed, kWarmupTag));

  long it = 0;
  for (int round = 0; round < s.warmup_rounds; ++round) {
    const auto filtered =
        filter_pseudo_labels(pseudo_label(g, target), s.filter_keep_fraction, s.filter_scope);
    for (long k = 0; k < steps_per_round; ++k) {
      ++it;
      const auto idx = sampler.next();
      const auto imgs = gather(target, idx);
      const auto labs = gather(std::span<const LabelMap>(filtered), idx);
      const double lr = optim::poly_lr(s.seg_lr, it - 1, total, s.poly_power);
      sgd.zero_grad();
      const auto out = g.forward(to_var(imgs), Mode::kTrain);
      const auto flat = flatten(labs);
      const auto ce = loss::semantic_consistency_loss(out.probs, flat);
      const double v = ce.value.item();
      check_finite(v, "warmup", it);
      if (!ce.all_ignored) {
        ce.value.backward();
        sgd.step(lr);
      }
      if (should_log(it, total, s.log_interval)) {
        metrics::Row row{it, "warmup", {}};
        row.set("lr", lr).set("seg_total", v).set("seg_tgt", v);
        if (k == steps_per_round - 1 && hooks.evaluate) put_report(row, hooks.evaluate(g));
        emit(hooks, row);
      } else if (k == steps_per_round - 1 && hooks.evaluate) {
        metrics::Row row{it, "warmup", {}};
        put_report(row, hooks.evaluate(g));
        emit(hooks, row);
      }
    }
  }
}

// ------------------------------------------------------------ translation

Translator::Translator(nets::TranslationGenerator g, nets::MultiScalePatchDiscriminator d,
                       const config::Schedule& s)
    : gen(std::move(g)),
      disc(std::move(d)),
      opt_g(gen.parameters(), optim::AdamOptions{s.adam_beta1, s.adam_beta2, 1e-8}),
      opt_d(disc.parameters(), optim::AdamOptions{s.adam_beta1, s.adam_beta2, 1e-8}) {}

Translator Translator::fresh(const config::ExperimentConfig& cfg) {
  nets::TranslatorConfig tc;
  tc.num_classes = cfg.dataset.scene.num_classes;
  tc.seed = derive_seed(cfg.seed, 2);
  nets::DiscriminatorConfig dc;
  dc.seed = derive_seed(cfg.seed, 3);
  return Translator(nets::TranslationGenerator(tc), nets::MultiScalePatchDiscriminator(dc),
                    cfg.schedule);
}

TranslationLosses translation_step(Translator& t, nets::SegNet& teacher,
                                   const nets::PerceptualExtractor& phi,
                                   std::span<const Image> images,
                                   std::span<const LabelMap> teacher_labels,
                                   const config::ExperimentConfig& cfg, Rng& rng) {
  const auto& s = cfg.schedule;
  const auto w = cfg.translation_weights();
  const int C = cfg.dataset.scene.num_classes;
  const Var x = to_var(images);
  const Var cond = one_hot_batch(teacher_labels, C);

  t.gen.set_trainable(true);
  const auto code = t.gen.encode_latent(x);
  std::vector<double> eps(code.mu.size());
  for (double& e : eps) e = rng.normal();
  const Var z = nets::TranslationGenerator::reparameterize(code, eps);
  const Var fake = t.gen.translate(cond, z);

  TranslationLosses out;

  // Discriminator step on real vs. detached fake.
  t.disc.set_trainable(true);
  if (w.lambda_adv > 0 || w.lambda_f > 0) {
    t.opt_d.zero_grad();
    const auto real_out = t.disc.discriminate(x);
    const auto fake_out = t.disc.discriminate(ad::detach(fake));
    const auto rl = loss::logits_of(real_out);
    const auto fl = loss::logits_of(fake_out);
    const Var d_loss = loss::hinge_d_loss(rl, fl);
    out.d = d_loss.item();
    d_loss.backward();
    t.opt_d.step(s.disc_lr);
  }

  // Generator step with the discriminator held fixed.
  t.disc.set_trainable(false);
  t.opt_g.zero_grad();
  loss::TranslationTerms terms;
  if (w.lambda_p > 0) terms.perceptual = loss::perceptual_loss(phi, fake, x, cfg.weights.perceptual_layers);
  if (w.lambda_c > 0) {
    const auto probs = teacher.forward(fake, Mode::kEval).probs;
    const auto flat = flatten(teacher_labels);
    terms.consistency = loss::semantic_consistency_loss(probs, flat).value;
  }
  if (w.lambda_kld > 0) terms.kld = loss::kld_loss(code.mu, code.logvar);
  if (w.lambda_f > 0 || w.lambda_adv > 0) {
    const auto real_out = t.disc.discriminate(x);
    const auto fake_out = t.disc.discriminate(fake);
    if (w.lambda_f > 0) terms.feature_matching = loss::feature_matching_loss(real_out, fake_out);
    if (w.lambda_adv > 0) terms.adversarial = loss::hinge_g_loss(loss::logits_of(fake_out));
  }
  const Var total = loss::translation_loss(terms, w);
  out.total = total.item();
  out.p = value_or_zero(terms.perceptual);
  out.c = value_or_zero(terms.consistency);
  out.kld = value_or_zero(terms.kld);
  out.f = value_or_zero(terms.feature_matching);
  out.adv = value_or_zero(terms.adversarial);
  if (std::isfinite(out.total) && total.requires_grad()) {
    total.backward();
    t.opt_g.step(s.gen_lr);
  }
  t.disc.set_trainable(true);
  return out;
}

double holdout_consistency(Translator& t, nets::SegNet& teacher, std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("holdout_consistency: no held-out images");
  ad::NoGradGuard guard;
  const auto pl = pseudo_label(teacher, images);
  const int C = teacher.config().num_classes;
  double weighted = 0.0;
  std::size_t pixels = 0;
  constexpr std::size_t kChunk = 8;
  for (std::size_t i = 0; i < images.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - i);
    const auto labs = std::span<const LabelMap>(pl.labels).subspan(i, n);
    const Var fake = t.gen.translate(one_hot_batch(labs, C), t.gen.prior_mean(static_cast<int>(n)));
    const auto probs = teacher.forward(fake, Mode::kEval).probs;
    const auto flat = flatten(labs);
    weighted += loss::semantic_consistency_loss(probs, flat).value.item() *
                static_cast<double>(flat.size());
    pixels += flat.size();
  }
  return weighted / static_cast<double>(pixels);
}

namespace {

void put_translation(metrics::Row& row, const TranslationLosses& l) {
  row.set("loss_total", l.total)
      .set("l_p", l.p)
      .set("l_c", l.c)
      .set("l_kld", l.kld)
      .set("l_f", l.f)
      .set("l_adv", l.adv)
      .set("l_d", l.d);
}

}  // namespace

TranslationResult train_translation(Translator& t, nets::SegNet& teacher,
                                    std::span<const Image> target, std::span<const Image> holdout,
                                    const config::ExperimentConfig& cfg, const Hooks& hooks) {
  const auto& s = cfg.schedule;
  if (target.empty()) throw std::invalid_argument("train_translation: the target split is empty");
  teacher.freeze_all();
  const nets::PerceptualExtractor phi;
  const auto teacher_labels = pseudo_label(teacher, target).labels;
  BatchSampler sampler(target.size(), s.batch_translation, derive_seed(cfg.seed, kTranslationTag));
  Rng rng(derive_seed(cfg.seed, kTranslationTag + 1000));

  TranslationResult r;
  if (!holdout.empty()) {
    r.holdout_ce_initial = holdout_consistency(t, teacher, holdout);
    metrics::Row row{0, "translation", {}};
    row.set("holdout_ce", r.holdout_ce_initial);
    emit(hooks, row);
  }
  for (long it = 1; it <= s.iter_tr; ++it) {
    const auto idx = sampler.next();
    const auto imgs = gather(target, idx);
    const auto labs = gather(std::span<const LabelMap>(teacher_labels), idx);
    const auto l = translation_step(t, teacher, phi, imgs, labs, cfg, rng);
    check_finite(l.total, "translation", it);
    const bool log = should_log(it, s.iter_tr, s.log_interval);
    const bool probe = !holdout.empty() && (it % cfg.eval.eval_interval == 0 || it == s.iter_tr);
    if (log || probe) {
      metrics::Row row{it, "translation", {}};
      row.set("lr", s.gen_lr);
      put_translation(row, l);
      if (probe) {
        const double ce = holdout_consistency(t, teacher, holdout);
        row.set("holdout_ce", ce);
        if (it == s.iter_tr) r.holdout_ce_final = ce;
      }
      emit(hooks, row);
    }
    if (hooks.checkpoint && it % s.checkpoint_interval == 0 && it != s.iter_tr) hooks.checkpoint(it);
  }
  if (s.iter_tr == 0) r.holdout_ce_final = r.holdout_ce_initial;
  return r;
}

// ------------------------------------------------------------------ joint

SegmentationLosses segmentation_step(nets::SegNet& student, Translator& t,
                                     const nets::PerceptualExtractor& phi, optim::Sgd& sgd,
                                     double lr, std::span<const Image> images,
                                     std::span<const LabelMap> teacher_labels,
                                     std::span<const LabelMap> filtered,
                                     const config::ExperimentConfig& cfg) {
  const auto w = cfg.segmentation_weights();
  const int C = cfg.dataset.scene.num_classes;
  const int n = static_cast<int>(images.size());
  const Var x = to_var(images);

  t.gen.set_trainable(false);
  t.disc.set_trainable(false);
  sgd.zero_grad();

  loss::SegmentationTerms terms;
  const auto out = student.forward(x, Mode::kTrain);
  if (w.lambda_tgt > 0) {
    const auto flat = flatten(filtered);
    terms.target_ce = loss::semantic_consistency_loss(out.probs, flat).value;
  }
  if (w.lambda_pseg > 0 || w.lambda_f > 0 || w.lambda_kld > 0) {
    Var cond = out.probs;
    if (cfg.schedule.hard_onehot) {
      std::vector<LabelMap> hard;
      for (int i = 0; i < n; ++i) {
        hard.push_back(labels::argmax_labels(probmap_from_var(out.probs, i)).first);
      }
      cond = ad::straight_through(one_hot_batch(hard, C), out.probs);
    }
    const Var fake = t.gen.translate(cond, t.gen.prior_mean(n));
    if (w.lambda_pseg > 0) {
      terms.perceptual = loss::perceptual_loss(phi, fake, x, cfg.weights.perceptual_layers);
    }
    if (w.lambda_f > 0) terms.feature_matching = loss::feature_matching_loss(t.disc, x, fake);
    if (w.lambda_kld > 0) {
      const auto code = t.gen.encode_latent(fake);
      terms.kld = loss::kld_loss(code.mu, code.logvar);
    }
  }
  if (w.lambda_gen > 0) {
    Var generated;
    {
      ad::NoGradGuard guard;
      generated = t.gen.translate(one_hot_batch(teacher_labels, C), t.gen.prior_mean(n));
    }
    const auto gen_out = student.forward(generated, Mode::kTrain);
    const auto flat = flatten(teacher_labels);
    terms.generated_ce = loss::semantic_consistency_loss(gen_out.probs, flat).value;
  }

  const Var total = loss::segmentation_loss(terms, w);
  SegmentationLosses l;
  l.total = total.item();
  l.tgt = value_or_zero(terms.target_ce);
  l.gen = value_or_zero(terms.generated_ce);
  l.p = value_or_zero(terms.perceptual);
  l.f = value_or_zero(terms.feature_matching);
  l.kld = value_or_zero(terms.kld);
  if (std::isfinite(l.total) && total.requires_grad()) {
    total.backward();
    sgd.step(lr);
  }
  t.gen.set_trainable(true);
  t.disc.set_trainable(true);
  return l;
}

JointResult train_joint(Translator& t, nets::SegNet& student, nets::SegNet& teacher,
                        std::span<const Image> target, const config::ExperimentConfig& cfg,
                        const Hooks& hooks) {
  const auto& s = cfg.schedule;
  if (target.empty()) throw std::invalid_argument("train_joint: the target split is empty");
  teacher.freeze_all();
  if (!student.partially_frozen()) student.freeze_partial();
  const nets::PerceptualExtractor phi;

  // The teacher is fixed, so Y' and Y'' are computed once for the whole split.
  const auto pl = pseudo_label(teacher, target);
  const auto filtered = filter_pseudo_labels(pl, s.filter_keep_fraction, s.filter_scope);

  optim::Sgd sgd(student.trainable_parameters(), s.seg_momentum, s.seg_weight_decay);
  BatchSampler sampler(target.size(), s.batch_joint, derive_seed(cfg.seed, kJointTag));
  Rng rng(derive_seed(cfg.seed, kJointTag + 1000));

  JointResult result;
  for (long it = 1; it <= s.iter_joint; ++it) {
    const auto idx = sampler.next();
    const auto imgs = gather(target, idx);
    const auto y1 = gather(std::span<const LabelMap>(pl.labels), idx);
    const auto y2 = gather(std::span<const LabelMap>(filtered), idx);

    const std::size_t nt = std::min<std::size_t>(s.batch_translation, imgs.size());
    const auto tl = translation_step(t, teacher, phi, std::span<const Image>(imgs).first(nt),
                                     std::span<const LabelMap>(y1).first(nt), cfg, rng);
    check_finite(tl.total, "joint", it);

    const double lr = optim::poly_lr(s.seg_lr, it - 1, s.iter_joint, s.poly_power);
    const auto sl = segmentation_step(student, t, phi, sgd, lr, imgs, y1, y2, cfg);
    check_finite(sl.total, "joint", it);

    const bool log = should_log(it, s.iter_joint, s.log_interval);
    const bool ev = hooks.evaluate && (it % cfg.eval.eval_interval == 0 || it == s.iter_joint);
    if (log || ev) {
      metrics::Row row{it, "joint", {}};
      row.set("lr", lr);
      put_translation(row, tl);
      row.set("seg_total", sl.total)
          .set("seg_tgt", sl.tgt)
          .set("seg_gen", sl.gen)
          .set("seg_p", sl.p)
          .set("seg_f", sl.f)
          .set("seg_kld", sl.kld);
      if (ev) {
        result.final_report = hooks.evaluate(student);
        result.evaluated = true;
        put_report(row, result.final_report);
      }
      emit(hooks, row);
    }
    if (hooks.checkpoint && it % s.checkpoint_interval == 0 && it != s.iter_joint) {
      hooks.checkpoint(it);
    }
  }
  return result;
}

}  // namespace regen::train
