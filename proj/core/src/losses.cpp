#include "regen/losses.hpp"

#include <stdexcept>

#include "regen/ops.hpp"

namespace regen::loss {

using ad::Var;

namespace {

Var combine(std::initializer_list<std::pair<const Var*, double>> terms, const char* what) {
  std::vector<Var> vars;
  std::vector<double> weights;
  for (const auto& [v, w] : terms) {
    if (w == 0.0) continue;
    if (!v->defined()) throw std::invalid_argument(std::string(what) + ": missing enabled term");
    vars.push_back(*v);
    weights.push_back(w);
  }
  if (vars.empty()) return Var::scalar(0.0);
  return ad::weighted_sum(vars, weights);
}

}  // namespace

void LossWeights::validate() const {
  const double all[] = {translation.lambda_p,     translation.lambda_c,     translation.lambda_kld,
                        translation.lambda_f,     translation.lambda_adv,   segmentation.lambda_tgt,
                        segmentation.lambda_gen,  segmentation.lambda_pseg, segmentation.lambda_f,
                        segmentation.lambda_kld};
  for (double w : all) {
    if (w < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  }
  if (perceptual_layers.size() != 5) {
    throw std::invalid_argument("perceptual layer weights must have length 5");
  }
  for (double w : perceptual_layers) {
    if (w < 0.0) throw std::invalid_argument("perceptual layer weights must be non-negative");
  }
}

Var perceptual_loss(const FeatureFn& phi, const Var& a, const Var& b,
                    std::span<const double> layer_weights) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument("perceptual_loss: shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  }
  const auto fa = phi(a);
  const auto fb = phi(b);
  if (fa.size() != layer_weights.size()) {
    throw std::invalid_argument("perceptual_loss: " + std::to_string(fa.size()) +
                                " feature layers but " + std::to_string(layer_weights.size()) +
                                " weights");
  }
  std::vector<Var> terms;
  for (std::size_t i = 0; i < fa.size(); ++i) terms.push_back(ad::mean_abs_diff(fa[i], fb[i]));
  return ad::weighted_sum(terms, layer_weights);
}

Var perceptual_loss(const nets::PerceptualExtractor& phi, const Var& a, const Var& b,
                    std::span<const double> layer_weights) {
  return perceptual_loss([&phi](const Var& x) { return phi.features(x); }, a, b, layer_weights);
}

ConsistencyLoss semantic_consistency_loss(const Var& probs, std::span<const std::uint8_t> labels) {
  ConsistencyLoss out;
  out.value = ad::nll_of_probs(probs, labels, kIgnoreIndex);
  out.all_ignored = true;
  for (std::uint8_t y : labels) {
    if (y != kIgnoreIndex) {
      out.all_ignored = false;
      break;
    }
  }
  return out;
}

Var feature_matching_loss(const std::vector<nets::ScaleOutput>& real,
                          const std::vector<nets::ScaleOutput>& fake) {
  if (real.size() != fake.size()) throw std::invalid_argument("feature_matching_loss: scale mismatch");
  std::vector<Var> terms;
  for (std::size_t s = 0; s < real.size(); ++s) {
    if (real[s].features.size() != fake[s].features.size()) {
      throw std::invalid_argument("feature_matching_loss: layer mismatch");
    }
    for (std::size_t i = 0; i < real[s].features.size(); ++i) {
      terms.push_back(ad::mean_abs_diff(ad::detach(real[s].features[i]), fake[s].features[i]));
    }
  }
  std::vector<double> ones(terms.size(), 1.0);
  return ad::weighted_sum(terms, ones);
}

Var feature_matching_loss(nets::MultiScalePatchDiscriminator& disc, const Var& real,
                          const Var& fake) {
  if (!(real.shape() == fake.shape())) {
    throw std::invalid_argument("feature_matching_loss: shape mismatch " + real.shape().str() +
                                " vs " + fake.shape().str());
  }
  std::vector<nets::ScaleOutput> real_out;
  {
    ad::NoGradGuard no_grad;
    real_out = disc.discriminate(real);
  }
  return feature_matching_loss(real_out, disc.discriminate(fake));
}

Var kld_loss(const Var& mu, const Var& logvar) {
  if (!(mu.shape() == logvar.shape())) throw std::invalid_argument("kld_loss: shape mismatch");
  // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
  Var inner = ad::sub(ad::add(ad::mul(mu, mu), ad::exp(logvar)), ad::add_scalar(logvar, 1.0));
  return ad::scale(ad::sum(inner), 0.5);
}

Var hinge_d_loss(std::span<const Var> real_logits, std::span<const Var> fake_logits) {
  if (real_logits.size() != fake_logits.size() || real_logits.empty()) {
    throw std::invalid_argument("hinge_d_loss: scale count mismatch");
  }
  std::vector<Var> terms;
  for (std::size_t s = 0; s < real_logits.size(); ++s) {
    terms.push_back(ad::mean(ad::relu(ad::add_scalar(ad::scale(real_logits[s], -1.0), 1.0))));
    terms.push_back(ad::mean(ad::relu(ad::add_scalar(fake_logits[s], 1.0))));
  }
  std::vector<double> w(terms.size(), 1.0 / static_cast<double>(real_logits.size()));
  return ad::weighted_sum(terms, w);
}

Var hinge_g_loss(std::span<const Var> fake_logits) {
  if (fake_logits.empty()) throw std::invalid_argument("hinge_g_loss: no scales");
  std::vector<Var> terms;
  for (const auto& l : fake_logits) terms.push_back(ad::mean(l));
  std::vector<double> w(terms.size(), -1.0 / static_cast<double>(fake_logits.size()));
  return ad::weighted_sum(terms, w);
}

std::vector<Var> logits_of(const std::vector<nets::ScaleOutput>& outs) {
  std::vector<Var> out;
  for (const auto& o : outs) out.push_back(o.logits);
  return out;
}

Var translation_loss(const TranslationTerms& t, const TranslationWeights& w) {
  return combine({{&t.perceptual, w.lambda_p},
                  {&t.consistency, w.lambda_c},
                  {&t.kld, w.lambda_kld},
                  {&t.feature_matching, w.lambda_f},
                  {&t.adversarial, w.lambda_adv}},
                 "translation_loss");
}

Var segmentation_loss(const SegmentationTerms& t, const SegmentationWeights& w) {
  return combine({{&t.target_ce, w.lambda_tgt},
                  {&t.generated_ce, w.lambda_gen},
                  {&t.perceptual, w.lambda_pseg},
                  {&t.feature_matching, w.lambda_f},
                  {&t.kld, w.lambda_kld}},
                 "segmentation_loss");
}

}  // namespace regen::loss
