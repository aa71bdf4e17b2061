#pragma once

// Training objectives. Each term returns a scalar ad::Var so that it can be
// both logged and differentiated; the weighted combinations skip terms whose
// weight is zero, which is how individual terms are switched off.

#include <array>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "regen/nets.hpp"

namespace regen::loss {

inline constexpr std::array<double, 5> kPerceptualLayerWeights = {1.0 / 32, 1.0 / 16, 1.0 / 8,
                                                                  1.0 / 4, 1.0};

struct TranslationWeights {
  double lambda_p = 2.0;
  double lambda_c = 3.0;
  double lambda_kld = 0.05;
  double lambda_f = 1.0;
  double lambda_adv = 1.0;
};

struct SegmentationWeights {
  double lambda_tgt = 1.0;
  double lambda_gen = 3.0;
  double lambda_pseg = 10.0;
  double lambda_f = 1.0;
  double lambda_kld = 0.05;
};

struct LossWeights {
  TranslationWeights translation;
  SegmentationWeights segmentation;
  std::vector<double> perceptual_layers{kPerceptualLayerWeights.begin(),
                                        kPerceptualLayerWeights.end()};

  void validate() const;
};

using FeatureFn = std::function<std::vector<ad::Var>(const ad::Var&)>;

// sum_i w_i * mean|phi_i(a) - phi_i(b)|.
ad::Var perceptual_loss(const FeatureFn& phi, const ad::Var& a, const ad::Var& b,
                        std::span<const double> layer_weights);
ad::Var perceptual_loss(const nets::PerceptualExtractor& phi, const ad::Var& a, const ad::Var& b,
                        std::span<const double> layer_weights);

struct ConsistencyLoss {
  ad::Var value;
  bool all_ignored = false;  // every pixel carried the ignore label; value is 0
};

// Mean over non-ignore pixels of -log p(label).
ConsistencyLoss semantic_consistency_loss(const ad::Var& probs,
                                          std::span<const std::uint8_t> labels);

// Sum over scales and layers of mean|D_i(real) - D_i(fake)|, given features
// already computed; gradients reach only the fake side.
ad::Var feature_matching_loss(const std::vector<nets::ScaleOutput>& real,
                              const std::vector<nets::ScaleOutput>& fake);
ad::Var feature_matching_loss(nets::MultiScalePatchDiscriminator& disc, const ad::Var& real,
                              const ad::Var& fake);

// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar), summed over every element.
ad::Var kld_loss(const ad::Var& mu, const ad::Var& logvar);

// Averaged over scales: mean(relu(1 - real)) + mean(relu(1 + fake)).
ad::Var hinge_d_loss(std::span<const ad::Var> real_logits, std::span<const ad::Var> fake_logits);
// Averaged over scales: -mean(fake).
ad::Var hinge_g_loss(std::span<const ad::Var> fake_logits);

std::vector<ad::Var> logits_of(const std::vector<nets::ScaleOutput>& outs);

struct TranslationTerms {
  ad::Var perceptual;
  ad::Var consistency;
  ad::Var kld;
  ad::Var feature_matching;
  ad::Var adversarial;  // hinge generator term
};

struct SegmentationTerms {
  ad::Var target_ce;      // CE(G(X_tgt), Y'')
  ad::Var generated_ce;   // CE(G(X'_tgt), Y')
  ad::Var perceptual;     // L_p(X''_tgt, X_tgt)
  ad::Var feature_matching;
  ad::Var kld;
};

// Weighted total; undefined terms are allowed only where the weight is zero.
ad::Var translation_loss(const TranslationTerms& t, const TranslationWeights& w);
ad::Var segmentation_loss(const SegmentationTerms& t, const SegmentationWeights& w);

}  // namespace regen::loss
