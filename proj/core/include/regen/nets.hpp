#pragma once

// Desk-scale networks: segmentation net, label-conditioned translation
// generator with a latent image encoder, multi-scale patch discriminator and a
// frozen perceptual feature extractor.
//
// Networks own their parameters through shared ad::Var handles, so they are
// move-only; use clone() for an independent deep copy.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "regen/ops.hpp"
#include "regen/types.hpp"

namespace regen::nets {

// Named view of one parameter or buffer, valid while the owning net lives.
struct TensorRef {
  std::string name;
  ad::Shape shape;
  std::span<double> data;
  bool is_param = true;
};

class ParamStore {
 public:
  ad::Var add(const std::string& name, ad::Shape shape, std::vector<double> init);
  std::vector<ad::Var> all() const;
  std::vector<ad::Var> trainable() const;
  std::vector<TensorRef> refs() const;
  std::size_t count() const;
  std::size_t trainable_count() const;

 private:
  std::vector<std::pair<std::string, ad::Var>> params_;
};

struct Conv {
  ad::Var weight;
  ad::Var bias;
  ad::Conv2dOptions opt;
  ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, weight, bias, opt); }
};

struct InstanceNorm {
  ad::Var gamma;
  ad::Var beta;
  ad::Var operator()(const ad::Var& x) const { return ad::instance_norm(x, gamma, beta); }
};

struct BatchNorm {
  std::string name;
  ad::Var gamma;
  ad::Var beta;
  ad::BatchNormState state;
};

// Seeded He-normal initialisation helpers bound to a ParamStore.
class Builder {
 public:
  Builder(ParamStore& store, std::uint64_t seed) : store_(store), seed_(seed) {}
  Conv conv(const std::string& name, int cin, int cout, int k = 3, int stride = 1);
  InstanceNorm inorm(const std::string& name, int ch);
  BatchNorm bnorm(const std::string& name, int ch);
  struct Linear {
    ad::Var weight;
    ad::Var bias;
    ad::Var operator()(const ad::Var& x) const { return ad::linear(x, weight, bias); }
  };
  Linear linear(const std::string& name, int din, int dout, double weight_std);

 private:
  std::vector<double> normal(std::size_t n, double std);
  ParamStore& store_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

enum class Mode { kTrain, kEval };

struct SegNetConfig {
  int num_classes = 5;
  std::uint64_t seed = 0;
};

struct SegOutput {
  ad::Var logits;  // (N,C,H,W)
  ad::Var probs;   // softmax over channels
};

class SegNet {
 public:
  explicit SegNet(SegNetConfig cfg);
  SegNet(SegNet&&) = default;
  SegNet& operator=(SegNet&&) = default;
  SegNet(const SegNet&) = delete;
  SegNet& operator=(const SegNet&) = delete;

  SegNet clone() const;

  // Input (N,3,H,W) with H, W divisible by 8. In kTrain mode, batch-norm
  // layers that are still trainable use batch statistics.
  SegOutput forward(const ad::Var& images, Mode mode);

  // Leaves only the final decoder block and the classifier head trainable.
  void freeze_partial();
  // Excludes every parameter from gradient computation.
  void freeze_all();
  bool partially_frozen() const { return partial_; }

  std::vector<ad::Var> trainable_parameters() const { return store_.trainable(); }
  std::vector<TensorRef> tensors();
  std::size_t parameter_count() const { return store_.count(); }
  std::size_t trainable_count() const { return store_.trainable_count(); }
  const SegNetConfig& config() const { return cfg_; }

  // Names of the tensors frozen by freeze_partial().
  std::vector<std::string> frozen_tensor_names();

 private:
  ad::Var block(const Conv& conv, BatchNorm& bn, const ad::Var& x, Mode mode);

  SegNetConfig cfg_;
  ParamStore store_;
  Conv stem_, s1a_, s1b_, s2a_, s2b_, s3a_, s3b_, d3_, d2_, d1_, head_;
  BatchNorm bn_stem_, bn_s1a_, bn_s1b_, bn_s2a_, bn_s2b_, bn_s3a_, bn_s3b_, bn_d3_, bn_d2_, bn_d1_;
  bool partial_ = false;
};

struct TranslatorConfig {
  int num_classes = 5;
  int latent_dim = 64;
  int residual_blocks = 4;
  std::uint64_t seed = 0;
};

struct LatentCode {
  ad::Var mu;      // (N,D,1,1)
  ad::Var logvar;  // (N,D,1,1)
};

class TranslationGenerator {
 public:
  explicit TranslationGenerator(TranslatorConfig cfg);
  TranslationGenerator(TranslationGenerator&&) = default;
  TranslationGenerator& operator=(TranslationGenerator&&) = default;
  TranslationGenerator(const TranslationGenerator&) = delete;
  TranslationGenerator& operator=(const TranslationGenerator&) = delete;

  TranslationGenerator clone() const;

  // label_input: (N,C,H,W) hard or soft one-hot; latent: (N,D,1,1).
  ad::Var translate(const ad::Var& label_input, const ad::Var& latent);
  LatentCode encode_latent(const ad::Var& images);
  // z = mu + exp(0.5 logvar) * eps; eps all-zero gives z = mu.
  static ad::Var reparameterize(const LatentCode& code, std::span<const double> eps);
  // Prior mean (all-zero latent) for a batch of n.
  ad::Var prior_mean(int n) const;

  void set_trainable(bool on);
  std::vector<ad::Var> parameters() const { return store_.all(); }
  std::vector<TensorRef> tensors() { return store_.refs(); }
  const TranslatorConfig& config() const { return cfg_; }

 private:
  TranslatorConfig cfg_;
  ParamStore store_;
  Conv in0_, in1_, in2_;
  InstanceNorm n0_, n1_, n2_;
  Builder::Linear latent_proj_;
  std::vector<Conv> res_conv_;
  std::vector<InstanceNorm> res_norm_;
  Conv up1_, up0_, out_;
  InstanceNorm nu1_, nu0_;
  Conv e0_, e1_, e2_;
  InstanceNorm ne0_, ne1_, ne2_;
  Builder::Linear mu_head_, logvar_head_;
};

struct DiscriminatorConfig {
  int scales = 2;
  std::uint64_t seed = 0;
};

struct ScaleOutput {
  std::vector<ad::Var> features;  // N = 3 intermediate activations
  ad::Var logits;                 // patch logit map
};

class MultiScalePatchDiscriminator {
 public:
  explicit MultiScalePatchDiscriminator(DiscriminatorConfig cfg);
  MultiScalePatchDiscriminator(MultiScalePatchDiscriminator&&) = default;
  MultiScalePatchDiscriminator& operator=(MultiScalePatchDiscriminator&&) = default;
  MultiScalePatchDiscriminator(const MultiScalePatchDiscriminator&) = delete;
  MultiScalePatchDiscriminator& operator=(const MultiScalePatchDiscriminator&) = delete;

  MultiScalePatchDiscriminator clone() const;

  std::vector<ScaleOutput> discriminate(const ad::Var& images);

  void set_trainable(bool on);
  std::vector<ad::Var> parameters() const { return store_.all(); }
  std::vector<TensorRef> tensors() { return store_.refs(); }
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  struct Scale {
    Conv c0, c1, c2, logit;
    InstanceNorm n1, n2;
  };
  DiscriminatorConfig cfg_;
  ParamStore store_;
  std::vector<Scale> scales_;
};

// Feature extractor with five stages; stage i runs at 1/2^(i-1) of the input
// resolution. Weights are drawn once from `seed` and never trained.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = 0x9E77);
  PerceptualExtractor(PerceptualExtractor&&) = default;
  PerceptualExtractor& operator=(PerceptualExtractor&&) = default;

  std::vector<ad::Var> features(const ad::Var& images) const;
  std::vector<TensorRef> tensors() { return store_.refs(); }

 private:
  ParamStore store_;
  std::vector<Conv> stages_;
};

// Copies every tensor of `from` into the same-named tensor of `to`.
void copy_tensors(std::vector<TensorRef> from, std::vector<TensorRef> to);

}  // namespace regen::nets
