#include "regen/nets.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "regen/rng.hpp"

namespace regen::nets {

using ad::Shape;
using ad::Var;

// ------------------------------------------------------------- ParamStore

Var ParamStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  for (const auto& [n, _] : params_) {
    if (n == name) throw std::logic_error("duplicate parameter name " + name);
  }
  Var v = Var::leaf(shape, std::move(init), /*requires_grad=*/true);
  params_.emplace_back(name, v);
  return v;
}

std::vector<Var> ParamStore::all() const {
  std::vector<Var> out;
  for (const auto& [_, v] : params_) out.push_back(v);
  return out;
}

std::vector<Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const auto& [_, v] : params_)
    if (v.requires_grad()) out.push_back(v);
  return out;
}

std::vector<TensorRef> ParamStore::refs() const {
  std::vector<TensorRef> out;
  for (const auto& [n, v] : params_) {
    Var handle = v;
    out.push_back({n, v.shape(), handle.mutable_value(), true});
  }
  return out;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.size();
  return n;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_)
    if (v.requires_grad()) n += v.size();
  return n;
}

// ---------------------------------------------------------------- Builder

std::vector<double> Builder::normal(std::size_t n, double std) {
  Rng rng(derive_seed(seed_, counter_++));
  std::vector<double> out(n);
  for (double& v : out) v = std * rng.normal();
  return out;
}

Conv Builder::conv(const std::string& name, int cin, int cout, int k, int stride) {
  const double std = std::sqrt(2.0 / (cin * k * k));
  Conv c;
  c.weight = store_.add(name + ".weight", Shape{cout, cin, k, k},
                        normal(static_cast<std::size_t>(cout) * cin * k * k, std));
  c.bias = store_.add(name + ".bias", Shape{1, cout, 1, 1}, std::vector<double>(cout, 0.0));
  c.opt = ad::Conv2dOptions{stride, k / 2, ad::Padding::kReflect};
  return c;
}

InstanceNorm Builder::inorm(const std::string& name, int ch) {
  return {store_.add(name + ".gamma", Shape{1, ch, 1, 1}, std::vector<double>(ch, 1.0)),
          store_.add(name + ".beta", Shape{1, ch, 1, 1}, std::vector<double>(ch, 0.0))};
}

BatchNorm Builder::bnorm(const std::string& name, int ch) {
  BatchNorm bn;
  bn.name = name;
  bn.gamma = store_.add(name + ".gamma", Shape{1, ch, 1, 1}, std::vector<double>(ch, 1.0));
  bn.beta = store_.add(name + ".beta", Shape{1, ch, 1, 1}, std::vector<double>(ch, 0.0));
  bn.state.running_mean.assign(ch, 0.0);
  bn.state.running_var.assign(ch, 1.0);
  return bn;
}

Builder::Linear Builder::linear(const std::string& name, int din, int dout, double weight_std) {
  return {store_.add(name + ".weight", Shape{dout, din, 1, 1},
                     normal(static_cast<std::size_t>(dout) * din, weight_std)),
          store_.add(name + ".bias", Shape{1, dout, 1, 1}, std::vector<double>(dout, 0.0))};
}

void copy_tensors(std::vector<TensorRef> from, std::vector<TensorRef> to) {
  std::map<std::string, const TensorRef*> index;
  for (const auto& t : from) index[t.name] = &t;
  for (auto& t : to) {
    auto it = index.find(t.name);
    if (it == index.end()) throw std::runtime_error("copy_tensors: missing tensor " + t.name);
    if (it->second->data.size() != t.data.size()) {
      throw std::runtime_error("copy_tensors: size mismatch for " + t.name);
    }
    std::copy(it->second->data.begin(), it->second->data.end(), t.data.begin());
  }
}

// ----------------------------------------------------------------- SegNet

SegNet::SegNet(SegNetConfig cfg) : cfg_(cfg) {
  if (cfg_.num_classes < 2) throw std::invalid_argument("SegNet: need at least 2 classes");
  Builder b(store_, cfg_.seed);
  stem_ = b.conv("stem", 3, 16);
  bn_stem_ = b.bnorm("stem.bn", 16);
  s1a_ = b.conv("enc1.down", 16, 16, 3, 2);
  bn_s1a_ = b.bnorm("enc1.down.bn", 16);
  s1b_ = b.conv("enc1.conv", 16, 16);
  bn_s1b_ = b.bnorm("enc1.conv.bn", 16);
  s2a_ = b.conv("enc2.down", 16, 32, 3, 2);
  bn_s2a_ = b.bnorm("enc2.down.bn", 32);
  s2b_ = b.conv("enc2.conv", 32, 32);
  bn_s2b_ = b.bnorm("enc2.conv.bn", 32);
  s3a_ = b.conv("enc3.down", 32, 64, 3, 2);
  bn_s3a_ = b.bnorm("enc3.down.bn", 64);
  s3b_ = b.conv("enc3.conv", 64, 64);
  bn_s3b_ = b.bnorm("enc3.conv.bn", 64);
  d3_ = b.conv("dec3.conv", 64, 32);
  bn_d3_ = b.bnorm("dec3.bn", 32);
  d2_ = b.conv("dec2.conv", 32, 16);
  bn_d2_ = b.bnorm("dec2.bn", 16);
  d1_ = b.conv("dec1.conv", 16, 16);
  bn_d1_ = b.bnorm("dec1.bn", 16);
  head_ = b.conv("head", 16, cfg_.num_classes, 1);
}

SegNet SegNet::clone() const {
  SegNet out(cfg_);
  auto& self = const_cast<SegNet&>(*this);
  copy_tensors(self.tensors(), out.tensors());
  auto src = store_.all();
  auto dst = out.store_.all();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].set_requires_grad(src[i].requires_grad());
  out.partial_ = partial_;
  return out;
}

Var SegNet::block(const Conv& conv, BatchNorm& bn, const Var& x, Mode mode) {
  const bool batch_stats = mode == Mode::kTrain && bn.gamma.requires_grad();
  return ad::relu(ad::batch_norm(conv(x), bn.gamma, bn.beta, bn.state, batch_stats));
}

SegOutput SegNet::forward(const Var& images, Mode mode) {
  const Shape s = images.shape();
  if (s.c != 3) throw std::invalid_argument("SegNet: expected 3 input channels, got " + s.str());
  if (s.h % 8 != 0 || s.w % 8 != 0) {
    throw std::invalid_argument("SegNet: spatial size must be divisible by 8, got " + s.str());
  }
  const Var f0 = block(stem_, bn_stem_, images, mode);
  const Var f1 = block(s1b_, bn_s1b_, block(s1a_, bn_s1a_, f0, mode), mode);
  const Var f2 = block(s2b_, bn_s2b_, block(s2a_, bn_s2a_, f1, mode), mode);
  const Var f3 = block(s3b_, bn_s3b_, block(s3a_, bn_s3a_, f2, mode), mode);
  const Var u2 = ad::add(block(d3_, bn_d3_, ad::upsample_nearest2x(f3), mode), f2);
  const Var u1 = ad::add(block(d2_, bn_d2_, ad::upsample_nearest2x(u2), mode), f1);
  const Var u0 = ad::add(block(d1_, bn_d1_, ad::upsample_nearest2x(u1), mode), f0);
  Var logits = head_(u0);
  Var probs = ad::softmax_channels(logits);
  return {std::move(logits), std::move(probs)};
}

std::vector<std::string> SegNet::frozen_tensor_names() {
  std::vector<std::string> names;
  for (const auto& t : tensors()) {
    if (t.name.starts_with("dec1.") || t.name.starts_with("head.")) continue;
    names.push_back(t.name);
  }
  return names;
}

void SegNet::freeze_partial() {
  for (auto& v : store_.all()) v.set_requires_grad(false);
  for (const Var& v : {d1_.weight, d1_.bias, bn_d1_.gamma, bn_d1_.beta, head_.weight, head_.bias}) {
    Var(v).set_requires_grad(true);
  }
  partial_ = true;
}

void SegNet::freeze_all() {
  for (auto& v : store_.all()) v.set_requires_grad(false);
}

std::vector<TensorRef> SegNet::tensors() {
  auto refs = store_.refs();
  for (BatchNorm* bn : {&bn_stem_, &bn_s1a_, &bn_s1b_, &bn_s2a_, &bn_s2b_, &bn_s3a_, &bn_s3b_,
                        &bn_d3_, &bn_d2_, &bn_d1_}) {
    const int ch = static_cast<int>(bn->state.running_mean.size());
    refs.push_back({bn->name + ".running_mean", Shape{1, ch, 1, 1}, bn->state.running_mean, false});
    refs.push_back({bn->name + ".running_var", Shape{1, ch, 1, 1}, bn->state.running_var, false});
  }
  return refs;
}

// --------------------------------------------------- TranslationGenerator

TranslationGenerator::TranslationGenerator(TranslatorConfig cfg) : cfg_(cfg) {
  Builder b(store_, cfg_.seed);
  const int C = cfg_.num_classes;
  in0_ = b.conv("content.in0", C, 16);
  n0_ = b.inorm("content.in0.norm", 16);
  in1_ = b.conv("content.in1", 16, 32, 3, 2);
  n1_ = b.inorm("content.in1.norm", 32);
  in2_ = b.conv("content.in2", 32, 32, 3, 2);
  n2_ = b.inorm("content.in2.norm", 32);
  latent_proj_ = b.linear("content.latent_proj", cfg_.latent_dim, 32, 0.1);
  for (int r = 0; r < cfg_.residual_blocks; ++r) {
    const std::string p = "content.res" + std::to_string(r);
    res_conv_.push_back(b.conv(p + ".conv0", 32, 32));
    res_norm_.push_back(b.inorm(p + ".norm0", 32));
    res_conv_.push_back(b.conv(p + ".conv1", 32, 32));
    res_norm_.push_back(b.inorm(p + ".norm1", 32));
  }
  up1_ = b.conv("content.up1", 32, 16);
  nu1_ = b.inorm("content.up1.norm", 16);
  up0_ = b.conv("content.up0", 16, 16);
  nu0_ = b.inorm("content.up0.norm", 16);
  out_ = b.conv("content.out", 16, 3);

  e0_ = b.conv("latent.enc0", 3, 16, 3, 2);
  ne0_ = b.inorm("latent.enc0.norm", 16);
  e1_ = b.conv("latent.enc1", 16, 32, 3, 2);
  ne1_ = b.inorm("latent.enc1.norm", 32);
  e2_ = b.conv("latent.enc2", 32, 32, 3, 2);
  ne2_ = b.inorm("latent.enc2.norm", 32);
  mu_head_ = b.linear("latent.mu", 32, cfg_.latent_dim, 0.05);
  logvar_head_ = b.linear("latent.logvar", 32, cfg_.latent_dim, 0.05);
}

TranslationGenerator TranslationGenerator::clone() const {
  TranslationGenerator out(cfg_);
  copy_tensors(store_.refs(), out.store_.refs());
  auto src = store_.all();
  auto dst = out.store_.all();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].set_requires_grad(src[i].requires_grad());
  return out;
}

Var TranslationGenerator::translate(const Var& label_input, const Var& latent) {
  const Shape s = label_input.shape();
  if (s.c != cfg_.num_classes) {
    throw std::invalid_argument("translate: label input has " + std::to_string(s.c) +
                                " channels, generator configured for " +
                                std::to_string(cfg_.num_classes));
  }
  if (s.h % 4 != 0 || s.w % 4 != 0) {
    throw std::invalid_argument("translate: spatial size must be divisible by 4, got " + s.str());
  }
  if (latent.shape() != Shape{s.n, cfg_.latent_dim, 1, 1}) {
    throw std::invalid_argument("translate: latent shape " + latent.shape().str());
  }
  auto act = [](const Var& x) { return ad::leaky_relu(x, 0.2); };
  Var h = act(n0_(in0_(label_input)));
  h = act(n1_(in1_(h)));
  h = act(n2_(in2_(h)));
  h = ad::add_spatial(h, latent_proj_(latent));
  for (int r = 0; r < cfg_.residual_blocks; ++r) {
    Var y = act(res_norm_[2 * r](res_conv_[2 * r](h)));
    y = res_norm_[2 * r + 1](res_conv_[2 * r + 1](y));
    h = ad::add(h, y);
  }
  h = act(nu1_(up1_(ad::upsample_nearest2x(h))));
  h = act(nu0_(up0_(ad::upsample_nearest2x(h))));
  return ad::tanh(out_(h));
}

LatentCode TranslationGenerator::encode_latent(const Var& images) {
  auto act = [](const Var& x) { return ad::leaky_relu(x, 0.2); };
  Var h = act(ne0_(e0_(images)));
  h = act(ne1_(e1_(h)));
  h = act(ne2_(e2_(h)));
  h = ad::global_avg_pool(h);
  return {mu_head_(h), logvar_head_(h)};
}

Var TranslationGenerator::reparameterize(const LatentCode& code, std::span<const double> eps) {
  if (eps.size() != code.mu.size()) throw std::invalid_argument("reparameterize: eps size mismatch");
  Var noise = Var::leaf(code.mu.shape(), std::vector<double>(eps.begin(), eps.end()));
  return ad::add(code.mu, ad::mul(ad::exp(ad::scale(code.logvar, 0.5)), noise));
}

Var TranslationGenerator::prior_mean(int n) const {
  return Var::zeros(Shape{n, cfg_.latent_dim, 1, 1});
}

void TranslationGenerator::set_trainable(bool on) {
  for (auto& v : store_.all()) v.set_requires_grad(on);
}

// ------------------------------------------ MultiScalePatchDiscriminator

MultiScalePatchDiscriminator::MultiScalePatchDiscriminator(DiscriminatorConfig cfg) : cfg_(cfg) {
  if (cfg_.scales < 1) throw std::invalid_argument("discriminator needs at least one scale");
  Builder b(store_, cfg_.seed);
  for (int s = 0; s < cfg_.scales; ++s) {
    const std::string p = "scale" + std::to_string(s);
    Scale sc;
    sc.c0 = b.conv(p + ".conv0", 3, 16, 3, 2);
    sc.c1 = b.conv(p + ".conv1", 16, 32, 3, 2);
    sc.n1 = b.inorm(p + ".norm1", 32);
    sc.c2 = b.conv(p + ".conv2", 32, 64, 3, 2);
    sc.n2 = b.inorm(p + ".norm2", 64);
    sc.logit = b.conv(p + ".logit", 64, 1);
    scales_.push_back(std::move(sc));
  }
}

MultiScalePatchDiscriminator MultiScalePatchDiscriminator::clone() const {
  MultiScalePatchDiscriminator out(cfg_);
  copy_tensors(store_.refs(), out.store_.refs());
  auto src = store_.all();
  auto dst = out.store_.all();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].set_requires_grad(src[i].requires_grad());
  return out;
}

std::vector<ScaleOutput> MultiScalePatchDiscriminator::discriminate(const Var& images) {
  std::vector<ScaleOutput> out;
  Var x = images;
  for (std::size_t s = 0; s < scales_.size(); ++s) {
    if (s > 0) x = ad::avg_pool2x(x);
    const Scale& sc = scales_[s];
    ScaleOutput o;
    Var h = ad::smooth_leaky_relu(sc.c0(x), 0.2);
    o.features.push_back(h);
    h = ad::smooth_leaky_relu(sc.n1(sc.c1(h)), 0.2);
    o.features.push_back(h);
    h = ad::smooth_leaky_relu(sc.n2(sc.c2(h)), 0.2);
    o.features.push_back(h);
    o.logits = sc.logit(h);
    out.push_back(std::move(o));
  }
  return out;
}

void MultiScalePatchDiscriminator::set_trainable(bool on) {
  for (auto& v : store_.all()) v.set_requires_grad(on);
}

// ----------------------------------------------------- PerceptualExtractor

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed) {
  Builder b(store_, seed);
  const int channels[5] = {8, 16, 32, 64, 64};
  int cin = 3;
  for (int i = 0; i < 5; ++i) {
    stages_.push_back(b.conv("phi" + std::to_string(i + 1), cin, channels[i], 3, i == 0 ? 1 : 2));
    cin = channels[i];
  }
  for (auto& v : store_.all()) v.set_requires_grad(false);
}

std::vector<Var> PerceptualExtractor::features(const Var& images) const {
  std::vector<Var> out;
  Var h = images;
  for (const auto& stage : stages_) {
    h = ad::smooth_leaky_relu(stage(h), 0.0);
    out.push_back(h);
  }
  return out;
}

}  // namespace regen::nets
