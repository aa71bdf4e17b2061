#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "regen/checkpoint.hpp"
#include "regen/losses.hpp"
#include "regen/nets.hpp"
#include "regen/optim.hpp"

using namespace regen;
using ad::Var;
using testing::gradcheck;
using testing::random_leaf;

TEST_SUITE("nets") {
  TEST_CASE("segnet produces normalised class probabilities") {
    nets::SegNet g({5, 1});
    Rng rng(1);
    const Var x = random_leaf({2, 3, 64, 64}, rng, 0.5, false);
    const auto out = g.forward(x, nets::Mode::kEval);
    CHECK(out.logits.shape() == ad::Shape{2, 5, 64, 64});
    const auto p = out.probs.value();
    for (int n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 64 * 64; ++i) {
        double s = 0;
        for (int c = 0; c < 5; ++c) s += p[(n * 5 + c) * 4096 + i];
        CHECK(std::abs(s - 1.0) < 1e-5);
      }
    CHECK_THROWS_AS(g.forward(random_leaf({1, 3, 12, 16}, rng), nets::Mode::kEval), std::invalid_argument);
  }

  TEST_CASE("a clone is independent and initially identical") {
    nets::SegNet g({5, 2});
    auto h = g.clone();
    Rng rng(2);
    const Var x = random_leaf({1, 3, 16, 16}, rng, 0.5, false);
    const auto a = g.forward(x, nets::Mode::kEval).probs;
    const auto b = h.forward(x, nets::Mode::kEval).probs;
    CHECK(std::equal(a.value().begin(), a.value().end(), b.value().begin()));
    h.tensors()[0].data[0] += 1.0;
    CHECK(g.tensors()[0].data[0] != h.tensors()[0].data[0]);
  }

  TEST_CASE("freeze_partial leaves only the last decoder block and head trainable") {
    nets::SegNet g({5, 3});
    g.freeze_partial();
    CHECK(g.trainable_count() < g.parameter_count());
    const auto frozen_before = ckpt::tensors_hash([&] {
      std::vector<nets::TensorRef> out;
      const auto names = g.frozen_tensor_names();
      for (auto& t : g.tensors()) if (std::find(names.begin(), names.end(), t.name) != names.end()) out.push_back(t);
      return out;
    }());
    optim::Sgd sgd(g.trainable_parameters(), 0.9, 5e-4);
    Rng rng(3);
    std::vector<std::uint8_t> labels(2 * 16 * 16);
    for (auto& v : labels) v = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
    for (int step = 0; step < 3; ++step) {
      sgd.zero_grad();
      const Var x = random_leaf({2, 3, 16, 16}, rng, 0.5, false);
      const auto out = g.forward(x, nets::Mode::kTrain);
      loss::semantic_consistency_loss(out.probs, labels).value.backward();
      sgd.step(0.1);
    }
    std::vector<nets::TensorRef> frozen;
    const auto names = g.frozen_tensor_names();
    for (auto& t : g.tensors()) if (std::find(names.begin(), names.end(), t.name) != names.end()) frozen.push_back(t);
    CHECK(ckpt::tensors_hash(frozen) == frozen_before);
  }

  TEST_CASE("frozen parameters receive no gradient") {
    nets::SegNet g({5, 4});
    g.freeze_partial();
    Rng rng(4);
    const Var x = random_leaf({2, 3, 16, 16}, rng, 0.5, false);
    std::vector<std::uint8_t> labels(2 * 256, 1);
    loss::semantic_consistency_loss(g.forward(x, nets::Mode::kTrain).probs, labels).value.backward();
    std::size_t with_grad = 0;
    for (const auto& p : g.trainable_parameters()) with_grad += !p.grad().empty();
    CHECK(with_grad == g.trainable_parameters().size());
    nets::SegNet full({5, 4});
    full.freeze_partial();
    loss::semantic_consistency_loss(full.forward(x, nets::Mode::kTrain).probs, labels).value.backward();
    // Trainable set is exactly six tensors: dec1 conv/bn and head.
    CHECK(full.trainable_parameters().size() == 6);
  }

  TEST_CASE("translator output is bounded, deterministic and checks its input") {
    nets::TranslationGenerator t({5, 64, 4, 5});
    Rng rng(5);
    Var labels = random_leaf({2, 5, 16, 16}, rng, 1.0, false);
    const Var z = random_leaf({2, 64, 1, 1}, rng, 1.0, false);
    const auto a = t.translate(labels, z);
    const auto b = t.translate(labels, z);
    CHECK(a.shape() == ad::Shape{2, 3, 16, 16});
    CHECK(std::equal(a.value().begin(), a.value().end(), b.value().begin()));
    for (double v : a.value()) CHECK((v >= -1.0 && v <= 1.0));
    CHECK_THROWS_AS(t.translate(random_leaf({1, 4, 16, 16}, rng), t.prior_mean(1)), std::invalid_argument);
  }

  TEST_CASE("latent encoder emits 64-dim codes and z = mu at eps = 0") {
    nets::TranslationGenerator t({5, 64, 4, 6});
    Rng rng(6);
    const Var x = random_leaf({1, 3, 16, 16}, rng, 0.5, false);
    const auto code = t.encode_latent(x);
    CHECK(code.mu.shape() == ad::Shape{1, 64, 1, 1});
    CHECK(code.logvar.shape() == ad::Shape{1, 64, 1, 1});
    const std::vector<double> zero(64, 0.0);
    const auto z = nets::TranslationGenerator::reparameterize(code, zero);
    CHECK(std::equal(z.value().begin(), z.value().end(), code.mu.value().begin()));
  }

  TEST_CASE("dz/dmu is the identity") {
    Rng rng(7);
    Var mu = random_leaf({1, 8, 1, 1}, rng);
    Var lv = random_leaf({1, 8, 1, 1}, rng, 0.3);
    std::vector<double> eps(8);
    for (double& e : eps) e = rng.normal();
    for (int k = 0; k < 8; ++k) {
      auto r = gradcheck([&] {
        const auto z = nets::TranslationGenerator::reparameterize({mu, lv}, eps);
        return ad::slice_channels(z, k, k + 1);
      }, {mu, lv});
      CHECK(r.ok());
      mu.zero_grad();
      const auto z = nets::TranslationGenerator::reparameterize({mu, lv}, eps);
      ad::slice_channels(z, k, k + 1).backward();
      for (int j = 0; j < 8; ++j) CHECK(mu.grad()[j] == (j == k ? 1.0 : 0.0));
    }
  }

  TEST_CASE("discriminator exposes three features and a smaller logit map per scale") {
    nets::MultiScalePatchDiscriminator d({2, 8});
    Rng rng(8);
    const Var x = random_leaf({1, 3, 32, 32}, rng, 0.5, false);
    const auto a = d.discriminate(x);
    const auto b = d.discriminate(x);
    REQUIRE(a.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
      CHECK(a[s].features.size() == 3);
      CHECK(a[s].logits.shape().h < 32);
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::equal(a[s].features[i].value().begin(), a[s].features[i].value().end(),
                         b[s].features[i].value().begin()));
      }
    }
  }

  TEST_CASE("perceptual extractor: stage sizes and seeded weights") {
    const nets::PerceptualExtractor phi, again;
    Rng rng(9);
    const Var x = random_leaf({1, 3, 32, 32}, rng, 0.5, false);
    const auto f = phi.features(x);
    const auto g = again.features(x);
    REQUIRE(f.size() == 5);
    const int ch[] = {8, 16, 32, 64, 64};
    for (int i = 0; i < 5; ++i) {
      CHECK(f[i].shape().c == ch[i]);
      CHECK(f[i].shape().h == 32 >> i);
      CHECK(std::equal(f[i].value().begin(), f[i].value().end(), g[i].value().begin()));
    }
  }

  TEST_CASE("forward passes are differentiable w.r.t. trainable parameters") {
    Rng rng(10);
    nets::SegNet g({5, 11});
    g.freeze_partial();
    const Var x = random_leaf({2, 3, 8, 8}, rng, 0.5, false);
    const Var probe = random_leaf({2, 5, 8, 8}, rng, 1.0, false);
    // ReLU follows dec1; a 1e-4 step crosses the kink at a few pixels, a 1e-6 step does not.
    const auto seg = gradcheck([&] { return ad::sum(ad::mul(g.forward(x, nets::Mode::kEval).logits, probe)); },
                               g.trainable_parameters(), 1e-6);
    INFO(seg.worst_where, " failed ", seg.failed, " of ", seg.checked);
    CHECK(seg.ok());

    nets::TranslationGenerator t({5, 64, 4, 12});
    const Var cond = random_leaf({1, 5, 8, 8}, rng, 1.0, false);
    const Var z = random_leaf({1, 64, 1, 1}, rng, 1.0, false);
    const Var img_probe = random_leaf({1, 3, 8, 8}, rng, 1.0, false);
    // Checking every generator weight is slow; a few tensors along the path suffice.
    const auto params = t.parameters();
    const auto refs = t.tensors();
    std::vector<Var> picked;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      for (const char* name : {"content.in0.weight", "content.latent_proj.weight",
                               "content.res2.conv1.weight", "content.out.bias"}) {
        if (refs[i].name == name) picked.push_back(params[i]);
      }
    }
    REQUIRE(picked.size() == 4);
    CHECK(gradcheck([&] { return ad::sum(ad::mul(t.translate(cond, z), img_probe)); }, picked).ok());
  }
}
