#include <fstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "regen/checkpoint.hpp"
#include "regen/ops.hpp"
#include "tiny.hpp"

using namespace regen;
using ad::Var;

TEST_SUITE("checkpoint") {
  TEST_CASE("sha256 of known strings") {
    CHECK(ckpt::sha256_hex(std::string()) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(ckpt::sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("save then restore reproduces every network exactly") {
    const auto dir = testing::scratch_dir("ckpt_roundtrip");
    Rng rng(3);
    nets::SegNet g({5, 11});
    nets::TranslationGenerator t({5, 64, 4, 12});
    nets::MultiScalePatchDiscriminator d({2, 13});
    // Perturb running statistics so that non-parameter tensors are exercised too.
    const Var x = testing::random_leaf({2, 3, 16, 16}, rng, 1.0, false);
    g.forward(x, nets::Mode::kTrain);

    const auto path = dir / "all.ckpt";
    ckpt::save(path, {{"phase", "test"}, {"iteration", 7}},
               {{"seg.", g.tensors()}, {"gen.", t.tensors()}, {"disc.", d.tensors()}});

    nets::SegNet g2({5, 99});
    nets::TranslationGenerator t2({5, 64, 4, 98});
    nets::MultiScalePatchDiscriminator d2({2, 97});
    const auto c = ckpt::load(path);
    CHECK(c.meta["phase"] == "test");
    CHECK(c.meta["iteration"] == 7);
    c.restore("seg.", g2.tensors());
    c.restore("gen.", t2.tensors());
    c.restore("disc.", d2.tensors());
    CHECK(ckpt::tensors_hash(g2.tensors()) == ckpt::tensors_hash(g.tensors()));
    CHECK(ckpt::tensors_hash(t2.tensors()) == ckpt::tensors_hash(t.tensors()));
    CHECK(ckpt::tensors_hash(d2.tensors()) == ckpt::tensors_hash(d.tensors()));

    const Var la = g.forward(x, nets::Mode::kEval).logits;
    const Var lb = g2.forward(x, nets::Mode::kEval).logits;
    const auto a = la.value();
    const auto b = lb.value();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    const Var cond = testing::random_leaf({1, 5, 16, 16}, rng, 1.0, false);
    const Var z = Var::zeros({1, 64, 1, 1});
    const Var ia = t.translate(cond, z);
    const Var ib = t2.translate(cond, z);
    const auto ta = ia.value();
    const auto tb = ib.value();
    CHECK(std::equal(ta.begin(), ta.end(), tb.begin(), tb.end()));
  }

  TEST_CASE("restoring into a mismatched network fails with the tensor name") {
    const auto dir = testing::scratch_dir("ckpt_mismatch");
    nets::SegNet g({5, 1});
    ckpt::save(dir / "g.ckpt", {}, {{"seg.", g.tensors()}});
    const auto c = ckpt::load(dir / "g.ckpt");
    nets::SegNet other({4, 1});
    try {
      c.restore("seg.", other.tensors());
      FAIL("restore accepted a shape mismatch");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("head.") != std::string::npos);
    }
    CHECK_THROWS(c.restore("gen.", other.tensors()));
  }

  TEST_CASE("corrupt files are rejected") {
    const auto dir = testing::scratch_dir("ckpt_corrupt");
    std::ofstream(dir / "bad.ckpt") << "NOTACKPT";
    CHECK_THROWS(ckpt::load(dir / "bad.ckpt"));
    CHECK_THROWS(ckpt::load(dir / "missing.ckpt"));
    nets::SegNet g({5, 1});
    ckpt::save(dir / "g.ckpt", {}, {{"seg.", g.tensors()}});
    std::filesystem::resize_file(dir / "g.ckpt", std::filesystem::file_size(dir / "g.ckpt") - 8);
    CHECK_THROWS(ckpt::load(dir / "g.ckpt"));
  }
}
