#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "regen/eval.hpp"
#include "regen/rng.hpp"

using namespace regen;

namespace {

// mIoU from explicit pixel sets: |{p: gt=c and pred=c}| / |{p: gt=c or pred=c}|
// over non-ignore pixels, classes with an empty union left out.
double oracle_miou(const std::vector<std::pair<LabelMap, LabelMap>>& pairs, int classes) {
  double sum = 0;
  int defined = 0;
  for (int c = 0; c < classes; ++c) {
    std::set<std::pair<std::size_t, std::size_t>> inter, uni;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& [pred, gt] = pairs[k];
      for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt.data[i] == kIgnoreIndex) continue;
        const bool g = gt.data[i] == c, p = pred.data[i] == c;
        if (g && p) inter.insert({k, i});
        if (g || p) uni.insert({k, i});
      }
    }
    if (uni.empty()) continue;
    sum += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    ++defined;
  }
  return sum / defined;
}

LabelMap random_map(Rng& rng, int classes, double ignore_rate) {
  LabelMap m(8, 8);
  for (auto& v : m.data) {
    v = rng.uniform() < ignore_rate ? kIgnoreIndex : static_cast<std::uint8_t>(rng.uniform_int(0, classes - 1));
  }
  return m;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("hand case cm=[[3,1],[2,4]]") {
    const eval::ConfusionMatrix cm(2, {3, 1, 2, 4});
    const auto r = eval::iou(cm);
    CHECK(*r.per_class[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(*r.per_class[1] == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
    CHECK(r.miou == doctest::Approx(0.5357).epsilon(1e-4));
    CHECK(r.pixel_accuracy == doctest::Approx(0.7));
  }

  TEST_CASE("accumulate ignores ignore pixels and matches a double loop") {
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
      const auto pred = random_map(rng, 5, 0.0);
      const auto gt = random_map(rng, 5, 0.2);
      eval::ConfusionMatrix cm(5);
      cm.accumulate(pred, gt);
      std::vector<std::uint64_t> ref(25, 0);
      std::uint64_t valid = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          if (gt.at(y, x) == kIgnoreIndex) continue;
          ++ref[gt.at(y, x) * 5 + pred.at(y, x)];
          ++valid;
        }
      CHECK(cm.counts() == ref);
      CHECK(cm.total() == valid);
    }
    eval::ConfusionMatrix cm(5);
    cm.accumulate(LabelMap(8, 8, 1), LabelMap(8, 8, kIgnoreIndex));
    CHECK(cm.total() == 0);
    CHECK_THROWS_AS(cm.accumulate(LabelMap(8, 8), LabelMap(4, 8)), std::invalid_argument);
  }

  TEST_CASE("mIoU equals the set-intersection oracle on random pairs") {
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
      const std::vector<std::pair<LabelMap, LabelMap>> pairs{{random_map(rng, 5, 0.0), random_map(rng, 5, 0.15)}};
      eval::ConfusionMatrix cm(5);
      cm.accumulate(pairs[0].first, pairs[0].second);
      CHECK(eval::iou(cm).miou == oracle_miou(pairs, 5));
    }
  }

  TEST_CASE("perfect and disjoint predictions") {
    Rng rng(3);
    const auto gt = random_map(rng, 5, 0.1);
    eval::ConfusionMatrix cm(5);
    cm.accumulate(gt, gt);
    for (const auto& v : eval::iou(cm).per_class) {
      if (v) CHECK(*v == 1.0);
    }
    CHECK(eval::iou(cm).miou == 1.0);
    eval::ConfusionMatrix wrong(2);
    wrong.accumulate(LabelMap(4, 4, 1), LabelMap(4, 4, 0));
    CHECK(*eval::iou(wrong).per_class[0] == 0.0);
  }

  TEST_CASE("undefined classes are excluded or counted as zero by policy") {
    eval::ConfusionMatrix cm(3);
    cm.accumulate(LabelMap(2, 2, 0), LabelMap(2, 2, 0));
    const auto ex = eval::iou(cm);
    CHECK_FALSE(ex.per_class[1].has_value());
    CHECK(ex.miou == 1.0);
    const auto zero = eval::iou(cm, {}, eval::UndefinedPolicy::kCountZero);
    CHECK(zero.miou == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("subset masks select classes and an empty subset is an error") {
    const eval::ConfusionMatrix cm(2, {3, 1, 2, 4});
    const bool only1[] = {false, true};
    CHECK(eval::iou(cm, only1).miou == doctest::Approx(4.0 / 7.0));
    const bool none[] = {false, false};
    CHECK_THROWS_AS(eval::iou(cm, none), std::invalid_argument);
  }

  TEST_CASE("accumulation is order independent and permutation invariant") {
    Rng rng(4);
    std::vector<std::pair<LabelMap, LabelMap>> pairs;
    for (int i = 0; i < 6; ++i) pairs.push_back({random_map(rng, 5, 0.0), random_map(rng, 5, 0.1)});
    eval::ConfusionMatrix fwd(5), rev(5);
    for (const auto& [p, g] : pairs) fwd.accumulate(p, g);
    for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) rev.accumulate(it->first, it->second);
    CHECK(fwd == rev);

    const std::uint8_t perm[5] = {3, 0, 4, 1, 2};
    eval::ConfusionMatrix permuted(5);
    for (auto [p, g] : pairs) {
      for (auto& v : p.data) v = perm[v];
      for (auto& v : g.data) if (v != kIgnoreIndex) v = perm[v];
      permuted.accumulate(p, g);
    }
    CHECK(eval::iou(permuted).miou == doctest::Approx(eval::iou(fwd).miou).epsilon(1e-15));
  }
}
