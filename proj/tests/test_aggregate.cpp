#include <doctest.h>

#include <cmath>
#include <random>

#include "patchguard/aggregate.hpp"
#include "support.hpp"

using namespace patchguard;
using testing::prediction_tensor;
using testing::random_logits;
using testing::random_prediction;

TEST_SUITE("aggregate") {
  TEST_CASE("robust masking on a 3x3 vote map") {
    // Class 1 fills the top-left 2x2 block, class 0 the remaining five cells.
    const auto t = prediction_tensor(3, 3, 2, {1, 1, 0, 1, 1, 0, 0, 0, 0});
    MaskingConfig cfg;
    cfg.mask_shape = {2, 2};
    const auto out = robust_masking(t, cfg);
    CHECK(out.evidence[1] == 0.0);
    CHECK(out.evidence[0] == 2.0);
    CHECK(out.predicted == 0);
    REQUIRE(out.detected[1].has_value());
    CHECK(*out.detected[1] == Window{0, 0, 2, 2});
    REQUIRE(out.detected[0].has_value());
    CHECK(*out.detected[0] == Window{1, 1, 2, 2});
  }

  TEST_CASE("detection threshold") {
    const Grid g(1, 4, {4.0, 1.0, 1.0, 0.0});
    CHECK(detect(g, 0.0, {1, 1}) == Window{0, 0, 1, 1});
    CHECK(detect(g, 0.5, {1, 1}) == Window{0, 0, 1, 1});
    // 4/6 is not above 2/3 + a bit.
    CHECK_FALSE(detect(g, 0.7, {1, 1}).has_value());
    CHECK_FALSE(detect(g, 1.0, {1, 1}).has_value());
    CHECK_FALSE(detect(Grid(2, 2, 0.0), 0.0, {1, 1}).has_value());
    CHECK_THROWS_AS(detect(Grid(1, 2, {-1.0, 1.0}), 0.0, {1, 1}), ContractViolation);
  }

  TEST_CASE("masked evidence without detection is the full sum") {
    const Grid g(2, 2, {1.0, 1.0, 1.0, 1.0});
    std::optional<Window> w = Window{};
    CHECK(masked_evidence(g, 0.5, {1, 1}, &w) == 4.0);
    CHECK_FALSE(w.has_value());
    CHECK(masked_evidence(g, 0.0, {1, 1}, &w) == 3.0);
    CHECK(w == Window{0, 0, 1, 1});
  }

  TEST_CASE("class ties go to the lowest index") {
    const auto t = prediction_tensor(1, 2, 3, {2, 1});
    MaskingConfig cfg;
    cfg.threshold = 1.0;
    CHECK(robust_masking(t, cfg).predicted == 1);
  }

  TEST_CASE("masking config validation") {
    MaskingConfig cfg;
    cfg.threshold = 1.5;
    CHECK_THROWS_AS(robust_masking(prediction_tensor(1, 1, 2, {0}), cfg), ContractViolation);
    cfg.threshold = 0.0;
    cfg.mask_shape = {3, 1};
    CHECK_THROWS_AS(robust_masking(prediction_tensor(2, 2, 2, {0, 0, 0, 0}), cfg),
                    ContractViolation);
  }

  TEST_CASE("majority vote and abstention") {
    const auto t = prediction_tensor(2, 2, 3, {2, 2, 0, 1});
    const auto v = ds_majority(t);
    CHECK(v.predicted == 2);
    CHECK(v.counts == std::vector<std::size_t>{1, 1, 2});

    const FeatureTensor conf(1, 3, 2, FeatureKind::confidence,
                             {0.55, 0.45, 0.1, 0.9, 0.2, 0.8});
    CHECK(ds_majority(conf).predicted == 1);
    const auto abstained = ds_majority(conf, 0.6);
    CHECK(abstained.counts == std::vector<std::size_t>{0, 2});
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(ds_majority(random_logits(rng, 2, 2, 2)), ContractViolation);
  }

  TEST_CASE("tanh clip aggregate and mean aggregate") {
    CHECK(TanhClip{}.apply(20.0) == doctest::Approx(0.0));
    CHECK(TanhClip{}.apply(0.0) == doctest::Approx(std::tanh(-1.0)));
    const FeatureTensor t(1, 2, 2, FeatureKind::logits, {100.0, 0.0, -100.0, 1.0});
    // Means: class 0 = 0, class 1 = 0.5.
    CHECK(mean_aggregate(t) == 1);
    // tanh sums: class 0 = tanh(4) + tanh(-6), class 1 = tanh(-1) + tanh(-0.95).
    const double s0 = std::tanh(4.0) + std::tanh(-6.0);
    const double s1 = std::tanh(-1.0) + std::tanh(-0.95);
    CHECK(cbn_aggregate(t) == (s0 >= s1 ? 0u : 1u));
  }

  TEST_CASE("reductions to the baselines") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      const auto p = random_prediction(rng, 1 + trial % 5, 2 + trial % 4, 2 + trial % 5);
      MaskingConfig cfg;
      cfg.threshold = 1.0;
      CHECK(robust_masking(p, cfg).predicted == ds_majority(p).predicted);

      const auto l = random_logits(rng, 3, 3, 4, -40.0, 60.0);
      MaskingConfig tanh_cfg;
      tanh_cfg.clip = TanhClip{};
      tanh_cfg.threshold = 1.0;
      CHECK(robust_masking(l, tanh_cfg).predicted == cbn_aggregate(l));
    }
  }
}
