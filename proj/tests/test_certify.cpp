#include <doctest.h>

#include <random>

#include "patchguard/certify.hpp"
#include "support.hpp"

using namespace patchguard;
using testing::prediction_tensor;
using testing::random_logits;

namespace {

FeatureTensor logits_row(const std::vector<std::vector<double>>& per_class) {
  const std::size_t n = per_class.size(), cols = per_class[0].size();
  std::vector<double> v(cols * n);
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t k = 0; k < n; ++k) v[c * n + k] = per_class[k][c];
  return FeatureTensor(1, cols, n, FeatureKind::logits, std::move(v));
}

}  // namespace

TEST_SUITE("certify") {
  TEST_CASE("wrong-class bound examples") {
    const Grid g(2, 2, {1.0, 2.0, 3.0, 4.0});
    CHECK(lemma1_bound(g, {0, 0, 1, 1}, 0.0) == 9.0);
    CHECK(lemma1_bound(g, {1, 1, 1, 1}, 0.5) == 12.0);
    CHECK_THROWS_AS(lemma1_bound(g, {0, 0, 1, 1}, 1.0), ContractViolation);
  }

  TEST_CASE("oversized-mask bound uses the heaviest covering mask window") {
    const Grid g(1, 4, {0.0, 5.0, 1.0, 1.0});
    const Window w{0, 0, 1, 1};
    // Only cols 0-1 cover col 0; the remaining evidence is 2.
    CHECK(lemma2_bound(g, w, {1, 2}, 0.0) == 2.0);
    CHECK(lemma1_bound(g, w, 0.0) == 7.0);
    double worst_l1 = 0.0;
    for (const Window& v : enumerate_windows(g.shape(), {1, 2}))
      worst_l1 = std::max(worst_l1, lemma1_bound(g, v, 0.0));
    CHECK(worst_l1 == 5.0);
    CHECK(lemma2_bound(g, w, {1, 2}, 0.0) < worst_l1);
    for (const Window& v : enumerate_windows(g.shape(), {1, 1}))
      CHECK(lemma2_bound(g, v, {1, 1}, 0.25) == lemma1_bound(g, v, 0.25));
  }

  TEST_CASE("lower-index wrong class wins ties") {
    // True class 1 has 2 per cell, class 0 has 1 per cell; 1x1 mask, T = 0.
    const auto t = logits_row({{1, 1, 1}, {2, 2, 2}});
    MaskingConfig cfg;
    const auto r = certify_masking(t, 1, cfg);
    CHECK(r.true_lower == 2.0);
    CHECK(r.wrong_upper[0] == 2.0);
    CHECK_FALSE(r.certified);
    CHECK(r.worst_window == Window{0, 0, 1, 1});

    // The attack that realizes the tie: zero the true class in cell 0.
    const auto adv = logits_row({{1, 1, 1}, {0, 2, 2}});
    const auto out = robust_masking(adv, cfg);
    CHECK(out.evidence[0] == out.evidence[1]);
    CHECK(out.predicted == 0);

    CHECK(certify_masking(t, 1, cfg, CertOptions{true, false}).certified);

    const auto swapped = logits_row({{2, 2, 2}, {1, 1, 1}});
    CHECK(certify_masking(swapped, 0, cfg).certified);
  }

  TEST_CASE("defeats comparison") {
    CHECK(defeats(0, 2.0, 1, 2.0));
    CHECK_FALSE(defeats(2, 2.0, 1, 2.0));
    CHECK(defeats(2, 2.5, 1, 2.0));
    CHECK_FALSE(defeats(0, 2.0, 1, 2.0, CertOptions{true, false}));
  }

  TEST_CASE("lower bound covers detections triggered inside the window") {
    const Grid g(1, 6, {1.0, 1.0, 1.0, 1.0, 0.0, 0.0});
    const Window w{0, 4, 1, 2};
    CHECK(true_class_lower_bound(g, w, {1, 2}, 0.5, CertOptions{false, true}) == 4.0);
    CHECK(true_class_lower_bound(g, w, {1, 2}, 0.5) == 3.0);
    // The adversary writes 10 into cell 4; detection then removes cells 3-4.
    Grid attacked = g;
    attacked(0, 4) = 10.0;
    std::optional<Window> det;
    CHECK(masked_evidence(attacked, 0.5, {1, 2}, &det) == 3.0);
    CHECK(det == Window{0, 3, 1, 2});
  }

  TEST_CASE("top-k certification") {
    // Three classes on 1x6 cells: 0,0,0,1,1,1. True class 0, 1x1 mask.
    const auto t = prediction_tensor(1, 6, 3, {0, 0, 0, 1, 1, 1});
    MaskingConfig cfg;
    const auto r = certify_masking(t, 0, cfg);
    CHECK(r.true_lower == 1.0);
    CHECK(r.wrong_upper[1] == 3.0);
    CHECK(r.wrong_upper[2] == 0.0);
    CHECK(r.max_defeating == 1);
    CHECK_FALSE(certify_topk(t, 0, cfg, 1));
    CHECK(certify_topk(t, 0, cfg, 2));
    CHECK(certify_topk(t, 0, cfg, 3));
    CHECK_THROWS_AS(certify_topk(t, 0, cfg, 0), ContractViolation);
  }

  TEST_CASE("top-k is monotone in k") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 60; ++trial) {
      const auto t = random_logits(rng, 4, 4, 5, -1.0, 3.0);
      MaskingConfig cfg;
      cfg.mask_shape = {2, 2};
      cfg.threshold = (trial % 3) * 0.2;
      bool prev = false;
      for (std::size_t k = 1; k <= 5; ++k) {
        const bool now = certify_topk(t, trial % 5, cfg, k);
        CHECK((!prev || now));
        prev = now;
      }
      CHECK(prev);
    }
  }

  TEST_CASE("equal mask and window reduce oversized certification to the plain one") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 40; ++trial) {
      const auto t = random_logits(rng, 5, 4, 3);
      MaskingConfig cfg;
      cfg.mask_shape = {2, std::size_t(1 + trial % 2)};
      cfg.threshold = (trial % 4) * 0.1;
      const auto a = certify_masking(t, trial % 3, cfg);
      const auto b = certify_oversized(t, trial % 3, cfg.mask_shape, cfg);
      CHECK(a.certified == b.certified);
      CHECK(a.true_lower == b.true_lower);
      CHECK(a.wrong_upper == b.wrong_upper);
      CHECK(a.max_defeating == b.max_defeating);
    }
  }

  TEST_CASE("oversized masks need a mask at least as large as the window") {
    const auto t = prediction_tensor(3, 3, 2, {0, 0, 0, 0, 0, 0, 0, 0, 1});
    MaskingConfig cfg;
    cfg.mask_shape = {1, 1};
    CHECK_THROWS_AS(certify_oversized(t, 0, {2, 2}, cfg), ContractViolation);
    cfg.mask_shape = {2, 2};
    CHECK(certify_oversized(t, 0, {1, 1}, cfg).certified);
  }

  TEST_CASE("certification rejects unsupported configurations") {
    const auto t = prediction_tensor(2, 2, 2, {0, 0, 0, 1});
    MaskingConfig cfg;
    cfg.threshold = 1.0;
    CHECK_THROWS_AS(certify_masking(t, 0, cfg), ContractViolation);
    cfg.threshold = 0.0;
    cfg.clip = TanhClip{};
    CHECK_THROWS_AS(certify_masking(t, 0, cfg), ContractViolation);
    cfg.clip = ClipBounds{-1.0, std::nullopt};
    CHECK_THROWS_AS(certify_masking(t, 0, cfg), ContractViolation);
    cfg.clip = ClipBounds{0.0, std::nullopt};
    CHECK_THROWS_AS(certify_masking(t, 2, cfg), ContractViolation);
  }

  TEST_CASE("majority vote certificate") {
    std::vector<Label> a(13, 0), b(14, 0);
    for (std::size_t i = 10; i < 13; ++i) a[i] = 1;
    for (std::size_t i = 10; i < 14; ++i) b[i] = 1;
    CHECK(ds_certify(prediction_tensor(1, 13, 2, a), 0, 3));
    CHECK_FALSE(ds_certify(prediction_tensor(1, 14, 2, b), 0, 3));
    CHECK_FALSE(ds_certify(prediction_tensor(1, 13, 2, a), 1, 0));
  }

  TEST_CASE("vote sequence defeats majority voting but not masking") {
    // C C W C C W C C W C C with C = 0: any three consecutive cells hold one W.
    const auto t = prediction_tensor(1, 11, 2, {0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0});
    CHECK_FALSE(ds_certify(t, 0, 3));
    MaskingConfig cfg;
    cfg.mask_shape = {1, 3};
    const auto r = certify_masking(t, 0, cfg);
    CHECK(r.certified);
    CHECK(r.true_lower == 4.0);
    CHECK(r.wrong_upper[1] == 2.0);
  }

  TEST_CASE("clipped logits certificate") {
    // Each cell gives tanh(4) to class 0 and tanh(-6) to class 1.
    const auto t = logits_row({{100, 100, 100}, {-100, -100, -100}});
    CHECK(cbn_certify(t, 0, {1, 1}));
    CHECK(cbn_certify(t, 0, {1, 1}, CbnMode::location_free));
    CHECK_FALSE(cbn_certify(t, 0, {1, 2}));
    CHECK_FALSE(cbn_certify(t, 0, {1, 2}, CbnMode::location_free));
    CHECK_FALSE(cbn_certify(t, 1, {1, 1}));
  }
}
