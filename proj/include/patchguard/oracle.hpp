#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "patchguard/aggregate.hpp"
#include "patchguard/certify.hpp"
#include "patchguard/tensor.hpp"

namespace patchguard {

/// A small feature-space instance that can be attacked exhaustively.
struct OracleScenario {
  Shape grid{3, 3};
  std::size_t classes = 2;
  FeatureKind kind = FeatureKind::prediction;
  Shape window{1, 1};  // malicious window shape
  MaskingConfig config;
  // Values an adversary may write into one (cell, class) entry; logits only.
  std::vector<double> levels;
  std::uint64_t budget = 10'000'000;
};

/// Number of adversarial tensors enumerate_adversaries visits for one window.
std::uint64_t adversary_count(const OracleScenario& scenario, const Window& window);

/// Level set for logits adversaries: the clip floor, the clip ceiling (or 10x
/// the largest clean value when unbounded), half of that ceiling, and for
/// T > 0 every class's Case IV evasion total t*T/(1-T), exactly and nudged
/// just below.
std::vector<double> logits_levels(const FeatureTensor& clean, const Window& window,
                                  const MaskingConfig& config);

/// Visits every adversarial tensor that differs from `clean` only inside
/// `window`: every one-hot assignment (prediction kind) or every level-set
/// assignment per (cell, class) (other kinds). The visitor returns false to
/// stop early. Throws BudgetExceeded before visiting anything if the count
/// exceeds scenario.budget.
void enumerate_adversaries(const FeatureTensor& clean, const Window& window,
                           const OracleScenario& scenario,
                           const std::function<bool(const FeatureTensor&)>& visit);

enum class LemmaCase { I = 0, II = 1, III = 2, IV = 3 };

/// Which branch of the wrong-class bound case analysis the detection on `adversarial`
/// realizes for class `k` and malicious window `window`.
LemmaCase classify_case(const FeatureTensor& adversarial, const Window& window, Label k,
                        const MaskingConfig& config);

struct Lemma1Report {
  std::vector<double> max_observed;  // per class, over all enumerated adversaries
  std::vector<double> bound;         // per class
  bool holds = true;
  std::array<std::size_t, 4> cases{};  // how often each case occurred
  // True if some class hit its bound within 1e-9 through a Case IV evasion.
  bool case_iv_attained = false;
  std::uint64_t evaluations = 0;
};

/// Exhaustively checks that no adversary confined to `window` pushes any
/// class's masked evidence above the wrong-class bound. Each class slice is
/// enumerated on its own (masked evidence of a class depends only on its
/// slice); prediction-kind slices range over {0,1}, others over the level set.
Lemma1Report verify_lemma1(const FeatureTensor& clean, const Window& window,
                           const MaskingConfig& config, const OracleScenario& scenario);

struct Lemma2Report {
  bool holds = true;       // observed masked evidence <= oversized-mask bound
  bool dominates = true;   // oversized-mask bound <= wrong-class bound at mask shape
  double max_gap = 0.0;    // largest gap between the plain and oversized-mask bounds seen
  std::uint64_t evaluations = 0;
};

/// wrong-class bound check generalized to masks larger than the malicious window,
/// over every malicious window of `malicious_shape`.
Lemma2Report verify_lemma2(const FeatureTensor& clean, Shape malicious_shape,
                           const MaskingConfig& config, const OracleScenario& scenario);

struct SoundnessReport {
  std::size_t trials = 0;
  std::size_t certified = 0;
  std::size_t violations = 0;
  std::uint64_t adversaries = 0;
};

/// Random certify-then-attack trials: whenever the clean tensor certifies,
/// every adversary in every malicious window must leave robust masking's
/// prediction at the true label.
SoundnessReport verify_soundness(std::uint64_t seed, std::size_t trials,
                                 const CertOptions& opts = {});

/// Seeded random scenario + clean tensor + true label, as used by the corpora.
struct RandomInstance {
  OracleScenario scenario;
  FeatureTensor clean;
  Label label = 0;
};

enum class CorpusKind { lemma1, lemma2, soundness };

RandomInstance random_instance(std::mt19937_64& rng, CorpusKind kind);

/// Totals over a seeded scenario corpus.
struct CorpusReport {
  std::size_t scenarios = 0;
  std::size_t failures = 0;            // scenarios whose bound was exceeded
  std::size_t dominance_failures = 0;  // oversized-mask corpus only
  std::uint64_t evaluations = 0;
  std::array<std::size_t, 4> cases{};
  bool case_iv_attained = false;
  double max_gap = 0.0;  // oversized-mask corpus only
};

/// `count` scenarios drawn from std::mt19937_64(seed); each checks the wrong-class bound
/// at one random window position.
CorpusReport lemma1_corpus(std::uint64_t seed, std::size_t count);

/// `count` oversized-mask scenarios drawn from std::mt19937_64(seed).
CorpusReport lemma2_corpus(std::uint64_t seed, std::size_t count);

}  // namespace patchguard
