#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "patchguard/aggregate.hpp"
#include "patchguard/geometry.hpp"
#include "patchguard/model.hpp"

namespace patchguard {

struct AttackConfig {
  std::size_t steps = 500;
  double step_size = 0.05;
  std::size_t locations = 5;
  std::optional<Label> target;  // targeted attack when set
  std::uint64_t seed = 0;
  bool exhaustive = false;      // try every anchor instead of `locations` random ones
  // Feature kind the defended pipeline aggregates.
  FeatureKind defense_kind = FeatureKind::logits;
};

struct AttackResult {
  bool success = false;
  ImageTensor adversarial_image;
  PixelAnchor anchor;
  double final_loss = 0.0;
  Label prediction = 0;
};

/// Prediction of the pipeline being attacked: mean-logits argmax, or robust
/// masking over `kind` features when a defense is given.
Label attacked_prediction(const PatchEnsembleModel& model, const ImageTensor& image,
                          const std::optional<MaskingConfig>& defense,
                          FeatureKind kind = FeatureKind::logits);

/// Patch attack by sign-gradient PGD. Without a defense the loss is the
/// cross-entropy of the mean local logits. With a defense the surrogate is
/// the clipped, masked class-evidence sum where each class's detected
/// window is recomputed every step and held constant for the gradient.
AttackResult pgd_patch_attack(const PatchEnsembleModel& model, const ImageTensor& image,
                              Label true_label, const PatchSpec& patch,
                              const AttackConfig& config,
                              const std::optional<MaskingConfig>& defense = std::nullopt);

/// Feature-space adversary from the wrong-class bound case analysis, restricted to
/// `window`: true-class evidence goes to the clip floor and the wrong class
/// with the most outside-window evidence receives either the largest
/// evidence that still slips under the detection threshold (T > 0) or
/// evidence large enough to force detection of the window itself.
FeatureTensor worst_case_feature_attack(const FeatureTensor& clean, Label true_label,
                                        const Window& window, const MaskingConfig& config);

/// All valid top-left patch placements in row-major order.
std::vector<PixelAnchor> all_anchors(const PatchSpec& patch, std::size_t image_rows,
                                     std::size_t image_cols);

}  // namespace patchguard
