#pragma once

#include <cstddef>
#include <optional>
#include <variant>
#include <vector>

#include "patchguard/tensor.hpp"

namespace patchguard {

/// Saturating clip tanh(scale * u - shift) used by the clipped-BagNet baseline.
struct TanhClip {
  double scale = 0.05;
  double shift = 1.0;
  double apply(double v) const;
  bool operator==(const TanhClip&) const = default;
};

/// Either the interval clip [c_l, c_h] or the tanh clip.
using ClipFunction = std::variant<ClipBounds, TanhClip>;

double apply_clip(const ClipFunction& fn, double v);
FeatureTensor clip(const FeatureTensor& tensor, const ClipFunction& fn);

struct MaskingConfig {
  ClipFunction clip = ClipBounds{0.0, std::nullopt};
  double threshold = 0.0;  // T in [0,1]; 1 disables detection
  Shape mask_shape{1, 1};

  void validate() const;
};

struct MaskingOutcome {
  Label predicted = 0;
  std::vector<double> evidence;                 // masked class evidence per class
  std::vector<std::optional<Window>> detected;  // detected window per class
};

/// Window with the highest in-window sum (first in row-major order on
/// ties), or nothing when the slice is all zero or that window holds no more
/// than a `threshold` fraction of the slice total. `threshold >= 1` never
/// detects. Slice values must be non-negative.
std::optional<Window> detect(const Grid& slice, double threshold, Shape mask_shape);

/// Clip every class slice, mask its detected window, sum the rest, and take
/// the argmax (ties to the lowest class).
MaskingOutcome robust_masking(const FeatureTensor& tensor, const MaskingConfig& config);

/// Masked evidence of a single class, as computed inside robust_masking.
double masked_evidence(const Grid& clipped_slice, double threshold, Shape mask_shape,
                       std::optional<Window>* detected = nullptr);

/// tanh-clipped sum of local logits, argmax.
Label cbn_aggregate(const FeatureTensor& logits);

struct VoteOutcome {
  Label predicted = 0;
  std::vector<std::size_t> counts;
};

/// Majority vote of the per-cell argmax. With a confidence tensor and an
/// abstain threshold, cells whose top confidence is below the threshold
/// do not vote.
VoteOutcome ds_majority(const FeatureTensor& tensor,
                        std::optional<double> abstain_threshold = std::nullopt);

/// Argmax of the per-class mean of local logits.
Label mean_aggregate(const FeatureTensor& logits);

}  // namespace patchguard
