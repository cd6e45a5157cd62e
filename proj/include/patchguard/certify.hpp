#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "patchguard/aggregate.hpp"
#include "patchguard/tensor.hpp"

namespace patchguard {

struct CertOptions {
  // Compare with a plain `upper > lower` regardless of class order. Unsound
  // under lowest-index argmax ties; kept to demonstrate the failure.
  bool literal_comparison = false;
  // When detection on the zeroed true slice does not fire, take the whole
  // outside-window evidence as the lower bound. Unsound for T > 0 because
  // the attacker can add evidence that triggers a detection overlapping
  // benign cells; kept to demonstrate the failure.
  bool literal_lower_bound = false;
};

struct CertResult {
  bool certified = false;
  std::optional<Window> worst_window;  // first malicious window that breaks certification
  double true_lower = 0.0;             // min over windows of the true-class lower bound
  std::vector<double> wrong_upper;     // max over windows of each wrong class's upper bound
                                       // (entry of the true class is 0)
  // Largest number of wrong classes able to beat the true class in any one
  // window; top-k certification holds iff this is at most k - 1.
  std::size_t max_defeating = 0;
};

/// True when wrong class `wrong` with evidence `upper` could be predicted
/// over `truth` with evidence `lower` under lowest-index argmax ties.
bool defeats(Label wrong, double upper, Label truth, double lower, const CertOptions& opts = {});

/// Wrong-class upper bound: clipped evidence outside `w`, scaled by 1/(1-T).
double lemma1_bound(const Grid& clipped_slice, const Window& w, double threshold);

/// Wrong-class upper bound with oversized masks of shape `mask`: evidence
/// outside the heaviest mask window covering `w`, scaled by 1/(1-T).
double lemma2_bound(const Grid& clipped_slice, const Window& w, Shape mask, double threshold);

/// Lower bound on masked true-class evidence when an adversary controls
/// `w`. `clipped_slice` is the clean clipped true-class slice.
double true_class_lower_bound(const Grid& clipped_slice, const Window& w, Shape mask,
                              double threshold, const CertOptions& opts = {});

/// Provable analysis of robust masking against every malicious window of
/// shape config.mask_shape.
CertResult certify_masking(const FeatureTensor& clean, Label true_label,
                           const MaskingConfig& config, const CertOptions& opts = {});

/// Same analysis when the deployed mask (config.mask_shape) is at least as
/// large as the malicious window.
CertResult certify_oversized(const FeatureTensor& clean, Label true_label, Shape malicious_shape,
                             const MaskingConfig& config, const CertOptions& opts = {});

/// Top-k robustness: at most k-1 wrong classes can beat the true class in
/// any malicious window.
bool certify_topk(const FeatureTensor& clean, Label true_label, const MaskingConfig& config,
                  std::size_t k, const CertOptions& opts = {});

enum class CbnMode {
  windowed,       // corrupted cells form a contiguous window of the given shape
  location_free,  // any `window.area()` cells may be corrupted
};

/// Clipped-logits baseline certificate: after removing the corrupted cells
/// the true class must lead every other class by more than 2 per corrupted
/// cell.
bool cbn_certify(const FeatureTensor& clean_logits, Label true_label, Shape window,
                 CbnMode mode = CbnMode::windowed);

/// Majority-vote baseline certificate: the true class wins the vote and leads
/// the runner-up by more than 2 * k_corrupted votes.
bool ds_certify(const FeatureTensor& clean_prediction, Label true_label, std::size_t k_corrupted);

}  // namespace patchguard
