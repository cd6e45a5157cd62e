#include "patchguard/certify.hpp"

#include <algorithm>
#include <functional>
#include <limits>

namespace patchguard {

bool defeats(Label wrong, double upper, Label truth, double lower, const CertOptions& opts) {
  if (opts.literal_comparison) return upper > lower;
  // Ties go to the lower index, so a lower-index wrong class wins on equality.
  return wrong < truth ? upper >= lower : upper > lower;
}

double lemma1_bound(const Grid& clipped_slice, const Window& w, double threshold) {
  require(threshold >= 0.0 && threshold < 1.0, "certification needs a threshold in [0,1)");
  return sum_outside_window(clipped_slice, w) / (1.0 - threshold);
}

namespace {

// First (row-major) mask window satisfying `pred` with the largest in-window sum.
std::optional<Window> heaviest_window(const Grid& slice, Shape mask,
                                      const std::function<bool(const Window&)>& pred) {
  std::optional<Window> best;
  double best_sum = 0.0;
  for (const Window& v : enumerate_windows(slice.shape(), mask)) {
    if (!pred(v)) continue;
    const double s = sum_in_window(slice, v);
    if (!best || s > best_sum) {
      best = v;
      best_sum = s;
    }
  }
  return best;
}

double sum_outside_both(const Grid& slice, const Window& a, const Window& b) {
  double s = 0.0;
  for (std::size_t r = 0; r < slice.rows(); ++r)
    for (std::size_t c = 0; c < slice.cols(); ++c)
      if (!a.contains(r, c) && !b.contains(r, c)) s += slice(r, c);
  return s;
}

void check_cert_config(const FeatureTensor& clean, Label label, const MaskingConfig& config) {
  config.validate();
  require(config.threshold < 1.0, "certification needs a threshold in [0,1)");
  const auto* bounds = std::get_if<ClipBounds>(&config.clip);
  require(bounds != nullptr, "certification needs an interval clip");
  require(bounds->lo() >= 0.0, "certification needs a non-negative lower clip bound");
  require(label < clean.classes(), "true label out of range");
  require(config.mask_shape.rows <= clean.rows() && config.mask_shape.cols <= clean.cols(),
          "mask window larger than the feature grid");
}

}  // namespace

double lemma2_bound(const Grid& clipped_slice, const Window& w, Shape mask, double threshold) {
  require(threshold >= 0.0 && threshold < 1.0, "certification needs a threshold in [0,1)");
  const auto v = heaviest_window(clipped_slice, mask, [&](const Window& c) { return c.covers(w); });
  require(v.has_value(), "mask window cannot cover the malicious window");
  return sum_outside_window(clipped_slice, *v) / (1.0 - threshold);
}

double true_class_lower_bound(const Grid& clipped_slice, const Window& w, Shape mask,
                              double threshold, const CertOptions& opts) {
  // The adversary drives true-class evidence inside w to the floor.
  Grid zeroed = clipped_slice;
  for (std::size_t r = w.row0; r < w.row_end(); ++r)
    for (std::size_t c = w.col0; c < w.col_end(); ++c) zeroed(r, c) = 0.0;
  if (const auto det = detect(zeroed, threshold, mask)) return sum_outside_both(zeroed, w, *det);
  if (opts.literal_lower_bound) return sum_outside_window(zeroed, w);
  // No detection on the zeroed slice. Adding evidence inside w can only
  // make a window that meets w the detected one, so the worst case removes
  // the heaviest such window.
  const auto v = heaviest_window(zeroed, mask, [&](const Window& c) { return c.intersects(w); });
  return v ? sum_outside_both(zeroed, w, *v) : sum_outside_window(zeroed, w);
}

CertResult certify_oversized(const FeatureTensor& clean, Label true_label, Shape malicious_shape,
                             const MaskingConfig& config, const CertOptions& opts) {
  check_cert_config(clean, true_label, config);
  require(malicious_shape.rows > 0 && malicious_shape.cols > 0,
          "malicious window dimensions must be positive");
  require(config.mask_shape.rows >= malicious_shape.rows &&
              config.mask_shape.cols >= malicious_shape.cols,
          "mask window smaller than the malicious window");

  const FeatureTensor clipped = clip(clean, config.clip);
  std::vector<Grid> slices;
  for (Label k = 0; k < clean.classes(); ++k) slices.push_back(clipped.slice(k));

  CertResult out;
  out.true_lower = std::numeric_limits<double>::infinity();
  out.wrong_upper.assign(clean.classes(), 0.0);
  std::vector<bool> seen(clean.classes(), false);
  for (const Window& w : enumerate_windows(clean.shape(), malicious_shape)) {
    const double lower =
        true_class_lower_bound(slices[true_label], w, config.mask_shape, config.threshold, opts);
    out.true_lower = std::min(out.true_lower, lower);
    std::size_t defeating = 0;
    for (Label k = 0; k < clean.classes(); ++k) {
      if (k == true_label) continue;
      const double upper = lemma2_bound(slices[k], w, config.mask_shape, config.threshold);
      if (!seen[k] || upper > out.wrong_upper[k]) out.wrong_upper[k] = upper;
      seen[k] = true;
      if (defeats(k, upper, true_label, lower, opts)) ++defeating;
    }
    if (defeating > 0 && !out.worst_window) out.worst_window = w;
    out.max_defeating = std::max(out.max_defeating, defeating);
  }
  out.certified = out.max_defeating == 0;
  return out;
}

CertResult certify_masking(const FeatureTensor& clean, Label true_label,
                           const MaskingConfig& config, const CertOptions& opts) {
  return certify_oversized(clean, true_label, config.mask_shape, config, opts);
}

bool certify_topk(const FeatureTensor& clean, Label true_label, const MaskingConfig& config,
                  std::size_t k, const CertOptions& opts) {
  require(k >= 1, "top-k certification needs k >= 1");
  return certify_masking(clean, true_label, config, opts).max_defeating <= k - 1;
}

bool cbn_certify(const FeatureTensor& clean_logits, Label true_label, Shape window,
                 CbnMode mode) {
  require(clean_logits.kind() == FeatureKind::logits, "cbn_certify needs a logits tensor");
  require(true_label < clean_logits.classes(), "true label out of range");
  require(window.rows > 0 && window.cols > 0, "corrupted window must be non-empty");
  require(window.rows <= clean_logits.rows() && window.cols <= clean_logits.cols(),
          "corrupted window larger than the feature grid");
  if (cbn_aggregate(clean_logits) != true_label) return false;
  const FeatureTensor clipped = clip(clean_logits, ClipFunction{TanhClip{}});
  const double budget = 2.0 * static_cast<double>(window.area());
  std::vector<Grid> slices;
  for (Label k = 0; k < clean_logits.classes(); ++k) slices.push_back(clipped.slice(k));

  if (mode == CbnMode::windowed) {
    for (const Window& w : enumerate_windows(clean_logits.shape(), window)) {
      const double truth = sum_outside_window(slices[true_label], w);
      for (Label k = 0; k < clean_logits.classes(); ++k) {
        if (k == true_label) continue;
        if (!(truth - sum_outside_window(slices[k], w) > budget)) return false;
      }
    }
    return true;
  }

  // Location-free: the adversary removes the k cells that help the true
  // class most against each rival.
  const std::size_t k_cells = window.area();
  for (Label k = 0; k < clean_logits.classes(); ++k) {
    if (k == true_label) continue;
    std::vector<double> diff;
    for (std::size_t i = 0; i < clean_logits.cells(); ++i)
      diff.push_back(slices[true_label].values()[i] - slices[k].values()[i]);
    std::sort(diff.begin(), diff.end());
    double delta = 0.0;
    for (std::size_t i = 0; i + k_cells < diff.size(); ++i) delta += diff[i];
    if (!(delta > budget)) return false;
  }
  return true;
}

bool ds_certify(const FeatureTensor& clean_prediction, Label true_label, std::size_t k_corrupted) {
  require(clean_prediction.kind() == FeatureKind::prediction, "ds_certify needs a prediction tensor");
  require(true_label < clean_prediction.classes(), "true label out of range");
  const VoteOutcome votes = ds_majority(clean_prediction);
  if (votes.predicted != true_label) return false;
  std::size_t second = 0;
  for (Label k = 0; k < votes.counts.size(); ++k)
    if (k != true_label) second = std::max(second, votes.counts[k]);
  return votes.counts[true_label] - second > 2 * k_corrupted;
}

}  // namespace patchguard
