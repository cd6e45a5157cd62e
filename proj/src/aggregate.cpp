#include "patchguard/aggregate.hpp"

#include <algorithm>
#include <cmath>

namespace patchguard {

double TanhClip::apply(double v) const { return std::tanh(scale * v - shift); }

double apply_clip(const ClipFunction& fn, double v) {
  return std::visit([v](const auto& f) { return f.apply(v); }, fn);
}

FeatureTensor clip(const FeatureTensor& tensor, const ClipFunction& fn) {
  if (const auto* bounds = std::get_if<ClipBounds>(&fn)) return clip(tensor, *bounds);
  std::vector<double> out(tensor.values().begin(), tensor.values().end());
  for (double& v : out) v = apply_clip(fn, v);
  return FeatureTensor::unchecked(tensor.rows(), tensor.cols(), tensor.classes(), tensor.kind(),
                                  std::move(out));
}

void MaskingConfig::validate() const {
  require(threshold >= 0.0 && threshold <= 1.0, "detection threshold must lie in [0,1]");
  require(mask_shape.rows > 0 && mask_shape.cols > 0, "mask dimensions must be positive");
}

std::optional<Window> detect(const Grid& slice, double threshold, Shape mask_shape) {
  if (threshold >= 1.0) return std::nullopt;
  for (double v : slice.values()) require(v >= 0.0, "detect needs a non-negative class slice");
  const double total = sum_all(slice);
  if (total == 0.0) return std::nullopt;
  const Window best = best_window(slice, mask_shape);
  if (sum_in_window(slice, best) / total <= threshold) return std::nullopt;
  return best;
}

double masked_evidence(const Grid& clipped_slice, double threshold, Shape mask_shape,
                       std::optional<Window>* detected) {
  const auto w = detect(clipped_slice, threshold, mask_shape);
  if (detected) *detected = w;
  return w ? sum_outside_window(clipped_slice, *w) : sum_all(clipped_slice);
}

MaskingOutcome robust_masking(const FeatureTensor& tensor, const MaskingConfig& config) {
  config.validate();
  require(config.mask_shape.rows <= tensor.rows() && config.mask_shape.cols <= tensor.cols(),
          "mask window larger than the feature grid");
  const FeatureTensor clipped = clip(tensor, config.clip);
  MaskingOutcome out;
  out.evidence.resize(tensor.classes());
  out.detected.resize(tensor.classes());
  for (Label k = 0; k < tensor.classes(); ++k)
    out.evidence[k] =
        masked_evidence(clipped.slice(k), config.threshold, config.mask_shape, &out.detected[k]);
  out.predicted = argmax_lowest(out.evidence);
  return out;
}

Label cbn_aggregate(const FeatureTensor& logits) {
  require(logits.kind() == FeatureKind::logits, "cbn_aggregate needs a logits tensor");
  const FeatureTensor clipped = clip(logits, ClipFunction{TanhClip{}});
  std::vector<double> sums(logits.classes());
  for (Label k = 0; k < logits.classes(); ++k) sums[k] = sum_all(clipped.slice(k));
  return argmax_lowest(sums);
}

VoteOutcome ds_majority(const FeatureTensor& tensor, std::optional<double> abstain_threshold) {
  require(tensor.kind() == FeatureKind::prediction || tensor.kind() == FeatureKind::confidence,
          "ds_majority needs a prediction or confidence tensor");
  VoteOutcome out;
  out.counts.assign(tensor.classes(), 0);
  for (std::size_t r = 0; r < tensor.rows(); ++r)
    for (std::size_t c = 0; c < tensor.cols(); ++c) {
      const auto cell = tensor.cell(r, c);
      const Label top = argmax_lowest(cell);
      if (tensor.kind() == FeatureKind::confidence && abstain_threshold &&
          cell[top] < *abstain_threshold)
        continue;
      ++out.counts[top];
    }
  std::vector<double> as_real(out.counts.begin(), out.counts.end());
  out.predicted = argmax_lowest(as_real);
  return out;
}

Label mean_aggregate(const FeatureTensor& logits) {
  require(logits.kind() == FeatureKind::logits, "mean_aggregate needs a logits tensor");
  std::vector<double> mean(logits.classes(), 0.0);
  for (std::size_t c = 0; c < logits.cells(); ++c)
    for (Label k = 0; k < logits.classes(); ++k) mean[k] += logits.values()[c * logits.classes() + k];
  for (double& v : mean) v /= static_cast<double>(logits.cells());
  return argmax_lowest(mean);
}

}  // namespace patchguard
