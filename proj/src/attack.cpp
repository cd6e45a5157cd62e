#include "patchguard/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace patchguard {

std::vector<PixelAnchor> all_anchors(const PatchSpec& patch, std::size_t image_rows,
                                     std::size_t image_cols) {
  require(patch.prows > 0 && patch.pcols > 0, "patch dimensions must be positive");
  require(patch.prows <= image_rows && patch.pcols <= image_cols, "patch larger than the image");
  std::vector<PixelAnchor> out;
  for (std::size_t r = 0; r + patch.prows <= image_rows; ++r)
    for (std::size_t c = 0; c + patch.pcols <= image_cols; ++c) out.push_back({r, c});
  return out;
}

namespace {

Label predict_from_logits(std::vector<double> logits, const PatchEnsembleModel& model,
                          const std::optional<MaskingConfig>& defense, FeatureKind kind) {
  const Shape grid = model.geometry().feature_shape();
  if (!defense) {
    const auto t = FeatureTensor::unchecked(grid.rows, grid.cols, model.classes(),
                                            FeatureKind::logits, std::move(logits));
    return mean_aggregate(t);
  }
  return robust_masking(features_from_logits(std::move(logits), grid, model.classes(), kind),
                        *defense)
      .predicted;
}

double clip_slope(const ClipFunction& fn, double v) {
  if (const auto* b = std::get_if<ClipBounds>(&fn)) {
    if (v <= b->lo()) return 0.0;
    if (b->hi() && v >= *b->hi()) return 0.0;
    return 1.0;
  }
  const auto& t = std::get<TanhClip>(fn);
  const double y = t.apply(v);
  return t.scale * (1.0 - y * y);
}

// Loss of the attacked pipeline (against `label`) and its gradient with
// respect to the local logits.
double surrogate_loss(std::span<const double> logits, Shape grid, std::size_t n, Label label,
                      const std::optional<MaskingConfig>& defense, FeatureKind kind,
                      std::vector<double>& dlogits) {
  const std::size_t cells = grid.area();
  const double inv_cells = 1.0 / static_cast<double>(cells);
  dlogits.assign(logits.size(), 0.0);
  std::vector<double> scores(n, 0.0), dscores;
  if (!defense) {
    for (std::size_t c = 0; c < cells; ++c)
      for (std::size_t k = 0; k < n; ++k) scores[k] += logits[c * n + k];
    for (double& s : scores) s *= inv_cells;
    const double loss = softmax_cross_entropy(scores, label, &dscores);
    for (std::size_t c = 0; c < cells; ++c)
      for (std::size_t k = 0; k < n; ++k) dlogits[c * n + k] = dscores[k] * inv_cells;
    return loss;
  }

  // Features fed to the defense; prediction features use the softmax as a
  // differentiable stand-in for the one-hot vote.
  const bool soft = kind != FeatureKind::logits;
  std::vector<double> feat(logits.begin(), logits.end());
  if (soft) {
    for (std::size_t c = 0; c < cells; ++c) {
      double* v = feat.data() + c * n;
      const double mx = *std::max_element(v, v + n);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) z += (v[k] = std::exp(v[k] - mx));
      for (std::size_t k = 0; k < n; ++k) v[k] /= z;
    }
  }
  std::vector<double> clipped(feat.size());
  for (std::size_t i = 0; i < feat.size(); ++i) clipped[i] = apply_clip(defense->clip, feat[i]);

  std::vector<char> keep(cells * n, 1);
  for (std::size_t k = 0; k < n; ++k) {
    Grid slice(grid.rows, grid.cols);
    for (std::size_t r = 0; r < grid.rows; ++r)
      for (std::size_t q = 0; q < grid.cols; ++q) slice(r, q) = clipped[(r * grid.cols + q) * n + k];
    if (const auto w = detect(slice, defense->threshold, defense->mask_shape))
      for (std::size_t r = w->row0; r < w->row_end(); ++r)
        for (std::size_t q = w->col0; q < w->col_end(); ++q) keep[(r * grid.cols + q) * n + k] = 0;
  }
  for (std::size_t i = 0; i < clipped.size(); ++i)
    if (keep[i]) scores[i % n] += clipped[i];
  for (double& s : scores) s *= inv_cells;
  const double loss = softmax_cross_entropy(scores, label, &dscores);

  std::vector<double> dfeat(feat.size(), 0.0);
  for (std::size_t i = 0; i < feat.size(); ++i)
    if (keep[i]) dfeat[i] = dscores[i % n] * inv_cells * clip_slope(defense->clip, feat[i]);
  if (!soft) {
    dlogits = std::move(dfeat);
    return loss;
  }
  for (std::size_t c = 0; c < cells; ++c) {
    const double* p = feat.data() + c * n;
    const double* g = dfeat.data() + c * n;
    double dot = 0.0;
    for (std::size_t k = 0; k < n; ++k) dot += p[k] * g[k];
    for (std::size_t k = 0; k < n; ++k) dlogits[c * n + k] = p[k] * (g[k] - dot);
  }
  return loss;
}

struct Trial {
  bool success = false;
  std::vector<double> pixels;
  PixelAnchor anchor;
  double loss = 0.0;
  Label prediction = 0;
};

}  // namespace

Label attacked_prediction(const PatchEnsembleModel& model, const ImageTensor& image,
                          const std::optional<MaskingConfig>& defense, FeatureKind kind) {
  return predict_from_logits(local_logits(model, image), model, defense, kind);
}

AttackResult pgd_patch_attack(const PatchEnsembleModel& model, const ImageTensor& image,
                              Label true_label, const PatchSpec& patch,
                              const AttackConfig& config,
                              const std::optional<MaskingConfig>& defense) {
  const RFGeometry& g = model.geometry();
  require(true_label < model.classes(), "true label out of range");
  require(!config.target || *config.target < model.classes(), "target class out of range");
  require(config.step_size > 0.0, "attack step size must be positive");
  require(config.exhaustive || config.locations > 0, "attack needs at least one location");
  require(image.rows() == g.image_rows && image.cols() == g.image_cols &&
              image.channels() == g.channels,
          "image dimensions do not match the model geometry");
  if (defense) defense->validate();

  const Shape grid = g.feature_shape();
  const std::size_t n = model.classes(), ch = image.channels();
  const Label loss_label = config.target ? *config.target : true_label;
  // Untargeted: climb the true-label loss. Targeted: descend the target loss.
  const double direction = config.target ? -1.0 : 1.0;
  const auto succeeded = [&](Label pred) {
    return config.target ? pred == *config.target : pred != true_label;
  };

  std::mt19937_64 rng(config.seed);
  std::vector<PixelAnchor> anchors;
  if (config.exhaustive) {
    anchors = all_anchors(patch, image.rows(), image.cols());
  } else {
    require(patch.prows <= image.rows() && patch.pcols <= image.cols(),
            "patch larger than the image");
    std::uniform_int_distribution<std::size_t> rows(0, image.rows() - patch.prows);
    std::uniform_int_distribution<std::size_t> cols(0, image.cols() - patch.pcols);
    for (std::size_t i = 0; i < config.locations; ++i) {
      const std::size_t r = rows(rng);
      anchors.push_back({r, cols(rng)});
    }
  }

  const std::vector<double> clean_logits = local_logits(model, image);
  std::optional<Trial> best;
  std::uniform_real_distribution<double> fill(0.0, 1.0);
  std::vector<double> dlogits, cell(n);
  for (const PixelAnchor& anchor : anchors) {
    const auto touched = affected_cells(anchor, patch, g);
    Trial trial;
    trial.anchor = anchor;
    trial.pixels.assign(image.pixels().begin(), image.pixels().end());
    auto pixel_index = [&](std::size_t r, std::size_t c, std::size_t k) {
      return ((anchor.row + r) * image.cols() + anchor.col + c) * ch + k;
    };
    for (std::size_t r = 0; r < patch.prows; ++r)
      for (std::size_t c = 0; c < patch.pcols; ++c)
        for (std::size_t k = 0; k < ch; ++k) trial.pixels[pixel_index(r, c, k)] = fill(rng);

    std::vector<double> logits = clean_logits;
    std::vector<double> grad(trial.pixels.size());
    for (std::size_t step = 0;; ++step) {
      const ImageTensor current(image.rows(), image.cols(), ch, trial.pixels);
      if (touched)
        for (std::size_t i = touched->row0; i < touched->row_end(); ++i)
          for (std::size_t j = touched->col0; j < touched->col_end(); ++j) {
            cell_logits(model, current, i, j, cell);
            std::copy(cell.begin(), cell.end(), logits.begin() + (i * grid.cols + j) * n);
          }
      trial.prediction = predict_from_logits(logits, model, defense, config.defense_kind);
      trial.success = succeeded(trial.prediction);
      trial.loss = surrogate_loss(logits, grid, n, true_label, defense, config.defense_kind, dlogits);
      if (trial.success || step == config.steps || !touched) break;

      const double loss = loss_label == true_label
                              ? trial.loss
                              : surrogate_loss(logits, grid, n, loss_label, defense,
                                               config.defense_kind, dlogits);
      if (!std::isfinite(loss)) throw AttackDiverged("attack loss became non-finite");
      // Cells outside the touched window cannot move, so their gradient is dropped.
      for (std::size_t i = 0; i < grid.rows; ++i)
        for (std::size_t j = 0; j < grid.cols; ++j)
          if (!touched->contains(i, j))
            std::fill_n(dlogits.begin() + (i * grid.cols + j) * n, n, 0.0);
      std::fill(grad.begin(), grad.end(), 0.0);
      backward_local(model, current, dlogits, {}, grad);
      for (std::size_t r = 0; r < patch.prows; ++r)
        for (std::size_t c = 0; c < patch.pcols; ++c)
          for (std::size_t k = 0; k < ch; ++k) {
            const std::size_t idx = pixel_index(r, c, k);
            const double gv = grad[idx];
            if (!std::isfinite(gv)) throw AttackDiverged("attack gradient became non-finite");
            const double sign = gv > 0.0 ? 1.0 : (gv < 0.0 ? -1.0 : 0.0);
            trial.pixels[idx] =
                std::clamp(trial.pixels[idx] + direction * config.step_size * sign, 0.0, 1.0);
          }
    }
    const bool better = !best || (trial.success && !best->success) ||
                        (trial.success == best->success && trial.loss > best->loss);
    if (better) best = std::move(trial);
    if (best->success) break;
  }

  AttackResult out;
  out.success = best->success;
  out.adversarial_image = ImageTensor(image.rows(), image.cols(), ch, std::move(best->pixels));
  out.anchor = best->anchor;
  out.final_loss = best->loss;
  out.prediction = best->prediction;
  return out;
}

FeatureTensor worst_case_feature_attack(const FeatureTensor& clean, Label true_label,
                                        const Window& window, const MaskingConfig& config) {
  config.validate();
  require(true_label < clean.classes(), "true label out of range");
  require(clean.classes() >= 2, "worst-case attack needs a wrong class");
  require(window.fits(clean.shape()), "window does not lie inside the feature grid");
  const auto* bounds = std::get_if<ClipBounds>(&config.clip);
  require(bounds != nullptr, "worst-case attack needs an interval clip");

  const FeatureTensor clipped = clip(clean, config.clip);
  Label target = true_label == 0 ? 1 : 0;
  double t = -1.0;
  for (Label k = 0; k < clean.classes(); ++k) {
    if (k == true_label) continue;
    const double out = sum_outside_window(clipped, k, window);
    if (out > t) {
      t = out;
      target = k;
    }
  }

  const std::size_t n = clean.classes();
  std::vector<double> values(clean.values().begin(), clean.values().end());
  auto at = [&](std::size_t r, std::size_t c, std::size_t k) -> double& {
    return values[(r * clean.cols() + c) * n + k];
  };
  auto fill_window = [&](double target_value) {
    for (std::size_t r = window.row0; r < window.row_end(); ++r)
      for (std::size_t c = window.col0; c < window.col_end(); ++c)
        for (std::size_t k = 0; k < n; ++k) at(r, c, k) = k == target ? target_value : bounds->lo();
  };

  if (clean.kind() != FeatureKind::logits) {
    // Probabilities and votes cannot exceed one per cell: vote for the target.
    for (std::size_t r = window.row0; r < window.row_end(); ++r)
      for (std::size_t c = window.col0; c < window.col_end(); ++c)
        for (std::size_t k = 0; k < n; ++k) at(r, c, k) = k == target ? 1.0 : 0.0;
    return FeatureTensor(clean.rows(), clean.cols(), n, clean.kind(), std::move(values));
  }

  auto cap = [&](double v) { return bounds->hi() ? std::min(*bounds->hi(), v) : v; };
  const double area = static_cast<double>(window.area());
  if (config.threshold > 0.0 && config.threshold < 1.0 && t > 0.0) {
    // Largest in-window evidence that stays at or under the threshold.
    double e = t * config.threshold / (1.0 - config.threshold);
    for (int attempt = 0; attempt < 8; ++attempt) {
      fill_window(cap(e / area));
      const auto adv = FeatureTensor::unchecked(clean.rows(), clean.cols(), n, clean.kind(), values);
      if (!detect(clip(adv, config.clip).slice(target), config.threshold, config.mask_shape))
        return adv;
      e *= 1.0 - 1e-12;
    }
  }
  // Force detection of the window itself: every cell outweighs all outside
  // evidence, so no other window can match its sum.
  fill_window(cap(t + 1.0));
  return FeatureTensor::unchecked(clean.rows(), clean.cols(), n, clean.kind(), std::move(values));
}

}  // namespace patchguard
