#include "patchguard/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace patchguard {

PatchEnsembleModel::PatchEnsembleModel(RFGeometry geom, std::size_t classes, std::size_t hidden)
    : PatchEnsembleModel(geom, classes, hidden,
                         std::vector<double>(param_count(geom, classes, hidden), 0.0)) {}

PatchEnsembleModel::PatchEnsembleModel(RFGeometry geom, std::size_t classes, std::size_t hidden,
                                       std::vector<double> params)
    : geom_(geom), classes_(classes), hidden_(hidden), params_(std::move(params)) {
  geom_.validate();
  require(classes_ > 0 && hidden_ > 0, "model needs at least one class and one hidden unit");
  require(params_.size() == param_count(geom_, classes_, hidden_),
          "parameter count does not match the layer dimensions");
  for (double v : params_) require(std::isfinite(v), "model weights must be finite");
}

PatchEnsembleModel PatchEnsembleModel::initialized(RFGeometry geom, std::size_t classes,
                                                   std::size_t hidden, std::uint64_t seed) {
  PatchEnsembleModel m(geom, classes, hidden);
  std::mt19937_64 rng(seed);
  const double a1 = std::sqrt(6.0 / static_cast<double>(m.inputs() + hidden));
  const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + classes));
  std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
  auto p = m.params();
  for (std::size_t i = 0; i < hidden * m.inputs(); ++i) p[m.w1_offset() + i] = u1(rng);
  for (std::size_t i = 0; i < classes * hidden; ++i) p[m.w2_offset() + i] = u2(rng);
  return m;
}

void LabeledDataset::validate() const {
  require(images.size() == labels.size(), "dataset images and labels differ in length");
  require(class_count > 0, "dataset needs at least one class");
  for (Label l : labels) require(l < class_count, "dataset label out of range");
  for (const auto& img : images)
    require(img.rows() == images.front().rows() && img.cols() == images.front().cols() &&
                img.channels() == images.front().channels(),
            "dataset images differ in shape");
}

namespace {

struct PixelView {
  std::span<const double> pixels;
  std::size_t rows, cols, channels;
};

PixelView view_of(const PatchEnsembleModel& model, const ImageTensor& image) {
  const auto& g = model.geometry();
  require(image.rows() == g.image_rows && image.cols() == g.image_cols &&
              image.channels() == g.channels,
          "image dimensions do not match the model geometry");
  return {image.pixels(), image.rows(), image.cols(), image.channels()};
}

// Gathers the (rf_rows x rf_cols x channels) patch feeding feature cell (i, j).
void gather(const RFGeometry& g, const PixelView& img, std::size_t i, std::size_t j,
            std::vector<double>& x) {
  x.resize(g.patch_inputs());
  std::size_t n = 0;
  for (std::size_t dr = 0; dr < g.rf_rows; ++dr) {
    const std::size_t row = i * g.stride_rows + dr;
    const double* src = img.pixels.data() + (row * img.cols + j * g.stride_cols) * img.channels;
    for (std::size_t q = 0; q < g.rf_cols * img.channels; ++q) x[n++] = src[q];
  }
}

struct CellPass {
  std::vector<double> x, pre, hidden;
};

void forward_cell(const PatchEnsembleModel& m, const std::vector<double>& x, CellPass& pass,
                  double* logits_out) {
  const auto p = m.params();
  const std::size_t in = m.inputs(), hid = m.hidden();
  pass.pre.resize(hid);
  pass.hidden.resize(hid);
  for (std::size_t h = 0; h < hid; ++h) {
    const double* w = p.data() + m.w1_offset() + h * in;
    double z = p[m.b1_offset() + h];
    for (std::size_t q = 0; q < in; ++q) z += w[q] * x[q];
    pass.pre[h] = z;
    pass.hidden[h] = z > 0.0 ? z : 0.0;
  }
  for (std::size_t k = 0; k < m.classes(); ++k) {
    const double* w = p.data() + m.w2_offset() + k * hid;
    double z = p[m.b2_offset() + k];
    for (std::size_t h = 0; h < hid; ++h) z += w[h] * pass.hidden[h];
    logits_out[k] = z;
  }
}

std::vector<double> logits_raw(const PatchEnsembleModel& m, const PixelView& img) {
  const auto& g = m.geometry();
  const std::size_t fr = g.feature_rows(), fc = g.feature_cols(), n = m.classes();
  std::vector<double> out(fr * fc * n);
  CellPass pass;
  for (std::size_t i = 0; i < fr; ++i)
    for (std::size_t j = 0; j < fc; ++j) {
      gather(g, img, i, j, pass.x);
      forward_cell(m, pass.x, pass, out.data() + (i * fc + j) * n);
    }
  return out;
}

void backward_raw(const PatchEnsembleModel& m, const PixelView& img,
                  std::span<const double> dlogits, std::span<double> param_grad,
                  std::span<double> pixel_grad) {
  const auto& g = m.geometry();
  const std::size_t fr = g.feature_rows(), fc = g.feature_cols(), n = m.classes();
  const std::size_t in = m.inputs(), hid = m.hidden();
  require(dlogits.size() == fr * fc * n, "logit gradient has the wrong size");
  require(param_grad.empty() || param_grad.size() == m.params().size(),
          "parameter gradient has the wrong size");
  require(pixel_grad.empty() || pixel_grad.size() == img.pixels.size(),
          "pixel gradient has the wrong size");
  const auto p = m.params();
  CellPass pass;
  std::vector<double> logits(n), dh(hid), dx(in);
  for (std::size_t i = 0; i < fr; ++i)
    for (std::size_t j = 0; j < fc; ++j) {
      const double* dz = dlogits.data() + (i * fc + j) * n;
      if (std::all_of(dz, dz + n, [](double v) { return v == 0.0; })) continue;
      gather(g, img, i, j, pass.x);
      forward_cell(m, pass.x, pass, logits.data());
      for (std::size_t h = 0; h < hid; ++h) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += p[m.w2_offset() + k * hid + h] * dz[k];
        dh[h] = pass.pre[h] > 0.0 ? s : 0.0;
      }
      if (!param_grad.empty()) {
        for (std::size_t k = 0; k < n; ++k) {
          double* gw = param_grad.data() + m.w2_offset() + k * hid;
          for (std::size_t h = 0; h < hid; ++h) gw[h] += dz[k] * pass.hidden[h];
          param_grad[m.b2_offset() + k] += dz[k];
        }
        for (std::size_t h = 0; h < hid; ++h) {
          if (dh[h] == 0.0) continue;
          double* gw = param_grad.data() + m.w1_offset() + h * in;
          for (std::size_t q = 0; q < in; ++q) gw[q] += dh[h] * pass.x[q];
          param_grad[m.b1_offset() + h] += dh[h];
        }
      }
      if (!pixel_grad.empty()) {
        std::fill(dx.begin(), dx.end(), 0.0);
        for (std::size_t h = 0; h < hid; ++h) {
          if (dh[h] == 0.0) continue;
          const double* w = p.data() + m.w1_offset() + h * in;
          for (std::size_t q = 0; q < in; ++q) dx[q] += dh[h] * w[q];
        }
        std::size_t q = 0;
        for (std::size_t dr = 0; dr < g.rf_rows; ++dr) {
          const std::size_t row = i * g.stride_rows + dr;
          double* dst = pixel_grad.data() + (row * img.cols + j * g.stride_cols) * img.channels;
          for (std::size_t t = 0; t < g.rf_cols * img.channels; ++t) dst[t] += dx[q++];
        }
      }
    }
}

// Maps local logits to class scores and back-propagates the score gradient.
double head_loss(const PatchEnsembleModel& m, std::span<const double> logits, Label label,
                 const TrainingHead& head, std::vector<double>& dlogits) {
  const auto& g = m.geometry();
  const std::size_t fr = g.feature_rows(), fc = g.feature_cols(), n = m.classes();
  const double cells = static_cast<double>(fr * fc);
  std::vector<double> scores(n, 0.0);
  std::vector<char> keep(fr * fc, 1);
  std::vector<char> keep_true(fr * fc, 1);
  if (head.provable_mask) {
    Grid true_slice(fr, fc);
    for (std::size_t i = 0; i < fr; ++i)
      for (std::size_t j = 0; j < fc; ++j)
        true_slice(i, j) = std::max(0.0, logits[(i * fc + j) * n + label]);
    const Window w = best_window(true_slice, *head.provable_mask);
    for (std::size_t i = 0; i < fr; ++i)
      for (std::size_t j = 0; j < fc; ++j)
        if (w.contains(i, j)) {
          keep[i * fc + j] = 0;
          true_slice(i, j) = 0.0;
        }
    if (sum_all(true_slice) > 0.0) {
      const Window w2 = best_window(true_slice, *head.provable_mask);
      for (std::size_t i = 0; i < fr; ++i)
        for (std::size_t j = 0; j < fc; ++j)
          if (w2.contains(i, j) && keep[i * fc + j]) keep_true[i * fc + j] = 0;
    }
  }
  for (std::size_t c = 0; c < fr * fc; ++c) {
    if (!keep[c]) continue;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == label && !keep_true[c]) continue;
      const double v = logits[c * n + k];
      scores[k] += head.provable_mask ? std::max(0.0, v) : v;
    }
  }
  for (double& s : scores) s /= cells;
  std::vector<double> dscores;
  const double loss = softmax_cross_entropy(scores, label, &dscores);
  dlogits.assign(logits.size(), 0.0);
  for (std::size_t c = 0; c < fr * fc; ++c) {
    if (!keep[c]) continue;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == label && !keep_true[c]) continue;
      const double pass = head.provable_mask ? (logits[c * n + k] > 0.0 ? 1.0 : 0.0) : 1.0;
      dlogits[c * n + k] = dscores[k] * pass / cells;
    }
  }
  return loss;
}

double example_loss_raw(const PatchEnsembleModel& m, const PixelView& img, Label label,
                        const TrainingHead& head, std::span<double> param_grad,
                        std::span<double> pixel_grad) {
  const auto logits = logits_raw(m, img);
  std::vector<double> dlogits;
  const double loss = head_loss(m, logits, label, head, dlogits);
  if (!param_grad.empty() || !pixel_grad.empty())
    backward_raw(m, img, dlogits, param_grad, pixel_grad);
  return loss;
}

}  // namespace

std::vector<double> local_logits(const PatchEnsembleModel& model, const ImageTensor& image) {
  return logits_raw(model, view_of(model, image));
}

void backward_local(const PatchEnsembleModel& model, const ImageTensor& image,
                    std::span<const double> dlogits, std::span<double> param_grad,
                    std::span<double> pixel_grad) {
  backward_raw(model, view_of(model, image), dlogits, param_grad, pixel_grad);
}

FeatureTensor features_from_logits(std::vector<double> values, Shape grid, std::size_t n,
                                   FeatureKind kind) {
  for (std::size_t c = 0; c < grid.area(); ++c) {
    double* v = values.data() + c * n;
    if (kind == FeatureKind::confidence) {
      const double mx = *std::max_element(v, v + n);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) z += (v[k] = std::exp(v[k] - mx));
      for (std::size_t k = 0; k < n; ++k) v[k] /= z;
    } else if (kind == FeatureKind::prediction) {
      const std::size_t top = argmax_lowest(std::span<const double>(v, n));
      for (std::size_t k = 0; k < n; ++k) v[k] = k == top ? 1.0 : 0.0;
    }
  }
  return FeatureTensor(grid.rows, grid.cols, n, kind, std::move(values));
}

void cell_logits(const PatchEnsembleModel& model, const ImageTensor& image, std::size_t i,
                 std::size_t j, std::span<double> out) {
  const auto& g = model.geometry();
  require(i < g.feature_rows() && j < g.feature_cols(), "feature cell out of range");
  require(out.size() == model.classes(), "output span must hold one logit per class");
  CellPass pass;
  gather(g, view_of(model, image), i, j, pass.x);
  forward_cell(model, pass.x, pass, out.data());
}

FeatureTensor extract_features(const PatchEnsembleModel& model, const ImageTensor& image,
                               FeatureKind kind) {
  return features_from_logits(local_logits(model, image), model.geometry().feature_shape(),
                              model.classes(), kind);
}

Label predict_insecure(const PatchEnsembleModel& model, const ImageTensor& image) {
  const auto logits = local_logits(model, image);
  const std::size_t n = model.classes(), cells = logits.size() / n;
  std::vector<double> mean(n, 0.0);
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t k = 0; k < n; ++k) mean[k] += logits[c * n + k];
  for (double& v : mean) v /= static_cast<double>(cells);
  return argmax_lowest(mean);
}

double softmax_cross_entropy(std::span<const double> scores, Label label,
                             std::vector<double>* dscores) {
  require(label < scores.size(), "label out of range");
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  const double log_z = std::log(z) + mx;
  if (dscores) {
    dscores->resize(scores.size());
    for (std::size_t k = 0; k < scores.size(); ++k)
      (*dscores)[k] = std::exp(scores[k] - log_z) - (k == label ? 1.0 : 0.0);
  }
  return log_z - scores[label];
}

double example_loss(const PatchEnsembleModel& model, const ImageTensor& image, Label label,
                    const TrainingHead& head, std::span<double> param_grad,
                    std::span<double> pixel_grad) {
  require(label < model.classes(), "label out of range");
  return example_loss_raw(model, view_of(model, image), label, head, param_grad, pixel_grad);
}

namespace {

void check_training_inputs(const LabeledDataset& data, const RFGeometry& geom,
                           const TrainConfig& config) {
  data.validate();
  require(data.size() > 0, "cannot train on an empty dataset");
  geom.validate();
  const auto& img = data.images.front();
  require(img.rows() == geom.image_rows && img.cols() == geom.image_cols &&
              img.channels() == geom.channels,
          "dataset images do not match the geometry");
  require(config.learning_rate >= 0.0 && std::isfinite(config.learning_rate),
          "learning rate must be a finite non-negative number");
  require(config.epochs > 0 && config.batch_size > 0 && config.hidden_units > 0,
          "epochs, batch size and hidden units must be positive");
}

// Minibatch SGD; the example order inside a batch is fixed, so gradients
// accumulate in the same order on every run.
void run_sgd(PatchEnsembleModel& model, const LabeledDataset& data, const TrainConfig& config,
             std::size_t epochs, const TrainingHead& head, std::mt19937_64& rng,
             std::vector<double>& losses) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(model.params().size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        batch_loss += example_loss(model, data.images[idx], data.labels[idx], head, grad, {});
      }
      const double scale = config.learning_rate / static_cast<double>(end - start);
      auto p = model.params();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= scale * grad[i];
      batch_loss /= static_cast<double>(end - start);
      if (!std::isfinite(batch_loss)) throw TrainingDiverged(losses.size());
      epoch_loss += batch_loss;
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
    if (!std::isfinite(epoch_loss)) throw TrainingDiverged(losses.size());
    for (double v : model.params())
      if (!std::isfinite(v)) throw TrainingDiverged(losses.size());
    losses.push_back(epoch_loss);
  }
}

void check_adv_mask(const RFGeometry& geom, const TrainConfig& config) {
  require(config.adv_mask_shape.has_value(), "provable adversarial training needs a mask shape");
  const Shape s = *config.adv_mask_shape;
  require(s.rows > 0 && s.cols > 0, "adversarial mask dimensions must be positive");
  require(s.rows <= geom.feature_rows() && s.cols <= geom.feature_cols(),
          "adversarial mask larger than the feature grid");
}

}  // namespace

TrainingRun train(const LabeledDataset& data, const RFGeometry& geom, const TrainConfig& config) {
  check_training_inputs(data, geom, config);
  require(data.class_count > 0, "dataset needs classes");
  TrainingRun run{PatchEnsembleModel::initialized(geom, data.class_count, config.hidden_units,
                                                  config.seed),
                  {}};
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  run_sgd(run.model, data, config, config.epochs, TrainingHead{}, rng, run.epoch_losses);
  return run;
}

TrainingRun train_provable_adv(const LabeledDataset& data, const TrainConfig& config,
                               const PatchEnsembleModel& start) {
  check_training_inputs(data, start.geometry(), config);
  check_adv_mask(start.geometry(), config);
  require(start.classes() == data.class_count, "model and dataset disagree on class count");
  TrainingRun run{start, {}};
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  const std::size_t epochs = config.adv_epochs > 0 ? config.adv_epochs : config.epochs;
  run_sgd(run.model, data, config, epochs, TrainingHead{config.adv_mask_shape}, rng,
          run.epoch_losses);
  return run;
}

TrainingRun train_provable_adv(const LabeledDataset& data, const RFGeometry& geom,
                               const TrainConfig& config) {
  check_training_inputs(data, geom, config);
  check_adv_mask(geom, config);
  const TrainingRun plain = train(data, geom, config);
  TrainingRun adv = train_provable_adv(data, config, plain.model);
  adv.epoch_losses.insert(adv.epoch_losses.begin(), plain.epoch_losses.begin(),
                          plain.epoch_losses.end());
  return adv;
}

namespace {

std::vector<char> relu_pattern(const PatchEnsembleModel& m, const PixelView& img) {
  const auto& g = m.geometry();
  std::vector<char> out;
  CellPass pass;
  std::vector<double> logits(m.classes());
  for (std::size_t i = 0; i < g.feature_rows(); ++i)
    for (std::size_t j = 0; j < g.feature_cols(); ++j) {
      gather(g, img, i, j, pass.x);
      forward_cell(m, pass.x, pass, logits.data());
      for (double z : pass.pre) out.push_back(z > 0.0);
    }
  return out;
}

double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  // Both effectively zero: nothing to compare.
  if (scale < 1e-7) return 0.0;
  return std::abs(a - b) / scale;
}

}  // namespace

GradientCheckReport gradient_check(const PatchEnsembleModel& model, const ImageTensor& image,
                                   Label label, std::uint64_t seed, std::size_t weight_probes,
                                   std::size_t pixel_probes) {
  constexpr double step = 1e-4;
  require(label < model.classes(), "label out of range");
  const PixelView base = view_of(model, image);
  std::vector<double> param_grad(model.params().size(), 0.0);
  std::vector<double> pixel_grad(image.pixels().size(), 0.0);
  example_loss_raw(model, base, label, TrainingHead{}, param_grad, pixel_grad);

  GradientCheckReport report;
  std::mt19937_64 rng(seed);
  PatchEnsembleModel probe = model;
  std::uniform_int_distribution<std::size_t> pick_param(0, param_grad.size() - 1);
  for (std::size_t t = 0; t < weight_probes; ++t) {
    const std::size_t i = pick_param(rng);
    const double orig = probe.params()[i];
    probe.params()[i] = orig + step;
    const auto pat_hi = relu_pattern(probe, base);
    const double hi = example_loss_raw(probe, base, label, TrainingHead{}, {}, {});
    probe.params()[i] = orig - step;
    const auto pat_lo = relu_pattern(probe, base);
    const double lo = example_loss_raw(probe, base, label, TrainingHead{}, {}, {});
    probe.params()[i] = orig;
    if (pat_hi != pat_lo) {
      ++report.skipped;
      continue;
    }
    ++report.probes;
    report.max_relative_error =
        std::max(report.max_relative_error, relative_error(param_grad[i], (hi - lo) / (2 * step)));
  }

  std::vector<double> pixels(image.pixels().begin(), image.pixels().end());
  std::uniform_int_distribution<std::size_t> pick_pixel(0, pixels.size() - 1);
  for (std::size_t t = 0; t < pixel_probes; ++t) {
    const std::size_t i = pick_pixel(rng);
    const double orig = pixels[i];
    PixelView v = base;
    v.pixels = pixels;
    pixels[i] = orig + step;
    const auto pat_hi = relu_pattern(model, v);
    const double hi = example_loss_raw(model, v, label, TrainingHead{}, {}, {});
    pixels[i] = orig - step;
    const auto pat_lo = relu_pattern(model, v);
    const double lo = example_loss_raw(model, v, label, TrainingHead{}, {}, {});
    pixels[i] = orig;
    if (pat_hi != pat_lo) {
      ++report.skipped;
      continue;
    }
    ++report.probes;
    report.max_relative_error =
        std::max(report.max_relative_error, relative_error(pixel_grad[i], (hi - lo) / (2 * step)));
  }
  return report;
}

}  // namespace patchguard
