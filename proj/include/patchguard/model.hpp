#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "patchguard/geometry.hpp"
#include "patchguard/tensor.hpp"

namespace patchguard {

/// Small-receptive-field classifier built as an ensemble: one shared
/// one-hidden-layer ReLU perceptron applied to every rf x rf pixel patch at
/// the configured stride. Each placement yields one cell of local logits.
///
/// Parameters live in a single flat vector laid out as
///   w1 [hidden x inputs] | b1 [hidden] | w2 [classes x hidden] | b2 [classes]
/// with row-major matrices. The checkpoint format stores them in this order.
class PatchEnsembleModel {
 public:
  PatchEnsembleModel() = default;
  // All-zero weights.
  PatchEnsembleModel(RFGeometry geom, std::size_t classes, std::size_t hidden);
  PatchEnsembleModel(RFGeometry geom, std::size_t classes, std::size_t hidden,
                     std::vector<double> params);

  // Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)) per layer,
  // zero biases.
  static PatchEnsembleModel initialized(RFGeometry geom, std::size_t classes, std::size_t hidden,
                                        std::uint64_t seed);

  const RFGeometry& geometry() const noexcept { return geom_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t inputs() const noexcept { return geom_.patch_inputs(); }

  std::span<const double> params() const noexcept { return params_; }
  std::span<double> params() noexcept { return params_; }

  std::size_t w1_offset() const noexcept { return 0; }
  std::size_t b1_offset() const noexcept { return hidden_ * inputs(); }
  std::size_t w2_offset() const noexcept { return b1_offset() + hidden_; }
  std::size_t b2_offset() const noexcept { return w2_offset() + classes_ * hidden_; }
  static std::size_t param_count(const RFGeometry& g, std::size_t classes, std::size_t hidden) {
    return hidden * g.patch_inputs() + hidden + classes * hidden + classes;
  }

  bool operator==(const PatchEnsembleModel&) const = default;

 private:
  RFGeometry geom_{};
  std::size_t classes_ = 0;
  std::size_t hidden_ = 0;
  std::vector<double> params_;
};

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t hidden_units = 32;
  // Window used by provable adversarial training.
  std::optional<Shape> adv_mask_shape;
  // Extra epochs of provable adversarial training; 0 means `epochs`.
  std::size_t adv_epochs = 0;
};

struct LabeledDataset {
  std::vector<ImageTensor> images;
  std::vector<Label> labels;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return images.size(); }
  void validate() const;
};

struct TrainingRun {
  PatchEnsembleModel model;
  std::vector<double> epoch_losses;  // mean minibatch loss per epoch
  double final_loss() const { return epoch_losses.empty() ? 0.0 : epoch_losses.back(); }
};

/// Local logits of every placement, (row, col, class) order.
std::vector<double> local_logits(const PatchEnsembleModel& model, const ImageTensor& image);

/// Backpropagates d(loss)/d(local logits) (layout as local_logits) into
/// parameter and pixel gradients. Either output span may be empty to skip
/// it; non-empty spans are accumulated into, not overwritten.
void backward_local(const PatchEnsembleModel& model, const ImageTensor& image,
                    std::span<const double> dlogits, std::span<double> param_grad,
                    std::span<double> pixel_grad);

/// Converts raw local logits (layout as local_logits) into a feature tensor
/// of the requested kind: softmax per cell for confidence, one-hot argmax
/// (ties to the lowest class) for prediction.
FeatureTensor features_from_logits(std::vector<double> logits, Shape grid, std::size_t classes,
                                   FeatureKind kind);

/// Local logits of the single cell (i, j).
void cell_logits(const PatchEnsembleModel& model, const ImageTensor& image, std::size_t i,
                 std::size_t j, std::span<double> out);

FeatureTensor extract_features(const PatchEnsembleModel& model, const ImageTensor& image,
                               FeatureKind kind);

/// Argmax of the mean local logits (ties to the lowest class).
Label predict_insecure(const PatchEnsembleModel& model, const ImageTensor& image);

/// Softmax cross-entropy of `scores` against `label`; fills dscores with
/// softmax - onehot when non-null.
double softmax_cross_entropy(std::span<const double> scores, Label label,
                             std::vector<double>* dscores);

/// How local logits become the class scores fed to the training loss.
struct TrainingHead {
  // Absent: mean of local logits. Present: provable adversarial training
  // head. Local logits are clipped at 0 and every class loses the window
  // holding the most true-class evidence; the true class also loses the
  // heaviest window of what remains, as in the certified lower bound.
  // Scores are the surviving evidence divided by the cell count.
  std::optional<Shape> provable_mask;
};

/// Loss of one example under `head`; accumulates gradients into the
/// provided spans (either may be empty).
double example_loss(const PatchEnsembleModel& model, const ImageTensor& image, Label label,
                    const TrainingHead& head, std::span<double> param_grad,
                    std::span<double> pixel_grad);

TrainingRun train(const LabeledDataset& data, const RFGeometry& geom, const TrainConfig& config);

/// Conventional training followed by provable adversarial training.
TrainingRun train_provable_adv(const LabeledDataset& data, const RFGeometry& geom,
                               const TrainConfig& config);

/// Provable adversarial training continued from `start`.
TrainingRun train_provable_adv(const LabeledDataset& data, const TrainConfig& config,
                               const PatchEnsembleModel& start);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
  // Probes dropped because the finite-difference interval crossed a ReLU kink.
  std::size_t skipped = 0;
};

/// Compares analytic gradients of the mean-logits loss with central finite
/// differences (step 1e-4) on a seeded sample of weights and pixels.
GradientCheckReport gradient_check(const PatchEnsembleModel& model, const ImageTensor& image,
                                   Label label, std::uint64_t seed = 0,
                                   std::size_t weight_probes = 40, std::size_t pixel_probes = 20);

}  // namespace patchguard
