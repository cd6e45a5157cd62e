#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "patchguard/aggregate.hpp"
#include "patchguard/attack.hpp"
#include "patchguard/certify.hpp"
#include "patchguard/geometry.hpp"
#include "patchguard/model.hpp"

namespace patchguard {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every recognized config key with its default, in documentation order.
const std::vector<ConfigKey>& config_keys();

struct ExperimentConfig {
  std::filesystem::path dataset;
  std::filesystem::path test_dataset;
  std::filesystem::path model;
  std::filesystem::path output;

  std::size_t rf = 9;
  std::size_t stride = 4;
  std::size_t hidden = 32;
  FeatureKind kind = FeatureKind::logits;
  ClipBounds clip{0.0, std::nullopt};
  double threshold = 0.0;
  double patch_area = 0.03;
  std::size_t patch = 0;       // patch side in pixels; 0 derives it from patch_area
  std::optional<Shape> mask;   // deployed mask; absent means the malicious window
  std::size_t topk = 5;
  std::uint64_t seed = 0;
  std::size_t limit = 0;       // process only the first `limit` images; 0 means all
  std::size_t threads = 0;     // 0 means hardware concurrency

  double learning_rate = 0.05;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  bool adv_train = true;
  std::size_t adv_epochs = 0;

  AttackConfig attack;
  bool attack_defended = true;
  std::size_t attack_images = 0;  // 0 means all

  std::size_t gen_train = 3000;
  std::size_t gen_test = 200;
  std::size_t gen_rows = 32;
  std::size_t gen_cols = 32;
  std::size_t gen_channels = 1;
  std::size_t gen_classes = 10;
  double gen_noise = 0.05;
  double gen_contrast = 0.2;

  std::vector<std::uint64_t> oracle_seeds{0};
  std::size_t oracle_lemma1 = 500;
  std::size_t oracle_lemma2 = 200;
  std::size_t oracle_soundness = 1000;

  std::vector<std::size_t> sweep_rf;
  std::vector<double> sweep_threshold{0.0};
  std::vector<FeatureKind> sweep_kind{FeatureKind::logits};
  std::vector<double> sweep_patch_area{0.03};

  double hist_min = -10.0;
  double hist_max = 10.0;
  std::size_t hist_bins = 20;
};

/// Reads key=value text (see parse_key_values) over the defaults.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Builds a config from key/value pairs layered over config_keys() defaults.
/// Unknown keys and unparsable values throw ContractViolation.
ExperimentConfig make_config(const std::map<std::string, std::string>& values);

/// Geometry of `cfg` applied to images of the given size.
RFGeometry config_geometry(const ExperimentConfig& cfg, std::size_t rows, std::size_t cols,
                           std::size_t channels);
PatchSpec config_patch(const ExperimentConfig& cfg, std::size_t rows, std::size_t cols);
MaskingConfig config_masking(const ExperimentConfig& cfg, const RFGeometry& geom);

struct GenDataSummary {
  std::size_t train = 0;
  std::size_t test = 0;
};
GenDataSummary cmd_gen_data(const ExperimentConfig& cfg, std::ostream& log);

struct TrainSummary {
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};
TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log);

struct CertifyRow {
  std::size_t index = 0;
  Label label = 0;
  Label prediction = 0;
  bool certified = false;
  std::vector<bool> topk;  // topk[j] : certified within the top j+1
  double true_lower = 0.0;
  double max_wrong_upper = 0.0;
  bool detected = false;  // detection fired on the predicted class's slice
};

struct CertifySummary {
  std::size_t images = 0;
  std::size_t clean_correct = 0;
  std::size_t provable = 0;             // correct and certified
  std::vector<std::size_t> topk;        // top-k certified, k = 1..
  std::size_t detections = 0;
  double clean_accuracy() const { return images ? double(clean_correct) / double(images) : 0.0; }
  double provable_accuracy() const { return images ? double(provable) / double(images) : 0.0; }
};

std::vector<CertifyRow> certify_images(const PatchEnsembleModel& model, const LabeledDataset& data,
                                       const ExperimentConfig& cfg);
CertifySummary summarize(const std::vector<CertifyRow>& rows, std::size_t topk);
std::string certify_csv(const std::vector<CertifyRow>& rows, std::size_t topk);

/// Writes <output>/certify.csv.
CertifySummary cmd_certify(const ExperimentConfig& cfg, std::ostream& log);

struct AttackSummary {
  std::size_t certified_attacked = 0;
  std::size_t certified_successes = 0;
  std::size_t uncertified_attacked = 0;
  std::size_t uncertified_successes = 0;
};
/// Writes <output>/attack.csv. Certified images are attacked against the
/// defended pipeline; any success there is a soundness violation.
AttackSummary cmd_attack(const ExperimentConfig& cfg, std::ostream& log);

struct DiagnoseSummary {
  double clean_incorrect_local = 0.0;
  double attacked_incorrect_local = 0.0;
  double attack_success_rate = 0.0;
};
/// Writes <output>/diagnose.csv and <output>/histogram.csv.
DiagnoseSummary cmd_diagnose(const ExperimentConfig& cfg, std::ostream& log);

struct OracleSummary {
  std::size_t violations = 0;
};
/// Writes <output>/oracle.csv.
OracleSummary cmd_oracle(const ExperimentConfig& cfg, std::ostream& log);

/// Writes <output>/sweep.csv; returns the number of rows.
std::size_t cmd_eval_sweep(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace patchguard
