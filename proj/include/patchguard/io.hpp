#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "patchguard/model.hpp"
#include "patchguard/tensor.hpp"

namespace patchguard {

// Dataset file:
//   "PGDS" | u8 version | u32 count, rows, cols, channels, classes
//   | float32 pixels (count*rows*cols*channels, (row, col, channel) order)
//   | u16 labels (count)
// All multi-byte fields little-endian.
inline constexpr std::uint8_t kDatasetVersion = 1;

// Model checkpoint:
//   "PGMD" | u8 version | u32 image_rows, image_cols, channels, rf_rows,
//   rf_cols, stride_rows, stride_cols | u32 inputs, hidden, classes
//   | float64 parameters in PatchEnsembleModel's flat order
inline constexpr std::uint8_t kModelVersion = 1;

// Feature tensor file:
//   "PGFT" | u8 version | u8 kind (0 logits, 1 confidence, 2 prediction)
//   | u32 rows, cols, classes | float64 values, (row, col, class) order
inline constexpr std::uint8_t kFeatureVersion = 1;

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& data);
LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_model(const PatchEnsembleModel& model);
PatchEnsembleModel decode_model(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_features(const FeatureTensor& tensor);
FeatureTensor decode_features(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

void save_dataset(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);
void save_model(const PatchEnsembleModel& model, const std::filesystem::path& path);
PatchEnsembleModel load_model(const std::filesystem::path& path);
void save_features(const FeatureTensor& tensor, const std::filesystem::path& path);
FeatureTensor load_features(const std::filesystem::path& path);

/// Flat key=value text. Blank lines and text after '#' are ignored; keys and
/// values are trimmed. Throws ContractViolation naming the line on a line
/// without '=' or with an empty key.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Fixed-precision decimal rendering used by every CSV writer.
std::string format_real(double v, int digits = 6);

}  // namespace patchguard
