#pragma once

#include <cstddef>
#include <optional>

#include "patchguard/tensor.hpp"

namespace patchguard {

/// Receptive-field layout of a patch-ensemble model: an r x r field slid at
/// stride s over the image, valid placements only (no padding).
struct RFGeometry {
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
  std::size_t channels = 1;
  std::size_t rf_rows = 0;
  std::size_t rf_cols = 0;
  std::size_t stride_rows = 1;
  std::size_t stride_cols = 1;

  static RFGeometry make(std::size_t image_rows, std::size_t image_cols, std::size_t channels,
                         std::size_t rf, std::size_t stride);

  std::size_t feature_rows() const noexcept { return (image_rows - rf_rows) / stride_rows + 1; }
  std::size_t feature_cols() const noexcept { return (image_cols - rf_cols) / stride_cols + 1; }
  Shape feature_shape() const noexcept { return {feature_rows(), feature_cols()}; }
  std::size_t patch_inputs() const noexcept { return rf_rows * rf_cols * channels; }

  // Throws ContractViolation if any field is zero or the field exceeds the image.
  void validate() const;

  bool operator==(const RFGeometry&) const = default;
};

struct PixelAnchor {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const PixelAnchor&) const = default;
};

/// Patch size in pixels per axis.
struct PatchSpec {
  std::size_t prows = 1;
  std::size_t pcols = 1;

  static PatchSpec square(std::size_t p) { return {p, p}; }
  // Side of the square patch whose area is closest to `fraction` of the image.
  static PatchSpec square_for_area(double fraction, std::size_t image_rows, std::size_t image_cols);
};

/// Number of feature cells one patch of `p` pixels can touch along one axis:
/// ceil((p + r - 1) / s).
std::size_t window_size(std::size_t p, std::size_t r, std::size_t s);

/// Per-axis window_size, clamped to the feature grid.
Shape mask_shape(const PatchSpec& patch, const RFGeometry& geom);

/// Minimal feature window holding every cell whose receptive field meets the
/// patch placed at `anchor`. Empty when the patch lies entirely in the gaps
/// between receptive fields (possible when s > r).
std::optional<Window> affected_cells(PixelAnchor anchor, const PatchSpec& patch,
                                     const RFGeometry& geom);

}  // namespace patchguard
