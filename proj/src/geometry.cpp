#include "patchguard/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace patchguard {

RFGeometry RFGeometry::make(std::size_t image_rows, std::size_t image_cols, std::size_t channels,
                            std::size_t rf, std::size_t stride) {
  RFGeometry g{image_rows, image_cols, channels, rf, rf, stride, stride};
  g.validate();
  return g;
}

void RFGeometry::validate() const {
  require(image_rows > 0 && image_cols > 0 && channels > 0, "image dimensions must be positive");
  require(rf_rows > 0 && rf_cols > 0, "receptive field must be positive");
  require(stride_rows > 0 && stride_cols > 0, "stride must be positive");
  require(rf_rows <= image_rows && rf_cols <= image_cols,
          "receptive field larger than the image");
}

PatchSpec PatchSpec::square_for_area(double fraction, std::size_t image_rows,
                                     std::size_t image_cols) {
  require(fraction > 0.0 && fraction <= 1.0, "patch area fraction must lie in (0,1]");
  const double side = std::sqrt(fraction * static_cast<double>(image_rows * image_cols));
  auto p = static_cast<std::size_t>(std::lround(side));
  p = std::clamp<std::size_t>(p, 1, std::min(image_rows, image_cols));
  return square(p);
}

std::size_t window_size(std::size_t p, std::size_t r, std::size_t s) {
  require(p > 0 && r > 0 && s > 0, "window_size arguments must be positive");
  return (p + r - 1 + s - 1) / s;
}

Shape mask_shape(const PatchSpec& patch, const RFGeometry& geom) {
  geom.validate();
  require(patch.prows > 0 && patch.pcols > 0, "patch dimensions must be positive");
  require(patch.prows <= geom.image_rows && patch.pcols <= geom.image_cols,
          "patch larger than the image");
  return {std::min(window_size(patch.prows, geom.rf_rows, geom.stride_rows), geom.feature_rows()),
          std::min(window_size(patch.pcols, geom.rf_cols, geom.stride_cols), geom.feature_cols())};
}

namespace {

// Feature indices along one axis whose field [i*s, i*s + r - 1] meets the
// pixel span [a, a + p - 1]; returns false if none does.
bool axis_range(std::size_t a, std::size_t p, std::size_t r, std::size_t s, std::size_t n,
                std::size_t& first, std::size_t& last) {
  const std::size_t patch_last = a + p - 1;
  // i*s + r - 1 >= a  <=>  i >= ceil((a - r + 1) / s)
  first = a + 1 > r ? (a + 1 - r + s - 1) / s : 0;
  last = std::min(patch_last / s, n - 1);
  return first <= last;
}

}  // namespace

std::optional<Window> affected_cells(PixelAnchor anchor, const PatchSpec& patch,
                                     const RFGeometry& geom) {
  geom.validate();
  require(patch.prows > 0 && patch.pcols > 0, "patch dimensions must be positive");
  require(anchor.row + patch.prows <= geom.image_rows && anchor.col + patch.pcols <= geom.image_cols,
          "anchored patch lies outside the image");
  std::size_t r0, r1, c0, c1;
  if (!axis_range(anchor.row, patch.prows, geom.rf_rows, geom.stride_rows, geom.feature_rows(), r0,
                  r1))
    return std::nullopt;
  if (!axis_range(anchor.col, patch.pcols, geom.rf_cols, geom.stride_cols, geom.feature_cols(), c0,
                  c1))
    return std::nullopt;
  return Window{r0, c0, r1 - r0 + 1, c1 - c0 + 1};
}

}  // namespace patchguard
