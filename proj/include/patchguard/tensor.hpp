#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "patchguard/errors.hpp"

namespace patchguard {

using Label = std::size_t;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t area() const noexcept { return rows * cols; }
  auto operator<=>(const Shape&) const = default;
};

/// Axis-aligned rectangle of feature cells.
struct Window {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t rows = 1;
  std::size_t cols = 1;

  Shape shape() const noexcept { return {rows, cols}; }
  std::size_t area() const noexcept { return rows * cols; }
  std::size_t row_end() const noexcept { return row0 + rows; }
  std::size_t col_end() const noexcept { return col0 + cols; }
  bool contains(std::size_t r, std::size_t c) const noexcept {
    return r >= row0 && r < row_end() && c >= col0 && c < col_end();
  }
  bool covers(const Window& inner) const noexcept {
    return inner.row0 >= row0 && inner.row_end() <= row_end() && inner.col0 >= col0 &&
           inner.col_end() <= col_end();
  }
  bool intersects(const Window& o) const noexcept {
    return row0 < o.row_end() && o.row0 < row_end() && col0 < o.col_end() && o.col0 < col_end();
  }
  bool fits(Shape grid) const noexcept {
    return rows > 0 && cols > 0 && row_end() <= grid.rows && col_end() <= grid.cols;
  }
  auto operator<=>(const Window&) const = default;
};

/// Dense 2-D grid of reals (one class slice of a feature tensor), row-major.
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, double fill = 0.0);
  Grid(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  Shape shape() const noexcept { return {rows_, cols_}; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  std::span<const double> values() const noexcept { return values_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// H x W x C image with pixel values in [0,1], stored (row, col, channel).
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(std::size_t rows, std::size_t cols, std::size_t channels, std::vector<double> pixels);
  static ImageTensor filled(std::size_t rows, std::size_t cols, std::size_t channels, double v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t channels() const noexcept { return channels_; }
  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return pixels_[(r * cols_ + c) * channels_ + ch];
  }
  std::span<const double> pixels() const noexcept { return pixels_; }

  // Returns a copy with one pixel replaced; the value must lie in [0,1].
  ImageTensor with_pixel(std::size_t r, std::size_t c, std::size_t ch, double v) const;

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> pixels_;
};

enum class FeatureKind { logits, confidence, prediction };

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view text);

/// rows x cols grid of length-N class vectors, stored (row, col, class).
class FeatureTensor {
 public:
  FeatureTensor() = default;
  // Validates the kind-specific invariants (finite logits, normalized
  // confidence cells, one-hot prediction cells).
  FeatureTensor(std::size_t rows, std::size_t cols, std::size_t classes, FeatureKind kind,
                std::vector<double> values);

  // Skips the kind checks. Used for derived tensors (clipped, masked,
  // adversarially edited) whose values are only required to be finite or
  // +/-inf free.
  static FeatureTensor unchecked(std::size_t rows, std::size_t cols, std::size_t classes,
                                 FeatureKind kind, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t cells() const noexcept { return rows_ * cols_; }
  Shape shape() const noexcept { return {rows_, cols_}; }
  FeatureKind kind() const noexcept { return kind_; }
  double at(std::size_t r, std::size_t c, std::size_t k) const {
    return values_[(r * cols_ + c) * classes_ + k];
  }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> cell(std::size_t r, std::size_t c) const {
    return std::span<const double>(values_).subspan((r * cols_ + c) * classes_, classes_);
  }

  Grid slice(Label k) const;
  double total(Label k) const;

  bool operator==(const FeatureTensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t classes_ = 0;
  FeatureKind kind_ = FeatureKind::logits;
  std::vector<double> values_;
};

/// Interval clip [lo, hi]; an absent `hi` means no upper bound.
class ClipBounds {
 public:
  ClipBounds() = default;
  ClipBounds(double lo, std::optional<double> hi);

  double lo() const noexcept { return lo_; }
  const std::optional<double>& hi() const noexcept { return hi_; }
  bool bounded_above() const noexcept { return hi_.has_value(); }
  double apply(double v) const noexcept;

  bool operator==(const ClipBounds&) const = default;

 private:
  double lo_ = 0.0;
  std::optional<double> hi_;
};

FeatureTensor clip(const FeatureTensor& tensor, const ClipBounds& bounds);

double sum_in_window(const Grid& slice, const Window& window);
double sum_outside_window(const Grid& slice, const Window& window);
double sum_all(const Grid& slice);
double sum_in_window(const FeatureTensor& tensor, Label k, const Window& window);
double sum_outside_window(const FeatureTensor& tensor, Label k, const Window& window);

/// Every window of shape (wrows, wcols) fully inside a grid of shape
/// (grid_rows, grid_cols), in row-major order of the top-left corner.
std::vector<Window> enumerate_windows(std::size_t grid_rows, std::size_t grid_cols,
                                      std::size_t wrows, std::size_t wcols);
inline std::vector<Window> enumerate_windows(Shape grid, Shape window) {
  return enumerate_windows(grid.rows, grid.cols, window.rows, window.cols);
}

/// First window (row-major) of the given shape with the largest in-window sum.
Window best_window(const Grid& slice, Shape shape);

/// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

}  // namespace patchguard
