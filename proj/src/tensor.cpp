#include "patchguard/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace patchguard {

Grid::Grid(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Grid::Grid(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  require(values_.size() == rows * cols, "grid value count does not match its shape");
}

ImageTensor::ImageTensor(std::size_t rows, std::size_t cols, std::size_t channels,
                         std::vector<double> pixels)
    : rows_(rows), cols_(cols), channels_(channels), pixels_(std::move(pixels)) {
  require(rows > 0 && cols > 0 && channels > 0, "image dimensions must be positive");
  require(pixels_.size() == rows * cols * channels, "pixel count must equal rows*cols*channels");
  for (double v : pixels_) require(v >= 0.0 && v <= 1.0, "pixel value outside [0,1]");
}

ImageTensor ImageTensor::filled(std::size_t rows, std::size_t cols, std::size_t channels,
                                double v) {
  return ImageTensor(rows, cols, channels, std::vector<double>(rows * cols * channels, v));
}

ImageTensor ImageTensor::with_pixel(std::size_t r, std::size_t c, std::size_t ch, double v) const {
  require(r < rows_ && c < cols_ && ch < channels_, "pixel index out of range");
  require(v >= 0.0 && v <= 1.0, "pixel value outside [0,1]");
  ImageTensor out = *this;
  out.pixels_[(r * cols_ + c) * channels_ + ch] = v;
  return out;
}

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::logits: return "logits";
    case FeatureKind::confidence: return "confidence";
    case FeatureKind::prediction: return "prediction";
  }
  return "?";
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "logits") return FeatureKind::logits;
  if (text == "confidence") return FeatureKind::confidence;
  if (text == "prediction") return FeatureKind::prediction;
  throw ContractViolation("unknown feature kind '" + std::string(text) + "'");
}

FeatureTensor::FeatureTensor(std::size_t rows, std::size_t cols, std::size_t classes,
                             FeatureKind kind, std::vector<double> values)
    : rows_(rows), cols_(cols), classes_(classes), kind_(kind), values_(std::move(values)) {
  require(rows > 0 && cols > 0 && classes > 0, "feature tensor dimensions must be positive");
  require(values_.size() == rows * cols * classes,
          "feature value count must equal rows*cols*classes");
  for (std::size_t cell = 0; cell < rows * cols; ++cell) {
    const double* v = values_.data() + cell * classes;
    switch (kind) {
      case FeatureKind::logits:
        for (std::size_t k = 0; k < classes; ++k)
          require(std::isfinite(v[k]), "logits must be finite");
        break;
      case FeatureKind::confidence: {
        double s = 0.0;
        for (std::size_t k = 0; k < classes; ++k) {
          require(v[k] >= 0.0 && v[k] <= 1.0, "confidence value outside [0,1]");
          s += v[k];
        }
        require(std::abs(s - 1.0) <= 1e-6, "confidence cell does not sum to 1");
        break;
      }
      case FeatureKind::prediction: {
        std::size_t ones = 0;
        for (std::size_t k = 0; k < classes; ++k) {
          require(v[k] == 0.0 || v[k] == 1.0, "prediction cell is not one-hot");
          ones += v[k] == 1.0;
        }
        require(ones == 1, "prediction cell is not one-hot");
        break;
      }
    }
  }
}

FeatureTensor FeatureTensor::unchecked(std::size_t rows, std::size_t cols, std::size_t classes,
                                       FeatureKind kind, std::vector<double> values) {
  require(values.size() == rows * cols * classes,
          "feature value count must equal rows*cols*classes");
  FeatureTensor t;
  t.rows_ = rows;
  t.cols_ = cols;
  t.classes_ = classes;
  t.kind_ = kind;
  t.values_ = std::move(values);
  return t;
}

Grid FeatureTensor::slice(Label k) const {
  require(k < classes_, "class index out of range");
  std::vector<double> out(rows_ * cols_);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = values_[i * classes_ + k];
  return Grid(rows_, cols_, std::move(out));
}

double FeatureTensor::total(Label k) const {
  require(k < classes_, "class index out of range");
  double s = 0.0;
  for (std::size_t i = 0; i < rows_ * cols_; ++i) s += values_[i * classes_ + k];
  return s;
}

ClipBounds::ClipBounds(double lo, std::optional<double> hi) : lo_(lo), hi_(hi) {
  require(!std::isnan(lo) && std::isfinite(lo), "clip lower bound must be finite");
  if (hi_) {
    require(!std::isnan(*hi_), "clip upper bound must not be NaN");
    // +inf is normalized to the explicit "no upper bound" state.
    if (std::isinf(*hi_) && *hi_ > 0) hi_.reset();
  }
  if (hi_) require(lo_ <= *hi_, "clip bounds require lo <= hi");
}

double ClipBounds::apply(double v) const noexcept {
  double out = std::max(lo_, v);
  if (hi_) out = std::min(*hi_, out);
  return out;
}

FeatureTensor clip(const FeatureTensor& tensor, const ClipBounds& bounds) {
  std::vector<double> out(tensor.values().begin(), tensor.values().end());
  for (double& v : out) v = bounds.apply(v);
  return FeatureTensor::unchecked(tensor.rows(), tensor.cols(), tensor.classes(), tensor.kind(),
                                  std::move(out));
}

namespace {

void check_window(Shape grid, const Window& w) {
  require(w.fits(grid), "window does not lie inside the feature grid");
}

}  // namespace

// All sums walk cells in row-major order so that two computations over the
// same cell set produce bit-identical results.
double sum_in_window(const Grid& slice, const Window& window) {
  check_window(slice.shape(), window);
  double s = 0.0;
  for (std::size_t r = window.row0; r < window.row_end(); ++r)
    for (std::size_t c = window.col0; c < window.col_end(); ++c) s += slice(r, c);
  return s;
}

double sum_outside_window(const Grid& slice, const Window& window) {
  check_window(slice.shape(), window);
  double s = 0.0;
  for (std::size_t r = 0; r < slice.rows(); ++r)
    for (std::size_t c = 0; c < slice.cols(); ++c)
      if (!window.contains(r, c)) s += slice(r, c);
  return s;
}

double sum_all(const Grid& slice) {
  double s = 0.0;
  for (double v : slice.values()) s += v;
  return s;
}

double sum_in_window(const FeatureTensor& tensor, Label k, const Window& window) {
  require(k < tensor.classes(), "class index out of range");
  check_window(tensor.shape(), window);
  double s = 0.0;
  for (std::size_t r = window.row0; r < window.row_end(); ++r)
    for (std::size_t c = window.col0; c < window.col_end(); ++c) s += tensor.at(r, c, k);
  return s;
}

double sum_outside_window(const FeatureTensor& tensor, Label k, const Window& window) {
  require(k < tensor.classes(), "class index out of range");
  check_window(tensor.shape(), window);
  double s = 0.0;
  for (std::size_t r = 0; r < tensor.rows(); ++r)
    for (std::size_t c = 0; c < tensor.cols(); ++c)
      if (!window.contains(r, c)) s += tensor.at(r, c, k);
  return s;
}

std::vector<Window> enumerate_windows(std::size_t grid_rows, std::size_t grid_cols,
                                      std::size_t wrows, std::size_t wcols) {
  require(wrows > 0 && wcols > 0, "window dimensions must be positive");
  require(wrows <= grid_rows && wcols <= grid_cols, "window larger than the feature grid");
  std::vector<Window> out;
  out.reserve((grid_rows - wrows + 1) * (grid_cols - wcols + 1));
  for (std::size_t r = 0; r + wrows <= grid_rows; ++r)
    for (std::size_t c = 0; c + wcols <= grid_cols; ++c) out.push_back({r, c, wrows, wcols});
  return out;
}

Window best_window(const Grid& slice, Shape shape) {
  const auto windows = enumerate_windows(slice.shape(), shape);
  Window best = windows.front();
  double best_sum = sum_in_window(slice, best);
  for (std::size_t i = 1; i < windows.size(); ++i) {
    const double s = sum_in_window(slice, windows[i]);
    if (s > best_sum) {
      best_sum = s;
      best = windows[i];
    }
  }
  return best;
}

std::size_t argmax_lowest(std::span<const double> values) {
  require(!values.empty(), "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace patchguard
