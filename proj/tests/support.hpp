#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "patchguard/model.hpp"
#include "patchguard/tensor.hpp"

namespace testing {

using namespace patchguard;

inline FeatureTensor prediction_tensor(std::size_t rows, std::size_t cols, std::size_t classes,
                                       const std::vector<Label>& cell_labels) {
  std::vector<double> v(rows * cols * classes, 0.0);
  for (std::size_t c = 0; c < cell_labels.size(); ++c) v[c * classes + cell_labels[c]] = 1.0;
  return FeatureTensor(rows, cols, classes, FeatureKind::prediction, std::move(v));
}

inline FeatureTensor random_logits(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                   std::size_t classes, double lo = -5.0, double hi = 5.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(rows * cols * classes);
  for (double& x : v) x = d(rng);
  return FeatureTensor(rows, cols, classes, FeatureKind::logits, std::move(v));
}

inline FeatureTensor random_prediction(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                       std::size_t classes) {
  std::uniform_int_distribution<std::size_t> d(0, classes - 1);
  std::vector<Label> labels(rows * cols);
  for (auto& l : labels) l = d(rng);
  return prediction_tensor(rows, cols, classes, labels);
}

inline ImageTensor random_image(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                std::size_t channels) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> px(rows * cols * channels);
  for (double& x : px) x = d(rng);
  return ImageTensor(rows, cols, channels, std::move(px));
}

// Straightforward per-cell forward pass written independently of the
// library's implementation.
inline std::vector<double> reference_local_logits(const PatchEnsembleModel& m,
                                                  const ImageTensor& img) {
  const RFGeometry& g = m.geometry();
  const auto p = m.params();
  const std::size_t in = m.inputs(), h = m.hidden(), n = m.classes();
  std::vector<double> out;
  for (std::size_t i = 0; i < g.feature_rows(); ++i)
    for (std::size_t j = 0; j < g.feature_cols(); ++j) {
      std::vector<double> x;
      for (std::size_t r = 0; r < g.rf_rows; ++r)
        for (std::size_t c = 0; c < g.rf_cols; ++c)
          for (std::size_t ch = 0; ch < g.channels; ++ch)
            x.push_back(img.at(i * g.stride_rows + r, j * g.stride_cols + c, ch));
      std::vector<double> hid(h);
      for (std::size_t u = 0; u < h; ++u) {
        double z = p[m.b1_offset() + u];
        for (std::size_t q = 0; q < in; ++q) z += p[m.w1_offset() + u * in + q] * x[q];
        hid[u] = z > 0.0 ? z : 0.0;
      }
      for (std::size_t k = 0; k < n; ++k) {
        double z = p[m.b2_offset() + k];
        for (std::size_t u = 0; u < h; ++u) z += p[m.w2_offset() + k * h + u] * hid[u];
        out.push_back(z);
      }
    }
  return out;
}

// Fresh scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("patchguard_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
