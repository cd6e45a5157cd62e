#include "patchguard/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace patchguard {

LabeledDataset make_synthetic(const SyntheticSpec& spec) {
  require(spec.classes >= 2 && spec.classes <= 10, "synthetic data supports 2 to 10 classes");
  require(spec.rows > 0 && spec.cols > 0 && spec.channels > 0, "image dimensions must be positive");
  require(spec.noise >= 0.0, "noise must be non-negative");
  require(spec.contrast > 0.0 && spec.contrast <= 0.5, "contrast must lie in (0, 0.5]");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> contrast(0.55 * spec.contrast, spec.contrast);
  std::uniform_real_distribution<double> offset(-0.05, 0.05);
  std::normal_distribution<double> noise(0.0, spec.noise);

  LabeledDataset data;
  data.class_count = spec.classes;
  std::vector<double> pixels(spec.rows * spec.cols * spec.channels);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const Label label = i % spec.classes;
    const double theta = static_cast<double>(label % 5) * std::numbers::pi / 5.0;
    const double period = label < 5 ? 4.0 : 7.0;
    const double dx = std::cos(theta) * 2.0 * std::numbers::pi / period;
    const double dy = std::sin(theta) * 2.0 * std::numbers::pi / period;
    const double ph = phase(rng);
    const double amp = contrast(rng);
    const double mean = 0.5 + offset(rng);
    for (std::size_t r = 0; r < spec.rows; ++r)
      for (std::size_t c = 0; c < spec.cols; ++c) {
        const double base = mean + amp * std::sin(dx * static_cast<double>(c) + dy * static_cast<double>(r) + ph);
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
          const double v = std::clamp(base + (spec.noise > 0.0 ? noise(rng) : 0.0), 0.0, 1.0);
          pixels[(r * spec.cols + c) * spec.channels + ch] = static_cast<float>(v);
        }
      }
    data.images.emplace_back(spec.rows, spec.cols, spec.channels, pixels);
    data.labels.push_back(label);
  }
  return data;
}

}  // namespace patchguard
