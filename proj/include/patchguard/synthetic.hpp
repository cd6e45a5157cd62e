#pragma once

#include <cstddef>
#include <cstdint>

#include "patchguard/model.hpp"

namespace patchguard {

struct SyntheticSpec {
  std::size_t count = 1000;
  std::size_t rows = 32;
  std::size_t cols = 32;
  std::size_t channels = 1;
  std::size_t classes = 10;  // at most 10
  double noise = 0.05;       // std of additive Gaussian pixel noise
  double contrast = 0.2;     // largest grating amplitude; each image draws from [0.55, 1] of it
  std::uint64_t seed = 0;
};

/// Oriented sinusoidal gratings: class c uses orientation (c mod 5) * 36
/// degrees and a short (c < 5) or long period, with random phase, contrast,
/// brightness and noise per image. Any receptive field of a few pixels sees
/// enough of the texture to recognize the class. Labels cycle through the classes so
/// every prefix is nearly balanced. Pixels are float32-representable so the
/// dataset file round-trips exactly.
LabeledDataset make_synthetic(const SyntheticSpec& spec);

}  // namespace patchguard
