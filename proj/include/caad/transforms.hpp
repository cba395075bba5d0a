#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "caad/rng.hpp"
#include "caad/spectral.hpp"

namespace caad::transforms {

using spectral::Grid;
using spectral::Index;

struct NegativeTransformConfig {
  enum class Kind { SaltNoise, Rot90 };
  Kind kind = Kind::SaltNoise;
  double salt_fraction = 0.05;
  float salt_value = 1.0f;
  std::vector<int> rot_choices{1, 2, 3};  // multiples of 90 degrees
  std::uint64_t seed = 0;

  void validate() const;
};

/// ⌊fraction·pixels⌋ distinct pixels drawn uniformly and set to value.
Grid salt_noise(const Grid& grid, double fraction, float value, Rng& rng);
Grid salt_noise(const Grid& grid, const NegativeTransformConfig& cfg);

/// Counterclockwise by 90·k degrees: out(i, j) = in(j, n-1-i) for k = 1.
Grid rot90(const Grid& image, int k);

struct SelfSupSet {
  std::vector<Grid> images;
  std::vector<int> labels;          // 0 benign, 1 transformed
  std::vector<std::size_t> source;  // index of the benign original
  std::vector<int> rotation_k;      // rot90 only, 0 for benign rows
};

/// Originals first (label 0), then one transformed twin per original (label 1).
SelfSupSet build_selfsup_set(std::span<const Grid> benign, const NegativeTransformConfig& cfg);

/// Applies the configured transform to every image of a [N,1,H,W] batch.
nn::Tensor<float> transform_batch(const nn::Tensor<float>& batch, const NegativeTransformConfig& cfg, Rng& rng);

}  // namespace caad::transforms
