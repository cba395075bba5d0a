#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "caad/spectral.hpp"

namespace caad::mnist {

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

/// Gzipped (or plain) IDX3 image and IDX1 label files.
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

/// Bilinear resize with half-pixel centres.
spectral::Grid resize_bilinear(const spectral::Grid& in, spectral::Index rows, spectral::Index cols);

struct OneClassOptions {
  int digit = 4;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  spectral::Index size = 64;
  std::uint64_t seed = 0;
};

/// One-class protocol: train/val are disjoint draws of the chosen digit from the
/// training images; test is the full t10k set with that digit benign and every other digit anomalous.
spectral::DatasetBundle one_class_bundle(const std::filesystem::path& dir, const OneClassOptions& options);

}  // namespace caad::mnist
