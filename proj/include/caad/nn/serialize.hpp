#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "caad/nn/tensor.hpp"

namespace caad::nn {

/// Versioned little-endian tensor archive: magic, count, then per entry
/// name, rank, dims and float32 data.
void save_tensors(const std::filesystem::path& path, const std::vector<std::pair<std::string, Tensor<float>>>& entries);
std::map<std::string, Tensor<float>> load_tensors(const std::filesystem::path& path);

}  // namespace caad::nn
