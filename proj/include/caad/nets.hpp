#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "caad/nn/layers.hpp"

namespace caad {

using nn::Index;

struct GeneratorSpec {
  Index height = 32;
  Index width = 32;
  Index base_channels = 8;
  Index max_channels = 64;
  /// false gives the plain encoder-decoder used by the no_unet ablation.
  bool skip_connections = true;
};

struct CriticSpec {
  Index height = 32;
  Index width = 32;
  Index base_channels = 16;
  Index max_channels = 64;
  Index embedding_dim = 512;
  double dropout = 0.5;
};

/// UNet autoencoder: 5 down, 5 same and 5 up blocks, sigmoid output in [0,1].
/// Inputs are zero-padded to a multiple of 32 internally and cropped back.
template <typename T>
class Generator {
 public:
  using Scalar = T;
  static constexpr int kDepth = 5;

  Generator(GeneratorSpec spec, std::uint64_t seed);

  /// x [N,1,H,W] -> [N,1,H,W]. Training mode uses batch statistics.
  nn::Var<T> forward(const nn::Var<T>& x, bool training);

  std::vector<nn::ParamRef<T>> parameters();
  std::vector<nn::BufferRef<T>> buffers();
  const GeneratorSpec& spec() const noexcept { return spec_; }

 private:
  struct Block {
    nn::Conv2d<T> conv;
    nn::ConvTranspose2d<T> deconv;
    nn::BatchNorm2d<T> norm;
  };
  GeneratorSpec spec_;
  std::vector<Block> down_, same_, up_;
  nn::Conv2d<T> head_;
};

template <typename T>
struct CriticOutput {
  nn::Var<T> scores;      // [N,1], unbounded realness
  nn::Var<T> embeddings;  // [N,D], unit rows
};

/// Five conv blocks (instance norm, leaky ReLU 0.2, dropout), a linear
/// embedding layer and a scalar head on the pre-normalization embedding.
template <typename T>
class Critic {
 public:
  using Scalar = T;
  static constexpr int kBlocks = 5;

  Critic(CriticSpec spec, std::uint64_t seed);

  /// dropout_active=false is the deterministic eval pass; true draws a fresh
  /// mask from the critic's own stream on every call.
  CriticOutput<T> forward(const nn::Var<T>& x, bool dropout_active);

  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = derive_rng(seed, 0xD50); }
  Rng& dropout_rng() noexcept { return dropout_rng_; }

  std::vector<nn::ParamRef<T>> parameters();
  const CriticSpec& spec() const noexcept { return spec_; }
  Index feature_size() const noexcept { return feature_size_; }

 private:
  CriticSpec spec_;
  std::vector<nn::Conv2d<T>> blocks_;
  nn::Linear<T> embed_, head_;
  Index feature_size_ = 0;
  Rng dropout_rng_;
};

/// Parameters and buffers keyed by name, as float32 (checkpoint payload).
template <typename Net>
std::vector<std::pair<std::string, nn::Tensor<float>>> export_state(Net& net, const std::string& prefix);

/// Copies matching entries into net; missing or mis-shaped entries are CorruptInput.
template <typename Net>
void import_state(Net& net, const std::string& prefix, const std::map<std::string, nn::Tensor<float>>& entries);

}  // namespace caad
