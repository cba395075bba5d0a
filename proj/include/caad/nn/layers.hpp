#pragma once

#include <string>
#include <vector>

#include "caad/nn/ops.hpp"
#include "caad/rng.hpp"

namespace caad::nn {

/// Named handle to a trainable Var owned by a layer.
template <typename T>
struct ParamRef {
  std::string name;
  Var<T>* var;
};

/// Named handle to non-trainable state (running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
struct Conv2d {
  Var<T> weight;  // [O, C, k, k]
  Var<T> bias;    // [O] or undefined
  ConvGeom geom;
};

template <typename T>
struct ConvTranspose2d {
  Var<T> weight;  // [Cin, Cout, k, k]
  Var<T> bias;
  ConvGeom geom;
};

template <typename T>
struct Linear {
  Var<T> weight;  // [in, out]
  Var<T> bias;    // [1, out]
};

template <typename T>
struct BatchNorm2d {
  Var<T> gamma;
  Var<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, as in the
// usual framework defaults.
template <typename T>
Conv2d<T> make_conv2d(Index in, Index out, ConvGeom geom, bool bias, Rng& rng);
template <typename T>
ConvTranspose2d<T> make_conv_transpose2d(Index in, Index out, ConvGeom geom, bool bias, Rng& rng);
template <typename T>
Linear<T> make_linear(Index in, Index out, Rng& rng);
template <typename T>
BatchNorm2d<T> make_batch_norm2d(Index channels);

template <typename T> Var<T> forward(const Conv2d<T>& layer, const Var<T>& x);
template <typename T> Var<T> forward(const ConvTranspose2d<T>& layer, const Var<T>& x);
/// x [N, in] -> [N, out]
template <typename T> Var<T> forward(const Linear<T>& layer, const Var<T>& x);
/// Batch statistics (and a running-average update) when training, running statistics otherwise.
template <typename T> Var<T> forward(BatchNorm2d<T>& layer, const Var<T>& x, bool training);

template <typename T> void collect(const std::string& prefix, Conv2d<T>& l, std::vector<ParamRef<T>>& out);
template <typename T> void collect(const std::string& prefix, ConvTranspose2d<T>& l, std::vector<ParamRef<T>>& out);
template <typename T> void collect(const std::string& prefix, Linear<T>& l, std::vector<ParamRef<T>>& out);
template <typename T> void collect(const std::string& prefix, BatchNorm2d<T>& l, std::vector<ParamRef<T>>& out);
template <typename T> void collect_buffers(const std::string& prefix, BatchNorm2d<T>& l, std::vector<BufferRef<T>>& out);

/// Adam with PyTorch-style bias correction.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double eps = 1e-8;
  };

  Adam(std::vector<ParamRef<T>> params, Options options);

  /// Applies one update from each parameter's accumulated grad, then clears it.
  void step();
  void zero_grad();
  long steps() const noexcept { return t_; }
  const Options& options() const noexcept { return options_; }
  std::vector<BufferRef<T>> state();

 private:
  std::vector<ParamRef<T>> params_;
  Options options_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace caad::nn
