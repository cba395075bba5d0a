#pragma once

#include <random>
#include <vector>

#include "caad/nn/autograd.hpp"

namespace caad::nn {

// Differentiable primitives. Unless noted, every op's backward is built from
// these same ops and therefore supports second-order differentiation.

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T offset);
/// Elementwise product with a constant (non-differentiable) tensor.
template <typename T> Var<T> mul_const(const Var<T>& a, const Tensor<T>& factor);
template <typename T> Var<T> powc(const Var<T>& a, T exponent);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

/// Sum of all elements, shape [1].
template <typename T> Var<T> sum_all(const Var<T>& a);
template <typename T> Var<T> mean_all(const Var<T>& a);
template <typename T> Var<T> broadcast_scalar(const Var<T>& s, const Shape& shape);

/// [N, C, ...] -> [C], summing over every axis but 1.
template <typename T> Var<T> channel_sum(const Var<T>& x);
template <typename T> Var<T> broadcast_channel(const Var<T>& c, const Shape& shape);
/// [N, C, ...] -> [N, C], summing over the trailing axes.
template <typename T> Var<T> spatial_sum(const Var<T>& x);
template <typename T> Var<T> broadcast_spatial(const Var<T>& nc, const Shape& shape);

/// op(a) * op(b) on rank-2 tensors; op transposes when the flag is set.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_a = false, bool transpose_b = false);

/// y[i] = x[index[i]]; the adjoint of scatter_add.
template <typename T>
Var<T> gather(const Var<T>& x, std::vector<Index> index, Shape out_shape);
/// y[index[i]] += x[i] into zeros of out_shape.
template <typename T>
Var<T> scatter_add(const Var<T>& x, std::vector<Index> index, Shape out_shape);

template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T> Var<T> relu(const Var<T>& x);
/// First-order only: the backward treats sigmoid'(x) as a constant.
template <typename T> Var<T> sigmoid(const Var<T>& x);

struct ConvGeom {
  Index kernel = 3;
  Index stride = 1;
  Index pad = 0;
  Index out_size(Index in) const { return (in + 2 * pad - kernel) / stride + 1; }
  Index transposed_out_size(Index in) const { return (in - 1) * stride - 2 * pad + kernel; }
};

/// x [N,C,H,W], w [O,C,k,k] -> [N,O,Ho,Wo], cross-correlation, no bias.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, ConvGeom geom);
/// Adjoint of conv2d in its input: gy [N,O,Ho,Wo] -> [N,C,H,W] (x_shape).
template <typename T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, ConvGeom geom, const Shape& x_shape);
/// Adjoint of conv2d in its weight: -> [O,C,k,k] (w_shape).
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, ConvGeom geom, const Shape& w_shape);
/// Transposed convolution, w [Cin,Cout,k,k] (PyTorch layout).
template <typename T> Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, ConvGeom geom);

// Composites.
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias);
/// Per-instance, per-channel normalization over H,W (no affine terms).
template <typename T> Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));
/// Rows of a [N,D] tensor scaled to unit L2 norm.
template <typename T> Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12));
/// Per-row L2 norm of [N, ...] -> [N,1].
template <typename T> Var<T> row_norms(const Var<T>& x, T eps = T(1e-12));

template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> narrow(const Var<T>& x, std::size_t axis, Index start, Index length);
/// Zero padding (negative amounts crop) on the last two axes of NCHW.
template <typename T>
Var<T> pad2d(const Var<T>& x, Index top, Index bottom, Index left, Index right);
template <typename T> Var<T> max_pool2d(const Var<T>& x, ConvGeom geom);

/// Inverted dropout: keeps each element with probability 1-p and scales by 1/(1-p).
template <typename T> Var<T> dropout(const Var<T>& x, T p, std::mt19937_64& rng);

}  // namespace caad::nn
