#include "caad/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "caad/errors.hpp"
#include "caad/rng.hpp"

namespace caad::nn {

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!(a.shape() == b.shape())) raise(Errc::ShapeError, std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
}

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape());
}

Index trailing(const Shape& s, std::size_t from) {
  Index n = 1;
  for (std::size_t i = from; i < s.size(); ++i) n *= s[i];
  return n;
}

Index leading(const Shape& s, std::size_t until) {
  Index n = 1;
  for (std::size_t i = 0; i < until; ++i) n *= s[i];
  return n;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> y(a.shape());
  y.flat() = a.value().flat() + b.value().flat();
  return Var<T>::make_result(std::move(y), {a, b}, [](const Var<T>& g) { return std::vector<Var<T>>{g, g}; },
                             "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> y(a.shape());
  y.flat() = a.value().flat() - b.value().flat();
  return Var<T>::make_result(
      std::move(y), {a, b}, [](const Var<T>& g) { return std::vector<Var<T>>{g, scale(g, T(-1))}; }, "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> y(a.shape());
  y.flat() = a.value().flat() * b.value().flat();
  return Var<T>::make_result(
      std::move(y), {a, b},
      [a, b](const Var<T>& g) {
        return std::vector<Var<T>>{a.requires_grad() ? mul(g, b) : Var<T>(),
                                   b.requires_grad() ? mul(g, a) : Var<T>()};
      },
      "mul");
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> y(a.shape());
  y.flat() = a.value().flat() * factor;
  return Var<T>::make_result(
      std::move(y), {a}, [factor](const Var<T>& g) { return std::vector<Var<T>>{scale(g, factor)}; }, "scale");
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
  Tensor<T> y(a.shape());
  y.flat() = a.value().flat() + offset;
  return Var<T>::make_result(std::move(y), {a}, [](const Var<T>& g) { return std::vector<Var<T>>{g}; },
                             "add_scalar");
}

template <typename T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& factor) {
  require(a.shape() == factor.shape(), Errc::ShapeError, "mul_const: shape mismatch");
  Tensor<T> y(a.shape());
  y.flat() = a.value().flat() * factor.flat();
  return Var<T>::make_result(
      std::move(y), {a}, [factor](const Var<T>& g) { return std::vector<Var<T>>{mul_const(g, factor)}; },
      "mul_const");
}

template <typename T>
Var<T> powc(const Var<T>& a, T exponent) {
  Tensor<T> y(a.shape());
  if (exponent == T(-0.5)) {
    y.flat() = a.value().flat().rsqrt();
  } else if (exponent == T(0.5)) {
    y.flat() = a.value().flat().sqrt();
  } else {
    y.flat() = a.value().flat().pow(exponent);
  }
  return Var<T>::make_result(
      std::move(y), {a},
      [a, exponent](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, scale(powc(a, exponent - T(1)), exponent))};
      },
      "powc");
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> y = a.value().reshaped(std::move(shape));
  Shape original = a.shape();
  return Var<T>::make_result(
      std::move(y), {a}, [original](const Var<T>& g) { return std::vector<Var<T>>{reshape(g, original)}; },
      "reshape");
}

// ----------------------------------------------------------------- reductions

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tensor<T> y(Shape{1}, a.value().flat().sum());
  Shape shape = a.shape();
  return Var<T>::make_result(
      std::move(y), {a}, [shape](const Var<T>& g) { return std::vector<Var<T>>{broadcast_scalar(g, shape)}; },
      "sum_all");
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> broadcast_scalar(const Var<T>& s, const Shape& shape) {
  require(s.value().size() == 1, Errc::ShapeError, "broadcast_scalar expects one element");
  Tensor<T> y(shape, s.value()[0]);
  return Var<T>::make_result(std::move(y), {s}, [](const Var<T>& g) { return std::vector<Var<T>>{sum_all(g)}; },
                             "broadcast_scalar");
}

template <typename T>
Var<T> channel_sum(const Var<T>& x) {
  const auto& s = x.shape();
  require(s.size() >= 2, Errc::ShapeError, "channel_sum needs rank >= 2");
  const Index n = s[0], c = s[1], r = trailing(s, 2);
  Tensor<T> y(Shape{c});
  const T* src = x.value().data();
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) {
      const T* p = src + (i * c + ch) * r;
      T acc = 0;
      for (Index k = 0; k < r; ++k) acc += p[k];
      y[ch] += acc;
    }
  Shape shape = s;
  return Var<T>::make_result(
      std::move(y), {x}, [shape](const Var<T>& g) { return std::vector<Var<T>>{broadcast_channel(g, shape)}; },
      "channel_sum");
}

template <typename T>
Var<T> broadcast_channel(const Var<T>& c, const Shape& shape) {
  require(shape.size() >= 2 && c.value().size() == shape[1], Errc::ShapeError, "broadcast_channel size mismatch");
  const Index n = shape[0], ch = shape[1], r = trailing(shape, 2);
  Tensor<T> y(shape);
  T* dst = y.data();
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < ch; ++k) std::fill_n(dst + (i * ch + k) * r, r, c.value()[k]);
  return Var<T>::make_result(std::move(y), {c},
                             [](const Var<T>& g) { return std::vector<Var<T>>{channel_sum(g)}; },
                             "broadcast_channel");
}

template <typename T>
Var<T> spatial_sum(const Var<T>& x) {
  const auto& s = x.shape();
  require(s.size() >= 2, Errc::ShapeError, "spatial_sum needs rank >= 2");
  const Index nc = s[0] * s[1], r = trailing(s, 2);
  Tensor<T> y(Shape{s[0], s[1]});
  y.flat() = x.value().matrix(nc, r).rowwise().sum().array();
  Shape shape = s;
  return Var<T>::make_result(
      std::move(y), {x}, [shape](const Var<T>& g) { return std::vector<Var<T>>{broadcast_spatial(g, shape)}; },
      "spatial_sum");
}

template <typename T>
Var<T> broadcast_spatial(const Var<T>& nc, const Shape& shape) {
  require(shape.size() >= 2 && nc.value().size() == shape[0] * shape[1], Errc::ShapeError,
          "broadcast_spatial size mismatch");
  const Index rows = shape[0] * shape[1], r = trailing(shape, 2);
  Tensor<T> y(shape);
  T* dst = y.data();
  for (Index i = 0; i < rows; ++i) std::fill_n(dst + i * r, r, nc.value()[i]);
  return Var<T>::make_result(std::move(y), {nc},
                             [](const Var<T>& g) { return std::vector<Var<T>>{spatial_sum(g)}; },
                             "broadcast_spatial");
}

// --------------------------------------------------------------------- matmul

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
  require(a.shape().size() == 2 && b.shape().size() == 2, Errc::ShapeError, "matmul expects rank-2 tensors");
  const Index ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const Index m = ta ? ac : ar, k = ta ? ar : ac, k2 = tb ? bc : br, n = tb ? br : bc;
  if (!(k == k2)) raise(Errc::ShapeError, "matmul inner dimensions " + std::to_string(k) + " vs " + std::to_string(k2));
  Tensor<T> y(Shape{m, n});
  auto am = a.value().matrix(ar, ac);
  auto bm = b.value().matrix(br, bc);
  auto ym = y.matrix(m, n);
  if (!ta && !tb) ym.noalias() = am * bm;
  if (!ta && tb) ym.noalias() = am * bm.transpose();
  if (ta && !tb) ym.noalias() = am.transpose() * bm;
  if (ta && tb) ym.noalias() = am.transpose() * bm.transpose();
  return Var<T>::make_result(
      std::move(y), {a, b},
      [a, b, ta, tb](const Var<T>& g) {
        Var<T> ga, gb;
        if (a.requires_grad()) ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
        if (b.requires_grad()) gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
        return std::vector<Var<T>>{ga, gb};
      },
      "matmul");
}

// ------------------------------------------------------------ gather/scatter

template <typename T>
Var<T> gather(const Var<T>& x, std::vector<Index> index, Shape out_shape) {
  require(numel(out_shape) == static_cast<Index>(index.size()), Errc::ShapeError, "gather index size");
  Tensor<T> y(out_shape);
  const T* src = x.value().data();
  for (std::size_t i = 0; i < index.size(); ++i) y[static_cast<Index>(i)] = src[index[i]];
  Shape in_shape = x.shape();
  auto shared = std::make_shared<std::vector<Index>>(std::move(index));
  return Var<T>::make_result(
      std::move(y), {x},
      [shared, in_shape](const Var<T>& g) { return std::vector<Var<T>>{scatter_add(g, *shared, in_shape)}; },
      "gather");
}

template <typename T>
Var<T> scatter_add(const Var<T>& x, std::vector<Index> index, Shape out_shape) {
  require(x.value().size() == static_cast<Index>(index.size()), Errc::ShapeError, "scatter index size");
  Tensor<T> y(out_shape);
  const T* src = x.value().data();
  for (std::size_t i = 0; i < index.size(); ++i) y[index[i]] += src[i];
  Shape in_shape = x.shape();
  auto shared = std::make_shared<std::vector<Index>>(std::move(index));
  return Var<T>::make_result(
      std::move(y), {x},
      [shared, in_shape](const Var<T>& g) { return std::vector<Var<T>>{gather(g, *shared, in_shape)}; },
      "scatter_add");
}

// ---------------------------------------------------------------- activations

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> mask(x.shape());
  mask.flat() = (x.value().flat() > T(0)).select(T(1), Eigen::Array<T, Eigen::Dynamic, 1>::Constant(x.value().size(), slope));
  Tensor<T> y(x.shape());
  y.flat() = x.value().flat() * mask.flat();
  return Var<T>::make_result(
      std::move(y), {x}, [mask](const Var<T>& g) { return std::vector<Var<T>>{mul_const(g, mask)}; },
      "leaky_relu");
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y(x.shape());
  y.flat() = T(1) / (T(1) + (-x.value().flat()).exp());
  Tensor<T> slope(x.shape());
  slope.flat() = y.flat() * (T(1) - y.flat());
  return Var<T>::make_result(
      std::move(y), {x}, [slope](const Var<T>& g) { return std::vector<Var<T>>{mul_const(g, slope)}; },
      "sigmoid");
}

// ---------------------------------------------------------------- convolution

namespace {

struct ConvDims {
  Index n, c, h, w, o, ho, wo, k;
  Index cols_rows() const { return c * k * k; }
  Index cols_cols() const { return n * ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvDims& d, const ConvGeom& g, T* cols) {
  const Index L = d.cols_cols(), hw_out = d.ho * d.wo;
  for (Index c = 0; c < d.c; ++c)
    for (Index ki = 0; ki < d.k; ++ki)
      for (Index kj = 0; kj < d.k; ++kj) {
        T* dst_row = cols + ((c * d.k + ki) * d.k + kj) * L;
        for (Index n = 0; n < d.n; ++n) {
          const T* src = x + (n * d.c + c) * d.h * d.w;
          T* dst = dst_row + n * hw_out;
          for (Index oh = 0; oh < d.ho; ++oh) {
            const Index ih = oh * g.stride - g.pad + ki;
            T* out = dst + oh * d.wo;
            if (ih < 0 || ih >= d.h) {
              std::fill_n(out, d.wo, T(0));
              continue;
            }
            const T* in_row = src + ih * d.w;
            for (Index ow = 0; ow < d.wo; ++ow) {
              const Index iw = ow * g.stride - g.pad + kj;
              out[ow] = (iw >= 0 && iw < d.w) ? in_row[iw] : T(0);
            }
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, const ConvDims& d, const ConvGeom& g, T* x) {
  const Index L = d.cols_cols(), hw_out = d.ho * d.wo;
  for (Index c = 0; c < d.c; ++c)
    for (Index ki = 0; ki < d.k; ++ki)
      for (Index kj = 0; kj < d.k; ++kj) {
        const T* src_row = cols + ((c * d.k + ki) * d.k + kj) * L;
        for (Index n = 0; n < d.n; ++n) {
          T* dst = x + (n * d.c + c) * d.h * d.w;
          const T* src = src_row + n * hw_out;
          for (Index oh = 0; oh < d.ho; ++oh) {
            const Index ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= d.h) continue;
            T* out_row = dst + ih * d.w;
            const T* in = src + oh * d.wo;
            for (Index ow = 0; ow < d.wo; ++ow) {
              const Index iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < d.w) out_row[iw] += in[ow];
            }
          }
        }
      }
}

/// [N, O, HW] <-> [O, N*HW]
template <typename T>
void nchw_to_cn(const T* src, Index n, Index c, Index hw, T* dst) {
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < c; ++k) std::copy_n(src + (i * c + k) * hw, hw, dst + k * n * hw + i * hw);
}

template <typename T>
void cn_to_nchw(const T* src, Index n, Index c, Index hw, T* dst) {
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < c; ++k) std::copy_n(src + k * n * hw + i * hw, hw, dst + (i * c + k) * hw);
}

ConvDims conv_dims(const Shape& x, const Shape& w, const ConvGeom& g) {
  require(x.size() == 4 && w.size() == 4, Errc::ShapeError, "conv2d expects NCHW input and OCkk weight");
  if (!(x[1] == w[1])) raise(Errc::ShapeError, "conv2d channel mismatch: input " + to_string(x) + " weight " + to_string(w));
  require(w[2] == g.kernel && w[3] == g.kernel, Errc::ShapeError, "conv2d kernel size mismatch");
  ConvDims d{x[0], x[1], x[2], x[3], w[0], g.out_size(x[2]), g.out_size(x[3]), g.kernel};
  if (!(d.ho > 0 && d.wo > 0)) raise(Errc::ShapeError, "conv2d output would be empty for input " + to_string(x));
  return d;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvDims& d, const ConvGeom& g) {
  Buffer<T> cols(static_cast<std::size_t>(d.cols_rows() * d.cols_cols()));
  im2col(x.data(), d, g, cols.data());
  Buffer<T> out(static_cast<std::size_t>(d.o * d.cols_cols()));
  Eigen::Map<RowMatrix<T>>(out.data(), d.o, d.cols_cols()).noalias() =
      w.matrix(d.o, d.cols_rows()) * Eigen::Map<const RowMatrix<T>>(cols.data(), d.cols_rows(), d.cols_cols());
  Tensor<T> y(Shape{d.n, d.o, d.ho, d.wo});
  cn_to_nchw(out.data(), d.n, d.o, d.ho * d.wo, y.data());
  return y;
}

template <typename T>
Tensor<T> conv_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const ConvDims& d, const ConvGeom& g) {
  Buffer<T> g2(static_cast<std::size_t>(d.o * d.cols_cols()));
  nchw_to_cn(gy.data(), d.n, d.o, d.ho * d.wo, g2.data());
  Buffer<T> cols(static_cast<std::size_t>(d.cols_rows() * d.cols_cols()));
  Eigen::Map<RowMatrix<T>>(cols.data(), d.cols_rows(), d.cols_cols()).noalias() =
      w.matrix(d.o, d.cols_rows()).transpose() * Eigen::Map<const RowMatrix<T>>(g2.data(), d.o, d.cols_cols());
  Tensor<T> gx(Shape{d.n, d.c, d.h, d.w});
  col2im(cols.data(), d, g, gx.data());
  return gx;
}

template <typename T>
Tensor<T> conv_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const ConvDims& d, const ConvGeom& g) {
  Buffer<T> cols(static_cast<std::size_t>(d.cols_rows() * d.cols_cols()));
  im2col(x.data(), d, g, cols.data());
  Buffer<T> g2(static_cast<std::size_t>(d.o * d.cols_cols()));
  nchw_to_cn(gy.data(), d.n, d.o, d.ho * d.wo, g2.data());
  Tensor<T> gw(Shape{d.o, d.c, d.k, d.k});
  gw.matrix(d.o, d.cols_rows()).noalias() =
      Eigen::Map<const RowMatrix<T>>(g2.data(), d.o, d.cols_cols()) *
      Eigen::Map<const RowMatrix<T>>(cols.data(), d.cols_rows(), d.cols_cols()).transpose();
  return gw;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, ConvGeom geom) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), geom);
  Tensor<T> y = conv_forward(x.value(), w.value(), d, geom);
  return Var<T>::make_result(
      std::move(y), {x, w},
      [x, w, geom](const Var<T>& g) {
        return std::vector<Var<T>>{x.requires_grad() ? conv2d_input_grad(g, w, geom, x.shape()) : Var<T>(),
                                   w.requires_grad() ? conv2d_weight_grad(x, g, geom, w.shape()) : Var<T>()};
      },
      "conv2d");
}

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, ConvGeom geom, const Shape& x_shape) {
  const ConvDims d = conv_dims(x_shape, w.shape(), geom);
  if (!(gy.shape() == Shape({d.n, d.o, d.ho, d.wo}))) raise(Errc::ShapeError, "conv2d_input_grad: gradient shape " + to_string(gy.shape()));
  Tensor<T> gx = conv_input_grad(gy.value(), w.value(), d, geom);
  return Var<T>::make_result(
      std::move(gx), {gy, w},
      [gy, w, geom](const Var<T>& h) {
        return std::vector<Var<T>>{gy.requires_grad() ? conv2d(h, w, geom) : Var<T>(),
                                   w.requires_grad() ? conv2d_weight_grad(h, gy, geom, w.shape()) : Var<T>()};
      },
      "conv2d_input_grad");
}

template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, ConvGeom geom, const Shape& w_shape) {
  const ConvDims d = conv_dims(x.shape(), w_shape, geom);
  if (!(gy.shape() == Shape({d.n, d.o, d.ho, d.wo}))) raise(Errc::ShapeError, "conv2d_weight_grad: gradient shape " + to_string(gy.shape()));
  Tensor<T> gw = conv_weight_grad(x.value(), gy.value(), d, geom);
  return Var<T>::make_result(
      std::move(gw), {x, gy},
      [x, gy, geom](const Var<T>& gg) {
        return std::vector<Var<T>>{x.requires_grad() ? conv2d_input_grad(gy, gg, geom, x.shape()) : Var<T>(),
                                   gy.requires_grad() ? conv2d(x, gg, geom) : Var<T>()};
      },
      "conv2d_weight_grad");
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, ConvGeom geom) {
  if (!(x.shape().size() == 4 && w.shape().size() == 4 && x.dim(1) == w.dim(0))) raise(Errc::ShapeError, "conv_transpose2d: input " + to_string(x.shape()) + " weight " + to_string(w.shape()));
  const Shape out{x.dim(0), w.dim(1), geom.transposed_out_size(x.dim(2)), geom.transposed_out_size(x.dim(3))};
  return conv2d_input_grad(x, w, geom, out);
}

// ----------------------------------------------------------------- composites

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  return add(x, broadcast_channel(bias, x.shape()));
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  const auto& s = x.shape();
  require(s.size() >= 3, Errc::ShapeError, "instance_norm expects [N,C,...]");
  const T inv_count = T(1) / static_cast<T>(trailing(s, 2));
  Var<T> mean = scale(spatial_sum(x), inv_count);
  Var<T> centered = sub(x, broadcast_spatial(mean, s));
  Var<T> var = scale(spatial_sum(mul(centered, centered)), inv_count);
  Var<T> inv_std = powc(add_scalar(var, eps), T(-0.5));
  return mul(centered, broadcast_spatial(inv_std, s));
}

template <typename T>
Var<T> row_norms(const Var<T>& x, T eps) {
  const Index n = x.dim(0), d = x.value().size() / std::max<Index>(n, 1);
  Var<T> flat = reshape(x, Shape{n, 1, d});
  return reshape(powc(add_scalar(spatial_sum(mul(flat, flat)), eps), T(0.5)), Shape{n, 1});
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps) {
  require(x.shape().size() == 2, Errc::ShapeError, "l2_normalize_rows expects [N,D]");
  const Index n = x.dim(0), d = x.dim(1);
  Var<T> flat = reshape(x, Shape{n, 1, d});
  Var<T> inv = powc(add_scalar(spatial_sum(mul(flat, flat)), eps), T(-0.5));
  return reshape(mul(flat, broadcast_spatial(inv, flat.shape())), Shape{n, d});
}

namespace {

template <typename T>
Var<T> embed(const Var<T>& x, std::size_t axis, Index start, Index total);

template <typename T>
Var<T> narrow_impl(const Var<T>& x, std::size_t axis, Index start, Index length) {
  const auto& s = x.shape();
  if (!(axis < s.size() && start >= 0 && length >= 0 && start + length <= s[axis])) raise(Errc::ShapeError, "narrow out of range on " + to_string(s));
  const Index outer = leading(s, axis), inner = trailing(s, axis + 1), full = s[axis];
  Shape out = s;
  out[axis] = length;
  Tensor<T> y(out);
  for (Index o = 0; o < outer; ++o)
    std::copy_n(x.value().data() + (o * full + start) * inner, length * inner, y.data() + o * length * inner);
  return Var<T>::make_result(
      std::move(y), {x},
      [axis, start, full](const Var<T>& g) { return std::vector<Var<T>>{embed(g, axis, start, full)}; },
      "narrow");
}

template <typename T>
Var<T> embed(const Var<T>& x, std::size_t axis, Index start, Index total) {
  const auto& s = x.shape();
  const Index outer = leading(s, axis), inner = trailing(s, axis + 1), length = s[axis];
  Shape out = s;
  out[axis] = total;
  Tensor<T> y(out);
  for (Index o = 0; o < outer; ++o)
    std::copy_n(x.value().data() + o * length * inner, length * inner, y.data() + (o * total + start) * inner);
  return Var<T>::make_result(
      std::move(y), {x},
      [axis, start, length](const Var<T>& g) { return std::vector<Var<T>>{narrow_impl(g, axis, start, length)}; },
      "embed");
}

}  // namespace

template <typename T>
Var<T> narrow(const Var<T>& x, std::size_t axis, Index start, Index length) {
  return narrow_impl(x, axis, start, length);
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  require(!parts.empty(), Errc::EmptyInput, "concat of nothing");
  Shape out = parts.front().shape();
  require(axis < out.size(), Errc::ShapeError, "concat axis out of range");
  out[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require(s.size() == out.size(), Errc::ShapeError, "concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (!(i == axis || s[i] == parts.front().shape()[i])) raise(Errc::ShapeError, "concat shape mismatch " + to_string(s) + " vs " + to_string(parts.front().shape()));
    out[axis] += s[axis];
  }
  const Index outer = leading(out, axis), inner = trailing(out, axis + 1), total = out[axis];
  Tensor<T> y(out);
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index len = p.dim(axis);
    for (Index o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * len * inner, len * inner, y.data() + (o * total + offset) * inner);
    offsets.push_back(offset);
    offset += len;
  }
  std::vector<Index> lengths;
  for (const auto& p : parts) lengths.push_back(p.dim(axis));
  return Var<T>::make_result(
      std::move(y), parts,
      [axis, offsets, lengths](const Var<T>& g) {
        std::vector<Var<T>> grads;
        for (std::size_t i = 0; i < offsets.size(); ++i) grads.push_back(narrow_impl(g, axis, offsets[i], lengths[i]));
        return grads;
      },
      "concat");
}

template <typename T>
Var<T> pad2d(const Var<T>& x, Index top, Index bottom, Index left, Index right) {
  const auto& s = x.shape();
  require(s.size() == 4, Errc::ShapeError, "pad2d expects NCHW");
  const Index nc = s[0] * s[1], h = s[2], w = s[3];
  const Index ho = h + top + bottom, wo = w + left + right;
  require(ho > 0 && wo > 0, Errc::ShapeError, "pad2d would produce an empty image");
  // Output pixel (i, j) reads input (i - top, j - left) when inside; otherwise zero.
  std::vector<Index> src_index, dst_index;
  for (Index p = 0; p < nc; ++p)
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        const Index si = i - top, sj = j - left;
        if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
        src_index.push_back((p * h + si) * w + sj);
        dst_index.push_back((p * ho + i) * wo + j);
      }
  const Index kept = static_cast<Index>(src_index.size());
  Var<T> picked = gather(x, std::move(src_index), Shape{kept});
  return scatter_add(picked, std::move(dst_index), Shape{s[0], s[1], ho, wo});
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, ConvGeom geom) {
  const auto& s = x.shape();
  require(s.size() == 4, Errc::ShapeError, "max_pool2d expects NCHW");
  const Index nc = s[0] * s[1], h = s[2], w = s[3];
  const Index ho = geom.out_size(h), wo = geom.out_size(w);
  std::vector<Index> index(static_cast<std::size_t>(nc * ho * wo));
  const T* src = x.value().data();
  std::size_t at = 0;
  for (Index p = 0; p < nc; ++p)
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        Index best = -1;
        T best_value = -std::numeric_limits<T>::infinity();
        for (Index ki = 0; ki < geom.kernel; ++ki)
          for (Index kj = 0; kj < geom.kernel; ++kj) {
            const Index si = i * geom.stride - geom.pad + ki, sj = j * geom.stride - geom.pad + kj;
            if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
            const Index flat = (p * h + si) * w + sj;
            if (best < 0 || src[flat] > best_value) {
              best = flat;
              best_value = src[flat];
            }
          }
        index[at++] = best;
      }
  return gather(x, std::move(index), Shape{s[0], s[1], ho, wo});
}

template <typename T>
Var<T> dropout(const Var<T>& x, T p, std::mt19937_64& rng) {
  if (p <= T(0)) return x;
  require(p < T(1), Errc::ConfigError, "dropout probability must be < 1");
  Tensor<T> mask(x.shape());
  const T keep_scale = T(1) / (T(1) - p);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) >= static_cast<double>(p) ? keep_scale : T(0);
  return mul_const(x, mask);
}

#define CAAD_INSTANTIATE_OPS(T)                                                                     \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> scale(const Var<T>&, T);                                                          \
  template Var<T> add_scalar(const Var<T>&, T);                                                     \
  template Var<T> mul_const(const Var<T>&, const Tensor<T>&);                                       \
  template Var<T> powc(const Var<T>&, T);                                                           \
  template Var<T> reshape(const Var<T>&, Shape);                                                    \
  template Var<T> sum_all(const Var<T>&);                                                           \
  template Var<T> mean_all(const Var<T>&);                                                          \
  template Var<T> broadcast_scalar(const Var<T>&, const Shape&);                                    \
  template Var<T> channel_sum(const Var<T>&);                                                       \
  template Var<T> broadcast_channel(const Var<T>&, const Shape&);                                   \
  template Var<T> spatial_sum(const Var<T>&);                                                       \
  template Var<T> broadcast_spatial(const Var<T>&, const Shape&);                                   \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                                 \
  template Var<T> gather(const Var<T>&, std::vector<Index>, Shape);                                 \
  template Var<T> scatter_add(const Var<T>&, std::vector<Index>, Shape);                            \
  template Var<T> leaky_relu(const Var<T>&, T);                                                     \
  template Var<T> relu(const Var<T>&);                                                              \
  template Var<T> sigmoid(const Var<T>&);                                                           \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, ConvGeom);                                   \
  template Var<T> conv2d_input_grad(const Var<T>&, const Var<T>&, ConvGeom, const Shape&);          \
  template Var<T> conv2d_weight_grad(const Var<T>&, const Var<T>&, ConvGeom, const Shape&);         \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, ConvGeom);                         \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                   \
  template Var<T> instance_norm(const Var<T>&, T);                                                  \
  template Var<T> l2_normalize_rows(const Var<T>&, T);                                              \
  template Var<T> row_norms(const Var<T>&, T);                                                      \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                  \
  template Var<T> narrow(const Var<T>&, std::size_t, Index, Index);                                 \
  template Var<T> pad2d(const Var<T>&, Index, Index, Index, Index);                                 \
  template Var<T> max_pool2d(const Var<T>&, ConvGeom);                                              \
  template Var<T> dropout(const Var<T>&, T, std::mt19937_64&);

CAAD_INSTANTIATE_OPS(float)
CAAD_INSTANTIATE_OPS(double)

}  // namespace caad::nn
