#include "caad/nn/layers.hpp"

#include <cmath>

#include "caad/errors.hpp"

namespace caad::nn {

namespace {

template <typename T>
Var<T> uniform_param(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(uniform(rng, -bound, bound));
  return Var<T>(std::move(t), true);
}

}  // namespace

template <typename T>
Conv2d<T> make_conv2d(Index in, Index out, ConvGeom geom, bool bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * geom.kernel * geom.kernel));
  Conv2d<T> l;
  l.weight = uniform_param<T>({out, in, geom.kernel, geom.kernel}, bound, rng);
  if (bias) l.bias = uniform_param<T>({out}, bound, rng);
  l.geom = geom;
  return l;
}

template <typename T>
ConvTranspose2d<T> make_conv_transpose2d(Index in, Index out, ConvGeom geom, bool bias, Rng& rng) {
  // Fan-in follows the framework convention of reading weight dim 1.
  const double bound = 1.0 / std::sqrt(static_cast<double>(out * geom.kernel * geom.kernel));
  ConvTranspose2d<T> l;
  l.weight = uniform_param<T>({in, out, geom.kernel, geom.kernel}, bound, rng);
  if (bias) l.bias = uniform_param<T>({out}, bound, rng);
  l.geom = geom;
  return l;
}

template <typename T>
Linear<T> make_linear(Index in, Index out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear<T> l;
  l.weight = uniform_param<T>({in, out}, bound, rng);
  l.bias = uniform_param<T>({1, out}, bound, rng);
  return l;
}

template <typename T>
BatchNorm2d<T> make_batch_norm2d(Index channels) {
  BatchNorm2d<T> l;
  l.gamma = Var<T>(Tensor<T>(Shape{channels}, T(1)), true);
  l.beta = Var<T>(Tensor<T>(Shape{channels}, T(0)), true);
  l.running_mean = Tensor<T>(Shape{channels}, T(0));
  l.running_var = Tensor<T>(Shape{channels}, T(1));
  return l;
}

template <typename T>
Var<T> forward(const Conv2d<T>& layer, const Var<T>& x) {
  Var<T> y = conv2d(x, layer.weight, layer.geom);
  return layer.bias.defined() ? add_channel_bias(y, layer.bias) : y;
}

template <typename T>
Var<T> forward(const ConvTranspose2d<T>& layer, const Var<T>& x) {
  Var<T> y = conv_transpose2d(x, layer.weight, layer.geom);
  return layer.bias.defined() ? add_channel_bias(y, layer.bias) : y;
}

template <typename T>
Var<T> forward(const Linear<T>& layer, const Var<T>& x) {
  require(x.shape().size() == 2, Errc::ShapeError, "linear expects [N, in]");
  Var<T> y = matmul(x, layer.weight);
  const Index n = x.dim(0);
  Tensor<T> ones(Shape{n, 1}, T(1));
  return add(y, matmul(Var<T>(std::move(ones)), layer.bias));
}

template <typename T>
Var<T> forward(BatchNorm2d<T>& layer, const Var<T>& x, bool training) {
  const auto& s = x.shape();
  require(s.size() == 4 && s[1] == layer.gamma.value().size(), Errc::ShapeError,
          "batch norm channel mismatch");
  Var<T> centered, inv_std;
  if (training) {
    const Index count = s[0] * s[2] * s[3];
    require(count > 1, Errc::ShapeError, "batch norm in training mode needs more than one value per channel");
    const T inv_count = T(1) / static_cast<T>(count);
    Var<T> mean = scale(channel_sum(x), inv_count);
    centered = sub(x, broadcast_channel(mean, s));
    Var<T> var = scale(channel_sum(mul(centered, centered)), inv_count);
    inv_std = powc(add_scalar(var, layer.eps), T(-0.5));
    const T m = layer.momentum;
    const T unbias = static_cast<T>(count) / static_cast<T>(count - 1);
    layer.running_mean.flat() = (T(1) - m) * layer.running_mean.flat() + m * mean.value().flat();
    layer.running_var.flat() = (T(1) - m) * layer.running_var.flat() + m * unbias * var.value().flat();
  } else {
    centered = sub(x, broadcast_channel(Var<T>(layer.running_mean), s));
    Tensor<T> inv(layer.running_var.shape());
    inv.flat() = (layer.running_var.flat() + layer.eps).rsqrt();
    inv_std = Var<T>(std::move(inv));
  }
  Var<T> y = mul(centered, broadcast_channel(mul(inv_std, layer.gamma), s));
  return add(y, broadcast_channel(layer.beta, s));
}

template <typename T>
void collect(const std::string& prefix, Conv2d<T>& l, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &l.weight});
  if (l.bias.defined()) out.push_back({prefix + ".bias", &l.bias});
}

template <typename T>
void collect(const std::string& prefix, ConvTranspose2d<T>& l, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &l.weight});
  if (l.bias.defined()) out.push_back({prefix + ".bias", &l.bias});
}

template <typename T>
void collect(const std::string& prefix, Linear<T>& l, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &l.weight});
  out.push_back({prefix + ".bias", &l.bias});
}

template <typename T>
void collect(const std::string& prefix, BatchNorm2d<T>& l, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".gamma", &l.gamma});
  out.push_back({prefix + ".beta", &l.beta});
}

template <typename T>
void collect_buffers(const std::string& prefix, BatchNorm2d<T>& l, std::vector<BufferRef<T>>& out) {
  out.push_back({prefix + ".running_mean", &l.running_mean});
  out.push_back({prefix + ".running_var", &l.running_var});
}

template <typename T>
Adam<T>::Adam(std::vector<ParamRef<T>> params, Options options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var->shape());
    v_.emplace_back(p.var->shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(options_.beta1, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(options_.beta2, static_cast<double>(t_)));
  const T lr = static_cast<T>(options_.lr), eps = static_cast<T>(options_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<T>& p = *params_[i].var;
    if (p.grad().empty()) continue;
    auto g = p.grad().flat();
    m_[i].flat() = b1 * m_[i].flat() + (T(1) - b1) * g;
    v_[i].flat() = b2 * v_[i].flat() + (T(1) - b2) * g * g;
    p.mutable_value().flat() -= lr * (m_[i].flat() / c1) / ((v_[i].flat() / c2).sqrt() + eps);
    p.zero_grad();
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.var->zero_grad();
}

template <typename T>
std::vector<BufferRef<T>> Adam<T>::state() {
  std::vector<BufferRef<T>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({params_[i].name + ".adam_m", &m_[i]});
    out.push_back({params_[i].name + ".adam_v", &v_[i]});
  }
  return out;
}

#define CAAD_INSTANTIATE_LAYERS(T)                                                                   \
  template Conv2d<T> make_conv2d(Index, Index, ConvGeom, bool, Rng&);                                \
  template ConvTranspose2d<T> make_conv_transpose2d(Index, Index, ConvGeom, bool, Rng&);             \
  template Linear<T> make_linear(Index, Index, Rng&);                                                \
  template BatchNorm2d<T> make_batch_norm2d(Index);                                                  \
  template Var<T> forward(const Conv2d<T>&, const Var<T>&);                                          \
  template Var<T> forward(const ConvTranspose2d<T>&, const Var<T>&);                                 \
  template Var<T> forward(const Linear<T>&, const Var<T>&);                                          \
  template Var<T> forward(BatchNorm2d<T>&, const Var<T>&, bool);                                     \
  template void collect(const std::string&, Conv2d<T>&, std::vector<ParamRef<T>>&);                  \
  template void collect(const std::string&, ConvTranspose2d<T>&, std::vector<ParamRef<T>>&);         \
  template void collect(const std::string&, Linear<T>&, std::vector<ParamRef<T>>&);                  \
  template void collect(const std::string&, BatchNorm2d<T>&, std::vector<ParamRef<T>>&);             \
  template void collect_buffers(const std::string&, BatchNorm2d<T>&, std::vector<BufferRef<T>>&);    \
  template class Adam<T>;

CAAD_INSTANTIATE_LAYERS(float)
CAAD_INSTANTIATE_LAYERS(double)

}  // namespace caad::nn
