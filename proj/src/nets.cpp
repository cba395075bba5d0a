#include "caad/nets.hpp"

#include <algorithm>

#include "caad/errors.hpp"

namespace caad {

using nn::ConvGeom;
using nn::Shape;
using nn::Var;

namespace {

constexpr ConvGeom kDown{4, 2, 1};
constexpr ConvGeom kSame{3, 1, 1};
constexpr ConvGeom kPoolSame{3, 1, 1};

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

}  // namespace

template <typename T>
Generator<T>::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(spec) {
  require(spec.height > 0 && spec.width > 0 && spec.base_channels > 0 && spec.max_channels >= spec.base_channels,
          Errc::ConfigError, "generator spec needs positive sizes and max_channels >= base_channels");
  Rng rng = derive_rng(seed, 0x6E4);
  std::vector<Index> ch(kDepth);
  for (int i = 0; i < kDepth; ++i) ch[i] = std::min(spec.base_channels << i, spec.max_channels);
  Index in = 1;
  for (int i = 0; i < kDepth; ++i) {
    Block b;
    b.conv = nn::make_conv2d<T>(in, ch[i], kDown, false, rng);
    b.norm = nn::make_batch_norm2d<T>(ch[i]);
    down_.push_back(std::move(b));
    in = ch[i];
  }
  for (int i = 0; i < kDepth; ++i) {
    Block b;
    b.conv = nn::make_conv2d<T>(in, in, kSame, false, rng);
    b.norm = nn::make_batch_norm2d<T>(in);
    same_.push_back(std::move(b));
  }
  for (int j = 0; j < kDepth; ++j) {
    const Index skip = (j > 0 && spec.skip_connections) ? ch[kDepth - 1 - j] : 0;
    const Index out = j < kDepth - 1 ? ch[kDepth - 2 - j] : spec.base_channels;
    Block b;
    b.deconv = nn::make_conv_transpose2d<T>(in + skip, out, kDown, false, rng);
    b.norm = nn::make_batch_norm2d<T>(out);
    up_.push_back(std::move(b));
    in = out;
  }
  head_ = nn::make_conv2d<T>(in, 1, ConvGeom{1, 1, 0}, true, rng);
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& x, bool training) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != spec_.height || s[3] != spec_.width)
    raise(Errc::ShapeError, "generator expects [N,1," + std::to_string(spec_.height) + "," +
                                std::to_string(spec_.width) + "], got " + nn::to_string(s));
  const Index multiple = Index(1) << kDepth;
  const Index ph = round_up(s[2], multiple) - s[2], pw = round_up(s[3], multiple) - s[3];
  Var<T> h = (ph || pw) ? nn::pad2d(x, 0, ph, 0, pw) : x;
  std::vector<Var<T>> skips;
  for (auto& b : down_) {
    h = nn::leaky_relu(nn::forward(b.norm, nn::forward(b.conv, h), training), T(0.2));
    skips.push_back(h);
  }
  for (auto& b : same_) {
    h = nn::max_pool2d(nn::forward(b.conv, h), kPoolSame);
    h = nn::leaky_relu(nn::forward(b.norm, h, training), T(0.2));
  }
  for (int j = 0; j < kDepth; ++j) {
    if (j > 0 && spec_.skip_connections) h = nn::concat<T>({h, skips[kDepth - 1 - j]}, 1);
    h = nn::relu(nn::forward(up_[j].norm, nn::forward(up_[j].deconv, h), training));
  }
  h = nn::sigmoid(nn::forward(head_, h));
  return (ph || pw) ? nn::pad2d(h, 0, -ph, 0, -pw) : h;
}

template <typename T>
std::vector<nn::ParamRef<T>> Generator<T>::parameters() {
  std::vector<nn::ParamRef<T>> out;
  auto add = [&](const std::string& p, std::vector<Block>& blocks, bool transposed) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string name = p + std::to_string(i);
      if (transposed) nn::collect(name + ".deconv", blocks[i].deconv, out);
      else nn::collect(name + ".conv", blocks[i].conv, out);
      nn::collect(name + ".norm", blocks[i].norm, out);
    }
  };
  add("down", down_, false);
  add("same", same_, false);
  add("up", up_, true);
  nn::collect("head", head_, out);
  return out;
}

template <typename T>
std::vector<nn::BufferRef<T>> Generator<T>::buffers() {
  std::vector<nn::BufferRef<T>> out;
  auto add = [&](const std::string& p, std::vector<Block>& blocks) {
    for (std::size_t i = 0; i < blocks.size(); ++i) nn::collect_buffers(p + std::to_string(i) + ".norm", blocks[i].norm, out);
  };
  add("down", down_);
  add("same", same_);
  add("up", up_);
  return out;
}

template <typename T>
Critic<T>::Critic(CriticSpec spec, std::uint64_t seed) : spec_(spec), dropout_rng_(derive_rng(seed, 0xD50)) {
  require(spec.height >= 4 && spec.width >= 4, Errc::ConfigError, "critic input must be at least 4x4");
  require(spec.dropout >= 0.0 && spec.dropout < 1.0, Errc::ConfigError, "critic dropout must be in [0,1)");
  require(spec.embedding_dim > 0 && spec.base_channels > 0, Errc::ConfigError, "critic widths must be positive");
  Rng rng = derive_rng(seed, 0xC21);
  Index in = 1, h = spec.height, w = spec.width;
  for (int i = 0; i < kBlocks; ++i) {
    const Index out = std::min(spec.base_channels << i, spec.max_channels);
    // Downsample while the result keeps at least 4x4 so instance norm stays informative.
    const bool down = h / 2 >= 4 && w / 2 >= 4;
    const ConvGeom g = down ? kDown : kSame;
    blocks_.push_back(nn::make_conv2d<T>(in, out, g, false, rng));
    h = g.out_size(h);
    w = g.out_size(w);
    in = out;
  }
  feature_size_ = in * h * w;
  embed_ = nn::make_linear<T>(feature_size_, spec.embedding_dim, rng);
  head_ = nn::make_linear<T>(spec.embedding_dim, 1, rng);
}

template <typename T>
CriticOutput<T> Critic<T>::forward(const Var<T>& x, bool dropout_active) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != spec_.height || s[3] != spec_.width)
    raise(Errc::ShapeError, "critic expects [N,1," + std::to_string(spec_.height) + "," +
                                std::to_string(spec_.width) + "], got " + nn::to_string(s));
  const T p = dropout_active ? static_cast<T>(spec_.dropout) : T(0);
  Var<T> h = x;
  for (const auto& conv : blocks_) {
    h = nn::leaky_relu(nn::instance_norm(nn::forward(conv, h)), T(0.2));
    h = nn::dropout(h, p, dropout_rng_);
  }
  Var<T> raw = nn::forward(embed_, nn::reshape(h, Shape{s[0], feature_size_}));
  return {nn::forward(head_, raw), nn::l2_normalize_rows(raw)};
}

template <typename T>
std::vector<nn::ParamRef<T>> Critic<T>::parameters() {
  std::vector<nn::ParamRef<T>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) nn::collect("block" + std::to_string(i), blocks_[i], out);
  nn::collect("embed", embed_, out);
  nn::collect("head", head_, out);
  return out;
}

namespace {

template <typename Net>
std::vector<nn::BufferRef<typename Net::Scalar>> buffers_of(Net& net) {
  if constexpr (requires { net.buffers(); }) {
    return net.buffers();
  } else {
    return {};
  }
}

}  // namespace

template <typename Net>
std::vector<std::pair<std::string, nn::Tensor<float>>> export_state(Net& net, const std::string& prefix) {
  std::vector<std::pair<std::string, nn::Tensor<float>>> out;
  for (auto& p : net.parameters()) out.emplace_back(prefix + p.name, p.var->value().template cast<float>());
  for (auto& b : buffers_of(net)) out.emplace_back(prefix + b.name, b.tensor->template cast<float>());
  return out;
}

template <typename Net>
void import_state(Net& net, const std::string& prefix, const std::map<std::string, nn::Tensor<float>>& entries) {
  using S = typename Net::Scalar;
  auto fetch = [&](const std::string& name, const Shape& shape) {
    auto it = entries.find(prefix + name);
    if (it == entries.end()) raise(Errc::CorruptInput, "checkpoint lacks " + prefix + name);
    if (it->second.shape() != shape)
      raise(Errc::CorruptInput, "checkpoint entry " + prefix + name + " has shape " + nn::to_string(it->second.shape()) +
                                    ", model expects " + nn::to_string(shape));
    return it->second.template cast<S>();
  };
  for (auto& p : net.parameters()) *p.var = Var<S>(fetch(p.name, p.var->shape()), true);
  for (auto& b : buffers_of(net)) *b.tensor = fetch(b.name, b.tensor->shape());
}

template class Generator<float>;
template class Generator<double>;
template class Critic<float>;
template class Critic<double>;
template std::vector<std::pair<std::string, nn::Tensor<float>>> export_state(Generator<float>&, const std::string&);
template std::vector<std::pair<std::string, nn::Tensor<float>>> export_state(Critic<float>&, const std::string&);
template void import_state(Generator<float>&, const std::string&, const std::map<std::string, nn::Tensor<float>>&);
template void import_state(Critic<float>&, const std::string&, const std::map<std::string, nn::Tensor<float>>&);

}  // namespace caad
