#include "caad/transforms.hpp"

#include <algorithm>
#include <numeric>

#include "caad/errors.hpp"

namespace caad::transforms {

void NegativeTransformConfig::validate() const {
  if (kind == Kind::SaltNoise) {
    require(salt_fraction > 0 && salt_fraction < 1, Errc::ConfigError, "transform.salt_fraction must be in (0,1)");
  } else {
    require(!rot_choices.empty(), Errc::ConfigError, "transform.rot_choices must not be empty");
    for (int k : rot_choices)
      require(k >= 1 && k <= 3, Errc::ConfigError, "transform.rot_choices entries must be 1, 2 or 3 (x90 degrees)");
  }
}

namespace {

void salt_in_place(float* data, Index n, double fraction, float value, Rng& rng, std::vector<Index>& scratch) {
  const auto count = static_cast<Index>(std::floor(fraction * static_cast<double>(n)));
  if (count == 0)
    raise(Errc::ZeroSalt, "salt fraction " + std::to_string(fraction) + " selects no pixels of " + std::to_string(n));
  scratch.resize(static_cast<std::size_t>(n));
  std::iota(scratch.begin(), scratch.end(), Index{0});
  for (Index i = 0; i < count; ++i) {
    const auto j = i + static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
    std::swap(scratch[static_cast<std::size_t>(i)], scratch[static_cast<std::size_t>(j)]);
    data[scratch[static_cast<std::size_t>(i)]] = value;
  }
}

void rot90_into(const float* in, Index n, int k, float* out) {
  k = ((k % 4) + 4) % 4;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      Index si = i, sj = j;
      // Apply the k=1 index map k times backwards from the output position.
      for (int t = 0; t < k; ++t) {
        const Index ni = sj, nj = n - 1 - si;
        si = ni;
        sj = nj;
      }
      out[i * n + j] = in[si * n + sj];
    }
}

}  // namespace

Grid salt_noise(const Grid& grid, double fraction, float value, Rng& rng) {
  Grid out = grid;
  std::vector<Index> scratch;
  salt_in_place(out.data(), out.size(), fraction, value, rng, scratch);
  return out;
}

Grid salt_noise(const Grid& grid, const NegativeTransformConfig& cfg) {
  Rng rng = derive_rng(cfg.seed, 0x5A17);
  return salt_noise(grid, cfg.salt_fraction, cfg.salt_value, rng);
}

Grid rot90(const Grid& image, int k) {
  if (image.rows() != image.cols())
    raise(Errc::ShapeError, "rot90 needs a square image, got " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  Grid out(image.rows(), image.cols());
  rot90_into(image.data(), image.rows(), k, out.data());
  return out;
}

SelfSupSet build_selfsup_set(std::span<const Grid> benign, const NegativeTransformConfig& cfg) {
  require(!benign.empty(), Errc::EmptyInput, "self-supervised set needs benign inputs");
  cfg.validate();
  Rng rng = derive_rng(cfg.seed, 0x5E1F);
  SelfSupSet set;
  for (std::size_t i = 0; i < benign.size(); ++i) {
    set.images.push_back(benign[i]);
    set.labels.push_back(0);
    set.source.push_back(i);
    set.rotation_k.push_back(0);
  }
  for (std::size_t i = 0; i < benign.size(); ++i) {
    int k = 0;
    if (cfg.kind == NegativeTransformConfig::Kind::SaltNoise) {
      set.images.push_back(salt_noise(benign[i], cfg.salt_fraction, cfg.salt_value, rng));
    } else {
      k = cfg.rot_choices[uniform_index(rng, cfg.rot_choices.size())];
      set.images.push_back(rot90(benign[i], k));
    }
    set.labels.push_back(1);
    set.source.push_back(i);
    set.rotation_k.push_back(k);
  }
  return set;
}

nn::Tensor<float> transform_batch(const nn::Tensor<float>& batch, const NegativeTransformConfig& cfg, Rng& rng) {
  require(batch.rank() == 4 && batch.dim(1) == 1, Errc::ShapeError, "transform_batch expects [N,1,H,W]");
  const Index n = batch.dim(0), h = batch.dim(2), w = batch.dim(3), px = h * w;
  nn::Tensor<float> out = batch;
  std::vector<Index> scratch;
  for (Index i = 0; i < n; ++i) {
    float* img = out.data() + i * px;
    if (cfg.kind == NegativeTransformConfig::Kind::SaltNoise) {
      salt_in_place(img, px, cfg.salt_fraction, cfg.salt_value, rng, scratch);
    } else {
      if (h != w) raise(Errc::ShapeError, "rot90 needs square images");
      const int k = cfg.rot_choices[uniform_index(rng, cfg.rot_choices.size())];
      rot90_into(batch.data() + i * px, h, k, img);
    }
  }
  return out;
}

}  // namespace caad::transforms
