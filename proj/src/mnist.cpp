#include "caad/mnist.hpp"

#include <cmath>
#include <cstdio>

#include <zlib.h>

#include "caad/errors.hpp"
#include "caad/rng.hpp"

namespace caad::mnist {

namespace {

std::vector<std::uint8_t> read_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) raise(Errc::NotFound, "cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) raise(Errc::CorruptInput, "failed to decompress " + path.string());
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (at + 4 > b.size()) raise(Errc::CorruptInput, "IDX header truncated");
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) | b[at + 3];
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_gz(path);
  if (be32(bytes, 0) != 2051) raise(Errc::CorruptInput, path.string() + " is not an IDX3 image file");
  IdxImages out;
  out.count = be32(bytes, 4);
  out.rows = be32(bytes, 8);
  out.cols = be32(bytes, 12);
  if (bytes.size() != 16 + out.count * out.rows * out.cols) raise(Errc::CorruptInput, path.string() + " has the wrong size");
  out.pixels.assign(bytes.begin() + 16, bytes.end());
  return out;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_gz(path);
  if (be32(bytes, 0) != 2049) raise(Errc::CorruptInput, path.string() + " is not an IDX1 label file");
  const std::size_t n = be32(bytes, 4);
  if (bytes.size() != 8 + n) raise(Errc::CorruptInput, path.string() + " has the wrong size");
  return {bytes.begin() + 8, bytes.end()};
}

spectral::Grid resize_bilinear(const spectral::Grid& in, spectral::Index rows, spectral::Index cols) {
  spectral::Grid out(rows, cols);
  const double sy = static_cast<double>(in.rows()) / static_cast<double>(rows);
  const double sx = static_cast<double>(in.cols()) / static_cast<double>(cols);
  for (spectral::Index r = 0; r < rows; ++r) {
    const double y = std::max(0.0, (static_cast<double>(r) + 0.5) * sy - 0.5);
    const auto y0 = std::min<spectral::Index>(static_cast<spectral::Index>(y), in.rows() - 1);
    const auto y1 = std::min<spectral::Index>(y0 + 1, in.rows() - 1);
    const double wy = y - static_cast<double>(y0);
    for (spectral::Index c = 0; c < cols; ++c) {
      const double x = std::max(0.0, (static_cast<double>(c) + 0.5) * sx - 0.5);
      const auto x0 = std::min<spectral::Index>(static_cast<spectral::Index>(x), in.cols() - 1);
      const auto x1 = std::min<spectral::Index>(x0 + 1, in.cols() - 1);
      const double wx = x - static_cast<double>(x0);
      const double top = (1 - wx) * in(y0, x0) + wx * in(y0, x1);
      const double bottom = (1 - wx) * in(y1, x0) + wx * in(y1, x1);
      out(r, c) = static_cast<float>((1 - wy) * top + wy * bottom);
    }
  }
  return out;
}

namespace {

spectral::DensityGrid make_grid(const IdxImages& images, std::size_t i, spectral::Index size) {
  spectral::Grid raw(static_cast<spectral::Index>(images.rows), static_cast<spectral::Index>(images.cols));
  const std::uint8_t* p = images.pixels.data() + i * images.rows * images.cols;
  for (spectral::Index k = 0; k < raw.size(); ++k) raw.data()[k] = static_cast<float>(p[k]) / 255.0f;
  spectral::DensityGrid g;
  g.values = (size == raw.rows() && size == raw.cols()) ? raw : resize_bilinear(raw, size, size);
  return g;
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s-%05zu", prefix, i);
  return buf;
}

}  // namespace

spectral::DatasetBundle one_class_bundle(const std::filesystem::path& dir, const OneClassOptions& options) {
  const auto train_images = read_idx_images(dir / "train-fours-images-idx3-ubyte.gz");
  const auto test_images = read_idx_images(dir / "t10k-images-idx3-ubyte.gz");
  const auto test_labels = read_idx_labels(dir / "t10k-labels-idx1-ubyte.gz");
  require(options.digit == 4, Errc::ConfigError, "the bundled training images contain only the digit 4");
  require(test_labels.size() == test_images.count, Errc::CorruptInput, "t10k images and labels disagree in count");
  require(options.n_train + options.n_val <= train_images.count, Errc::ConfigError,
          "requested " + std::to_string(options.n_train + options.n_val) + " training digits, only " +
              std::to_string(train_images.count) + " available");

  std::vector<std::size_t> order(train_images.count);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = derive_rng(options.seed, 0x3A15);
  shuffle(order.begin(), order.end(), rng);

  spectral::DatasetBundle b;
  b.source = "mnist-one-class";
  b.seed = options.seed;
  b.spec.n_freq_bins = b.spec.n_bw_bins = options.size;
  b.spec.freq_min_hz = b.spec.bw_min_hz = 0;
  b.spec.freq_max_hz = b.spec.bw_max_hz = static_cast<double>(options.size);
  b.spec.window_s = 1;
  b.stats = {0.0, 255.0};
  b.mask.keep = spectral::Mask::Constant(options.size, options.size, true);
  b.mask.nonzero_prob = Eigen::ArrayXXd::Ones(options.size, options.size);
  b.mask.p_thresh = 0;
  for (std::size_t k = 0; k < options.n_train + options.n_val; ++k) {
    auto g = make_grid(train_images, order[k], options.size);
    const bool is_train = k < options.n_train;
    g.split = is_train ? spectral::Split::Train : spectral::Split::Val;
    g.id = numbered(is_train ? "train" : "val", order[k]);
    g.label = spectral::Label::Benign;
    (is_train ? b.train : b.val).push_back(std::move(g));
  }
  for (std::size_t i = 0; i < test_images.count; ++i) {
    auto g = make_grid(test_images, i, options.size);
    g.split = spectral::Split::Test;
    g.id = numbered("test", i);
    const bool benign = test_labels[i] == options.digit;
    g.label = benign ? spectral::Label::Benign : spectral::Label::Anomaly;
    g.kind = benign ? "benign" : "digit-" + std::to_string(test_labels[i]);
    b.test.push_back(std::move(g));
  }
  return b;
}

}  // namespace caad::mnist
