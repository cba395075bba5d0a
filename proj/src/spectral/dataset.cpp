#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "caad/errors.hpp"
#include "caad/rng.hpp"
#include "caad/spectral.hpp"

namespace caad::spectral {

using nlohmann::json;

std::vector<DensityGrid>& DatasetBundle::split(Split s) {
  return s == Split::Train ? train : s == Split::Val ? val : test;
}

const std::vector<DensityGrid>& DatasetBundle::split(Split s) const {
  return s == Split::Train ? train : s == Split::Val ? val : test;
}

Index DatasetBundle::rows() const { return train.empty() ? spec.n_freq_bins : train.front().values.rows(); }
Index DatasetBundle::cols() const { return train.empty() ? spec.n_bw_bins : train.front().values.cols(); }

namespace {

std::string window_id(Split s, std::size_t w) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%06zu", std::string(split_name(s)).c_str(), w);
  return buf;
}

void check_ranges(const AssembleOptions& o) {
  auto describe = [](const char* n, const WindowRange& r) {
    return std::string(n) + "=[" + std::to_string(r.begin) + "," + std::to_string(r.end) + ")";
  };
  const std::string all = describe("train", o.train) + " " + describe("val", o.val) + " " + describe("test", o.test);
  require(o.train.end > o.train.begin && o.test.end > o.test.begin && o.val.end >= o.val.begin, Errc::ConfigError,
          "train and test ranges must be non-empty: " + all);
  require(o.train.end <= o.val.begin && o.val.end <= o.test.begin, Errc::SplitOverlap,
          "splits must be sequential and disjoint: " + all);
}

}  // namespace

DatasetBundle assemble_dataset(std::span<const EmissionRecord> records, const GridSpec& spec,
                               const AssembleOptions& options) {
  spec.validate();
  check_ranges(options);
  BinResult binned = bin_emissions(records, spec, 0.0, options.test.end);
  DatasetBundle b;
  b.spec = spec;
  b.seed = options.seed;
  b.out_of_range = binned.out_of_range;
  auto take = [&](Split s, const WindowRange& r) {
    auto& dst = b.split(s);
    for (std::size_t w = r.begin; w < r.end; ++w) {
      DensityGrid g = std::move(binned.grids[w]);
      g.id = window_id(s, w);
      g.split = s;
      g.label = Label::Benign;
      dst.push_back(std::move(g));
    }
  };
  take(Split::Train, options.train);
  take(Split::Val, options.val);
  take(Split::Test, options.test);

  b.mask = fit_denoise_mask(b.train, options.p_thresh);
  apply_mask(b.train, b.mask, MaskMode::ZeroOut);
  apply_mask(b.val, b.mask, MaskMode::ZeroOut);
  apply_mask(b.test, b.mask, MaskMode::LabelAnomaly);
  b.stats = fit_norm_stats(b.train);
  normalize_grids(b.train, b.stats);
  normalize_grids(b.val, b.stats);
  normalize_grids(b.test, b.stats);

  const auto& plan = options.injection;
  if (plan.drop_t) {
    std::vector<EmissionRecord> emitter;
    for (const auto& r : records)
      if (r.signal_type && *r.signal_type == plan.drop_emitter && r.ts < *plan.drop_t) emitter.push_back(r);
    const auto region = region_from_records(emitter, spec);
    inject_drop(b.test, *plan.drop_t, region);
  }
  if (plan.hopper_twins && plan.library_size > 0) {
    b.hopper_library = make_hopper_library(b.mask, plan.library_size, plan.pixels_per_signature, plan.seed);
    Rng rng = derive_rng(plan.seed, 0x7155);
    std::vector<DensityGrid> with_twins;
    with_twins.reserve(2 * b.test.size());
    for (auto& g : b.test) {
      const bool clean = g.label == Label::Benign;
      with_twins.push_back(g);
      if (!clean) continue;
      const auto sig = uniform_index(rng, b.hopper_library.size());
      DensityGrid twin = inject_hopper(g, b.hopper_library[sig], b.stats);
      twin.id = g.id + "-hop" + std::to_string(sig);
      with_twins.push_back(std::move(twin));
    }
    b.test = std::move(with_twins);
  }
  return b;
}

namespace {

json grid_spec_json(const GridSpec& s) {
  return {{"n_freq_bins", s.n_freq_bins}, {"n_bw_bins", s.n_bw_bins}, {"freq_range_hz", {s.freq_min_hz, s.freq_max_hz}},
          {"bw_range_hz", {s.bw_min_hz, s.bw_max_hz}}, {"window_s", s.window_s}};
}

GridSpec grid_spec_from(const json& j) {
  GridSpec s;
  s.n_freq_bins = j.at("n_freq_bins").get<Index>();
  s.n_bw_bins = j.at("n_bw_bins").get<Index>();
  s.freq_min_hz = j.at("freq_range_hz").at(0).get<double>();
  s.freq_max_hz = j.at("freq_range_hz").at(1).get<double>();
  s.bw_min_hz = j.at("bw_range_hz").at(0).get<double>();
  s.bw_max_hz = j.at("bw_range_hz").at(1).get<double>();
  s.window_s = j.at("window_s").get<double>();
  return s;
}

json split_counts(const std::vector<DensityGrid>& grids) {
  std::map<std::string, std::size_t> kinds;
  std::size_t anomalies = 0;
  for (const auto& g : grids) {
    ++kinds[g.kind];
    anomalies += g.label == Label::Anomaly;
  }
  return {{"n", grids.size()}, {"benign", grids.size() - anomalies}, {"anomaly", anomalies}, {"kinds", kinds}};
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoError, "cannot write " + p.string());
  out << text;
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) raise(Errc::NotFound, "missing " + p.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) raise(Errc::CorruptInput, p.string() + " is not valid JSON");
  return j;
}

}  // namespace

json bundle_manifest(const DatasetBundle& b) {
  json mask_rows = json::array(), prob_rows = json::array();
  for (Index r = 0; r < b.mask.keep.rows(); ++r) {
    std::string row;
    json probs = json::array();
    for (Index c = 0; c < b.mask.keep.cols(); ++c) {
      row.push_back(b.mask.keep(r, c) ? '1' : '0');
      probs.push_back(b.mask.nonzero_prob(r, c));
    }
    mask_rows.push_back(row);
    prob_rows.push_back(probs);
  }
  json library = json::array();
  for (const auto& sig : b.hopper_library) {
    json cells = json::array();
    for (const auto& [r, c] : sig.pixels) cells.push_back({r, c});
    library.push_back(cells);
  }
  return {{"format", "caad-dataset/1"},
          {"source", b.source},
          {"seed", b.seed},
          {"grid_spec", grid_spec_json(b.spec)},
          {"shape", {b.rows(), b.cols()}},
          {"dtype", "float32"},
          {"byte_order", "little"},
          {"layout", "row-major [n, freq_bins, bw_bins]"},
          {"norm_stats", {{"global_min", b.stats.global_min}, {"global_max", b.stats.global_max}}},
          {"hopper_amplitude", b.stats.amplitude()},
          {"denoise", {{"p_thresh", b.mask.p_thresh}, {"masked_cells", b.mask.masked_count()}, {"keep", mask_rows},
                       {"nonzero_prob", prob_rows}}},
          {"hopper_library", library},
          {"out_of_range_records", b.out_of_range},
          {"splits", {{"train", split_counts(b.train)}, {"val", split_counts(b.val)}, {"test", split_counts(b.test)}}}};
}

void save_bundle(const std::filesystem::path& dir, const DatasetBundle& b) {
  std::filesystem::create_directories(dir);
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto& grids = b.split(s);
    const std::string name(split_name(s));
    std::ofstream raw(dir / (name + ".f32"), std::ios::binary | std::ios::trunc);
    if (!raw) raise(Errc::IoError, "cannot write " + (dir / (name + ".f32")).string());
    json labels = json::array();
    for (const auto& g : grids) {
      raw.write(reinterpret_cast<const char*>(g.values.data()), static_cast<std::streamsize>(g.values.size() * sizeof(float)));
      labels.push_back({{"id", g.id}, {"label", static_cast<int>(g.label)}, {"t_start", g.t_start}, {"kind", g.kind}});
    }
    write_text(dir / (name + ".labels.json"), labels.dump(1) + "\n");
  }
  json manifest = bundle_manifest(b);
  manifest["hash"] = bundle_hash(b);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetBundle load_bundle(const std::filesystem::path& dir) {
  const json m = read_json(dir / "manifest.json");
  if (m.value("format", "") != "caad-dataset/1") raise(Errc::CorruptInput, dir.string() + " is not a caad dataset");
  DatasetBundle b;
  b.source = m.value("source", "synthetic");
  b.seed = m.at("seed").get<std::uint64_t>();
  b.spec = grid_spec_from(m.at("grid_spec"));
  const Index rows = m.at("shape").at(0).get<Index>(), cols = m.at("shape").at(1).get<Index>();
  b.stats.global_min = m.at("norm_stats").at("global_min").get<double>();
  b.stats.global_max = m.at("norm_stats").at("global_max").get<double>();
  b.out_of_range = m.value("out_of_range_records", std::size_t{0});
  const json& d = m.at("denoise");
  b.mask.p_thresh = d.at("p_thresh").get<double>();
  b.mask.keep = Mask(rows, cols);
  b.mask.nonzero_prob = Eigen::ArrayXXd::Zero(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const std::string row = d.at("keep").at(static_cast<std::size_t>(r)).get<std::string>();
    if (static_cast<Index>(row.size()) != cols) raise(Errc::CorruptInput, "mask row has wrong width");
    for (Index c = 0; c < cols; ++c) {
      b.mask.keep(r, c) = row[static_cast<std::size_t>(c)] == '1';
      b.mask.nonzero_prob(r, c) = d.at("nonzero_prob").at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  for (const auto& cells : m.at("hopper_library")) {
    HopperSignature sig;
    for (const auto& cell : cells) sig.pixels.emplace_back(cell.at(0).get<Index>(), cell.at(1).get<Index>());
    b.hopper_library.push_back(std::move(sig));
  }
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const std::string name(split_name(s));
    const json labels = read_json(dir / (name + ".labels.json"));
    std::ifstream raw(dir / (name + ".f32"), std::ios::binary);
    if (!raw) raise(Errc::NotFound, "missing " + (dir / (name + ".f32")).string());
    auto& grids = b.split(s);
    for (const auto& entry : labels) {
      DensityGrid g;
      g.id = entry.at("id").get<std::string>();
      g.label = static_cast<Label>(entry.at("label").get<int>());
      g.t_start = entry.at("t_start").get<double>();
      g.kind = entry.value("kind", "benign");
      g.split = s;
      g.values = Grid(rows, cols);
      raw.read(reinterpret_cast<char*>(g.values.data()), static_cast<std::streamsize>(rows * cols * sizeof(float)));
      if (!raw) raise(Errc::CorruptInput, name + ".f32 is shorter than its label file implies");
      grids.push_back(std::move(g));
    }
    if (raw.peek() != std::char_traits<char>::eof()) raise(Errc::CorruptInput, name + ".f32 has trailing data");
  }
  return b;
}

std::string bundle_hash(const DatasetBundle& b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::uint64_t bytes = 0;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    for (const auto& g : b.split(s)) {
      crc = crc32(crc, reinterpret_cast<const Bytef*>(g.values.data()), static_cast<uInt>(g.values.size() * sizeof(float)));
      const std::string tag = g.id + ":" + std::to_string(static_cast<int>(g.label)) + ";";
      crc = crc32(crc, reinterpret_cast<const Bytef*>(tag.data()), static_cast<uInt>(tag.size()));
      bytes += static_cast<std::uint64_t>(g.values.size()) * sizeof(float) + tag.size();
    }
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "crc32:%08lx:%llu", static_cast<unsigned long>(crc), static_cast<unsigned long long>(bytes));
  return buf;
}

}  // namespace caad::spectral
