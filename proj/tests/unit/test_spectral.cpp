#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "caad/errors.hpp"
#include "caad/rng.hpp"
#include "caad/spectral.hpp"
#include "caad/transforms.hpp"

using namespace caad;
using namespace caad::spectral;

namespace {

EmissionRecord rec(double ts, double f, double bw) {
  EmissionRecord r;
  r.ts = ts;
  r.center_freq_hz = f;
  r.bandwidth_hz = bw;
  return r;
}

DensityGrid grid_of(Grid g, Label l = Label::Unlabeled) {
  DensityGrid d;
  d.values = std::move(g);
  d.label = l;
  return d;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("caad-test-" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("parse emissions: fields, unknown keys, malformed lines") {
  const auto r = parse_emissions(std::string_view(
      "{\"ts\": 2, \"center_freq_hz\": 9.1e8, \"bandwidth_hz\": 1e5, \"extra\": 1}\n"
      "\n"
      "{\"ts\": 1, \"center_freq_hz\": 9.2e8, \"bandwidth_hz\": 2e5, \"power_db\": -60.5, \"signal_type\": \"lora\"}\n"
      "not json\n"));
  REQUIRE(r.records.size() == 2);
  CHECK(r.skipped == 1);
  CHECK(r.diagnostics.size() == 1);
  CHECK(r.records[0].ts == 1);  // sorted
  CHECK(*r.records[0].signal_type == "lora");
  CHECK(!r.records[1].power_db);
  CHECK_THROWS_AS(parse_emissions(std::string_view("")), Error);
  CHECK_THROWS_AS(parse_emissions(std::string_view("x\ny\n{\"ts\":1,\"center_freq_hz\":1,\"bandwidth_hz\":1}\n")), Error);
}

TEST_CASE("emission stream round trips byte for byte") {
  GridSpec spec;
  auto scenario = desk_scenario(spec, 20, 7);
  auto records = synth_generate(scenario);
  REQUIRE(records.size() >= 1000);
  records.resize(1000);
  std::ostringstream a;
  write_emissions(a, records);
  const auto back = parse_emissions(std::string_view(a.str()));
  CHECK(back.skipped == 0);
  std::ostringstream b;
  write_emissions(b, back.records);
  CHECK(a.str() == b.str());
}

TEST_CASE("binning places records in half-open cells") {
  GridSpec spec;
  const double fmid = (spec.freq_min_hz + spec.freq_max_hz) / 2, bmid = (spec.bw_min_hz + spec.bw_max_hz) / 2;
  auto one = bin_emissions(std::vector{rec(0, fmid, bmid)}, spec);
  REQUIRE(one.grids.size() == 1);
  CHECK(one.grids[0].values(40, 40) == 1.0f);
  CHECK(one.grids[0].values.sum() == 1.0f);
  auto two = bin_emissions(std::vector{rec(0, fmid, bmid), rec(1, fmid, bmid)}, spec);
  CHECK(two.grids[0].values(40, 40) == 2.0f);

  CHECK(GridSpec::bin_of(spec.freq_max_hz, spec.freq_min_hz, spec.freq_max_hz, 80) == 79);
  CHECK(GridSpec::bin_of(spec.freq_min_hz, spec.freq_min_hz, spec.freq_max_hz, 80) == 0);
  CHECK(!GridSpec::bin_of(spec.freq_max_hz + 1, spec.freq_min_hz, spec.freq_max_hz, 80));
  auto out = bin_emissions(std::vector{rec(0, 1e6, bmid), rec(1, fmid, bmid)}, spec);
  CHECK(out.out_of_range == 1);
}

TEST_CASE("binning conserves mass") {
  GridSpec spec;
  spec.n_freq_bins = spec.n_bw_bins = 32;
  const auto records = synth_generate(desk_scenario(spec, 20, 3));
  const auto b = bin_emissions(records, spec, 0, 20);
  double mass = 0;
  for (const auto& g : b.grids) mass += g.values.sum();
  CHECK(mass + static_cast<double>(b.out_of_range) == static_cast<double>(records.size()));
}

TEST_CASE("constant emitter fills one cell per window") {
  GridSpec spec;
  SynthScenario s;
  Emitter e;
  e.center_freq_hz = spec.freq_center(10);
  e.bandwidth_hz = spec.bw_center(5);
  e.packet_rate_hz = 10.0 / spec.window_s;
  s.emitters.push_back(e);
  s.duration_s = 6 * spec.window_s;
  const auto b = bin_emissions(synth_generate(s), spec, 0, 6);
  for (const auto& g : b.grids) {
    CHECK(g.values(10, 5) == 10.0f);
    CHECK((g.values.array() != 0).count() == 1);
  }
}

TEST_CASE("synthesis counts, drops and determinism") {
  SynthScenario s;
  s.emitters.push_back(Emitter{});
  s.emitters[0].packet_rate_hz = 1;
  s.duration_s = 10;
  CHECK(synth_generate(s).size() == 10);
  s.drop_events.push_back({5, 0});
  CHECK(synth_generate(s).size() == 5);

  GridSpec spec;
  auto a = synth_generate(desk_scenario(spec, 5, 9));
  auto b = synth_generate(desk_scenario(spec, 5, 9));
  std::ostringstream sa, sb;
  write_emissions(sa, a);
  write_emissions(sb, b);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("normalization and its inverse") {
  std::vector<DensityGrid> train{grid_of(Grid::Constant(2, 2, 0)), grid_of(Grid::Constant(2, 2, 98))};
  train[0].values(1, 1) = 49;
  const auto st = fit_norm_stats(train);
  CHECK(st.global_min == 0);
  CHECK(st.global_max == 98);
  auto copy = train;
  normalize_grids(copy, st);
  CHECK(copy[1].values(0, 0) == 1.0f);
  CHECK(copy[0].values(0, 0) == 0.0f);
  CHECK(denormalize(copy[0].values, st)(1, 1) == 49.0f);
  CHECK(NormStats{0, 201}.amplitude() == doctest::Approx(0.004975).epsilon(1e-4));
  std::vector<DensityGrid> over{grid_of(Grid::Constant(1, 1, 300))};
  normalize_grids(over, st);
  CHECK(over[0].values(0, 0) == 1.0f);
  std::vector<DensityGrid> flat{grid_of(Grid::Constant(2, 2, 3))};
  CHECK_THROWS_AS(fit_norm_stats(flat), Error);
}

TEST_CASE("denoise mask boundaries") {
  auto fit = [](std::size_t n, std::size_t hits) {
    std::vector<DensityGrid> g(n, grid_of(Grid::Zero(1, 2)));
    for (std::size_t i = 0; i < hits; ++i) g[i].values(0, 0) = 1;
    for (auto& x : g) x.values(0, 1) = 1;
    return fit_denoise_mask(g, 0.0005);
  };
  CHECK(!fit(2000, 0).keep(0, 0));
  CHECK(fit(2000, 1).keep(0, 0));
  CHECK(!fit(10000, 1).keep(0, 0));
  CHECK(fit(10000, 1).keep(0, 1));
}

TEST_CASE("apply mask in both modes") {
  DenoiseMask m;
  m.keep = Mask::Constant(2, 2, true);
  m.keep(0, 1) = false;
  std::vector<DensityGrid> train{grid_of(Grid::Zero(2, 2))};
  train[0].values(0, 1) = 0.5f;
  CHECK(apply_mask(train, m, MaskMode::ZeroOut) == 1);
  CHECK(train[0].values.sum() == 0.0f);
  std::vector<DensityGrid> test{grid_of(Grid::Zero(2, 2), Label::Benign), grid_of(Grid::Zero(2, 2), Label::Benign)};
  test[0].values(0, 1) = 0.1f;
  test[1].values(1, 1) = 0.1f;
  CHECK(apply_mask(test, m, MaskMode::LabelAnomaly) == 1);
  CHECK(test[0].label == Label::Anomaly);
  CHECK(test[0].kind == "natural");
  CHECK(test[0].values(0, 1) == 0.1f);
  CHECK(test[1].label == Label::Benign);
}

TEST_CASE("hopper injection changes exactly the signature cells") {
  DenoiseMask m;
  m.keep = Mask::Constant(8, 8, false);
  const auto lib = make_hopper_library(m, 10, 6, 5);
  REQUIRE(lib.size() == 10);
  for (const auto& sig : lib) CHECK(std::set(sig.pixels.begin(), sig.pixels.end()).size() == 6);
  DensityGrid g = grid_of(Grid::Constant(8, 8, 0.25f), Label::Benign);
  const NormStats st{0, 98};
  const auto h = inject_hopper(g, lib[0], st);
  CHECK(h.label == Label::Anomaly);
  CHECK(h.kind == "hopper");
  CHECK(((h.values - g.values).array() != 0).count() == 6);
  for (const auto& [r, c] : lib[0].pixels) CHECK(h.values(r, c) - 0.25f == doctest::Approx(1.0 / 98).epsilon(1e-5));
  CHECK(inject_hopper(g, HopperSignature{}, st).values == g.values);
  DensityGrid top = grid_of(Grid::Constant(8, 8, 1.0f));
  CHECK(inject_hopper(top, lib[0], st).values.maxCoeff() == 1.0f);
}

TEST_CASE("drop injection") {
  std::vector<DensityGrid> gs(3, grid_of(Grid::Constant(2, 2, 0.5f), Label::Benign));
  for (int i = 0; i < 3; ++i) gs[i].t_start = 180.0 * i;
  const std::vector<std::pair<Index, Index>> region{{1, 0}};
  CHECK(inject_drop(gs, 180, region) == 2);
  CHECK(gs[0].label == Label::Benign);
  CHECK(gs[0].values(1, 0) == 0.5f);
  CHECK(gs[1].values(1, 0) == 0.0f);
  CHECK(gs[2].label == Label::Anomaly);
  std::string warned;
  auto prev = set_warning_sink([&](std::string_view m) { warned = m; });
  CHECK(inject_drop(gs, 0, {}) == 0);
  set_warning_sink(prev);
  CHECK(warned.find("NoOpRegion") != std::string::npos);
}

namespace {

DatasetBundle small_bundle(std::uint64_t seed, InjectionPlan plan = {}) {
  GridSpec spec;
  spec.n_freq_bins = spec.n_bw_bins = 16;
  const auto records = synth_generate(desk_scenario(spec, 60, seed));
  AssembleOptions o;
  o.train = {0, 30};
  o.val = {30, 40};
  o.test = {40, 60};
  o.seed = seed;
  o.injection = plan;
  o.injection.seed = seed;
  return assemble_dataset(records, spec, o);
}

}  // namespace

TEST_CASE("dataset assembly: splits, labels, twins") {
  const auto d = small_bundle(4);
  CHECK(d.train.size() == 30);
  CHECK(d.val.size() == 10);
  std::size_t natural = 0, hopper = 0, benign = 0;
  for (const auto& g : d.test) {
    CHECK((g.label == Label::Benign || g.label == Label::Anomaly));
    natural += g.kind == "natural";
    hopper += g.kind == "hopper";
    benign += g.label == Label::Benign;
  }
  CHECK(hopper == benign);
  CHECK(d.test.size() == 20 + hopper);
  CHECK(natural + benign == 20);
  for (const auto& g : d.train) {
    CHECK(g.label != Label::Anomaly);
    CHECK(((g.values.array() != 0) && !d.mask.keep).count() == 0);
    CHECK(g.values.maxCoeff() <= 1.0f);
  }
  CHECK(d.test[0].id == "test-000040");  // ids carry the window index
  bool twin_found = false;
  for (const auto& g : d.test) twin_found |= g.id.find("-hop") != std::string::npos;
  CHECK(twin_found);
}

TEST_CASE("dataset assembly is deterministic and round trips on disk") {
  const auto a = small_bundle(8), b = small_bundle(8);
  CHECK(bundle_hash(a) == bundle_hash(b));
  const auto dir = temp_dir("bundle");
  save_bundle(dir, a);
  const auto c = load_bundle(dir);
  CHECK(bundle_hash(c) == bundle_hash(a));
  REQUIRE(c.test.size() == a.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    CHECK(c.test[i].id == a.test[i].id);
    CHECK(c.test[i].values == a.test[i].values);
    CHECK(c.test[i].label == a.test[i].label);
  }
  CHECK(c.stats.global_max == a.stats.global_max);
  CHECK((c.mask.keep == a.mask.keep).all());
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero-injection plan labels only natural anomalies") {
  InjectionPlan plan;
  plan.hopper_twins = false;
  const auto d = small_bundle(5, plan);
  CHECK(d.test.size() == 20);
  for (const auto& g : d.test) CHECK((g.label == Label::Benign || g.kind == "natural"));
}

TEST_CASE("overlapping splits are rejected") {
  GridSpec spec;
  spec.n_freq_bins = spec.n_bw_bins = 8;
  const auto records = synth_generate(desk_scenario(spec, 10, 1));
  AssembleOptions o;
  o.train = {0, 6};
  o.val = {5, 8};
  o.test = {8, 10};
  CHECK_THROWS_AS(assemble_dataset(records, spec, o), Error);
}

// ---- transforms ----

TEST_CASE("salt noise sets exactly floor(f*N) pixels") {
  transforms::NegativeTransformConfig cfg;
  const Grid g = Grid::Constant(80, 80, 0.2f);
  const Grid s = transforms::salt_noise(g, cfg);
  CHECK((s.array() == 1.0f).count() == 320);
  CHECK(((s - g).array() != 0).count() == 320);
  CHECK(transforms::salt_noise(g, cfg) == s);
  cfg.salt_fraction = 0.0001;
  CHECK_THROWS_AS(transforms::salt_noise(g, cfg), Error);
}

TEST_CASE("rot90 index formula and group structure") {
  Grid a(2, 2);
  a << 1, 2, 3, 4;
  Grid want(2, 2);
  want << 2, 4, 1, 3;
  CHECK(transforms::rot90(a, 1) == want);
  Rng rng = derive_rng(41, 0);
  Grid b(5, 5);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<float>(uniform01(rng));
  CHECK(transforms::rot90(transforms::rot90(transforms::rot90(transforms::rot90(b, 1), 1), 1), 1) == b);
  CHECK(transforms::rot90(b, 2) == transforms::rot90(transforms::rot90(b, 1), 1));
  std::vector<float> x(b.data(), b.data() + b.size()), y;
  const Grid r = transforms::rot90(b, 3);
  y.assign(r.data(), r.data() + r.size());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  CHECK(x == y);
  CHECK_THROWS_AS(transforms::rot90(Grid::Zero(2, 3), 1), Error);
}

TEST_CASE("self-supervised set is balanced and paired") {
  std::vector<Grid> benign(10, Grid::Constant(4, 4, 0.1f));
  transforms::NegativeTransformConfig cfg;
  cfg.kind = transforms::NegativeTransformConfig::Kind::Rot90;
  cfg.seed = 3;
  const auto d = transforms::build_selfsup_set(benign, cfg);
  CHECK(d.images.size() == 20);
  CHECK(std::accumulate(d.labels.begin(), d.labels.end(), 0) == 10);
  for (std::size_t i = 10; i < 20; ++i) {
    CHECK(d.source[i] == i - 10);
    CHECK(d.rotation_k[i] >= 1);
    CHECK(d.rotation_k[i] <= 3);
  }
  CHECK(transforms::build_selfsup_set(benign, cfg).rotation_k == d.rotation_k);
  CHECK_THROWS_AS(transforms::build_selfsup_set({}, cfg), Error);
}
