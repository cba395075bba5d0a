#pragma once

#include <filesystem>
#include <string>

#include "caad/spectral.hpp"
#include "caad/trainer.hpp"

namespace tiny {

inline caad::trainer::TrainConfig config(std::uint64_t seed = 1) {
  caad::trainer::TrainConfig c;
  c.epochs = 1;
  c.batch_size = 2;
  c.seed = seed;
  c.generator = {16, 16, 2, 4, true};
  c.critic = {16, 16, 2, 4, 8, 0.5};
  return c;
}

inline caad::spectral::DatasetBundle data(std::size_t n_train = 4, std::uint64_t seed = 2, std::size_t n_test = 4) {
  using namespace caad::spectral;
  GridSpec spec;
  spec.n_freq_bins = spec.n_bw_bins = 16;
  const std::size_t n = n_train + 4 + n_test;
  const auto records = synth_generate(desk_scenario(spec, n, seed));
  AssembleOptions o;
  o.train = {0, n_train};
  o.val = {n_train, n_train + 4};
  o.test = {n_train + 4, n};
  o.seed = seed;
  o.injection.seed = seed;
  return assemble_dataset(records, spec, o);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("caad-test-" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace tiny
