#include "caad/nn/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "caad/errors.hpp"

namespace caad::nn {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'A', 'D', 'P', 'R', 'M', '1'};

template <typename U>
void put(std::ofstream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::ifstream& in, const std::filesystem::path& path) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!in) raise(Errc::CorruptInput, "truncated parameter file " + path.string());
  return value;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const std::vector<std::pair<std::string, Tensor<float>>>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Errc::IoError, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put<std::int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) raise(Errc::IoError, "failed writing " + path.string());
}

std::map<std::string, Tensor<float>> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::NotFound, "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    raise(Errc::CorruptInput, path.string() + " is not a parameter file of a supported version");
  const auto count = get<std::uint32_t>(in, path);
  std::map<std::string, Tensor<float>> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) raise(Errc::CorruptInput, "implausible tensor rank in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = get<std::int64_t>(in, path);
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) raise(Errc::CorruptInput, "truncated tensor " + name + " in " + path.string());
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace caad::nn
