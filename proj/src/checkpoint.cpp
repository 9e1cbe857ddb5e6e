#include "ulab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace ulab {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'U', 'L', 'N', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  require(static_cast<bool>(in), "corrupt_checkpoint", "unexpected end of checkpoint");
  return v;
}

}  // namespace

void write_tensors(std::ostream& out, const std::map<std::string, Tensor>& tensors) {
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  require(static_cast<bool>(out), "io_error", "failed writing checkpoint");
}

std::map<std::string, Tensor> read_tensors(std::istream& in) {
  char magic[4] = {};
  in.read(magic, sizeof magic);
  require(static_cast<bool>(in) && std::memcmp(magic, kMagic, sizeof kMagic) == 0, "corrupt_checkpoint",
          "bad checkpoint magic");
  const std::uint32_t version = get_u32(in);
  require(version == kVersion, "corrupt_checkpoint", "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(in);
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in);
    require(name_len > 0 && name_len < 4096, "corrupt_checkpoint", "implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = get_u32(in);
    require(rank >= 1 && rank <= 8, "corrupt_checkpoint", "implausible tensor rank for " + name);
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      const std::uint32_t dim = get_u32(in);
      require(dim >= 1 && dim < (1u << 28), "corrupt_checkpoint", "implausible extent in " + name);
      e = static_cast<int>(dim);
      n *= dim;
    }
    std::vector<float> data(n);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    require(static_cast<bool>(in), "corrupt_checkpoint", "truncated payload for " + name);
    require(!tensors.count(name), "corrupt_checkpoint", "duplicate tensor name " + name);
    tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), "io_error", "cannot open " + path.string() + " for writing");
  write_tensors(out, params.tensors);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "missing_prerequisite", "cannot open checkpoint " + path.string());
  ModelParams p;
  p.tensors = read_tensors(in);
  p.config = infer_config(p.tensors);
  for (const auto& [name, t] : p.tensors) {
    require(t.all_finite(), "corrupt_checkpoint", "non-finite values in " + name);
  }
  return p;
}

}  // namespace ulab
