#include <bit>
#include <cstring>
#include <fstream>

#include "cdcl/errors.hpp"
#include "cdcl/model.hpp"

namespace cdcl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'D', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IngestionError(path.string() + ": truncated checkpoint");
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t e : p.tensor.shape()) put<std::uint64_t>(out, e);
    auto v = p.tensor.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IngestionError("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IngestionError(path.string() + ": not a checkpoint file");
  }
  if (const auto version = get<std::uint32_t>(in, path); version != kVersion) {
    throw IngestionError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(in, path);
  if (count != params.size()) {
    throw IngestionError(path.string() + ": holds " + std::to_string(count) + " tensors, model has " +
                         std::to_string(params.size()));
  }

  // Decode everything before touching the parameters.
  std::vector<std::vector<double>> values(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IngestionError(path.string() + ": truncated checkpoint");
    if (name != params[i].name) {
      throw IngestionError(path.string() + ": record " + std::to_string(i) + " is '" + name + "', expected '" +
                           params[i].name + "'");
    }
    if (get<std::uint8_t>(in, path) != kDtypeF64) throw IngestionError(path.string() + ": unsupported dtype");
    Shape shape(get<std::uint32_t>(in, path));
    for (auto& e : shape) e = get<std::uint64_t>(in, path);
    if (shape != params[i].tensor.shape()) {
      throw IngestionError(path.string() + ": '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                           shape_str(params[i].tensor.shape()));
    }
    values[i].resize(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(values[i].data()),
                 static_cast<std::streamsize>(values[i].size() * sizeof(double)))) {
      throw IngestionError(path.string() + ": truncated checkpoint");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor handle = params[i].tensor;
    auto dst = handle.mutable_values();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace cdcl
