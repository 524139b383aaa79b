#include "pfr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "pfr/error.hpp"

namespace pfr {
namespace {

constexpr char kMagic[4] = {'P', 'F', 'R', 'L'};

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  if constexpr (std::is_floating_point_v<T>) {
    const auto bits = std::bit_cast<std::uint64_t>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  } else {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
bool read_le(std::istream& in, T& value) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_floating_point_v<T>) {
    value = std::bit_cast<double>(bits);
  } else {
    value = static_cast<T>(bits);
  }
  return true;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("checkpoint: cannot write " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, tensor] : tensors) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) write_le<std::uint64_t>(out, d);
    for (double v : tensor.data()) write_le<double>(out, v);
  }
  if (!out) throw IngestionError("checkpoint: write failed for " + path.string());
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("checkpoint: cannot open " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IngestionError("checkpoint: bad magic in " + path.string());
  }
  if (!read_le(in, version) || version != kCheckpointVersion) {
    throw IngestionError("checkpoint: unsupported version in " + path.string());
  }
  NamedTensors records;
  std::uint32_t name_len = 0;
  while (read_le(in, name_len)) {
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!in.read(name.data(), name_len) || !read_le(in, rank) || rank > 8) {
      throw IngestionError("checkpoint: truncated record header in " + path.string());
    }
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!read_le(in, v)) throw IngestionError("checkpoint: truncated dims for " + name);
      d = static_cast<std::size_t>(v);
    }
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) {
      if (!read_le(in, v)) throw IngestionError("checkpoint: truncated values for " + name);
    }
    records.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return records;
}

void load_into(ParamStore& store, const NamedTensors& records) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : records) by_name[name] = &t;
  for (const auto& [name, target] : store.entries()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IngestionError("checkpoint: missing tensor " + name);
    if (it->second->shape() != target.shape()) {
      throw IngestionError("checkpoint: tensor " + name + " has shape " +
                           shape_str(it->second->shape()) + ", expected " +
                           shape_str(target.shape()));
    }
  }
  for (const auto& [name, target] : store.entries()) {
    const auto src = by_name[name]->data();
    auto dst = Tensor(target).mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void load_into(ParamStore& store, const std::filesystem::path& path) {
  load_into(store, read_checkpoint(path));
}

NamedTensors select(const ParamStore& store, const std::function<bool(std::string_view)>& keep) {
  NamedTensors out;
  for (const auto& [name, t] : store.entries()) {
    if (keep(name)) out.emplace_back(name, t);
  }
  return out;
}

}  // namespace pfr
