#pragma once

// Binary container shared by every trainable component:
//
//   "PFRL"                       4 bytes magic
//   version                      u32 (currently 1)
//   repeated until end of file:
//     name length                u32
//     name                       UTF-8 bytes
//     rank                       u32
//     dims                       rank x u64
//     values                     product(dims) x IEEE-754 float64, row-major
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string_view>

#include "pfr/params.hpp"

namespace pfr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

/// Copies values from `path` into the existing tensors of `store`. Every
/// parameter of the store must be present with an identical shape; records
/// the store does not know are ignored. Throws IngestionError otherwise.
void load_into(ParamStore& store, const std::filesystem::path& path);
void load_into(ParamStore& store, const NamedTensors& records);

/// Entries of `store` whose names satisfy `keep`.
NamedTensors select(const ParamStore& store, const std::function<bool(std::string_view)>& keep);

}  // namespace pfr
