#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pxiqa/parameters.hpp"

namespace pxiqa {

// Checkpoint container:
//   "PXCK" | u16 version | u8 value width (4 or 8) | u32 metadata length | metadata bytes
//   | u32 entry count | entries
// entry: u16 name length | name | u8 rank | u32 extents[rank] | values (little-endian)
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ParameterSet<T> params;
  std::string metadata;
};

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet<T>& params, const std::string& metadata = {});

// Values stored at either width are converted to T on load.
template <typename T>
Checkpoint<T> deserialize_checkpoint(std::span<const std::uint8_t> bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const std::string& metadata = {});

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into `target`, requiring identical names and shapes.
template <typename T>
void assign_parameters(ParameterSet<T>& target, const ParameterSet<T>& source);

}  // namespace pxiqa
