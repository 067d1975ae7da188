#include "pxiqa/checkpoint.hpp"

#include <algorithm>

#include "pxiqa/byte_io.hpp"

namespace pxiqa {

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet<T>& params, const std::string& metadata) {
  ByteWriter w;
  w.str("PXCK");
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(sizeof(T)));
  w.u32(static_cast<std::uint32_t>(metadata.size()));
  w.str(metadata);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.str(e.name);
    const Shape& s = e.tensor.shape();
    w.u8(static_cast<std::uint8_t>(s.rank()));
    for (int a = 0; a < s.rank(); ++a) w.u32(static_cast<std::uint32_t>(s[a]));
    for (T v : e.tensor.values()) {
      if constexpr (sizeof(T) == 4) {
        w.f32(v);
      } else {
        w.f64(v);
      }
    }
  }
  return w.take();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.str(4) != "PXCK") throw FormatError("checkpoint: bad magic");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto width = r.u8();
  if (width != 4 && width != 8) throw FormatError("checkpoint: bad value width " + std::to_string(width));
  Checkpoint<T> out;
  out.metadata = r.str(r.u32());
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    const auto rank = r.u8();
    std::vector<Index> extents;
    for (int a = 0; a < rank; ++a) extents.push_back(r.u32());
    Shape shape(std::move(extents));
    std::vector<T> values(static_cast<std::size_t>(shape.numel()));
    for (auto& v : values) v = width == 4 ? static_cast<T>(r.f32()) : static_cast<T>(r.f64());
    out.params.add(std::move(name), Tensor<T>(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params, const std::string& metadata) {
  write_file(path, serialize_checkpoint(params, metadata));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(read_file(path));
}

template <typename T>
void assign_parameters(ParameterSet<T>& target, const ParameterSet<T>& source) {
  if (target.size() != source.size()) {
    throw FormatError("parameter count mismatch: expected " + std::to_string(target.size()) + ", got " +
                      std::to_string(source.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].name != source[i].name || !(target[i].tensor.shape() == source[i].tensor.shape())) {
      throw FormatError("parameter mismatch: expected '" + target[i].name + "' " +
                        target[i].tensor.shape().str() + ", got '" + source[i].name + "' " +
                        source[i].tensor.shape().str());
    }
    std::copy(source[i].tensor.values().begin(), source[i].tensor.values().end(), target[i].tensor.values().begin());
  }
}

#define PXIQA_INSTANTIATE_CKPT(T)                                                                   \
  template std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet<T>&, const std::string&); \
  template Checkpoint<T> deserialize_checkpoint<T>(std::span<const std::uint8_t>);                   \
  template void save_checkpoint(const std::filesystem::path&, const ParameterSet<T>&, const std::string&); \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);                           \
  template void assign_parameters(ParameterSet<T>&, const ParameterSet<T>&);

PXIQA_INSTANTIATE_CKPT(float)
PXIQA_INSTANTIATE_CKPT(double)

}  // namespace pxiqa
