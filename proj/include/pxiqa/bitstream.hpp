#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pxiqa/codec.hpp"
#include "pxiqa/image.hpp"

namespace pxiqa {

inline constexpr int kCdfPrecision = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecision;
inline constexpr double kDefaultTailMass = 1e-5;

// Quantized per-channel distribution over the integers [v_min, v_max] plus one
// escape symbol (last) standing for every value outside the support.
struct CdfTable {
  std::int32_t v_min = 0;
  std::int32_t v_max = 0;
  // cdf[0] = 0 < cdf[1] < ... < cdf[symbols()] = 2^16.
  std::vector<std::uint32_t> cdf;

  std::uint32_t symbols() const { return static_cast<std::uint32_t>(cdf.size() - 1); }
  std::uint32_t escape() const { return symbols() - 1; }
  std::uint32_t frequency(std::uint32_t s) const { return cdf[s + 1] - cdf[s]; }
  // Symbol index of v (the escape index when outside the support).
  std::uint32_t symbol_of(std::int64_t v) const;
  // Quantized probability of coding the symbol for v.
  double mass(std::int64_t v) const { return frequency(symbol_of(v)) / static_cast<double>(kCdfTotal); }
  // Throws FormatError unless the table is well formed.
  void validate() const;
  bool operator==(const CdfTable&) const = default;
};

// Support per channel such that the omitted tail mass is below `tail_mass` (split
// evenly between the sides, searched outward from 0); masses renormalized to 2^16
// by largest remainders with every symbol keeping at least one count.
std::vector<CdfTable> build_cdf_tables(const EntropyModelView& model, double tail_mass = kDefaultTailMass);

// Carry-propagating range coder: 64-bit low, 32-bit range, byte-wise output.
class RangeEncoder {
 public:
  // Symbol occupying [cum, cum + freq) of a 2^16 total.
  void encode(std::uint32_t cum, std::uint32_t freq);
  // `bits` (<= 16) equiprobable bits.
  void encode_bits(std::uint32_t value, int bits);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> data);
  // Decodes one symbol of `table` (binary search over its cdf).
  std::uint32_t decode(const std::vector<std::uint32_t>& cdf);
  std::uint32_t decode_bits(int bits);
  std::size_t consumed() const { return pos_; }

 private:
  std::uint8_t next();
  void normalize();
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

// Integer latents N x C x H x W.
struct IntLatents {
  Shape shape;
  std::vector<std::int32_t> values;
};

// Rounds (half away from zero) and range-checks real latents.
IntLatents to_int_latents(const Tensor<float>& y);

// Magic "PXIQ", u16 version, 32-byte manifest hash, u32 x 4 latent shape, u32 x 2
// original image size, u16 table count, tables (i32 v_min, i32 v_max, u16 frequency
// per symbol), payload. Little-endian.
struct Bitstream {
  static constexpr std::uint16_t kVersion = 1;
  Digest manifest_hash{};
  std::array<std::uint32_t, 4> latent_shape{};
  std::uint32_t height = 0, width = 0;
  std::vector<CdfTable> tables;
  std::vector<std::uint8_t> payload;

  std::vector<std::uint8_t> serialize() const;
  static Bitstream parse(std::span<const std::uint8_t> bytes);
};

// Channel c of the latents uses tables[c]. Out-of-support values are coded as the
// escape symbol followed by a bypass sign bit and an Elias-gamma magnitude.
Bitstream encode_latents(const IntLatents& latents, const std::vector<CdfTable>& tables, const Digest& manifest_hash,
                         std::uint32_t height, std::uint32_t width);
// Refuses a manifest-hash or table mismatch; requires the payload to be consumed exactly.
IntLatents decode_latents(const Bitstream& stream, const std::vector<CdfTable>& tables, const Digest& manifest_hash);

// Image -> reflect-pad to a multiple of 8 -> analysis -> rounding -> range coding.
Bitstream encode_image(const Image& image, const LoadedModel& model, double tail_mass = kDefaultTailMass);
// Decoding, synthesis, crop to the original size, 8-bit rounding.
Image decode_image(const Bitstream& stream, const LoadedModel& model, double tail_mass = kDefaultTailMass);
// Rounded latents of the padded image, as coded by encode_image.
Tensor<float> encode_latents_real(const Image& image, const ParameterSet<float>& params);

}  // namespace pxiqa
