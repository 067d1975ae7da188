#include "pxiqa/bitstream.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "pxiqa/ops.hpp"

namespace pxiqa {

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr std::int64_t kSupportLimit = 1 << 14;
constexpr char kMagic[4] = {'P', 'X', 'I', 'Q'};

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Largest-remainder rounding of `probs` to integer counts summing to kCdfTotal,
// each at least 1. Every count is within 2 of its exact share.
std::vector<std::uint32_t> quantize_counts(const std::vector<double>& probs) {
  const std::size_t n = probs.size();
  if (n == 0 || n > kCdfTotal) throw InvalidArgument("cannot quantize " + std::to_string(n) + " symbols to 16 bits");
  const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (!(sum > 0) || !std::isfinite(sum)) throw NumericError("entropy table has no finite positive mass");
  std::vector<double> exact(n);
  std::vector<std::int64_t> counts(n);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    exact[i] = probs[i] / sum * kCdfTotal;
    counts[i] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(exact[i])));
    assigned += counts[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::int64_t diff = static_cast<std::int64_t>(kCdfTotal) - assigned;
  if (diff > 0) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return exact[a] - counts[a] > exact[b] - counts[b];
    });
    for (std::size_t k = 0; diff > 0; k = (k + 1) % n, --diff) ++counts[order[k]];
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return exact[a] - counts[a] < exact[b] - counts[b];
    });
    for (std::size_t k = 0; diff < 0; k = (k + 1) % n) {
      if (counts[order[k]] > 1) {
        --counts[order[k]];
        ++diff;
      }
    }
  }
  return {counts.begin(), counts.end()};
}

std::string hex_of(const Digest& d) { return to_hex(d); }

}  // namespace

std::uint32_t CdfTable::symbol_of(std::int64_t v) const {
  if (v < v_min || v > v_max) return escape();
  return static_cast<std::uint32_t>(v - v_min);
}

void CdfTable::validate() const {
  if (v_max < v_min) throw FormatError("entropy table support is empty");
  const std::uint64_t expected = static_cast<std::uint64_t>(static_cast<std::int64_t>(v_max) - v_min) + 3;
  if (cdf.size() != expected) throw FormatError("entropy table size does not match its support");
  if (cdf.front() != 0 || cdf.back() != kCdfTotal) throw FormatError("entropy table does not span 0..2^16");
  for (std::size_t i = 1; i < cdf.size(); ++i) {
    if (cdf[i] <= cdf[i - 1]) throw FormatError("entropy table has a symbol without mass at index " + std::to_string(i - 1));
  }
}

std::vector<CdfTable> build_cdf_tables(const EntropyModelView& model, double tail_mass) {
  if (!(tail_mass > 0 && tail_mass < 0.01)) throw InvalidArgument("tail mass must lie in (0, 0.01)");
  const double half = tail_mass / 2;
  std::vector<CdfTable> tables;
  for (Index c = 0; c < model.channels(); ++c) {
    auto below = [&](std::int64_t v) { return sigmoid(model.logit(c, static_cast<double>(v) - 0.5)); };
    auto above = [&](std::int64_t v) { return sigmoid(-model.logit(c, static_cast<double>(v) + 0.5)); };
    std::int64_t lo = 0, hi = 0;
    while (below(lo) >= half) {
      if (--lo < -kSupportLimit) throw NumericError("entropy model channel " + std::to_string(c) + " is degenerate (support below -16384)");
    }
    while (above(hi) >= half) {
      if (++hi > kSupportLimit) throw NumericError("entropy model channel " + std::to_string(c) + " is degenerate (support above 16384)");
    }
    std::vector<double> probs;
    double prev = model.logit(c, static_cast<double>(lo) - 0.5);
    for (std::int64_t v = lo; v <= hi; ++v) {
      const double next = model.logit(c, static_cast<double>(v) + 0.5);
      if (!(next > prev)) {
        throw NumericError("entropy model channel " + std::to_string(c) + " is not increasing at " + std::to_string(v));
      }
      prev = next;
      probs.push_back(model.likelihood(c, static_cast<double>(v)));
    }
    probs.push_back(below(lo) + above(hi));
    const auto counts = quantize_counts(probs);
    CdfTable t;
    t.v_min = static_cast<std::int32_t>(lo);
    t.v_max = static_cast<std::int32_t>(hi);
    t.cdf.assign(1, 0);
    for (std::uint32_t k : counts) t.cdf.push_back(t.cdf.back() + k);
    tables.push_back(std::move(t));
  }
  return tables;
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--pending_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++pending_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq) {
  const std::uint32_t r = range_ >> kCdfPrecision;
  low_ += static_cast<std::uint64_t>(r) * cum;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bits(std::uint32_t value, int bits) {
  const std::uint32_t r = range_ >> bits;
  low_ += static_cast<std::uint64_t>(r) * value;
  range_ = r;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
}

std::uint8_t RangeDecoder::next() {
  if (pos_ >= data_.size()) throw FormatError("payload truncated at byte offset " + std::to_string(pos_));
  return data_[pos_++];
}

void RangeDecoder::normalize() {
  while (range_ < kTop) {
    code_ = (code_ << 8) | next();
    range_ <<= 8;
  }
}

std::uint32_t RangeDecoder::decode(const std::vector<std::uint32_t>& cdf) {
  const std::uint32_t r = range_ >> kCdfPrecision;
  const std::uint32_t count = std::min(code_ / r, kCdfTotal - 1);
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), count);
  const auto s = static_cast<std::uint32_t>(it - cdf.begin() - 1);
  code_ -= r * cdf[s];
  range_ = r * (cdf[s + 1] - cdf[s]);
  normalize();
  return s;
}

std::uint32_t RangeDecoder::decode_bits(int bits) {
  const std::uint32_t r = range_ >> bits;
  const std::uint32_t v = std::min(code_ / r, (1u << bits) - 1);
  code_ -= r * v;
  range_ = r;
  normalize();
  return v;
}

IntLatents to_int_latents(const Tensor<float>& y) {
  if (y.rank() != 4) throw ShapeError("latents must be N x C x H x W, got " + y.shape().str());
  IntLatents out{y.shape(), {}};
  out.values.reserve(static_cast<std::size_t>(y.size()));
  for (Index i = 0; i < y.size(); ++i) {
    const double v = std::round(static_cast<double>(y[i]));
    if (!(std::abs(v) < 2147483647.0)) throw NumericError("latent value out of the 32-bit range at index " + std::to_string(i));
    out.values.push_back(static_cast<std::int32_t>(v));
  }
  return out;
}

std::vector<std::uint8_t> Bitstream::serialize() const {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u16(kVersion);
  w.raw(manifest_hash);
  for (std::uint32_t d : latent_shape) w.u32(d);
  w.u32(height);
  w.u32(width);
  if (tables.size() > 0xFFFF) throw InvalidArgument("too many entropy tables");
  w.u16(static_cast<std::uint16_t>(tables.size()));
  for (const auto& t : tables) {
    w.i32(t.v_min);
    w.i32(t.v_max);
    for (std::uint32_t s = 0; s < t.symbols(); ++s) w.u16(static_cast<std::uint16_t>(t.frequency(s)));
  }
  w.raw(payload);
  return w.take();
}

Bitstream Bitstream::parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "bitstream");
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("not a PXIQ bitstream (bad magic)");
  const std::uint16_t version = r.u16();
  if (version != kVersion) throw FormatError("unsupported bitstream version " + std::to_string(version));
  Bitstream s;
  const auto hash = r.raw(32);
  std::copy(hash.begin(), hash.end(), s.manifest_hash.begin());
  for (auto& d : s.latent_shape) d = r.u32();
  s.height = r.u32();
  s.width = r.u32();
  const std::uint16_t count = r.u16();
  for (std::uint16_t i = 0; i < count; ++i) {
    CdfTable t;
    t.v_min = r.i32();
    t.v_max = r.i32();
    if (t.v_max < t.v_min || static_cast<std::int64_t>(t.v_max) - t.v_min >= kCdfTotal - 1) {
      throw FormatError("entropy table " + std::to_string(i) + " has an invalid support");
    }
    const std::uint32_t symbols = static_cast<std::uint32_t>(t.v_max - t.v_min) + 2;
    t.cdf.assign(1, 0);
    for (std::uint32_t k = 0; k < symbols; ++k) t.cdf.push_back(t.cdf.back() + r.u16());
    t.validate();
    s.tables.push_back(std::move(t));
  }
  const auto rest = r.rest();
  s.payload.assign(rest.begin(), rest.end());
  return s;
}

Bitstream encode_latents(const IntLatents& latents, const std::vector<CdfTable>& tables, const Digest& manifest_hash,
                         std::uint32_t height, std::uint32_t width) {
  const Shape& shape = latents.shape;
  if (shape.rank() != 4) throw ShapeError("latents must be N x C x H x W, got " + shape.str());
  if (static_cast<Index>(latents.values.size()) != shape.numel()) throw ShapeError("latent values do not match shape " + shape.str());
  if (static_cast<Index>(tables.size()) != shape[1]) {
    throw ShapeError("latents have " + std::to_string(shape[1]) + " channels but " + std::to_string(tables.size()) +
                     " entropy tables were given");
  }
  for (const auto& t : tables) t.validate();
  Bitstream s;
  s.manifest_hash = manifest_hash;
  for (int i = 0; i < 4; ++i) {
    if (shape[i] > 0xFFFFFFFFll) throw ShapeError("latent extent does not fit 32 bits");
    s.latent_shape[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(shape[i]);
  }
  s.height = height;
  s.width = width;
  s.tables = tables;

  RangeEncoder enc;
  const Index plane = shape[2] * shape[3];
  for (std::size_t i = 0; i < latents.values.size(); ++i) {
    const CdfTable& t = tables[static_cast<std::size_t>((static_cast<Index>(i) / plane) % shape[1])];
    const std::int64_t v = latents.values[i];
    const std::uint32_t sym = t.symbol_of(v);
    enc.encode(t.cdf[sym], t.frequency(sym));
    if (sym != t.escape()) continue;
    enc.encode_bits(v < 0 ? 1 : 0, 1);
    const std::uint64_t x = static_cast<std::uint64_t>(v < 0 ? -v : v) + 1;
    const int n = std::bit_width(x) - 1;
    enc.encode_bits(static_cast<std::uint32_t>(n), 6);
    for (int done = n; done > 0;) {
      const int chunk = std::min(done, 16);
      done -= chunk;
      enc.encode_bits(static_cast<std::uint32_t>((x >> done) & ((1u << chunk) - 1)), chunk);
    }
  }
  s.payload = enc.finish();
  return s;
}

IntLatents decode_latents(const Bitstream& stream, const std::vector<CdfTable>& tables, const Digest& manifest_hash) {
  if (stream.manifest_hash != manifest_hash) {
    throw FormatError("bitstream was encoded for model " + hex_of(stream.manifest_hash) + " but the decoder has " +
                      hex_of(manifest_hash));
  }
  if (stream.tables != tables) throw FormatError("bitstream entropy tables differ from the model's tables");
  const auto& ls = stream.latent_shape;
  const Shape shape{static_cast<Index>(ls[0]), static_cast<Index>(ls[1]), static_cast<Index>(ls[2]), static_cast<Index>(ls[3])};
  if (static_cast<Index>(tables.size()) != shape[1]) {
    throw FormatError("bitstream latent shape " + shape.str() + " does not match " + std::to_string(tables.size()) +
                      " entropy tables");
  }
  IntLatents out{shape, {}};
  const Index count = shape.numel();
  if (count > (Index{1} << 31)) throw FormatError("bitstream latent shape " + shape.str() + " is implausibly large");
  out.values.reserve(static_cast<std::size_t>(std::min<Index>(count, Index{1} << 24)));
  RangeDecoder dec(stream.payload);
  const Index plane = shape[2] * shape[3];
  for (Index i = 0; i < count; ++i) {
    const CdfTable& t = tables[static_cast<std::size_t>((i / plane) % shape[1])];
    const std::uint32_t sym = dec.decode(t.cdf);
    if (sym != t.escape()) {
      out.values.push_back(t.v_min + static_cast<std::int32_t>(sym));
      continue;
    }
    const bool negative = dec.decode_bits(1) != 0;
    const int n = static_cast<int>(dec.decode_bits(6));
    if (n > 32) throw FormatError("corrupt escape code at latent " + std::to_string(i));
    std::uint64_t x = 1;
    for (int done = n; done > 0;) {
      const int chunk = std::min(done, 16);
      done -= chunk;
      x = (x << chunk) | dec.decode_bits(chunk);
    }
    const std::int64_t v = negative ? -static_cast<std::int64_t>(x - 1) : static_cast<std::int64_t>(x - 1);
    if ((v >= t.v_min && v <= t.v_max) || v < INT32_MIN || v > INT32_MAX) {
      throw FormatError("corrupt escape code at latent " + std::to_string(i));
    }
    out.values.push_back(static_cast<std::int32_t>(v));
  }
  if (dec.consumed() != stream.payload.size()) {
    throw FormatError("payload has " + std::to_string(stream.payload.size() - dec.consumed()) +
                      " unread bytes after decoding; the stream is corrupt");
  }
  return out;
}

namespace {

Image as_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw ShapeError("images must have 1 or 3 channels, got " + std::to_string(image.channels));
  Image out(image.height, image.width, 3);
  for (Index i = 0; i < image.pixel_count(); ++i) {
    for (Index c = 0; c < 3; ++c) out.values[static_cast<std::size_t>(i * 3 + c)] = image.values[static_cast<std::size_t>(i)];
  }
  return out;
}

Index round_up8(Index v) { return (v + kCodecFactor - 1) / kCodecFactor * kCodecFactor; }

}  // namespace

Tensor<float> encode_latents_real(const Image& image, const ParameterSet<float>& params) {
  const Image rgb = as_rgb(image);
  const Image padded = pad_reflect(rgb, round_up8(rgb.height), round_up8(rgb.width));
  auto& mutable_params = const_cast<ParameterSet<float>&>(params);  // bound as constants: never written
  Tape<float> tape;
  const BoundParameters<float> frozen(tape, mutable_params, false);
  return quantize_test(analyze(tape.constant(to_tensor<float>(padded)), frozen).value());
}

Bitstream encode_image(const Image& image, const LoadedModel& model, double tail_mass) {
  if (image.height <= 0 || image.width <= 0) throw ShapeError("cannot encode an empty image");
  const IntLatents latents = to_int_latents(encode_latents_real(image, model.params));
  return encode_latents(latents, build_cdf_tables(EntropyModelView(model.params), tail_mass), model.manifest.hash(),
                        static_cast<std::uint32_t>(image.height), static_cast<std::uint32_t>(image.width));
}

Image decode_image(const Bitstream& stream, const LoadedModel& model, double tail_mass) {
  const IntLatents latents =
      decode_latents(stream, build_cdf_tables(EntropyModelView(model.params), tail_mass), model.manifest.hash());
  const Index h = stream.height, w = stream.width;
  if (latents.shape[0] != 1 || latents.shape[2] * kCodecFactor != round_up8(h) ||
      latents.shape[3] * kCodecFactor != round_up8(w)) {
    throw FormatError("bitstream latent shape " + latents.shape.str() + " is inconsistent with a " + std::to_string(h) +
                      "x" + std::to_string(w) + " image");
  }
  Tensor<float> y(latents.shape);
  for (Index i = 0; i < y.size(); ++i) y[i] = static_cast<float>(latents.values[static_cast<std::size_t>(i)]);
  auto& params = const_cast<ParameterSet<float>&>(model.params);
  Tape<float> tape;
  const BoundParameters<float> frozen(tape, params, false);
  const Tensor<float> x_hat = synthesize(tape.constant(std::move(y)), frozen).value();
  return quantize_8bit(crop(from_tensor(x_hat), 0, 0, h, w));
}

}  // namespace pxiqa
