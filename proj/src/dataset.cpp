#include "pxiqa/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "pxiqa/byte_io.hpp"

namespace pxiqa {

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InvalidArgument("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Image downsample_area(const Image& image, Index height, Index width) {
  if (height <= 0 || width <= 0 || height > image.height || width > image.width) {
    throw InvalidArgument("downsample_area target must be positive and no larger than the input");
  }
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  // Overlap weights of input cells [i, i+1) with output footprint [o*s, (o+1)*s).
  auto weights = [](Index out, double s, Index limit) {
    std::vector<std::vector<std::pair<Index, double>>> w(static_cast<std::size_t>(out));
    for (Index o = 0; o < out; ++o) {
      const double lo = static_cast<double>(o) * s, hi = static_cast<double>(o + 1) * s;
      for (Index i = static_cast<Index>(std::floor(lo)); i < std::min<Index>(limit, static_cast<Index>(std::ceil(hi))); ++i) {
        const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (overlap > 0) w[static_cast<std::size_t>(o)].emplace_back(i, overlap / s);
      }
    }
    return w;
  };
  const auto wy = weights(height, sy, image.height);
  const auto wx = weights(width, sx, image.width);
  Image out(height, width, image.channels);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      for (Index c = 0; c < image.channels; ++c) {
        double acc = 0;
        for (const auto& [iy, a] : wy[static_cast<std::size_t>(y)]) {
          for (const auto& [ix, b] : wx[static_cast<std::size_t>(x)]) acc += a * b * image.at(iy, ix, c);
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

PatchStore prepare_training_set(const DatasetSpec& spec) {
  if (!(spec.min_factor > 0) || spec.min_factor > spec.max_factor || spec.max_factor > 1.0) {
    throw InvalidArgument("downsampling factors must satisfy 0 < min <= max <= 1");
  }
  if (spec.crop <= 0 || spec.crops_per_image <= 0 || spec.noise_amplitude < 0) {
    throw InvalidArgument("crop size, crops per image and noise amplitude must be positive");
  }
  PatchStore store;
  store.spec = spec;
  std::mt19937_64 rng(spec.seed);
  for (const auto& path : list_images(spec.source)) {
    const Image source = read_image(path);
    for (int k = 0; k < spec.crops_per_image; ++k) {
      Image noisy = source;
      std::uniform_real_distribution<double> noise(-spec.noise_amplitude, spec.noise_amplitude);
      for (double& v : noisy.values) v = std::clamp(v + noise(rng), 0.0, 255.0);
      const double factor = std::uniform_real_distribution<double>(spec.min_factor, spec.max_factor)(rng);
      const Index h = std::max<Index>(1, static_cast<Index>(std::lround(factor * static_cast<double>(source.height))));
      const Index w = std::max<Index>(1, static_cast<Index>(std::lround(factor * static_cast<double>(source.width))));
      if (h < spec.crop || w < spec.crop) {
        ++store.skipped;
        continue;
      }
      const Image small = downsample_area(noisy, h, w);
      const Index y0 = std::uniform_int_distribution<Index>(0, h - spec.crop)(rng);
      const Index x0 = std::uniform_int_distribution<Index>(0, w - spec.crop)(rng);
      store.entries.push_back({path.filename().string(), factor, y0, x0,
                               quantize_8bit(crop(small, y0, x0, spec.crop, spec.crop))});
    }
  }
  return store;
}

void save_patch_store(const std::filesystem::path& dir, const PatchStore& store) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["source"] = store.spec.source.string();
  j["noise_amplitude"] = store.spec.noise_amplitude;
  j["min_factor"] = store.spec.min_factor;
  j["max_factor"] = store.spec.max_factor;
  j["crop"] = store.spec.crop;
  j["crops_per_image"] = store.spec.crops_per_image;
  j["seed"] = store.spec.seed;
  j["skipped"] = store.skipped;
  auto& entries = j["entries"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < store.entries.size(); ++i) {
    const auto& e = store.entries[i];
    char name[32];
    std::snprintf(name, sizeof name, "crop_%05zu.png", i);
    write_png(dir / name, e.crop);
    entries.push_back({{"file", name}, {"source", e.source}, {"factor", e.factor}, {"y0", e.y0}, {"x0", e.x0}});
  }
  write_text_file(dir / "index.json", j.dump(2) + "\n");
}

PatchStore load_patch_store(const std::filesystem::path& dir) {
  PatchStore store;
  try {
    const auto j = nlohmann::json::parse(read_text_file(dir / "index.json"));
    store.spec.source = j.at("source").get<std::string>();
    store.spec.noise_amplitude = j.at("noise_amplitude").get<double>();
    store.spec.min_factor = j.at("min_factor").get<double>();
    store.spec.max_factor = j.at("max_factor").get<double>();
    store.spec.crop = j.at("crop").get<Index>();
    store.spec.crops_per_image = j.at("crops_per_image").get<int>();
    store.spec.seed = j.at("seed").get<std::uint64_t>();
    store.skipped = j.at("skipped").get<Index>();
    for (const auto& e : j.at("entries")) {
      store.entries.push_back({e.at("source").get<std::string>(), e.at("factor").get<double>(), e.at("y0").get<Index>(),
                               e.at("x0").get<Index>(), read_png(dir / e.at("file").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/index.json: " + e.what());
  }
  return store;
}

Tensor<float> sample_batch(const PatchStore& store, Index batch, Index patch, std::mt19937_64& rng) {
  if (store.entries.empty()) throw InvalidArgument("sample_batch: empty patch store");
  if (batch <= 0 || patch <= 0) throw InvalidArgument("sample_batch: batch and patch must be positive");
  Tensor<float> out(Shape{batch, 3, patch, patch});
  std::uniform_int_distribution<std::size_t> pick(0, store.entries.size() - 1);
  for (Index n = 0; n < batch; ++n) {
    const Image& im = store.entries[pick(rng)].crop;
    if (im.height < patch || im.width < patch) {
      throw InvalidArgument("sample_batch: patch " + std::to_string(patch) + " larger than stored crop " +
                            std::to_string(im.height) + "x" + std::to_string(im.width));
    }
    const Index y0 = std::uniform_int_distribution<Index>(0, im.height - patch)(rng);
    const Index x0 = std::uniform_int_distribution<Index>(0, im.width - patch)(rng);
    for (Index c = 0; c < 3; ++c) {
      for (Index y = 0; y < patch; ++y) {
        for (Index x = 0; x < patch; ++x) out.at(n, c, y, x) = static_cast<float>(im.at(y0 + y, x0 + x, c) / 255.0);
      }
    }
  }
  return out;
}

}  // namespace pxiqa
