#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pxiqa/image.hpp"

namespace pxiqa {

struct DatasetSpec {
  std::filesystem::path source;
  double noise_amplitude = 1.0;  // uniform +-amplitude on the [0, 255] scale
  double min_factor = 0.5;       // downsampling factor range, area averaging
  double max_factor = 1.0;
  Index crop = 256;
  int crops_per_image = 1;
  std::uint64_t seed = 1;
};

// Prepared 8-bit crops with the per-crop draws that produced them.
struct PatchStore {
  struct Entry {
    std::string source;
    double factor = 1.0;
    Index y0 = 0, x0 = 0;
    Image crop;
  };
  DatasetSpec spec;
  std::vector<Entry> entries;
  Index skipped = 0;  // sources too small for the crop after downsampling
};

// Per source image (sorted by file name): uniform noise, clamp, downsample by a
// random factor, random crop, round to 8 bits. Deterministic for a fixed seed.
PatchStore prepare_training_set(const DatasetSpec& spec);

// Area-averaging resize to (height, width); both must not exceed the input.
Image downsample_area(const Image& image, Index height, Index width);

// Crops as PNG plus index.json.
void save_patch_store(const std::filesystem::path& dir, const PatchStore& store);
PatchStore load_patch_store(const std::filesystem::path& dir);

// batch x 3 x patch x patch on [0, 1]: uniform random crop from uniform random entries.
Tensor<float> sample_batch(const PatchStore& store, Index batch, Index patch, std::mt19937_64& rng);

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace pxiqa
