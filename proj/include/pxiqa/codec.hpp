#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "pxiqa/byte_io.hpp"
#include "pxiqa/entropy_model.hpp"

namespace pxiqa {

// Three stride-2 stages each way: analysis conv -> GDN, synthesis IGDN -> conv_up.
// The latent has `filters` channels and 1/8 the spatial extent of the image.
struct CodecConfig {
  Index filters = 32;
  int kernel = 5;
};

inline constexpr int kCodecStages = 3;
inline constexpr Index kCodecFactor = 8;
inline constexpr double kGdnBetaFloor = 1e-6;

// Glorot-uniform kernels, zero biases, GDN beta = 1 and gamma = 0.1 I (off-diagonal
// raw entries at 1e-3 so they can learn), plus the entropy model.
template <typename T>
ParameterSet<T> init_codec(const CodecConfig& config, std::uint64_t seed);

// x: N x 3 x H x W on [0, 1], H and W divisible by 8.
template <typename T>
Var<T> analyze(Var<T> x, const BoundParameters<T>& params);
// y: N x F x h x w -> N x 3 x 8h x 8w; unclamped.
template <typename T>
Var<T> synthesize(Var<T> y, const BoundParameters<T>& params);

// y + u with u ~ U(-1/2, 1/2) drawn fresh from `rng`; the noise is a constant.
template <typename T>
Var<T> quantize_train(Var<T> y, std::mt19937_64& rng);
// Round half away from zero.
template <typename T>
Tensor<T> quantize_test(const Tensor<T>& y);

// Everything a decoder must agree on with the encoder.
struct CodecManifest {
  CodecConfig config;
  double lambda = 0.0;
  double alpha = 0.0;
  std::string metric = "mse";
  std::string mode = "mse-baseline";
  std::string entropy_hash;  // hex SHA-256 of the entropy-model parameters
  std::string params_hash;   // hex SHA-256 of all codec parameters

  std::string to_json() const;
  static CodecManifest from_json(const std::string& text);
  // SHA-256 of the canonical JSON text.
  Digest hash() const;
};

template <typename T>
std::string parameters_hash(const ParameterSet<T>& params, const std::string& prefix = "");

// Fills both hashes from `params`.
CodecManifest make_manifest(const ParameterSet<float>& params, const CodecConfig& config, double lambda,
                            double alpha, const std::string& metric, const std::string& mode);

// Model directory: codec.ckpt + manifest.json.
void save_model(const std::filesystem::path& dir, const ParameterSet<float>& params, const CodecManifest& manifest);
struct LoadedModel {
  ParameterSet<float> params;
  CodecManifest manifest;
};
// Verifies that the stored hashes match the loaded parameters.
LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace pxiqa
