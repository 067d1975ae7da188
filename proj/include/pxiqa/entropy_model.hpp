#pragma once

#include <random>
#include <vector>

#include "pxiqa/parameters.hpp"

namespace pxiqa {

// Per-channel factorized density over latents. Each channel owns a monotone
// network v -> logit with layer widths 1 -> 3 -> 3 -> 3 -> 1:
//   h <- softplus(M_k) h + b_k, then h <- h + tanh(a_k) * tanh(h) for k < 3,
// and c(v) = sigmoid(logit(v)). softplus keeps every weight positive and
// |tanh(a_k)| < 1 keeps each layer increasing, so c is strictly increasing.
// Parameters live in a ParameterSet under "entropy.matrix{k}" (C x out x in),
// "entropy.bias{k}" (C x out x 1) and "entropy.factor{k}" (C x out x 1).
inline constexpr int kEntropyLayers = 4;
inline constexpr int kEntropyWidth = 3;
inline constexpr double kLikelihoodFloor = 0x1p-32;

template <typename T>
void add_entropy_parameters(ParameterSet<T>& params, Index channels, std::mt19937_64& rng,
                            double init_scale = 1.0);

Index entropy_channels(const ParameterSet<float>& params);
Index entropy_channels(const ParameterSet<double>& params);

// Frozen double-precision copy of the density used for coding and validation.
class EntropyModelView {
 public:
  template <typename T>
  explicit EntropyModelView(const ParameterSet<T>& params);

  Index channels() const { return channels_; }
  double logit(Index channel, double v) const;
  double cdf(Index channel, double v) const;
  // c(v + 1/2) - c(v - 1/2), evaluated on the tail-side of the logistic for accuracy.
  double likelihood(Index channel, double v) const;

 private:
  Index channels_ = 0;
  // Per channel, concatenated softplus(M_k), b_k and tanh(a_k).
  std::vector<double> packed_;
};

// Counts likelihoods raised to the floor during a rate evaluation.
struct RateStats {
  Index floored = 0;
};

// Sum over every element of y (N x C x H x W) of -log2 max(p(y), 2^-32), as a
// scalar. Gradients reach y and every bound entropy parameter. When floored, the
// gradient is that of -log2 at the floor times dp, so mass still flows upward.
template <typename T>
Var<T> likelihood_bits(Var<T> y, const BoundParameters<T>& params, RateStats* stats = nullptr);

// likelihood_bits / pixel_count: bits per pixel.
template <typename T>
Var<T> rate_loss(Var<T> y, const BoundParameters<T>& params, Index pixel_count, RateStats* stats = nullptr);

}  // namespace pxiqa
