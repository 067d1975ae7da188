#pragma once

#include <random>
#include <vector>

#include "pxiqa/parameters.hpp"

namespace pxiqa {

// Three 3x3 conv (stride 1, same) -> ReLU -> 2x2 maxpool stages with widths
// 6 -> 32 -> 32 -> 64, then a dense layer from 64 * (H/8) * (W/8) to one score.
struct ProxyConfig {
  Index height = 32;
  Index width = 32;
  double m_max = 1.0;
};

inline constexpr Index kProxyWidths[4] = {6, 32, 32, 64};

// He-uniform conv kernels with zero biases, Glorot-uniform dense weights, dense
// bias m_max / 2.
template <typename T>
ParameterSet<T> init_proxy(const ProxyConfig& config, std::uint64_t seed);

// x and x_hat: N x 3 x H x W with H, W matching the dense layer. Returns N scores.
template <typename T>
Var<T> proxy_score(Var<T> x, Var<T> x_hat, const BoundParameters<T>& params);

// Mean squared error between scores (N) and the oracle's targets.
template <typename T>
Var<T> metric_loss(Var<T> scores, const std::vector<double>& m_true);

}  // namespace pxiqa
