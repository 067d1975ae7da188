#pragma once

// Central finite-difference oracle for tape gradients. Test-only: it never calls a
// backward pass when computing the numerical side.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pxiqa/ops.hpp"

namespace pxiqa::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::string describe() const {
    return "max rel err " + std::to_string(max_rel_error) + " at input " + std::to_string(worst_input) +
           " index " + std::to_string(worst_index) + " (analytic " + std::to_string(analytic) +
           ", numeric " + std::to_string(numeric) + ")";
  }
};

template <typename T>
using GraphBuilder = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

// Loss = sum(weights * graph(inputs)) with fixed random weights, so every output
// element contributes a distinct direction.
template <typename T>
T weighted_loss_value(const std::vector<Tensor<T>>& inputs, const GraphBuilder<T>& build,
                      const Tensor<T>& weights) {
  Tape<T> tape;
  std::vector<Var<T>> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.constant(in));
  const Tensor<T>& out = build(tape, leaves).value();
  T acc = 0;
  for (Index i = 0; i < out.size(); ++i) acc += weights[i] * out[i];
  return acc;
}

// Relative error per element is |a - n| / max(|a|, |n|, floor_fraction * max|n|):
// the floor keeps near-zero entries from turning O(eps^2) truncation error into
// spurious failures.
template <typename T>
GradCheckResult check_gradients(const std::vector<Tensor<T>>& inputs, const GraphBuilder<T>& build,
                                std::uint64_t seed, const std::vector<bool>& check_mask = {},
                                double eps = 1e-3, double floor_fraction = 1e-3) {
  std::mt19937_64 rng(seed);
  Tensor<T> weights;
  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
    Var<T> out = build(tape, leaves);
    weights = random_tensor<T>(out.shape(), rng, 0.5, 1.5);
    Var<T> loss = sum(mul(out, tape.constant(weights)));
    tape.backward(loss);
    for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());
  }

  std::vector<std::vector<double>> numeric(inputs.size());
  double scale = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!check_mask.empty() && !check_mask[k]) continue;
    std::vector<Tensor<T>> probe = inputs;
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const T orig = probe[k][i];
      probe[k][i] = orig + static_cast<T>(eps);
      const double up = weighted_loss_value(probe, build, weights);
      probe[k][i] = orig - static_cast<T>(eps);
      const double down = weighted_loss_value(probe, build, weights);
      probe[k][i] = orig;
      numeric[k].push_back((up - down) / (2.0 * eps));
      scale = std::max(scale, std::abs(numeric[k].back()));
    }
  }

  GradCheckResult result;
  const double floor = std::max(floor_fraction * scale, 1e-12);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < numeric[k].size(); ++i) {
      const double a = analytic[k][i], n = numeric[k][i];
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
      if (rel > result.max_rel_error) {
        result = {rel, k, static_cast<Index>(i), a, n};
      }
    }
  }
  return result;
}

}  // namespace pxiqa::testing
