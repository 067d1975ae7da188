#pragma once

#include <cstdint>
#include <vector>

#include "pxiqa/parameters.hpp"

namespace pxiqa {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators for one ParameterSet, in entry order.
template <typename T>
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const ParameterSet<T>& params, AdamConfig config = {});

  const AdamConfig& config() const { return config_; }
  std::int64_t step() const { return step_; }
  const std::vector<std::vector<T>>& first_moment() const { return m_; }
  const std::vector<std::vector<T>>& second_moment() const { return v_; }

  // One bias-corrected Adam update from the gradients stored on `params`. Parameters
  // without a gradient accumulator are treated as having zero gradient.
  void apply(ParameterSet<T>& params, double learning_rate);

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

extern template class AdamState<float>;
extern template class AdamState<double>;

}  // namespace pxiqa
