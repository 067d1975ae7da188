#include "pxiqa/adam.hpp"

#include <cmath>

namespace pxiqa {

template <typename T>
AdamState<T>::AdamState(const ParameterSet<T>& params, AdamConfig config) : config_(config) {
  for (const auto& e : params) {
    m_.emplace_back(static_cast<std::size_t>(e.tensor.size()), T(0));
    v_.emplace_back(static_cast<std::size_t>(e.tensor.size()), T(0));
  }
}

template <typename T>
void AdamState<T>::apply(ParameterSet<T>& params, double learning_rate) {
  if (params.size() != m_.size()) {
    throw ShapeError("adam: state tracks " + std::to_string(m_.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const T lr = static_cast<T>(learning_rate);
  const T eps = static_cast<T>(config_.epsilon);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& t = params[p].tensor;
    if (static_cast<std::size_t>(t.size()) != m_[p].size()) {
      throw ShapeError("adam: parameter '" + params[p].name + "' " + t.shape().str() +
                       " does not match its moment buffers");
    }
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1 - b1) * g[i];
      v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1 - b2) * g[i] * g[i];
      const T m_hat = m[i] / static_cast<T>(c1);
      const T v_hat = v[i] / static_cast<T>(c2);
      t[static_cast<Index>(i)] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template class AdamState<float>;
template class AdamState<double>;

}  // namespace pxiqa
