#include "pxiqa/proxy.hpp"

#include <cmath>
#include <string>

#include "pxiqa/ops.hpp"

namespace pxiqa {

namespace {

std::string conv_name(int i, const char* field) { return "proxy.conv" + std::to_string(i) + "." + field; }

template <typename T>
Tensor<T> uniform(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-limit, limit);
  Tensor<T> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

}  // namespace

template <typename T>
ParameterSet<T> init_proxy(const ProxyConfig& config, std::uint64_t seed) {
  if (config.height <= 0 || config.width <= 0 || config.height % 8 != 0 || config.width % 8 != 0) {
    throw InvalidArgument("proxy patch extents must be positive multiples of 8");
  }
  std::mt19937_64 rng(seed);
  ParameterSet<T> params;
  for (int i = 0; i < 3; ++i) {
    const Index cin = kProxyWidths[i], cout = kProxyWidths[i + 1];
    params.add(conv_name(i, "kernel"), uniform<T>(Shape{cout, cin, 3, 3}, std::sqrt(6.0 / static_cast<double>(cin * 9)), rng));
    params.add(conv_name(i, "bias"), Tensor<T>(Shape{cout}));
  }
  const Index features = kProxyWidths[3] * (config.height / 8) * (config.width / 8);
  params.add("proxy.dense.weight", uniform<T>(Shape{1, features}, std::sqrt(6.0 / static_cast<double>(features + 1)), rng));
  params.add("proxy.dense.bias", Tensor<T>(Shape{1}, static_cast<T>(config.m_max / 2)));
  return params;
}

template <typename T>
Var<T> proxy_score(Var<T> x, Var<T> x_hat, const BoundParameters<T>& params) {
  require_same_shape(x.shape(), x_hat.shape(), "proxy_score");
  const Shape& s = x.shape();
  if (s.rank() != 4 || s[1] != 3) throw ShapeError("proxy_score expects N x 3 x H x W pairs, got " + s.str());
  if (s[2] % 8 != 0 || s[3] % 8 != 0) {
    throw ShapeError("proxy_score needs spatial extents divisible by 8, got " + s.str());
  }
  Var<T> h = concat_channels(x, x_hat);
  for (int i = 0; i < 3; ++i) {
    h = conv2d(h, params[conv_name(i, "kernel")], 1, Padding::same);
    h = maxpool2(relu(bias_add(h, params[conv_name(i, "bias")])));
  }
  const Var<T> weight = params["proxy.dense.weight"];
  const Index features = h.shape()[1] * h.shape()[2] * h.shape()[3];
  if (weight.shape()[1] != features) {
    throw ShapeError("proxy dense layer expects " + std::to_string(weight.shape()[1]) + " features, patch gives " +
                     std::to_string(features) + " (input " + s.str() + ")");
  }
  return reshape(dense(h, weight, params["proxy.dense.bias"]), Shape{s[0]});
}

template <typename T>
Var<T> metric_loss(Var<T> scores, const std::vector<double>& m_true) {
  if (scores.shape().rank() != 1 || static_cast<std::size_t>(scores.shape()[0]) != m_true.size()) {
    throw ShapeError("metric_loss: " + std::to_string(m_true.size()) + " oracle scores for proxy output " +
                     scores.shape().str());
  }
  Tensor<T> target(scores.shape());
  for (std::size_t i = 0; i < m_true.size(); ++i) target[static_cast<Index>(i)] = static_cast<T>(m_true[i]);
  return mse(scores, scores.tape().constant(std::move(target)));
}

template ParameterSet<float> init_proxy<float>(const ProxyConfig&, std::uint64_t);
template ParameterSet<double> init_proxy<double>(const ProxyConfig&, std::uint64_t);
template Var<float> proxy_score<float>(Var<float>, Var<float>, const BoundParameters<float>&);
template Var<double> proxy_score<double>(Var<double>, Var<double>, const BoundParameters<double>&);
template Var<float> metric_loss<float>(Var<float>, const std::vector<double>&);
template Var<double> metric_loss<double>(Var<double>, const std::vector<double>&);

}  // namespace pxiqa
