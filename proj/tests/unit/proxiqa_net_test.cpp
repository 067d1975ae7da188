#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/grad_check.hpp"
#include "pxiqa/adam.hpp"
#include "pxiqa/proxy.hpp"

using namespace pxiqa;
using pxiqa::testing::check_gradients;
using pxiqa::testing::GraphBuilder;
using pxiqa::testing::random_tensor;

namespace {

template <typename T>
BoundParameters<T> rebind(const ParameterSet<T>& params, const std::vector<Var<T>>& leaves, std::size_t first) {
  BoundParameters<T> bound;
  for (std::size_t i = 0; i < params.size(); ++i) bound.set(params[i].name, leaves[first + i]);
  return bound;
}

// Fits `params` to fixed pairs and targets; returns the final loss.
double fit(ParameterSet<float>& params, const Tensor<float>& x, const Tensor<float>& xh,
           const std::vector<double>& targets, int steps, double lr) {
  AdamState<float> adam(params);
  double loss_value = 0;
  for (int s = 0; s < steps; ++s) {
    Tape<float> tape;
    BoundParameters<float> bound(tape, params, true);
    params.zero_grad();
    auto loss = metric_loss(proxy_score(tape.constant(x), tape.constant(xh), bound), targets);
    loss_value = loss.value()[0];
    tape.backward(loss);
    adam.apply(params, lr);
  }
  return loss_value;
}

}  // namespace

TEST(ProxyScore, ReferenceGeometry) {
  auto params = init_proxy<float>(ProxyConfig{128, 128, 1.0}, 1);
  EXPECT_EQ(params.get("proxy.dense.weight").shape(), (Shape{1, 64 * 16 * 16}));
  EXPECT_EQ(params.get("proxy.conv0.kernel").shape(), (Shape{32, 6, 3, 3}));
  EXPECT_EQ(params.get("proxy.conv2.kernel").shape(), (Shape{64, 32, 3, 3}));
  EXPECT_FLOAT_EQ(params.get("proxy.dense.bias")[0], 0.5f);
  Tape<float> tape;
  BoundParameters<float> bound(tape, params, false);
  std::mt19937_64 rng(2);
  auto x = tape.constant(random_tensor<float>(Shape{8, 3, 128, 128}, rng, 0, 1));
  auto xh = tape.constant(random_tensor<float>(Shape{8, 3, 128, 128}, rng, 0, 1));
  const auto s = proxy_score(x, xh, bound);
  EXPECT_EQ(s.shape(), (Shape{8}));
  EXPECT_TRUE(s.value().all_finite());
}

TEST(ProxyScore, RejectsBadShapes) {
  auto params = init_proxy<float>(ProxyConfig{16, 16, 1.0}, 1);
  Tape<float> tape;
  BoundParameters<float> bound(tape, params, false);
  EXPECT_THROW(proxy_score(tape.constant(Tensor<float>(Shape{1, 3, 16, 16})),
                           tape.constant(Tensor<float>(Shape{1, 3, 16, 8})), bound),
               ShapeError);
  EXPECT_THROW(proxy_score(tape.constant(Tensor<float>(Shape{1, 3, 12, 16})),
                           tape.constant(Tensor<float>(Shape{1, 3, 12, 16})), bound),
               ShapeError);
  EXPECT_THROW(proxy_score(tape.constant(Tensor<float>(Shape{1, 3, 24, 24})),
                           tape.constant(Tensor<float>(Shape{1, 3, 24, 24})), bound),
               ShapeError);
  EXPECT_THROW(init_proxy<float>(ProxyConfig{12, 16, 1.0}, 1), InvalidArgument);
}

TEST(ProxyScore, BatchPermutationPermutesOutputs) {
  auto params = init_proxy<float>(ProxyConfig{16, 16, 1.0}, 3);
  std::mt19937_64 rng(4);
  const auto x = random_tensor<float>(Shape{4, 3, 16, 16}, rng, 0, 1);
  const auto xh = random_tensor<float>(Shape{4, 3, 16, 16}, rng, 0, 1);
  const std::vector<Index> perm{2, 0, 3, 1};
  const Index item = 3 * 16 * 16;
  Tensor<float> px(x.shape()), pxh(xh.shape());
  for (Index n = 0; n < 4; ++n) {
    for (Index i = 0; i < item; ++i) {
      px[n * item + i] = x[perm[static_cast<std::size_t>(n)] * item + i];
      pxh[n * item + i] = xh[perm[static_cast<std::size_t>(n)] * item + i];
    }
  }
  Tape<float> tape;
  BoundParameters<float> bound(tape, params, false);
  const auto a = proxy_score(tape.constant(x), tape.constant(xh), bound).value();
  const auto b = proxy_score(tape.constant(px), tape.constant(pxh), bound).value();
  for (Index n = 0; n < 4; ++n) EXPECT_EQ(b[n], a[perm[static_cast<std::size_t>(n)]]);
}

TEST(ProxyScore, GradientMatchesFiniteDifferences) {
  // The network is piecewise smooth: a 1e-3 stencil straddles ReLU kinks and
  // maxpool near-ties, so the oracle uses 1e-6, where truncation error is nil.
  // Conv kernels are skipped only to bound the probe count.
  for (int trial = 0; trial < 20; ++trial) {
    auto params = init_proxy<double>(ProxyConfig{8, 8 * (1 + trial % 2), 1.0}, 10 + trial);
    std::mt19937_64 rng(20 + trial);
    for (int i = 0; i < 3; ++i) params.get("proxy.conv" + std::to_string(i) + ".bias") = random_tensor<double>(Shape{kProxyWidths[i + 1]}, rng, -0.2, 0.2);
    const Shape shape{1 + trial % 3, 3, 8, 8 * (1 + trial % 2)};
    std::vector<Tensor<double>> inputs{random_tensor<double>(shape, rng, 0, 1), random_tensor<double>(shape, rng, 0, 1)};
    std::vector<bool> mask{false, true};
    for (const auto& e : params) {
      inputs.push_back(e.tensor);
      mask.push_back(e.name.find("kernel") == std::string::npos);
    }
    GraphBuilder<double> build = [&](Tape<double>&, const std::vector<Var<double>>& v) {
      return proxy_score(v[0], v[1], rebind(params, v, 2));
    };
    const auto r = check_gradients(inputs, build, 30 + trial, mask, 1e-6);
    EXPECT_LT(r.max_rel_error, 1e-3) << "trial " << trial << ": " << r.describe();
  }
}

TEST(MetricLoss, ClosedForms) {
  Tape<double> tape;
  auto s = tape.constant(Tensor<double>(Shape{3}, {0.2, 0.9, 0.4}));
  EXPECT_EQ(metric_loss(s, {0.2, 0.9, 0.4}).value()[0], 0.0);
  auto constant = tape.constant(Tensor<double>(Shape{2}, 0.5));
  EXPECT_DOUBLE_EQ(metric_loss(constant, {0.0, 1.0}).value()[0], 0.25);
  EXPECT_THROW(metric_loss(s, {1.0}), ShapeError);
}

TEST(MetricLoss, GradientsReachOnlyProxyParameters) {
  auto params = init_proxy<float>(ProxyConfig{16, 16, 1.0}, 5);
  std::mt19937_64 rng(6);
  Tape<float> tape;
  BoundParameters<float> bound(tape, params, true);
  auto x = tape.constant(random_tensor<float>(Shape{2, 3, 16, 16}, rng, 0, 1));
  auto xh_leaf = random_tensor<float>(Shape{2, 3, 16, 16}, rng, 0, 1);
  auto xh = tape.constant(xh_leaf);
  params.zero_grad();
  tape.backward(metric_loss(proxy_score(x, xh, bound), {0.3, 0.7}));
  EXPECT_FALSE(xh.requires_grad());
  double total = 0;
  for (const auto& e : params) {
    for (float g : e.tensor.grad()) total += std::abs(g);
  }
  EXPECT_GT(total, 0.0);
}

TEST(MetricLoss, OverfitsSixteenPairsToArbitraryTargets) {
  const double m_max = 1.0;
  auto params = init_proxy<float>(ProxyConfig{32, 32, m_max}, 7);
  std::mt19937_64 rng(8);
  const auto x = random_tensor<float>(Shape{16, 3, 32, 32}, rng, 0, 1);
  const auto xh = random_tensor<float>(Shape{16, 3, 32, 32}, rng, 0, 1);
  std::uniform_real_distribution<double> t(0, m_max);
  std::vector<double> targets(16);
  for (double& v : targets) v = t(rng);
  EXPECT_LT(fit(params, x, xh, targets, 600, 1e-3), 1e-4 * m_max * m_max);
}

TEST(MetricLoss, FitsFrozenToyTarget) {
  // Target exp(-20 * mse(x, x_hat)) on 64 pairs with graded distortion.
  auto params = init_proxy<float>(ProxyConfig{16, 16, 1.0}, 9);
  std::mt19937_64 rng(10);
  const auto x = random_tensor<float>(Shape{64, 3, 16, 16}, rng, 0, 1);
  Tensor<float> xh(x.shape());
  std::vector<double> targets(64);
  const Index item = 3 * 16 * 16;
  for (Index n = 0; n < 64; ++n) {
    const double amp = 0.02 + 0.4 * static_cast<double>(n) / 63;
    std::uniform_real_distribution<double> e(-amp, amp);
    double acc = 0;
    for (Index i = 0; i < item; ++i) {
      const double d = e(rng);
      xh[n * item + i] = static_cast<float>(x[n * item + i] + d);
      acc += d * d;
    }
    targets[static_cast<std::size_t>(n)] = std::exp(-20 * acc / static_cast<double>(item));
  }
  EXPECT_LT(fit(params, x, xh, targets, 2000, 1e-3), 1e-3);
}
