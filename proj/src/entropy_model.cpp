#include "pxiqa/entropy_model.hpp"

#include <array>
#include <cmath>
#include <string>

#include "pxiqa/ops.hpp"

namespace pxiqa {

namespace {

constexpr std::array<int, kEntropyLayers + 1> kDims = {1, kEntropyWidth, kEntropyWidth, kEntropyWidth, 1};

std::string matrix_name(int k) { return "entropy.matrix" + std::to_string(k); }
std::string bias_name(int k) { return "entropy.bias" + std::to_string(k); }
std::string factor_name(int k) { return "entropy.factor" + std::to_string(k); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
// sigmoid(x) * sigmoid(-x) without cancellation.
double sigmoid_slope(double x) {
  const double e = std::exp(-std::abs(x));
  return e / ((1.0 + e) * (1.0 + e));
}

// Offsets of one channel's block inside the packed layout.
struct Layout {
  std::array<int, kEntropyLayers> matrix{}, bias{}, factor{};
  int size = 0;
  Layout() {
    int off = 0;
    for (int k = 0; k < kEntropyLayers; ++k) {
      matrix[k] = off;
      off += kDims[k + 1] * kDims[k];
      bias[k] = off;
      off += kDims[k + 1];
      factor[k] = off;
      if (k + 1 < kEntropyLayers) off += kDims[k + 1];
    }
    size = off;
  }
};
const Layout kLayout;

// Effective weights of one channel: softplus(M), b, tanh(a).
struct Net {
  const double* w;
  double matrix(int k, int i, int j) const { return w[kLayout.matrix[k] + i * kDims[k] + j]; }
  double bias(int k, int i) const { return w[kLayout.bias[k] + i]; }
  double factor(int k, int i) const { return w[kLayout.factor[k] + i]; }
};

struct Trace {
  double input[kEntropyLayers][kEntropyWidth];
  double squash[kEntropyLayers][kEntropyWidth];  // tanh(z)
};

double forward(const Net& net, double v, Trace* trace) {
  double h[kEntropyWidth] = {v};
  for (int k = 0; k < kEntropyLayers; ++k) {
    const int din = kDims[k], dout = kDims[k + 1];
    double z[kEntropyWidth];
    for (int i = 0; i < dout; ++i) {
      double acc = net.bias(k, i);
      for (int j = 0; j < din; ++j) acc += net.matrix(k, i, j) * h[j];
      z[i] = acc;
    }
    if (trace) {
      for (int j = 0; j < din; ++j) trace->input[k][j] = h[j];
    }
    for (int i = 0; i < dout; ++i) {
      if (k + 1 < kEntropyLayers) {
        const double t = std::tanh(z[i]);
        if (trace) trace->squash[k][i] = t;
        h[i] = z[i] + net.factor(k, i) * t;
      } else {
        h[i] = z[i];
      }
    }
  }
  return h[0];
}

// Accumulates d/d(effective weights) into `gw` and returns d logit / d v, scaled by g.
double backward(const Net& net, const Trace& trace, double g, double* gw) {
  double gh[kEntropyWidth] = {g};
  for (int k = kEntropyLayers - 1; k >= 0; --k) {
    const int din = kDims[k], dout = kDims[k + 1];
    double gz[kEntropyWidth];
    for (int i = 0; i < dout; ++i) {
      if (k + 1 < kEntropyLayers) {
        const double t = trace.squash[k][i];
        gz[i] = gh[i] * (1.0 + net.factor(k, i) * (1.0 - t * t));
        gw[kLayout.factor[k] + i] += gh[i] * t;
      } else {
        gz[i] = gh[i];
      }
      gw[kLayout.bias[k] + i] += gz[i];
    }
    double gin[kEntropyWidth] = {};
    for (int i = 0; i < dout; ++i) {
      for (int j = 0; j < din; ++j) {
        gw[kLayout.matrix[k] + i * din + j] += gz[i] * trace.input[k][j];
        gin[j] += net.matrix(k, i, j) * gz[i];
      }
    }
    for (int j = 0; j < din; ++j) gh[j] = gin[j];
  }
  return gh[0];
}

template <typename T>
Index channels_of(const ParameterSet<T>& params) {
  if (!params.contains(matrix_name(0))) throw InvalidArgument("parameter set has no entropy model");
  return params.get(matrix_name(0)).dim(0);
}

// Raw tensors -> packed effective weights, plus the raw-to-effective slopes.
template <typename T>
void pack(const std::array<const Tensor<T>*, 3 * kEntropyLayers>& raw, Index channels, std::vector<double>& weights,
          std::vector<double>* slopes) {
  weights.assign(static_cast<std::size_t>(channels * kLayout.size), 0.0);
  if (slopes) slopes->assign(weights.size(), 0.0);
  for (Index c = 0; c < channels; ++c) {
    double* w = weights.data() + c * kLayout.size;
    double* s = slopes ? slopes->data() + c * kLayout.size : nullptr;
    for (int k = 0; k < kEntropyLayers; ++k) {
      const Index nm = kDims[k + 1] * kDims[k];
      for (Index i = 0; i < nm; ++i) {
        const double r = static_cast<double>((*raw[3 * k])[c * nm + i]);
        w[kLayout.matrix[k] + i] = softplus(r);
        if (s) s[kLayout.matrix[k] + i] = sigmoid(r);
      }
      for (Index i = 0; i < kDims[k + 1]; ++i) {
        w[kLayout.bias[k] + i] = static_cast<double>((*raw[3 * k + 1])[c * kDims[k + 1] + i]);
        if (s) s[kLayout.bias[k] + i] = 1.0;
      }
      if (k + 1 < kEntropyLayers) {
        for (Index i = 0; i < kDims[k + 1]; ++i) {
          const double t = std::tanh(static_cast<double>((*raw[3 * k + 2])[c * kDims[k + 1] + i]));
          w[kLayout.factor[k] + i] = t;
          if (s) s[kLayout.factor[k] + i] = 1.0 - t * t;
        }
      }
    }
  }
}

struct Likelihood {
  double p;       // unfloored
  double dp_du;   // w.r.t. logit(v + 1/2)
  double dp_dl;   // w.r.t. logit(v - 1/2)
};

Likelihood likelihood_from_logits(double lower, double upper) {
  // Evaluate on the side where both sigmoids are small to avoid 1 - 1 cancellation.
  const double s = lower + upper > 0 ? -1.0 : 1.0;
  return {s * (sigmoid(s * upper) - sigmoid(s * lower)), sigmoid_slope(upper), -sigmoid_slope(lower)};
}

}  // namespace

template <typename T>
void add_entropy_parameters(ParameterSet<T>& params, Index channels, std::mt19937_64& rng, double init_scale) {
  if (channels <= 0 || !(init_scale > 0)) throw InvalidArgument("entropy model needs channels > 0 and init_scale > 0");
  const double scale = std::pow(init_scale, 1.0 / kEntropyLayers);
  std::uniform_real_distribution<double> bias_init(-0.5, 0.5);
  for (int k = 0; k < kEntropyLayers; ++k) {
    const Index dout = kDims[k + 1], din = kDims[k];
    const double init = std::log(std::expm1(1.0 / scale / static_cast<double>(dout)));
    params.add(matrix_name(k), Tensor<T>(Shape{channels, dout, din}, static_cast<T>(init)));
    Tensor<T> bias(Shape{channels, dout, 1});
    for (Index i = 0; i < bias.size(); ++i) bias[i] = static_cast<T>(bias_init(rng));
    params.add(bias_name(k), std::move(bias));
    if (k + 1 < kEntropyLayers) params.add(factor_name(k), Tensor<T>(Shape{channels, dout, 1}));
  }
}

Index entropy_channels(const ParameterSet<float>& params) { return channels_of(params); }
Index entropy_channels(const ParameterSet<double>& params) { return channels_of(params); }

template <typename T>
EntropyModelView::EntropyModelView(const ParameterSet<T>& params) : channels_(channels_of(params)) {
  std::array<const Tensor<T>*, 3 * kEntropyLayers> raw{};
  for (int k = 0; k < kEntropyLayers; ++k) {
    raw[3 * k] = &params.get(matrix_name(k));
    raw[3 * k + 1] = &params.get(bias_name(k));
    raw[3 * k + 2] = k + 1 < kEntropyLayers ? &params.get(factor_name(k)) : raw[3 * k + 1];
  }
  pack(raw, channels_, packed_, nullptr);
}

double EntropyModelView::logit(Index channel, double v) const {
  if (channel < 0 || channel >= channels_) throw InvalidArgument("entropy model channel out of range");
  return forward(Net{packed_.data() + channel * kLayout.size}, v, nullptr);
}

double EntropyModelView::cdf(Index channel, double v) const { return sigmoid(logit(channel, v)); }

double EntropyModelView::likelihood(Index channel, double v) const {
  return likelihood_from_logits(logit(channel, v - 0.5), logit(channel, v + 0.5)).p;
}

template <typename T>
Var<T> likelihood_bits(Var<T> y, const BoundParameters<T>& params, RateStats* stats) {
  const Tensor<T>& yv = y.value();
  if (yv.rank() != 4) throw ShapeError("likelihood_bits expects N x C x H x W latents, got " + yv.shape().str());
  std::array<Var<T>, 3 * kEntropyLayers> vars{};
  std::array<const Tensor<T>*, 3 * kEntropyLayers> raw{};
  for (int k = 0; k < kEntropyLayers; ++k) {
    vars[3 * k] = params[matrix_name(k)];
    vars[3 * k + 1] = params[bias_name(k)];
    vars[3 * k + 2] = k + 1 < kEntropyLayers ? params[factor_name(k)] : vars[3 * k + 1];
    for (int m = 0; m < 3; ++m) raw[3 * k + m] = &vars[3 * k + m].value();
  }
  const Index channels = raw[0]->dim(0);
  if (yv.dim(1) != channels) {
    throw ShapeError("latent " + yv.shape().str() + " does not match entropy model with " +
                     std::to_string(channels) + " channels");
  }
  std::vector<double> weights;
  pack(raw, channels, weights, nullptr);
  const Index batch = yv.dim(0), plane = yv.dim(2) * yv.dim(3);
  const double ln2 = std::log(2.0);
  double bits = 0.0;
  Index floored = 0;
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      const Net net{weights.data() + c * kLayout.size};
      const T* src = yv.data() + (n * channels + c) * plane;
      for (Index i = 0; i < plane; ++i) {
        const double v = static_cast<double>(src[i]);
        const double p = likelihood_from_logits(forward(net, v - 0.5, nullptr), forward(net, v + 0.5, nullptr)).p;
        if (!(p >= kLikelihoodFloor)) ++floored;
        bits -= std::log(std::max(p, kLikelihoodFloor)) / ln2;
      }
    }
  }
  if (!std::isfinite(bits)) throw NumericError("likelihood_bits: non-finite rate");
  if (stats) stats->floored += floored;

  Tape<T>& tape = y.tape();
  auto adjoint = [=](Tape<T>& tp, std::span<const T> gy) {
    std::array<const Tensor<T>*, 3 * kEntropyLayers> rv{};
    for (int m = 0; m < 3 * kEntropyLayers; ++m) rv[static_cast<std::size_t>(m)] = &tp.value(vars[static_cast<std::size_t>(m)]);
    std::vector<double> w, slopes;
    pack(rv, channels, w, &slopes);
    std::vector<double> gw(w.size(), 0.0);
    const Tensor<T>& yval = tp.value(y);
    std::span<T> gyin = tp.requires_grad(y) ? tp.grad_buffer(y) : std::span<T>();
    const double g = static_cast<double>(gy[0]);
    Trace lower_trace, upper_trace;
    for (Index n = 0; n < batch; ++n) {
      for (Index c = 0; c < channels; ++c) {
        const Net net{w.data() + c * kLayout.size};
        double* gwc = gw.data() + c * kLayout.size;
        const Index base = (n * channels + c) * plane;
        for (Index i = 0; i < plane; ++i) {
          const double v = static_cast<double>(yval[base + i]);
          const double lo = forward(net, v - 0.5, &lower_trace);
          const double up = forward(net, v + 0.5, &upper_trace);
          const Likelihood lk = likelihood_from_logits(lo, up);
          const double dbits_dp = -g / (std::max(lk.p, kLikelihoodFloor) * ln2);
          const double dv = backward(net, upper_trace, dbits_dp * lk.dp_du, gwc) +
                            backward(net, lower_trace, dbits_dp * lk.dp_dl, gwc);
          if (!gyin.empty()) gyin[static_cast<std::size_t>(base + i)] += static_cast<T>(dv);
        }
      }
    }
    for (int k = 0; k < kEntropyLayers; ++k) {
      const int dout = kDims[k + 1], din = kDims[k];
      auto scatter = [&](Var<T> var, int offset, int count) {
        if (!tp.requires_grad(var)) return;
        std::span<T> dst = tp.grad_buffer(var);
        for (Index c = 0; c < channels; ++c) {
          for (int i = 0; i < count; ++i) {
            const std::size_t src = static_cast<std::size_t>(c * kLayout.size + offset + i);
            dst[static_cast<std::size_t>(c * count + i)] += static_cast<T>(gw[src] * slopes[src]);
          }
        }
      };
      scatter(vars[3 * k], kLayout.matrix[k], dout * din);
      scatter(vars[3 * k + 1], kLayout.bias[k], dout);
      if (k + 1 < kEntropyLayers) scatter(vars[3 * k + 2], kLayout.factor[k], dout);
    }
  };
  return tape.record(Tensor<T>(Shape{}, Buffer<T>{static_cast<T>(bits)}),
                     {y, vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], vars[6], vars[7], vars[8], vars[9],
                      vars[10]},
                     adjoint);
}

template <typename T>
Var<T> rate_loss(Var<T> y, const BoundParameters<T>& params, Index pixel_count, RateStats* stats) {
  if (pixel_count <= 0) throw InvalidArgument("rate_loss needs a positive pixel count");
  return scale(likelihood_bits(y, params, stats), static_cast<T>(1.0 / static_cast<double>(pixel_count)));
}

template void add_entropy_parameters<float>(ParameterSet<float>&, Index, std::mt19937_64&, double);
template void add_entropy_parameters<double>(ParameterSet<double>&, Index, std::mt19937_64&, double);
template EntropyModelView::EntropyModelView(const ParameterSet<float>&);
template EntropyModelView::EntropyModelView(const ParameterSet<double>&);
template Var<float> likelihood_bits<float>(Var<float>, const BoundParameters<float>&, RateStats*);
template Var<double> likelihood_bits<double>(Var<double>, const BoundParameters<double>&, RateStats*);
template Var<float> rate_loss<float>(Var<float>, const BoundParameters<float>&, Index, RateStats*);
template Var<double> rate_loss<double>(Var<double>, const BoundParameters<double>&, Index, RateStats*);

}  // namespace pxiqa
