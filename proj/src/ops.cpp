#include "pxiqa/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace pxiqa {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using BlockMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstBlockMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements; larger images are processed in row bands.
constexpr Index kMaxColumnElements = Index{1} << 22;

struct Geometry {
  Index channels = 0;
  Index in_h = 0, in_w = 0;
  Index k_h = 0, k_w = 0;
  Index stride = 1;
  Index pad_top = 0, pad_left = 0;
  Index out_h = 0, out_w = 0;

  Index col_rows() const { return channels * k_h * k_w; }
  Index band_rows() const {
    return std::clamp<Index>(kMaxColumnElements / std::max<Index>(1, col_rows() * out_w), 1,
                             std::max<Index>(out_h, 1));
  }
};

Geometry make_geometry(Index channels, Index in_h, Index in_w, Index k_h, Index k_w, int stride,
                       Padding padding) {
  Geometry g;
  g.channels = channels;
  g.in_h = in_h;
  g.in_w = in_w;
  g.k_h = k_h;
  g.k_w = k_w;
  g.stride = stride;
  if (padding == Padding::same) {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    g.pad_top = std::max<Index>((g.out_h - 1) * stride + k_h - in_h, 0) / 2;
    g.pad_left = std::max<Index>((g.out_w - 1) * stride + k_w - in_w, 0) / 2;
  } else {
    if (in_h < k_h || in_w < k_w) {
      throw ShapeError("valid convolution: input " + std::to_string(in_h) + "x" +
                       std::to_string(in_w) + " smaller than kernel " + std::to_string(k_h) +
                       "x" + std::to_string(k_w));
    }
    g.out_h = (in_h - k_h) / stride + 1;
    g.out_w = (in_w - k_w) / stride + 1;
  }
  return g;
}

// Column matrix for output rows [r0, r1): row (c, a, b), column (oy - r0) * out_w + ox.
template <typename T>
void im2col(const T* src, const Geometry& g, Index r0, Index r1, T* col) {
  const Index ncols = (r1 - r0) * g.out_w;
  for (Index c = 0; c < g.channels; ++c) {
    const T* plane = src + c * g.in_h * g.in_w;
    for (Index a = 0; a < g.k_h; ++a) {
      for (Index b = 0; b < g.k_w; ++b) {
        T* dst = col + ((c * g.k_h + a) * g.k_w + b) * ncols;
        for (Index oy = r0; oy < r1; ++oy) {
          T* d = dst + (oy - r0) * g.out_w;
          const Index iy = oy * g.stride - g.pad_top + a;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(d, d + g.out_w, T(0));
            continue;
          }
          const T* row = plane + iy * g.in_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad_left + b;
            d[ox] = (ix >= 0 && ix < g.in_w) ? row[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-adds a column matrix back onto the input grid (adjoint of im2col).
template <typename T>
void col2im(const T* col, const Geometry& g, Index r0, Index r1, T* dst) {
  const Index ncols = (r1 - r0) * g.out_w;
  for (Index c = 0; c < g.channels; ++c) {
    T* plane = dst + c * g.in_h * g.in_w;
    for (Index a = 0; a < g.k_h; ++a) {
      for (Index b = 0; b < g.k_w; ++b) {
        const T* src = col + ((c * g.k_h + a) * g.k_w + b) * ncols;
        for (Index oy = r0; oy < r1; ++oy) {
          const Index iy = oy * g.stride - g.pad_top + a;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* s = src + (oy - r0) * g.out_w;
          T* row = plane + iy * g.in_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.pad_left + b;
            if (ix >= 0 && ix < g.in_w) row[ix] += s[ox];
          }
        }
      }
    }
  }
}

void require_rank(const Shape& s, int rank, const char* op, const char* what) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + s.str());
  }
}

template <typename T>
std::span<T> maybe_grad(Tape<T>& tape, Var<T> v) {
  return tape.requires_grad(v) ? tape.grad_buffer(v) : std::span<T>();
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, int stride, Padding padding) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& k = kernel.value();
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(k.shape(), 4, "conv2d", "kernel");
  if (k.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: kernel " + k.shape().str() + " input channels do not match input " +
                     x.shape().str());
  }
  if (stride < 1) throw InvalidArgument("conv2d: stride must be >= 1");
  const Index n_batch = x.dim(0), c_out = k.dim(0);
  const Geometry g = make_geometry(x.dim(1), x.dim(2), x.dim(3), k.dim(2), k.dim(3), stride, padding);
  const Index out_plane = g.out_h * g.out_w;
  const Index in_image = g.channels * g.in_h * g.in_w;

  Tensor<T> out(Shape{n_batch, c_out, g.out_h, g.out_w});
  Buffer<T> col(static_cast<std::size_t>(g.col_rows() * g.band_rows() * g.out_w));
  ConstMatMap<T> kmat(k.data(), c_out, g.col_rows());
  for (Index n = 0; n < n_batch; ++n) {
    for (Index r0 = 0; r0 < g.out_h; r0 += g.band_rows()) {
      const Index r1 = std::min(g.out_h, r0 + g.band_rows());
      const Index ncols = (r1 - r0) * g.out_w;
      im2col(x.data() + n * in_image, g, r0, r1, col.data());
      BlockMap<T> dst(out.data() + n * c_out * out_plane + r0 * g.out_w, c_out, ncols,
                      Eigen::OuterStride<>(out_plane));
      dst.noalias() = kmat * ConstMatMap<T>(col.data(), g.col_rows(), ncols);
    }
  }

  Tape<T>& tape = input.tape();
  return tape.record(std::move(out), {input, kernel}, [=](Tape<T>& tp, std::span<const T> gy) {
    const Tensor<T>& xv = tp.value(input);
    const Tensor<T>& kv = tp.value(kernel);
    std::span<T> gx = maybe_grad(tp, input);
    std::span<T> gk = maybe_grad(tp, kernel);
    Buffer<T> buf(static_cast<std::size_t>(g.col_rows() * g.band_rows() * g.out_w));
    ConstMatMap<T> km(kv.data(), c_out, g.col_rows());
    for (Index n = 0; n < n_batch; ++n) {
      for (Index r0 = 0; r0 < g.out_h; r0 += g.band_rows()) {
        const Index r1 = std::min(g.out_h, r0 + g.band_rows());
        const Index ncols = (r1 - r0) * g.out_w;
        ConstBlockMap<T> dy(gy.data() + n * c_out * out_plane + r0 * g.out_w, c_out, ncols,
                            Eigen::OuterStride<>(out_plane));
        MatMap<T> colm(buf.data(), g.col_rows(), ncols);
        if (!gk.empty()) {
          im2col(xv.data() + n * in_image, g, r0, r1, buf.data());
          MatMap<T>(gk.data(), c_out, g.col_rows()).noalias() += dy * colm.transpose();
        }
        if (!gx.empty()) {
          colm.noalias() = km.transpose() * dy;
          col2im(buf.data(), g, r0, r1, gx.data() + n * in_image);
        }
      }
    }
  });
}

template <typename T>
Var<T> conv2d_up(Var<T> input, Var<T> kernel, int factor) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& k = kernel.value();
  require_rank(x.shape(), 4, "conv2d_up", "input");
  require_rank(k.shape(), 4, "conv2d_up", "kernel");
  if (k.dim(0) != x.dim(1)) {
    throw ShapeError("conv2d_up: kernel " + k.shape().str() +
                     " input channels do not match input " + x.shape().str());
  }
  if (factor < 1) throw InvalidArgument("conv2d_up: factor must be >= 1");
  const Index n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3), c_out = k.dim(1);
  // Geometry of the strided convolution whose adjoint this is: output grid = input of this op.
  const Geometry g = make_geometry(c_out, h * factor, w * factor, k.dim(2), k.dim(3), factor, Padding::same);
  const Index x_plane = h * w;
  const Index y_image = c_out * g.in_h * g.in_w;

  Tensor<T> out(Shape{n_batch, c_out, g.in_h, g.in_w});
  Buffer<T> col(static_cast<std::size_t>(g.col_rows() * g.band_rows() * g.out_w));
  ConstMatMap<T> kmat(k.data(), c_in, g.col_rows());
  for (Index n = 0; n < n_batch; ++n) {
    for (Index r0 = 0; r0 < h; r0 += g.band_rows()) {
      const Index r1 = std::min(h, r0 + g.band_rows());
      const Index ncols = (r1 - r0) * w;
      ConstBlockMap<T> xb(x.data() + n * c_in * x_plane + r0 * w, c_in, ncols,
                          Eigen::OuterStride<>(x_plane));
      MatMap<T>(col.data(), g.col_rows(), ncols).noalias() = kmat.transpose() * xb;
      col2im(col.data(), g, r0, r1, out.data() + n * y_image);
    }
  }

  Tape<T>& tape = input.tape();
  return tape.record(std::move(out), {input, kernel}, [=](Tape<T>& tp, std::span<const T> gy) {
    const Tensor<T>& xv = tp.value(input);
    const Tensor<T>& kv = tp.value(kernel);
    std::span<T> gx = maybe_grad(tp, input);
    std::span<T> gk = maybe_grad(tp, kernel);
    Buffer<T> buf(static_cast<std::size_t>(g.col_rows() * g.band_rows() * g.out_w));
    ConstMatMap<T> km(kv.data(), c_in, g.col_rows());
    for (Index n = 0; n < n_batch; ++n) {
      for (Index r0 = 0; r0 < h; r0 += g.band_rows()) {
        const Index r1 = std::min(h, r0 + g.band_rows());
        const Index ncols = (r1 - r0) * w;
        im2col(gy.data() + n * y_image, g, r0, r1, buf.data());
        ConstMatMap<T> colm(buf.data(), g.col_rows(), ncols);
        if (!gx.empty()) {
          BlockMap<T> dx(gx.data() + n * c_in * x_plane + r0 * w, c_in, ncols,
                         Eigen::OuterStride<>(x_plane));
          dx.noalias() += km * colm;
        }
        if (!gk.empty()) {
          ConstBlockMap<T> xb(xv.data() + n * c_in * x_plane + r0 * w, c_in, ncols,
                              Eigen::OuterStride<>(x_plane));
          MatMap<T>(gk.data(), c_in, g.col_rows()).noalias() += xb * colm.transpose();
        }
      }
    }
  });
}

template <typename T>
Var<T> bias_add(Var<T> input, Var<T> bias) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& b = bias.value();
  if (x.rank() < 2 || b.size() != x.dim(1)) {
    throw ShapeError("bias_add: bias " + b.shape().str() + " does not match channels of " +
                     x.shape().str());
  }
  const Index n_batch = x.dim(0), channels = x.dim(1);
  const Index inner = channels == 0 ? 0 : x.size() / (n_batch * channels);
  Tensor<T> out = x;
  out.drop_grad();
  for (Index n = 0; n < n_batch; ++n)
    for (Index c = 0; c < channels; ++c) {
      T* p = out.data() + (n * channels + c) * inner;
      for (Index i = 0; i < inner; ++i) p[i] += b[c];
    }
  return input.tape().record(std::move(out), {input, bias}, [=](Tape<T>& tp, std::span<const T> gy) {
    std::span<T> gx = maybe_grad(tp, input);
    std::span<T> gb = maybe_grad(tp, bias);
    for (Index i = 0; i < static_cast<Index>(gx.size()); ++i) gx[i] += gy[i];
    if (!gb.empty()) {
      for (Index n = 0; n < n_batch; ++n)
        for (Index c = 0; c < channels; ++c) {
          const T* p = gy.data() + (n * channels + c) * inner;
          T acc = 0;
          for (Index i = 0; i < inner; ++i) acc += p[i];
          gb[c] += acc;
        }
    }
  });
}

template <typename T>
Var<T> gdn(Var<T> input, Var<T> beta, Var<T> gamma, bool inverse) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& be = beta.value();
  const Tensor<T>& ga = gamma.value();
  require_rank(x.shape(), 4, "gdn", "input");
  const Index n_batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (be.size() != channels || ga.shape() != Shape{channels, channels}) {
    throw ShapeError("gdn: beta " + be.shape().str() + " / gamma " + ga.shape().str() +
                     " do not match channels of " + x.shape().str());
  }
  auto norm = std::make_shared<Buffer<T>>(static_cast<std::size_t>(x.size()));
  Tensor<T> out(x.shape());
  ConstMatMap<T> gm(ga.data(), channels, channels);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(be.data(), channels);
  RowMat<T> sq(channels, plane);
  for (Index n = 0; n < n_batch; ++n) {
    const Index off = n * channels * plane;
    ConstMatMap<T> xm(x.data() + off, channels, plane);
    MatMap<T> nm(norm->data() + off, channels, plane);
    sq = xm.array().square().matrix();
    nm.noalias() = gm * sq;
    nm.colwise() += bv;
    for (Index i = 0; i < channels * plane; ++i) {
      const T d = norm->data()[off + i];
      if (!(d > T(0)) || !std::isfinite(d)) {
        throw NumericError("gdn: non-positive or non-finite denominator " + std::to_string(d) +
                           " at flat index " + std::to_string(off + i));
      }
    }
    MatMap<T> om(out.data() + off, channels, plane);
    if (inverse) {
      om.array() = xm.array() * nm.array().sqrt();
    } else {
      om.array() = xm.array() / nm.array().sqrt();
    }
  }

  return input.tape().record(
      std::move(out), {input, beta, gamma}, [=](Tape<T>& tp, std::span<const T> gy) {
        const Tensor<T>& xv = tp.value(input);
        const Tensor<T>& gav = tp.value(gamma);
        std::span<T> gx = maybe_grad(tp, input);
        std::span<T> gb = maybe_grad(tp, beta);
        std::span<T> gg = maybe_grad(tp, gamma);
        ConstMatMap<T> gmat(gav.data(), channels, channels);
        RowMat<T> q(channels, plane), sqv(channels, plane);
        for (Index n = 0; n < n_batch; ++n) {
          const Index off = n * channels * plane;
          ConstMatMap<T> xm(xv.data() + off, channels, plane);
          ConstMatMap<T> nm(norm->data() + off, channels, plane);
          ConstMatMap<T> dy(gy.data() + off, channels, plane);
          const auto root = nm.array().sqrt();
          // q = d(loss)/d(norm)
          if (inverse) {
            q.array() = T(0.5) * dy.array() * xm.array() / root;
          } else {
            q.array() = T(-0.5) * dy.array() * xm.array() / (nm.array() * root);
          }
          if (!gb.empty()) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb.data(), channels) += q.rowwise().sum();
          }
          if (!gg.empty()) {
            sqv = xm.array().square().matrix();
            MatMap<T>(gg.data(), channels, channels).noalias() += q * sqv.transpose();
          }
          if (!gx.empty()) {
            MatMap<T> dx(gx.data() + off, channels, plane);
            RowMat<T> back = gmat.transpose() * q;
            if (inverse) {
              dx.array() += dy.array() * root + T(2) * xm.array() * back.array();
            } else {
              dx.array() += dy.array() / root + T(2) * xm.array() * back.array();
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return input.tape().record(std::move(out), {input}, [=](Tape<T>& tp, std::span<const T> gy) {
    const Tensor<T>& xv = tp.value(input);
    std::span<T> gx = tp.grad_buffer(input);
    for (Index i = 0; i < xv.size(); ++i)
      if (xv[i] > T(0)) gx[i] += gy[i];
  });
}

template <typename T>
Var<T> maxpool2(Var<T> input) {
  const Tensor<T>& x = input.value();
  require_rank(x.shape(), 4, "maxpool2", "input");
  const Index n_batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial extents of " + x.shape().str() + " must be even");
  }
  const Index oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{n_batch, channels, oh, ow});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  for (Index nc = 0; nc < n_batch * channels; ++nc) {
    const T* plane = x.data() + nc * h * w;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        Index best = (2 * oy) * w + 2 * ox;
        const Index cand[3] = {best + 1, best + w, best + w + 1};
        for (Index c : cand)
          if (plane[c] > plane[best]) best = c;
        const Index o = nc * oh * ow + oy * ow + ox;
        out[o] = plane[best];
        (*argmax)[static_cast<std::size_t>(o)] = nc * h * w + best;
      }
  }
  return input.tape().record(std::move(out), {input}, [=](Tape<T>& tp, std::span<const T> gy) {
    std::span<T> gx = tp.grad_buffer(input);
    for (std::size_t o = 0; o < argmax->size(); ++o) gx[static_cast<std::size_t>((*argmax)[o])] += gy[o];
  });
}

template <typename T>
Var<T> dense(Var<T> input, Var<T> weight, Var<T> bias) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& wt = weight.value();
  const Tensor<T>& b = bias.value();
  if (x.rank() < 1 || wt.rank() != 2) throw ShapeError("dense: bad ranks " + x.shape().str() + " / " + wt.shape().str());
  const Index n_batch = x.dim(0);
  const Index features = n_batch == 0 ? 0 : x.size() / n_batch;
  const Index outputs = wt.dim(0);
  if (wt.dim(1) != features || b.size() != outputs) {
    throw ShapeError("dense: input " + x.shape().str() + " incompatible with weight " +
                     wt.shape().str() + " and bias " + b.shape().str());
  }
  Tensor<T> out(Shape{n_batch, outputs});
  ConstMatMap<T> xm(x.data(), n_batch, features);
  ConstMatMap<T> wm(wt.data(), outputs, features);
  MatMap<T> om(out.data(), n_batch, outputs);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), outputs);
  return input.tape().record(
      std::move(out), {input, weight, bias}, [=](Tape<T>& tp, std::span<const T> gy) {
        const Tensor<T>& xv = tp.value(input);
        const Tensor<T>& wv = tp.value(weight);
        ConstMatMap<T> dy(gy.data(), n_batch, outputs);
        std::span<T> gx = maybe_grad(tp, input);
        std::span<T> gw = maybe_grad(tp, weight);
        std::span<T> gb = maybe_grad(tp, bias);
        if (!gx.empty()) {
          MatMap<T>(gx.data(), n_batch, features).noalias() +=
              dy * ConstMatMap<T>(wv.data(), outputs, features);
        }
        if (!gw.empty()) {
          MatMap<T>(gw.data(), outputs, features).noalias() +=
              dy.transpose() * ConstMatMap<T>(xv.data(), n_batch, features);
        }
        if (!gb.empty()) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), outputs) += dy.colwise().sum();
        }
      });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank(av.shape(), 4, "concat_channels", "first input");
  require_rank(bv.shape(), 4, "concat_channels", "second input");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + av.shape().str() + " vs " +
                     bv.shape().str());
  }
  const Index n_batch = av.dim(0), ca = av.dim(1), cb = bv.dim(1), plane = av.dim(2) * av.dim(3);
  Tensor<T> out(Shape{n_batch, ca + cb, av.dim(2), av.dim(3)});
  for (Index n = 0; n < n_batch; ++n) {
    std::copy_n(av.data() + n * ca * plane, ca * plane, out.data() + n * (ca + cb) * plane);
    std::copy_n(bv.data() + n * cb * plane, cb * plane, out.data() + (n * (ca + cb) + ca) * plane);
  }
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tp, std::span<const T> gy) {
    std::span<T> ga = maybe_grad(tp, a);
    std::span<T> gb = maybe_grad(tp, b);
    for (Index n = 0; n < n_batch; ++n) {
      const T* src = gy.data() + n * (ca + cb) * plane;
      if (!ga.empty())
        for (Index i = 0; i < ca * plane; ++i) ga[n * ca * plane + i] += src[i];
      if (!gb.empty())
        for (Index i = 0; i < cb * plane; ++i) gb[n * cb * plane + i] += src[ca * plane + i];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> input, Shape shape) {
  Tensor<T> out = input.value().reshaped(std::move(shape));
  return input.tape().record(std::move(out), {input}, [=](Tape<T>& tp, std::span<const T> gy) {
    std::span<T> gx = tp.grad_buffer(input);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

namespace {

template <typename T, typename Fwd, typename Bwd>
Var<T> binary(Var<T> a, Var<T> b, const char* name, Fwd fwd, Bwd bwd) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), name);
  Tensor<T> out(av.shape());
  for (Index i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tp, std::span<const T> gy) {
    const Tensor<T>& x = tp.value(a);
    const Tensor<T>& y = tp.value(b);
    std::span<T> ga = maybe_grad(tp, a);
    std::span<T> gb = maybe_grad(tp, b);
    for (Index i = 0; i < x.size(); ++i) {
      T da = 0, db = 0;
      bwd(x[i], y[i], gy[static_cast<std::size_t>(i)], da, db);
      if (!ga.empty()) ga[static_cast<std::size_t>(i)] += da;
      if (!gb.empty()) gb[static_cast<std::size_t>(i)] += db;
    }
  });
}

template <typename T, typename Fwd, typename Deriv>
Var<T> elementwise(Var<T> a, Fwd fwd, Deriv deriv) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (Index i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return a.tape().record(std::move(out), {a}, [=](Tape<T>& tp, std::span<const T> gy) {
    const Tensor<T>& x = tp.value(a);
    std::span<T> ga = tp.grad_buffer(a);
    for (Index i = 0; i < x.size(); ++i) ga[static_cast<std::size_t>(i)] += gy[static_cast<std::size_t>(i)] * deriv(x[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(a, b, "add", [](T x, T y) { return x + y; },
                [](T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(a, b, "sub", [](T x, T y) { return x - y; },
                [](T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(a, b, "mul", [](T x, T y) { return x * y; },
                [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  return binary(a, b, "div", [](T x, T y) { return x / y; },
                [](T x, T y, T g, T& da, T& db) {
                  da = g / y;
                  db = -g * x / (y * y);
                });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return elementwise(a, [factor](T x) { return factor * x; }, [factor](T) { return factor; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T offset) {
  return elementwise(a, [offset](T x) { return x + offset; }, [](T) { return T(1); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return elementwise(a, [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

template <typename T>
Var<T> square_plus(Var<T> raw, T floor) {
  return elementwise(raw, [floor](T x) { return x * x + floor; }, [](T x) { return T(2) * x; });
}

template <typename T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& av = a.value();
  T acc = 0;
  for (Index i = 0; i < av.size(); ++i) acc += av[i];
  Tensor<T> out(Shape{}, Buffer<T>{acc});
  return a.tape().record(std::move(out), {a}, [=](Tape<T>& tp, std::span<const T> gy) {
    std::span<T> ga = tp.grad_buffer(a);
    for (T& g : ga) g += gy[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "mse");
  if (av.size() == 0) throw ShapeError("mse of empty tensors");
  const T inv = T(1) / static_cast<T>(av.size());
  T acc = 0;
  for (Index i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    acc += d * d;
  }
  Tensor<T> out(Shape{}, Buffer<T>{acc * inv});
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tp, std::span<const T> gy) {
    const Tensor<T>& x = tp.value(a);
    const Tensor<T>& y = tp.value(b);
    std::span<T> ga = maybe_grad(tp, a);
    std::span<T> gb = maybe_grad(tp, b);
    const T s = T(2) * inv * gy[0];
    for (Index i = 0; i < x.size(); ++i) {
      const T d = s * (x[i] - y[i]);
      if (!ga.empty()) ga[static_cast<std::size_t>(i)] += d;
      if (!gb.empty()) gb[static_cast<std::size_t>(i)] -= d;
    }
  });
}

template <typename T>
Var<T> mae(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "mae");
  if (av.size() == 0) throw ShapeError("mae of empty tensors");
  const T inv = T(1) / static_cast<T>(av.size());
  T acc = 0;
  for (Index i = 0; i < av.size(); ++i) acc += std::abs(av[i] - bv[i]);
  Tensor<T> out(Shape{}, Buffer<T>{acc * inv});
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& tp, std::span<const T> gy) {
    const Tensor<T>& x = tp.value(a);
    const Tensor<T>& y = tp.value(b);
    std::span<T> ga = maybe_grad(tp, a);
    std::span<T> gb = maybe_grad(tp, b);
    for (Index i = 0; i < x.size(); ++i) {
      const T diff = x[i] - y[i];
      const T sgn = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
      const T d = inv * gy[0] * sgn;
      if (!ga.empty()) ga[static_cast<std::size_t>(i)] += d;
      if (!gb.empty()) gb[static_cast<std::size_t>(i)] -= d;
    }
  });
}

#define PXIQA_INSTANTIATE_OPS(T)                                               \
  template Var<T> conv2d(Var<T>, Var<T>, int, Padding);                        \
  template Var<T> conv2d_up(Var<T>, Var<T>, int);                              \
  template Var<T> bias_add(Var<T>, Var<T>);                                    \
  template Var<T> gdn(Var<T>, Var<T>, Var<T>, bool);                           \
  template Var<T> relu(Var<T>);                                                \
  template Var<T> maxpool2(Var<T>);                                            \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                               \
  template Var<T> concat_channels(Var<T>, Var<T>);                             \
  template Var<T> reshape(Var<T>, Shape);                                      \
  template Var<T> add(Var<T>, Var<T>);                                         \
  template Var<T> sub(Var<T>, Var<T>);                                         \
  template Var<T> mul(Var<T>, Var<T>);                                         \
  template Var<T> div(Var<T>, Var<T>);                                         \
  template Var<T> scale(Var<T>, T);                                            \
  template Var<T> add_scalar(Var<T>, T);                                       \
  template Var<T> square(Var<T>);                                              \
  template Var<T> square_plus(Var<T>, T);                                      \
  template Var<T> sum(Var<T>);                                                 \
  template Var<T> mean(Var<T>);                                                \
  template Var<T> mse(Var<T>, Var<T>);                                         \
  template Var<T> mae(Var<T>, Var<T>);

PXIQA_INSTANTIATE_OPS(float)
PXIQA_INSTANTIATE_OPS(double)

#undef PXIQA_INSTANTIATE_OPS

}  // namespace pxiqa
