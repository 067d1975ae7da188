#pragma once

#include "pxiqa/tape.hpp"

namespace pxiqa {

// "same": zero padding so that out = ceil(in / stride), split as evenly as possible with
// the extra row/column at the bottom/right. "valid": no padding.
enum class Padding { same, valid };

// input N x Cin x H x W, kernel Cout x Cin x kh x kw.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, int stride = 1, Padding padding = Padding::same);

// Transposed convolution multiplying the spatial extents by `factor`.
// input N x Cin x H x W, kernel Cin x Cout x kh x kw, output N x Cout x (factor*H) x (factor*W).
// Exactly the adjoint of conv2d(., k, factor, same) mapping Cout -> Cin channels.
template <typename T>
Var<T> conv2d_up(Var<T> input, Var<T> kernel, int factor);

// Adds bias[c] to every element of channel c (rank >= 2, channel axis 1).
template <typename T>
Var<T> bias_add(Var<T> input, Var<T> bias);

// Generalized divisive normalization over channels, applied per pixel:
//   out_i = in_i / sqrt(beta_i + sum_j gamma_ij in_j^2)
// and with `inverse` the inverse transform multiplies by the same root.
// beta has C entries, gamma is C x C (row i couples into channel i).
template <typename T>
Var<T> gdn(Var<T> input, Var<T> beta, Var<T> gamma, bool inverse = false);

template <typename T>
Var<T> relu(Var<T> input);

// 2x2 max pooling with stride 2. Ties route the gradient to the first element in
// row-major order. Odd spatial extents are rejected.
template <typename T>
Var<T> maxpool2(Var<T> input);

// input N x D (or any rank flattened past axis 0), weight O x D, bias O -> N x O.
template <typename T>
Var<T> dense(Var<T> input, Var<T> weight, Var<T> bias);

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <typename T>
Var<T> reshape(Var<T> input, Shape shape);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> div(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
template <typename T>
Var<T> add_scalar(Var<T> a, T offset);
template <typename T>
Var<T> square(Var<T> a);
// raw^2 + floor; the non-negativity reparameterization used for GDN parameters.
template <typename T>
Var<T> square_plus(Var<T> raw, T floor);

template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);
template <typename T>
Var<T> mse(Var<T> a, Var<T> b);
template <typename T>
Var<T> mae(Var<T> a, Var<T> b);

}  // namespace pxiqa
