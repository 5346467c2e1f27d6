#pragma once

#include "mvgamba/diff.hpp"

#include <cstddef>
#include <vector>

// Differentiable tensor operations. Matrices are row-major [rows, cols];
// images are [H, W, C] with channels innermost.
namespace mvg {

// Elementwise, identical shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> silu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> softplus(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
/// min(a, hi); the gradient is zero where the clamp is active.
template <typename T> Var<T> clamp_max(const Var<T>& a, T hi);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
/// Mean of squared differences.
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);
/// Sum of a * weights with constant weights.
template <typename T> Var<T> weighted_sum(const Var<T>& a, const std::vector<T>& weights);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

/// x [R, in] * w[out, in]^T + b[out]; b may be undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = {});
/// x [R, C] + v [C] on every row.
template <typename T> Var<T> add_row(const Var<T>& x, const Var<T>& v);
/// x [R, C] * v [C] on every row.
template <typename T> Var<T> mul_row(const Var<T>& x, const Var<T>& v);
/// Root-mean-square normalisation over columns, then scaled by w [C].
template <typename T> Var<T> rms_norm(const Var<T>& x, const Var<T>& w, T eps = T(1e-5));

template <typename T> Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
/// Output row i is input row index[i]; rows may repeat.
template <typename T> Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& index);

/// Softmax over consecutive groups of `group` columns.
template <typename T> Var<T> softmax_groups(const Var<T>& x, std::size_t group);
/// Each row divided by sqrt(|row|^2 + eps).
template <typename T> Var<T> normalize_rows(const Var<T>& x, T eps = T(1e-12));
/// Value of `hard`, gradient routed to `soft` unchanged.
template <typename T> Var<T> straight_through(const Var<T>& hard, const Var<T>& soft);

/// Depthwise causal convolution along rows: x [T, E], w [E, K], b [E];
/// y[t, e] = b[e] + sum_k w[e, k] * x[t - (K - 1) + k, e] (zero padded).
template <typename T> Var<T> causal_conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// [H, W, C] -> [(H/p)(W/p), p*p*C]; patch vectors ordered (dy, dx, c).
template <typename T> Var<T> patchify(const Var<T>& image, std::size_t patch);
/// Bilinear resampling with half-pixel centers and edge clamping.
template <typename T> Var<T> resize_bilinear(const Var<T>& image, std::size_t out_h, std::size_t out_w);
/// 3x3 convolution, zero padding 1, with a fixed kernel [Cout, 3, 3, Cin].
template <typename T>
Var<T> conv3x3_fixed(const Var<T>& image, const std::vector<T>& kernel, std::size_t out_channels);
/// 2x2 average pooling, stride 2 (H and W must be even).
template <typename T> Var<T> avg_pool2(const Var<T>& image);

}  // namespace mvg
