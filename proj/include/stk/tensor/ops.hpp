#pragma once

#include <cstdint>
#include <vector>

#include "stk/tensor/tensor.hpp"

namespace stk {

enum class Activation { kSigmoid, kRelu, kTanh, kLayerNormLastDim, kSoftmaxLastDim };

// ---- linear algebra -------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// [m x n] -> [n x m]
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

// ---- elementwise ----------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor);

/// Adds `bias` (extent = last dim of a) to every row.
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias);
/// Multiplies every row by `gain` (extent = last dim of a).
template <typename T>
BasicTensor<T> mul_lastdim(const BasicTensor<T>& a, const BasicTensor<T>& gain);
/// Row i of a [m x n] times weights[i], weights [m x 1].
template <typename T>
BasicTensor<T> scale_rows(const BasicTensor<T>& a, const BasicTensor<T>& weights);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x);
/// Normalizes each row to zero mean and unit variance (eps = 1e-5, no affine).
template <typename T>
BasicTensor<T> layernorm_lastdim(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& x, Activation fn);

// ---- reductions -----------------------------------------------------------

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

// ---- layout ---------------------------------------------------------------

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
/// Concatenates along axis 0; all inputs must agree on trailing extents.
template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts);
/// Concatenates rank-2 tensors along axis 1.
template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts);
/// Rows [begin, end) of a rank-2 tensor.
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end);
/// Columns [begin, end) of a rank-2 tensor.
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end);
/// out[i] = x[index[i]] for a rank-2 x.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, const std::vector<std::uint32_t>& index);

// ---- pooling --------------------------------------------------------------

/// x [n*k x C] viewed as n groups of k rows; channel-wise max per group.
template <typename T>
BasicTensor<T> group_max(const BasicTensor<T>& x, std::size_t group);
/// Channel-wise max of the rows of x [N x C] that share a cell id; cells
/// without rows are zero; rows with a negative id are dropped.
template <typename T>
BasicTensor<T> scatter_max(const BasicTensor<T>& x, const std::vector<std::int64_t>& cell, std::size_t cells);

// ---- image ----------------------------------------------------------------

/// x [H x W x Cin], kernels [k x k x Cin x Cout]; stride 1, zero "same" padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernels);

/// x [H x W x C] -> [rH x rW x C/r^2]. Channel group g of pixel (i, j) lands
/// on output pixel (r*i + g / r, r*j + g % r).
template <typename T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, std::size_t upscale = 2);
/// Exact inverse of pixel_shuffle.
template <typename T>
BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& x, std::size_t downscale = 2);

// ---- attention ------------------------------------------------------------

/// Per head h: softmax(Q_h K_h^T / sqrt(C / heads)) V_h, heads concatenated.
/// q [Nq x C], k and v [Nk x C]; no projections.
template <typename T>
BasicTensor<T> scaled_dot_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                    std::size_t heads);

}  // namespace stk
