#pragma once

#include <string>
#include <vector>

#include "stk/tensor/init.hpp"
#include "stk/tensor/ops.hpp"
#include "stk/tensor/tensor.hpp"

namespace stk::nn {

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

/// Row-wise affine map: x [N x in] -> [N x out]; bias optional.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Initializer& init, bool with_bias = true);

  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  BasicTensor<T> weight;  // [in x out]
  BasicTensor<T> bias;    // [out], unused without bias
  bool with_bias = true;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::size_t dim, Initializer& init);

  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  BasicTensor<T> gain;
  BasicTensor<T> shift;
};

/// C -> 4C -> C with relu.
template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t dim, Initializer& init);

  BasicTensor<T> operator()(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

 private:
  Linear<T> up_;
  Linear<T> down_;
};

/// Projected multi-head attention without residual.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, Initializer& init);

  BasicTensor<T> operator()(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  std::size_t heads() const { return heads_; }

  Linear<T> q_proj, k_proj, v_proj, out_proj;

 private:
  std::size_t heads_ = 1;
};

enum class AttentionKind { kCross, kSelf };

/// Pre-layernorm transformer block: residual attention followed by a
/// residual feed-forward. Self blocks own no context norm, so every
/// parameter takes part in the forward pass.
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(std::size_t dim, std::size_t heads, Initializer& init, AttentionKind kind = AttentionKind::kCross);

  /// Attention sub-layer only: q + MHA(LN(q), LN'(k), LN'(v)). Cross blocks only.
  BasicTensor<T> attend(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v) const;
  /// Cross-attention block: queries from x, keys/values from context. Cross blocks only.
  BasicTensor<T> operator()(const BasicTensor<T>& x, const BasicTensor<T>& context) const;
  /// Self-attention block.
  BasicTensor<T> operator()(const BasicTensor<T>& x) const;

  void collect(const std::string& prefix, ParameterList<T>& out) const;

  MultiHeadAttention<T> attention;

 private:
  AttentionKind kind_ = AttentionKind::kCross;
  LayerNorm<T> norm_query_;
  LayerNorm<T> norm_context_;
  LayerNorm<T> norm_ff_;
  FeedForward<T> ff_;
};

/// Copies values between parameter lists of equal layout, casting as needed.
template <typename Dst, typename Src>
void copy_parameters(const ParameterList<Src>& src, ParameterList<Dst>& dst);

}  // namespace stk::nn
