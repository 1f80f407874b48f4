#include "stk/nn/layers.hpp"

#include <cmath>

#include "stk/core/error.hpp"

namespace stk::nn {

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Initializer& init, bool with_bias)
    : weight(init.uniform<T>({in, out}, in, out)),
      bias(with_bias ? init.uniform_bounded<T>({out}, 1.0 / std::sqrt(static_cast<double>(in)))
                     : init.constant<T>({out}, 0.0)),
      with_bias(with_bias) {}

template <typename T>
BasicTensor<T> Linear<T>::operator()(const BasicTensor<T>& x) const {
  auto y = matmul(x, weight);
  return with_bias ? add_bias(y, bias) : y;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (with_bias) out.push_back({prefix + ".bias", bias});
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim, Initializer& init)
    : gain(init.constant<T>({dim}, 1.0)), shift(init.constant<T>({dim}, 0.0)) {}

template <typename T>
BasicTensor<T> LayerNorm<T>::operator()(const BasicTensor<T>& x) const {
  return add_bias(mul_lastdim(layernorm_lastdim(x), gain), shift);
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".shift", shift});
}

template <typename T>
FeedForward<T>::FeedForward(std::size_t dim, Initializer& init) : up_(dim, 4 * dim, init), down_(4 * dim, dim, init) {}

template <typename T>
BasicTensor<T> FeedForward<T>::operator()(const BasicTensor<T>& x) const {
  return down_(relu(up_(x)));
}

template <typename T>
void FeedForward<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  up_.collect(prefix + ".up", out);
  down_.collect(prefix + ".down", out);
}

// Softmax ignores a per-query shift of the logits, so a key bias would be inert.
template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t dim, std::size_t heads, Initializer& init)
    : q_proj(dim, dim, init), k_proj(dim, dim, init, false), v_proj(dim, dim, init), out_proj(dim, dim, init), heads_(heads) {
  require(heads >= 1 && dim % heads == 0, ErrorKind::kInvalidArgument,
          "attention: " + std::to_string(dim) + " channels not divisible by " + std::to_string(heads) + " heads");
}

template <typename T>
BasicTensor<T> MultiHeadAttention<T>::operator()(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                                 const BasicTensor<T>& v) const {
  return out_proj(scaled_dot_attention(q_proj(q), k_proj(k), v_proj(v), heads_));
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  q_proj.collect(prefix + ".q", out);
  k_proj.collect(prefix + ".k", out);
  v_proj.collect(prefix + ".v", out);
  out_proj.collect(prefix + ".o", out);
}

template <typename T>
AttentionBlock<T>::AttentionBlock(std::size_t dim, std::size_t heads, Initializer& init, AttentionKind kind)
    : attention(dim, heads, init), kind_(kind), norm_query_(dim, init) {
  if (kind_ == AttentionKind::kCross) norm_context_ = LayerNorm<T>(dim, init);
  norm_ff_ = LayerNorm<T>(dim, init);
  ff_ = FeedForward<T>(dim, init);
}

template <typename T>
BasicTensor<T> AttentionBlock<T>::attend(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                         const BasicTensor<T>& v) const {
  require(kind_ == AttentionKind::kCross, ErrorKind::kInvalidArgument, "attend: self-attention block has no context");
  return add(q, attention(norm_query_(q), norm_context_(k), norm_context_(v)));
}

template <typename T>
BasicTensor<T> AttentionBlock<T>::operator()(const BasicTensor<T>& x, const BasicTensor<T>& context) const {
  const auto mixed = attend(x, context, context);
  return add(mixed, ff_(norm_ff_(mixed)));
}

template <typename T>
BasicTensor<T> AttentionBlock<T>::operator()(const BasicTensor<T>& x) const {
  const auto normed = norm_query_(x);
  const auto mixed = add(x, attention(normed, normed, normed));
  return add(mixed, ff_(norm_ff_(mixed)));
}

template <typename T>
void AttentionBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  attention.collect(prefix + ".attn", out);
  norm_query_.collect(prefix + ".norm_q", out);
  if (kind_ == AttentionKind::kCross) norm_context_.collect(prefix + ".norm_kv", out);
  norm_ff_.collect(prefix + ".norm_ff", out);
  ff_.collect(prefix + ".ff", out);
}

template <typename Dst, typename Src>
void copy_parameters(const ParameterList<Src>& src, ParameterList<Dst>& dst) {
  require(src.size() == dst.size(), ErrorKind::kShapeMismatch, "copy_parameters: parameter counts differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    require(src[i].name == dst[i].name && src[i].tensor.shape() == dst[i].tensor.shape(), ErrorKind::kShapeMismatch,
            "copy_parameters: layout differs at " + src[i].name);
    auto out = dst[i].tensor.mutable_data();
    const auto in = src[i].tensor.data();
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = static_cast<Dst>(in[j]);
  }
}

template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class FeedForward<float>;
template class FeedForward<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class AttentionBlock<float>;
template class AttentionBlock<double>;
template void copy_parameters<float, float>(const ParameterList<float>&, ParameterList<float>&);
template void copy_parameters<double, float>(const ParameterList<float>&, ParameterList<double>&);
template void copy_parameters<float, double>(const ParameterList<double>&, ParameterList<float>&);
template void copy_parameters<double, double>(const ParameterList<double>&, ParameterList<double>&);

}  // namespace stk::nn
