#include "stk/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "stk/core/error.hpp"

namespace stk {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

// Grad buffer of parent i, or nullptr when that parent is untracked.
template <typename T>
std::vector<T>* parent_grad(NodeT<T>& node, std::size_t i) {
  auto& parent = *node.parents[i];
  if (!parent.requires_grad) return nullptr;
  parent.ensure_grad();
  return &parent.grad;
}

template <typename T>
const std::vector<T>& parent_data(const NodeT<T>& node, std::size_t i) {
  return node.parents[i]->data;
}

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  require(shape.size() == rank, ErrorKind::kShapeMismatch,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(shape));
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  require(a == b, ErrorKind::kShapeMismatch, std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b));
}

// Dense kernels run on double copies through Eigen so every product
// accumulates in Accum regardless of the tensor precision.
using MatA = Eigen::Matrix<Accum, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ConstView = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                             Eigen::OuterStride<>>;

// rows x cols block starting at p whose rows are `stride` apart.
template <typename T>
MatA widen(const T* p, std::size_t rows, std::size_t cols, std::size_t stride) {
  return ConstView<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(stride)))
      .template cast<Accum>();
}
template <typename T>
MatA widen(const T* p, std::size_t rows, std::size_t cols) {
  return widen(p, rows, cols, cols);
}

template <typename T>
void store(const MatA& m, T* out, std::size_t stride) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i) * stride + j] = static_cast<T>(m(i, j));
}

template <typename T>
void accumulate(const MatA& m, T* out, std::size_t stride) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i) * stride + j] += static_cast<T>(m(i, j));
}

// out[m x n] = A[m x k] . B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  const MatA r = widen(a, m, k) * widen(b, k, n);
  store(r, out, n);
}

// out[m x n] += A[m x k] . B[n x k]^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  const MatA r = widen(a, m, k) * widen(b, n, k).transpose();
  accumulate(r, out, n);
}

// out[m x n] += A[k x m]^T . B[k x n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* out, std::size_t k, std::size_t m, std::size_t n) {
  const MatA r = widen(a, k, m).transpose() * widen(b, k, n);
  accumulate(r, out, n);
}

std::size_t last_extent(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary(const BasicTensor<T>& x, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, op, [deriv](NodeT<T>& node) {
    auto* gx = parent_grad(node, 0);
    if (!gx) return;
    const auto& xin = parent_data(node, 0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      (*gx)[i] += static_cast<T>(static_cast<Accum>(node.grad[i]) * deriv(xin[i], node.data[i]));
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorKind::kShapeMismatch,
          "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(m * n);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](NodeT<T>& node) {
    const auto& av = parent_data(node, 0);
    const auto& bv = parent_data(node, 1);
    if (auto* ga = parent_grad(node, 0)) gemm_nt_acc(node.grad.data(), bv.data(), ga->data(), m, n, k);
    if (auto* gb = parent_grad(node, 1)) gemm_tn_acc(av.data(), node.grad.data(), gb->data(), m, k, n);
  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  const auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  return make_result<T>({n, m}, std::move(out), {a}, "transpose", [m, n](NodeT<T>& node) {
    auto* ga = parent_grad(node, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += node.grad[j * m + i];
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](NodeT<T>& node) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(node, p))
        for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[i] += node.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "sub", [](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[i] += node.grad[i];
    if (auto* g = parent_grad(node, 1))
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[i] -= node.grad[i];
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](NodeT<T>& node) {
    const auto& av = parent_data(node, 0);
    const auto& bv = parent_data(node, 1);
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[i] += node.grad[i] * bv[i];
    if (auto* g = parent_grad(node, 1))
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[i] += node.grad[i] * av[i];
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a.data()[i] * factor);
  return make_result<T>(a.shape(), std::move(out), {a}, "scale", [factor](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[i] += static_cast<T>(node.grad[i] * factor);
  });
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias) {
  const std::size_t n = last_extent(a.shape());
  require(bias.numel() == n, ErrorKind::kShapeMismatch,
          "add_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(a.shape()));
  const std::size_t rows = a.numel() / n;
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = a.data()[r * n + j] + bias.data()[j];
  return make_result<T>(a.shape(), std::move(out), {a, bias}, "add_bias", [rows, n](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[i] += node.grad[i];
    if (auto* g = parent_grad(node, 1)) {
      std::vector<Accum> acc(n, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) acc[j] += node.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j) (*g)[j] += static_cast<T>(acc[j]);
    }
  });
}

template <typename T>
BasicTensor<T> mul_lastdim(const BasicTensor<T>& a, const BasicTensor<T>& gain) {
  const std::size_t n = last_extent(a.shape());
  require(gain.numel() == n, ErrorKind::kShapeMismatch,
          "mul_lastdim: gain " + shape_str(gain.shape()) + " vs input " + shape_str(a.shape()));
  const std::size_t rows = a.numel() / n;
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = a.data()[r * n + j] * gain.data()[j];
  return make_result<T>(a.shape(), std::move(out), {a, gain}, "mul_lastdim", [rows, n](NodeT<T>& node) {
    const auto& av = parent_data(node, 0);
    const auto& gv = parent_data(node, 1);
    if (auto* g = parent_grad(node, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) (*g)[r * n + j] += node.grad[r * n + j] * gv[j];
    if (auto* g = parent_grad(node, 1)) {
      std::vector<Accum> acc(n, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j)
          acc[j] += static_cast<Accum>(node.grad[r * n + j]) * static_cast<Accum>(av[r * n + j]);
      for (std::size_t j = 0; j < n; ++j) (*g)[j] += static_cast<T>(acc[j]);
    }
  });
}

template <typename T>
BasicTensor<T> scale_rows(const BasicTensor<T>& a, const BasicTensor<T>& weights) {
  require_rank(a.shape(), 2, "scale_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  require(weights.numel() == m, ErrorKind::kShapeMismatch,
          "scale_rows: weights " + shape_str(weights.shape()) + " vs input " + shape_str(a.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] * weights.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, weights}, "scale_rows", [m, n](NodeT<T>& node) {
    const auto& av = parent_data(node, 0);
    const auto& wv = parent_data(node, 1);
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += node.grad[i * n + j] * wv[i];
    if (auto* g = parent_grad(node, 1))
      for (std::size_t i = 0; i < m; ++i) {
        Accum acc = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          acc += static_cast<Accum>(node.grad[i * n + j]) * static_cast<Accum>(av[i * n + j]);
        (*g)[i] += static_cast<T>(acc);
      }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary(
      x, "sigmoid", [](T v) { return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<Accum>(v)))); },
      [](T, T y) { return static_cast<Accum>(y) * (1.0 - static_cast<Accum>(y)); });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? 1.0 : 0.0; });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  return unary(
      x, "tanh", [](T v) { return static_cast<T>(std::tanh(static_cast<Accum>(v))); },
      [](T, T y) { return 1.0 - static_cast<Accum>(y) * static_cast<Accum>(y); });
}

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
  const std::size_t n = last_extent(x.shape());
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * n;
    const Accum peak = *std::max_element(row, row + n);
    Accum total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(static_cast<Accum>(row[j]) - peak);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<T>(std::exp(static_cast<Accum>(row[j]) - peak) / total);
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "softmax", [rows, n](NodeT<T>& node) {
    auto* g = parent_grad(node, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = node.data.data() + r * n;
      const T* dy = node.grad.data() + r * n;
      Accum dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<Accum>(dy[j]) * static_cast<Accum>(y[j]);
      for (std::size_t j = 0; j < n; ++j)
        (*g)[r * n + j] += static_cast<T>(static_cast<Accum>(y[j]) * (static_cast<Accum>(dy[j]) - dot));
    }
  });
}

template <typename T>
BasicTensor<T> layernorm_lastdim(const BasicTensor<T>& x) {
  constexpr Accum kEps = 1e-5;
  const std::size_t n = last_extent(x.shape());
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  std::vector<Accum> inv_std(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * n;
    Accum mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<Accum>(n);
    Accum var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Accum>(n);
    inv_std[r] = 1.0 / std::sqrt(var + kEps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<T>((row[j] - mu) * inv_std[r]);
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "layernorm",
                        [rows, n, inv_std = std::move(inv_std)](NodeT<T>& node) {
                          auto* g = parent_grad(node, 0);
                          if (!g) return;
                          // The stored output is rounded to T; recompute the
                          // normalized row from the input for full precision.
                          const auto& xin = parent_data(node, 0);
                          std::vector<Accum> xhat(n);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* row = xin.data() + r * n;
                            const T* dy = node.grad.data() + r * n;
                            Accum mu = 0.0;
                            for (std::size_t j = 0; j < n; ++j) mu += row[j];
                            mu /= static_cast<Accum>(n);
                            Accum mean_dy = 0.0, mean_dy_xhat = 0.0;
                            for (std::size_t j = 0; j < n; ++j) {
                              xhat[j] = (row[j] - mu) * inv_std[r];
                              mean_dy += dy[j];
                              mean_dy_xhat += dy[j] * xhat[j];
                            }
                            mean_dy /= static_cast<Accum>(n);
                            mean_dy_xhat /= static_cast<Accum>(n);
                            for (std::size_t j = 0; j < n; ++j) {
                              (*g)[r * n + j] +=
                                  static_cast<T>(inv_std[r] * (dy[j] - mean_dy - xhat[j] * mean_dy_xhat));
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& x, Activation fn) {
  switch (fn) {
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kRelu: return relu(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kLayerNormLastDim: return layernorm_lastdim(x);
    case Activation::kSoftmaxLastDim: return softmax_lastdim(x);
  }
  fail(ErrorKind::kInvalidArgument, "unknown activation");
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  Accum total = 0.0;
  for (T v : x.data()) total += v;
  return make_result<T>({1}, {static_cast<T>(total)}, {x}, "sum", [](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (auto& v : *g) v += node.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(), ErrorKind::kShapeMismatch,
          "reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  return make_result<T>(std::move(shape), x.to_vector(), {x}, "reshape", [](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[i] += node.grad[i];
  });
}

template <typename T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts) {
  require(!parts.empty(), ErrorKind::kEmptyInput, "concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  std::vector<T> out;
  for (const auto& p : parts) {
    Shape ptail(p.shape().begin() + 1, p.shape().end());
    require(ptail == tail, ErrorKind::kShapeMismatch,
            "concat_rows: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
    rows += p.dim(0);
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_result<T>(std::move(shape), std::move(out), parts, "concat_rows",
                        [offsets = std::move(offsets)](NodeT<T>& node) {
                          for (std::size_t p = 0; p < offsets.size(); ++p) {
                            auto* g = parent_grad(node, p);
                            if (!g) continue;
                            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += node.grad[offsets[p] + i];
                          }
                        });
}

template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
  require(!parts.empty(), ErrorKind::kEmptyInput, "concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 2, "concat_cols");
    require(p.dim(0) == m, ErrorKind::kShapeMismatch, "concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(m * total);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto in = parts[p].data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(in.data() + i * widths[p], widths[p], out.data() + i * total + col);
    col += widths[p];
  }
  return make_result<T>({m, total}, std::move(out), parts, "concat_cols",
                        [m, total, widths = std::move(widths)](NodeT<T>& node) {
                          std::size_t col0 = 0;
                          for (std::size_t p = 0; p < widths.size(); ++p) {
                            if (auto* g = parent_grad(node, p)) {
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < widths[p]; ++j)
                                  (*g)[i * widths[p] + j] += node.grad[i * total + col0 + j];
                            }
                            col0 += widths[p];
                          }
                        });
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require(x.rank() >= 1 && begin < end && end <= x.dim(0), ErrorKind::kOutOfRange,
          "slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(x.shape()));
  const std::size_t width = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<T> out(x.data().begin() + begin * width, x.data().begin() + end * width);
  return make_result<T>(std::move(shape), std::move(out), {x}, "slice_rows", [begin, width](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*g)[begin * width + i] += node.grad[i];
  });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x.shape(), 2, "slice_cols");
  require(begin < end && end <= x.dim(1), ErrorKind::kOutOfRange, "slice_cols out of range");
  const std::size_t m = x.dim(0), n = x.dim(1), w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data().data() + i * n + begin, w, out.data() + i * w);
  return make_result<T>({m, w}, std::move(out), {x}, "slice_cols", [m, n, w, begin](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) (*g)[i * n + begin + j] += node.grad[i * w + j];
  });
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, const std::vector<std::uint32_t>& index) {
  require_rank(x.shape(), 2, "gather_rows");
  require(!index.empty(), ErrorKind::kEmptyInput, "gather_rows: empty index");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  std::vector<T> out(index.size() * n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < rows, ErrorKind::kOutOfRange, "gather_rows: index out of range");
    std::copy_n(x.data().data() + index[i] * n, n, out.data() + i * n);
  }
  return make_result<T>({index.size(), n}, std::move(out), {x}, "gather_rows", [index, n](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) (*g)[index[i] * n + j] += node.grad[i * n + j];
  });
}

template <typename T>
BasicTensor<T> group_max(const BasicTensor<T>& x, std::size_t group) {
  require_rank(x.shape(), 2, "group_max");
  require(group >= 1 && x.dim(0) % group == 0, ErrorKind::kShapeMismatch, "group_max: rows not divisible by group");
  const std::size_t groups = x.dim(0) / group, n = x.dim(1);
  std::vector<T> out(groups * n);
  std::vector<std::uint32_t> arg(groups * n);
  const auto in = x.data();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = g * group;
      for (std::size_t r = g * group + 1; r < (g + 1) * group; ++r)
        if (in[r * n + j] > in[best * n + j]) best = r;
      out[g * n + j] = in[best * n + j];
      arg[g * n + j] = static_cast<std::uint32_t>(best);
    }
  return make_result<T>({groups, n}, std::move(out), {x}, "group_max", [arg = std::move(arg), n](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < arg.size(); ++i) (*g)[arg[i] * n + i % n] += node.grad[i];
  });
}

template <typename T>
BasicTensor<T> scatter_max(const BasicTensor<T>& x, const std::vector<std::int64_t>& cell, std::size_t cells) {
  require_rank(x.shape(), 2, "scatter_max");
  require(cell.size() == x.dim(0), ErrorKind::kShapeMismatch, "scatter_max: one cell id per row required");
  const std::size_t n = x.dim(1);
  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> arg(cells * n, kNone);
  const auto in = x.data();
  for (std::size_t r = 0; r < cell.size(); ++r) {
    if (cell[r] < 0) continue;
    require(static_cast<std::size_t>(cell[r]) < cells, ErrorKind::kOutOfRange, "scatter_max: cell id out of range");
    const std::size_t base = static_cast<std::size_t>(cell[r]) * n;
    for (std::size_t j = 0; j < n; ++j) {
      std::uint32_t& best = arg[base + j];
      if (best == kNone || in[r * n + j] > in[best * n + j]) best = static_cast<std::uint32_t>(r);
    }
  }
  std::vector<T> out(cells * n, T(0));
  for (std::size_t i = 0; i < out.size(); ++i)
    if (arg[i] != kNone) out[i] = in[arg[i] * n + i % n];
  return make_result<T>({cells, n}, std::move(out), {x}, "scatter_max", [arg = std::move(arg), n](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t i = 0; i < arg.size(); ++i)
        if (arg[i] != kNone) (*g)[arg[i] * n + i % n] += node.grad[i];
  });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernels) {
  require_rank(x.shape(), 3, "conv2d");
  require_rank(kernels.shape(), 4, "conv2d kernels");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t k = kernels.dim(0), cout = kernels.dim(3);
  require(kernels.dim(1) == k && k % 2 == 1, ErrorKind::kInvalidArgument, "conv2d: kernel must be square and odd");
  require(kernels.dim(2) == cin, ErrorKind::kShapeMismatch,
          "conv2d: input " + shape_str(x.shape()) + " vs kernels " + shape_str(kernels.shape()));
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t patch = k * k * cin;
  // Calls f(pixel, column block, source pixel) for every in-bounds tap.
  auto for_each_tap = [h, w, k, pad](auto&& f) {
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t di = 0; di < k; ++di)
          for (std::size_t dj = 0; dj < k; ++dj) {
            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - pad;
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - pad;
            if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) || jj >= static_cast<std::ptrdiff_t>(w)) continue;
            f(i * w + j, di * k + dj, static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj));
          }
  };
  // Patch matrix [h*w x k*k*cin], zero outside the image.
  MatA cols = MatA::Zero(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(patch));
  const T* in = x.data().data();
  for_each_tap([&](std::size_t pix, std::size_t tap, std::size_t src) {
    for (std::size_t c = 0; c < cin; ++c) cols(pix, tap * cin + c) = static_cast<Accum>(in[src * cin + c]);
  });
  std::vector<T> out(h * w * cout);
  store(MatA(cols * widen(kernels.data().data(), patch, cout)), out.data(), cout);
  return make_result<T>({h, w, cout}, std::move(out), {x, kernels}, "conv2d",
                        [=, cols = std::move(cols)](NodeT<T>& node) {
                          const MatA dy = widen(node.grad.data(), h * w, cout);
                          if (auto* gk = parent_grad(node, 1)) accumulate(MatA(cols.transpose() * dy), gk->data(), cout);
                          if (auto* gx = parent_grad(node, 0)) {
                            const MatA dcols = dy * widen(parent_data(node, 1).data(), patch, cout).transpose();
                            std::vector<Accum> acc(h * w * cin, 0.0);
                            for_each_tap([&](std::size_t pix, std::size_t tap, std::size_t src) {
                              for (std::size_t c = 0; c < cin; ++c) acc[src * cin + c] += dcols(pix, tap * cin + c);
                            });
                            for (std::size_t idx = 0; idx < acc.size(); ++idx) (*gx)[idx] += static_cast<T>(acc[idx]);
                          }
                        });
}

template <typename T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, std::size_t upscale) {
  require_rank(x.shape(), 3, "pixel_shuffle");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2), r = upscale, groups = r * r;
  require(r >= 1 && c % groups == 0, ErrorKind::kShapeMismatch,
          "pixel_shuffle: channels " + std::to_string(c) + " not divisible by " + std::to_string(groups));
  const std::size_t oc = c / groups, ow = w * r;
  // Output position of every input element; the op is a pure permutation.
  std::vector<std::uint32_t> dest(x.numel());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t ch = 0; ch < oc; ++ch) {
          const std::size_t oi = r * i + g / r, oj = r * j + g % r;
          dest[(i * w + j) * c + g * oc + ch] = static_cast<std::uint32_t>((oi * ow + oj) * oc + ch);
        }
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t s = 0; s < dest.size(); ++s) out[dest[s]] = in[s];
  return make_result<T>({h * r, w * r, oc}, std::move(out), {x}, "pixel_shuffle",
                        [dest = std::move(dest)](NodeT<T>& node) {
                          if (auto* g = parent_grad(node, 0))
                            for (std::size_t s = 0; s < dest.size(); ++s) (*g)[s] += node.grad[dest[s]];
                        });
}

template <typename T>
BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& x, std::size_t downscale) {
  require_rank(x.shape(), 3, "pixel_unshuffle");
  const std::size_t r = downscale, groups = r * r;
  require(r >= 1 && x.dim(0) % r == 0 && x.dim(1) % r == 0, ErrorKind::kShapeMismatch,
          "pixel_unshuffle: spatial extents not divisible by " + std::to_string(r));
  const std::size_t h = x.dim(0) / r, w = x.dim(1) / r, oc = x.dim(2), c = oc * groups, ow = w * r;
  std::vector<std::uint32_t> src(x.numel());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t ch = 0; ch < oc; ++ch) {
          const std::size_t oi = r * i + g / r, oj = r * j + g % r;
          src[(i * w + j) * c + g * oc + ch] = static_cast<std::uint32_t>((oi * ow + oj) * oc + ch);
        }
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t s = 0; s < src.size(); ++s) out[s] = in[src[s]];
  return make_result<T>({h, w, c}, std::move(out), {x}, "pixel_unshuffle", [src = std::move(src)](NodeT<T>& node) {
    if (auto* g = parent_grad(node, 0))
      for (std::size_t s = 0; s < src.size(); ++s) (*g)[src[s]] += node.grad[s];
  });
}

template <typename T>
BasicTensor<T> scaled_dot_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                    std::size_t heads) {
  require_rank(q.shape(), 2, "attention q");
  require_rank(k.shape(), 2, "attention k");
  require_rank(v.shape(), 2, "attention v");
  const std::size_t nq = q.dim(0), nk = k.dim(0), c = q.dim(1);
  require(k.dim(1) == c && v.dim(1) == c && v.dim(0) == nk, ErrorKind::kShapeMismatch,
          "attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  require(heads >= 1 && c % heads == 0, ErrorKind::kInvalidArgument,
          "attention: " + std::to_string(c) + " channels not divisible by " + std::to_string(heads) + " heads");
  const std::size_t d = c / heads;
  const Accum inv_sqrt_d = 1.0 / std::sqrt(static_cast<Accum>(d));

  // probs[h][i][j], kept for the backward pass.
  std::vector<T> probs(heads * nq * nk);
  std::vector<T> out(nq * c);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * d;
    MatA p = widen(q.data().data() + off, nq, d, c) * widen(k.data().data() + off, nk, d, c).transpose();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      auto row = p.row(i);
      row *= inv_sqrt_d;
      row = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
    store(p, probs.data() + h * nq * nk, nk);
    store(MatA(p * widen(v.data().data() + off, nk, d, c)), out.data() + off, c);
  }
  return make_result<T>(
      {nq, c}, std::move(out), {q, k, v}, "attention", [=, probs = std::move(probs)](NodeT<T>& node) {
        const T* qv = parent_data(node, 0).data();
        const T* kv = parent_data(node, 1).data();
        const T* vv = parent_data(node, 2).data();
        auto* gq = parent_grad(node, 0);
        auto* gk = parent_grad(node, 1);
        auto* gv = parent_grad(node, 2);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * d;
          const MatA p = widen(probs.data() + h * nq * nk, nq, nk);
          const MatA dy = widen(node.grad.data() + off, nq, d, c);
          if (gv) accumulate(MatA(p.transpose() * dy), gv->data() + off, c);
          if (!gq && !gk) continue;
          const MatA dp = dy * widen(vv + off, nk, d, c).transpose();
          const Eigen::VectorXd dot = (dp.array() * p.array()).rowwise().sum();
          const MatA ds = (p.array() * (dp.colwise() - dot).array() * inv_sqrt_d).matrix();
          if (gq) accumulate(MatA(ds * widen(kv + off, nk, d, c)), gq->data() + off, c);
          if (gk) accumulate(MatA(ds.transpose() * widen(qv + off, nq, d, c)), gk->data() + off, c);
        }
      });
}

#define STK_INSTANTIATE_OPS(T)                                                                              \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                 \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                              \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> mul_lastdim(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> scale_rows(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> softmax_lastdim(const BasicTensor<T>&);                                            \
  template BasicTensor<T> layernorm_lastdim(const BasicTensor<T>&);                                          \
  template BasicTensor<T> elementwise(const BasicTensor<T>&, Activation);                                    \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                        \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                             \
  template BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>&);                                   \
  template BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>&);                                   \
  template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);                       \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);                       \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, const std::vector<std::uint32_t>&);             \
  template BasicTensor<T> group_max(const BasicTensor<T>&, std::size_t);                                     \
  template BasicTensor<T> scatter_max(const BasicTensor<T>&, const std::vector<std::int64_t>&, std::size_t); \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&);                              \
  template BasicTensor<T> pixel_shuffle(const BasicTensor<T>&, std::size_t);                                 \
  template BasicTensor<T> pixel_unshuffle(const BasicTensor<T>&, std::size_t);                               \
  template BasicTensor<T> scaled_dot_attention(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                               const BasicTensor<T>&, std::size_t);

STK_INSTANTIATE_OPS(float)
STK_INSTANTIATE_OPS(double)

}  // namespace stk
