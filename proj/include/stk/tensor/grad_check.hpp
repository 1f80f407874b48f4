#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "stk/tensor/tensor.hpp"

namespace stk {

/// Max over elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
/// with numeric derivatives from five-point central differences in 64-bit.
/// Where a relu or max switch falls inside the stencil, the numeric value
/// comes from the one-sided stencil that stays clear of it, at a smaller step
/// when switches sit on both sides. A non-scalar
/// output of `f` is summed.
double grad_check(const std::function<Tensor64(const Tensor64&)>& f, const Tensor64& x, double step = 1e-3);

/// Same measure over a set of leaves that `loss` closes over. When
/// `max_elements` is nonzero, at most that many evenly strided elements of
/// each leaf are probed.
double grad_check_leaves(const std::function<Tensor64()>& loss, std::vector<Tensor64> leaves, double step = 1e-3,
                         std::size_t max_elements = 0);

}  // namespace stk
