#include "stk/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stk/tensor/ops.hpp"

namespace stk {

namespace {

Tensor64 as_scalar(const Tensor64& y) { return y.numel() == 1 ? y : sum(y); }

struct Estimate {
  double value;
  double weight;  // sum of |stencil coefficients| / step
  // At a switch the one-sided derivatives differ and any value between them
  // is a valid derivative; `upper` closes that interval.
  double upper = value;
};

// A numeric estimate only resolves the derivative down to its own rounding
// noise; that part of the difference is not counted as error.
double relative_error(double analytic, const Estimate& numeric, double noise) {
  const double nearest = std::clamp(analytic, numeric.value, numeric.upper);
  const double diff = std::max(0.0, std::abs(analytic - nearest) - noise);
  return diff / std::max(1e-8, std::abs(analytic) + std::abs(nearest));
}

// Five-point central stencil: O(h^4) truncation.
template <typename F>
Estimate central(F& at, double h) {
  return {(8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h), 18.0 / (12.0 * h)};
}

// Five-point one-sided stencil towards `dir` (+1 or -1), O(h^4) truncation.
template <typename F>
Estimate one_sided(F& at, double h, double dir) {
  const double d = dir * h;
  return {dir * (-25.0 * at(0.0) + 48.0 * at(d) - 36.0 * at(2.0 * d) + 16.0 * at(3.0 * d) - 3.0 * at(4.0 * d)) /
              (12.0 * h),
          128.0 / (12.0 * h)};
}

// Rounding budget per loss evaluation, in units of machine epsilon times |loss|.
constexpr double kLossUlps = 16.0;

// Rounding noise of an estimate whose loss values reach `magnitude`.
double noise_of(const Estimate& e, double magnitude) {
  return kLossUlps * std::numeric_limits<double>::epsilon() * magnitude * e.weight;
}

bool consistent(const Estimate& coarse, const Estimate& fine, double magnitude) {
  return std::abs(coarse.value - fine.value) <=
         1e-9 + 1e-6 * std::abs(fine.value) + noise_of(coarse, magnitude) + noise_of(fine, magnitude);
}

// Central estimate when the function is smooth over the stencil. A relu or
// max-pool switch inside the stencil makes the step-h and step-h/2 central
// estimates disagree; the derivative then comes from whichever one-sided
// stencil is self-consistent, i.e. does not cross the switch. When both are
// and they disagree, the point sits on the switch and the estimate is the
// interval between them. Switches on both sides shrink the step tenfold,
// down to a thousandth of the start.
template <typename F>
Estimate estimate_derivative(F& at, double h, const double& magnitude) {
  Estimate best{0.0, 0.0};
  double best_residual = std::numeric_limits<double>::infinity();
  auto consider = [&](const Estimate& a, const Estimate& b) {
    if (consistent(a, b, magnitude)) return true;
    const double residual = std::abs(a.value - b.value);
    if (residual < best_residual) best = a, best_residual = residual;
    return false;
  };
  for (double step = h; step >= h * 1e-3; step /= 10.0) {
    const Estimate coarse = central(at, step);
    if (consider(coarse, central(at, step / 2.0))) return coarse;
    const Estimate right = one_sided(at, step / 2.0, 1.0);
    const Estimate left = one_sided(at, step / 2.0, -1.0);
    const bool right_ok = consider(right, one_sided(at, step / 4.0, 1.0));
    const bool left_ok = consider(left, one_sided(at, step / 4.0, -1.0));
    if (right_ok && left_ok && !consistent(left, right, magnitude)) {
      return {std::min(left.value, right.value), right.weight, std::max(left.value, right.value)};
    }
    if (right_ok) return right;
    if (left_ok) return left;
  }
  return best;
}

}  // namespace

double grad_check(const std::function<Tensor64(const Tensor64&)>& f, const Tensor64& x, double step) {
  Tensor64 input = x.detach();
  input.set_requires_grad(true);
  return grad_check_leaves([&] { return f(input); }, {input}, step);
}

double grad_check_leaves(const std::function<Tensor64()>& loss, std::vector<Tensor64> leaves, double step,
                         std::size_t max_elements) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  as_scalar(loss()).backward();

  double worst = 0.0;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    const std::size_t n = leaf.numel();
    const std::size_t stride = (max_elements == 0 || n <= max_elements) ? 1 : (n + max_elements - 1) / max_elements;
    auto values = leaf.mutable_data();
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      double magnitude = 0.0;
      auto at = [&](double offset) {
        values[i] = saved + offset;
        const double f = as_scalar(loss()).item();
        magnitude = std::max(magnitude, std::abs(f));
        return f;
      };
      const Estimate numeric = estimate_derivative(at, step, magnitude);
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic.empty() ? 0.0 : analytic[i], numeric,
                                             noise_of(numeric, magnitude)));
    }
  }
  return worst;
}

}  // namespace stk
