#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "stk/tensor/tensor.hpp"

namespace stk {

/// Seeded parameter source. Values are drawn in double and then narrowed,
/// so float and double models built from the same seed agree.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)).
  template <typename T>
  BasicTensor<T> uniform(Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform_bounded<T>(std::move(shape), bound);
  }

  template <typename T>
  BasicTensor<T> uniform_bounded(Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> data(numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng_));
    return BasicTensor<T>(std::move(shape), std::move(data), true);
  }

  template <typename T>
  BasicTensor<T> constant(Shape shape, double value) {
    return BasicTensor<T>::full(std::move(shape), static_cast<T>(value), true);
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace stk
