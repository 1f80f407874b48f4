#pragma once

#include <cstdint>

#include "stk/nn/layers.hpp"

namespace stk::training {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation over a fixed parameter list. Moments are kept
/// per parameter in the parameter's precision.
template <typename T>
class Adam {
 public:
  Adam(nn::ParameterList<T> params, const AdamConfig& cfg);

  /// One update from the accumulated gradients, which are then cleared.
  void step();
  std::uint64_t steps() const { return steps_; }

  /// Moments as "adam.m.<name>" and "adam.v.<name>" plus "adam.step".
  nn::ParameterList<T> state() const;
  /// Restores the entries written by state(); ignores other names.
  void load_state(const nn::ParameterList<float>& entries);

 private:
  nn::ParameterList<T> params_;
  std::vector<BasicTensor<T>> m_, v_;
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
};

}  // namespace stk::training
