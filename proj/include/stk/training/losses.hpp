#pragma once

// Heatmap focal loss, smooth-L1 regression and their weighted sum.

#include <vector>

#include "stk/dataset/dataset.hpp"
#include "stk/model/rgs_head.hpp"
#include "stk/model/tapm.hpp"
#include "stk/tensor/tensor.hpp"

namespace stk::training {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside the logs.
constexpr double kProbClamp = 1e-4;

/// Penalty-reduced focal loss: -(1-p)^2 log p where the target is 1 and
/// -(1-g)^4 p^2 log(1-p) elsewhere, summed and divided by the number of
/// positive cells (at least 1).
template <typename T>
BasicTensor<T> focal_loss(const BasicTensor<T>& heat, const std::vector<double>& target);

/// Mean over elements of 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
template <typename T>
BasicTensor<T> smooth_l1(const BasicTensor<T>& pred, const std::vector<double>& target);

struct LossWeights {
  double lambda1 = 1.0;   // heat and offset
  double lambda2 = 2.0;   // z
  double lambda3 = 1e-6;  // chamfer
};

/// Chamfer weight by category: 1e-6 for non-rigid targets, 2e-7 for rigid.
LossWeights weights_for(dataset::Category category);

struct LossComponents {
  double hm = 0, off = 0, z = 0, cd = 0;
};

/// lambda1 (hm + off) + lambda2 z + lambda3 cd.
double combine(const LossComponents& c, const LossWeights& w);

template <typename T>
struct LossTerms {
  BasicTensor<T> total;
  LossComponents parts;
};

/// Weighted loss for one sample. Offset and z are supervised at the target
/// cell only. `prototype_coords` may be null (no chamfer term). Throws,
/// naming the component, if any component is not finite.
template <typename T>
LossTerms<T> total_loss(const model::PredictionMaps<T>& maps, const model::HeadTargets& targets,
                        const BasicTensor<T>* prototype_coords, const BasicTensor<T>& aligned_template,
                        const LossWeights& weights);

}  // namespace stk::training
