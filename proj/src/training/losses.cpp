#include "stk/training/losses.hpp"

#include <algorithm>
#include <cmath>

#include "stk/core/error.hpp"
#include "stk/geometry/geometry.hpp"
#include "stk/tensor/ops.hpp"

namespace stk::training {

namespace {

template <typename T>
std::vector<T>* input_grad(detail::Node<T>& node) {
  auto& parent = *node.parents[0];
  if (!parent.requires_grad) return nullptr;
  parent.ensure_grad();
  return &parent.grad;
}

void require_finite(double value, const char* component) {
  require(std::isfinite(value), ErrorKind::kNonFinite, std::string("loss component '") + component + "' is not finite");
}

}  // namespace

template <typename T>
BasicTensor<T> focal_loss(const BasicTensor<T>& heat, const std::vector<double>& target) {
  require(heat.numel() == target.size(), ErrorKind::kShapeMismatch,
          "focal_loss: heat " + shape_str(heat.shape()) + " vs " + std::to_string(target.size()) + " targets");
  const auto p_all = heat.data();
  std::size_t positives = 0;
  for (double g : target) positives += g == 1.0;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(positives, 1));
  std::vector<double> slope(target.size());
  Accum total = 0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double raw = static_cast<double>(p_all[k]);
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const bool clamped = p != raw;
    if (target[k] == 1.0) {
      total += -(1 - p) * (1 - p) * std::log(p);
      slope[k] = clamped ? 0.0 : 2 * (1 - p) * std::log(p) - (1 - p) * (1 - p) / p;
    } else {
      const double w = std::pow(1 - target[k], 4);
      total += -w * p * p * std::log(1 - p);
      slope[k] = clamped ? 0.0 : -w * (2 * p * std::log(1 - p) - p * p / (1 - p));
    }
  }
  std::vector<T> out{static_cast<T>(total * norm)};
  return make_result<T>({1}, std::move(out), {heat}, "focal_loss",
                        [slope = std::move(slope), norm](detail::Node<T>& node) {
                          auto* g = input_grad(node);
                          if (!g) return;
                          const double upstream = static_cast<double>(node.grad[0]) * norm;
                          for (std::size_t k = 0; k < slope.size(); ++k) (*g)[k] += static_cast<T>(upstream * slope[k]);
                        });
}

template <typename T>
BasicTensor<T> smooth_l1(const BasicTensor<T>& pred, const std::vector<double>& target) {
  require(pred.numel() == target.size() && !target.empty(), ErrorKind::kShapeMismatch,
          "smooth_l1: prediction " + shape_str(pred.shape()) + " vs " + std::to_string(target.size()) + " targets");
  const auto x = pred.data();
  const double norm = 1.0 / static_cast<double>(target.size());
  std::vector<double> slope(target.size());
  Accum total = 0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double d = static_cast<double>(x[k]) - target[k];
    if (std::abs(d) < 1.0) {
      total += 0.5 * d * d;
      slope[k] = d;
    } else {
      total += std::abs(d) - 0.5;
      slope[k] = d > 0 ? 1.0 : -1.0;
    }
  }
  std::vector<T> out{static_cast<T>(total * norm)};
  return make_result<T>({1}, std::move(out), {pred}, "smooth_l1",
                        [slope = std::move(slope), norm](detail::Node<T>& node) {
                          auto* g = input_grad(node);
                          if (!g) return;
                          const double upstream = static_cast<double>(node.grad[0]) * norm;
                          for (std::size_t k = 0; k < slope.size(); ++k) (*g)[k] += static_cast<T>(upstream * slope[k]);
                        });
}

LossWeights weights_for(dataset::Category category) {
  LossWeights w;
  w.lambda3 = category == dataset::Category::kRigid ? 2e-7 : 1e-6;
  return w;
}

double combine(const LossComponents& c, const LossWeights& w) {
  return w.lambda1 * (c.hm + c.off) + w.lambda2 * c.z + w.lambda3 * c.cd;
}

template <typename T>
LossTerms<T> total_loss(const model::PredictionMaps<T>& maps, const model::HeadTargets& targets,
                        const BasicTensor<T>* prototype_coords, const BasicTensor<T>& aligned_template,
                        const LossWeights& weights) {
  require(weights.lambda1 >= 0 && weights.lambda2 >= 0 && weights.lambda3 >= 0, ErrorKind::kInvalidArgument,
          "loss weights must be nonnegative");
  const std::size_t cells = maps.heat.numel();
  const std::uint32_t cell = static_cast<std::uint32_t>(targets.row * maps.heat.dim(1) + targets.col);
  require(cell < cells, ErrorKind::kOutOfRange, "target cell outside the prediction maps");

  const auto hm = focal_loss(maps.heat, targets.heat);
  const auto off = smooth_l1(gather_rows(reshape(maps.offset, {cells, 3}), {cell}),
                             {targets.offset[0], targets.offset[1], targets.offset[2]});
  const auto z = smooth_l1(gather_rows(reshape(maps.z, {cells, 1}), {cell}), {targets.z});

  LossTerms<T> out;
  out.parts.hm = static_cast<double>(hm.item());
  out.parts.off = static_cast<double>(off.item());
  out.parts.z = static_cast<double>(z.item());
  require_finite(out.parts.hm, "hm");
  require_finite(out.parts.off, "off");
  require_finite(out.parts.z, "z");
  out.total = add(scale(add(hm, off), weights.lambda1), scale(z, weights.lambda2));
  if (prototype_coords != nullptr) {
    const auto cd = geometry::chamfer_distance(*prototype_coords, aligned_template);
    out.parts.cd = static_cast<double>(cd.item());
    require_finite(out.parts.cd, "cd");
    out.total = add(out.total, scale(reshape(cd, {1}), weights.lambda3));
  }
  require_finite(static_cast<double>(out.total.item()), "total");
  return out;
}

template BasicTensor<float> focal_loss(const BasicTensor<float>&, const std::vector<double>&);
template BasicTensor<double> focal_loss(const BasicTensor<double>&, const std::vector<double>&);
template BasicTensor<float> smooth_l1(const BasicTensor<float>&, const std::vector<double>&);
template BasicTensor<double> smooth_l1(const BasicTensor<double>&, const std::vector<double>&);
template LossTerms<float> total_loss(const model::PredictionMaps<float>&, const model::HeadTargets&,
                                     const BasicTensor<float>*, const BasicTensor<float>&, const LossWeights&);
template LossTerms<double> total_loss(const model::PredictionMaps<double>&, const model::HeadTargets&,
                                      const BasicTensor<double>*, const BasicTensor<double>&, const LossWeights&);

}  // namespace stk::training
