#pragma once

// Target-awareness prototype mining: a learned mask gates the detached fusion
// features, a bank of learnable tokens attends to them, and the attended
// tokens are decoded into completion points near the target.

#include <optional>
#include <vector>

#include "stk/geometry/geometry.hpp"
#include "stk/model/config.hpp"
#include "stk/nn/layers.hpp"

namespace stk::model {

template <typename T>
struct MaskedFeatures {
  BasicTensor<T> mask;      // [N x 1], in (0, 1)
  BasicTensor<T> enhanced;  // [N x C], rows of the input scaled by the mask
};

template <typename T>
struct PrototypeFeatures {
  BasicTensor<T> teacher;     // [N x C], dropped by callers
  BasicTensor<T> prototypes;  // [N_I x C]
};

template <typename T>
struct TapmOutput {
  BasicTensor<T> mask;
  BasicTensor<T> prototypes;  // [N_I x C]
  BasicTensor<T> coords;      // [N_I x 3], differentiable
};

template <typename T>
struct EnhancedCloud {
  geometry::PointCloud coords;
  BasicTensor<T> features;
};

template <typename T>
class Tapm {
 public:
  Tapm() = default;
  Tapm(const ModelConfig& cfg, Initializer& init);

  MaskedFeatures<T> mask_and_enhance(const BasicTensor<T>& fused) const;
  PrototypeFeatures<T> iterate_prototypes(const BasicTensor<T>& enhanced) const;
  BasicTensor<T> predict_prototype_coords(const BasicTensor<T>& prototypes) const;

  /// Full branch. The fusion features are detached here, so no loss that
  /// flows through this branch reaches the backbone.
  TapmOutput<T> operator()(const BasicTensor<T>& fused) const;

  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;

  nn::Linear<T> mask_proj;   // C -> 1
  BasicTensor<T> substrate;  // [N_I x C]
  std::vector<nn::AttentionBlock<T>> blocks;
  nn::Linear<T> coord_hidden, coord_out;

 private:
  BasicTensor<T> center_, half_;  // squashing box, [3] each
};

/// Rows of the search cloud first, then the prototypes. Search features are
/// the undetached fusion features. Without prototypes the search cloud
/// passes through unchanged.
template <typename T>
EnhancedCloud<T> assemble_enhanced(const geometry::PointCloud& search_coords, const BasicTensor<T>& search_features,
                                   const BasicTensor<T>* prototype_coords, const BasicTensor<T>* prototype_features);

}  // namespace stk::model
