#pragma once

// Shared point encoder and template-to-search relation fusion.

#include <vector>

#include "stk/geometry/geometry.hpp"
#include "stk/model/config.hpp"
#include "stk/nn/layers.hpp"

namespace stk::model {

using geometry::PointCloud;

template <typename T>
struct Encoded {
  BasicTensor<T> features;  // [N x C]
  PointCloud coords;        // N points the feature rows ride on
};

/// Per-point MLP, then per stage: farthest point sampling, k-nearest
/// grouping of [feature, offset to center] rows, MLP and channel-wise max.
/// One parameter set serves every input; only the stage counts differ.
template <typename T>
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(const ModelConfig& cfg, Initializer& init);

  /// Per-point features before any sampling: [N x C].
  BasicTensor<T> embed(const PointCloud& pc) const;
  Encoded<T> operator()(const PointCloud& pc, const std::vector<std::size_t>& stages) const;
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;

 private:
  struct Stage {
    nn::Linear<T> group, mix;
  };
  nn::Linear<T> embed_in_, embed_out_;
  std::vector<Stage> stages_;
  std::size_t neighbors_ = 16;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const ModelConfig& cfg, Initializer& init);

  Encoded<T> encode_search(const PointCloud& pc) const { return encoder(pc, search_stages_); }
  Encoded<T> encode_template(const PointCloud& pc) const { return encoder(pc, template_stages_); }

  /// Cross-attention of search features (queries) over template features.
  BasicTensor<T> relation_fuse(const BasicTensor<T>& template_features, const BasicTensor<T>& search_features) const;

  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;

  PointEncoder<T> encoder;
  nn::AttentionBlock<T> fusion;

 private:
  std::vector<std::size_t> search_stages_, template_stages_;
};

}  // namespace stk::model
