#pragma once

// Bird's-eye-view detection head: voxel max-pooling, a per-pixel transformer,
// pixel-shuffle super-resolution, a convolutional trunk and three map heads.

#include <cstdint>
#include <optional>
#include <vector>

#include "stk/geometry/geometry.hpp"
#include "stk/model/config.hpp"
#include "stk/nn/layers.hpp"

namespace stk::model {

/// Cell id (i * W + j) of each point, -1 outside the x/y extent of the grid.
std::vector<std::int64_t> bev_cells(const geometry::PointCloud& coords, const BevConfig& bev);

/// [H x W x C]: per-cell channel-wise max of the feature rows; empty cells 0.
template <typename T>
BasicTensor<T> voxelize_bev(const geometry::PointCloud& coords, const BasicTensor<T>& features, const BevConfig& bev);

/// One token per pixel plus a learned position embedding, transformer
/// blocks, then a linear map to the output channel count.
template <typename T>
class VitLayer {
 public:
  VitLayer() = default;
  VitLayer(std::size_t rows, std::size_t cols, std::size_t channels, std::size_t out_channels, std::size_t blocks,
           std::size_t heads, Initializer& init);

  BasicTensor<T> operator()(const BasicTensor<T>& grid) const;
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;

  BasicTensor<T> position;  // [H*W x C]
  std::vector<nn::AttentionBlock<T>> blocks;
  nn::Linear<T> proj;
};

/// [H x W x 4C] -> [2H x 2W x C] by pixel shuffle.
template <typename T>
BasicTensor<T> upsample(const BasicTensor<T>& x, std::size_t out_channels);

template <typename T>
struct PredictionMaps {
  BasicTensor<T> heat;    // [R x C x 1], in (0, 1)
  BasicTensor<T> offset;  // [R x C x 3]: (di, dj, heading)
  BasicTensor<T> z;       // [R x C x 1]
};

/// Two 3x3 conv layers with relu, then 1x1 heads for heat, offset and z.
template <typename T>
class MapPredictor {
 public:
  /// Heat logits start at this bias so the initial heat is about 0.1.
  static constexpr double kHeatPrior = -2.19;

  MapPredictor() = default;
  MapPredictor(std::size_t channels, Initializer& init);

  PredictionMaps<T> operator()(const BasicTensor<T>& grid) const;
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;

  BasicTensor<T> conv1, bias1, conv2, bias2;
  nn::Linear<T> heat, offset, z;
};

template <typename T>
class RgsHead {
 public:
  RgsHead() = default;
  RgsHead(const ModelConfig& cfg, Initializer& init);

  /// Maps on the output grid from an (enhanced) cloud in the region frame.
  PredictionMaps<T> operator()(const geometry::PointCloud& coords, const BasicTensor<T>& features) const;
  void collect(const std::string& prefix, nn::ParameterList<T>& out) const;

  std::optional<VitLayer<T>> vit;
  /// Channel lift used in place of the transformer.
  std::optional<nn::Linear<T>> lift;
  MapPredictor<T> predictor;

 private:
  BevConfig bev_;
  bool shuffle_ = true;
  std::size_t head_channels_ = 32;
};

/// Supervision for one box on the output grid.
struct HeadTargets {
  std::vector<double> heat;  // rows * cols, row-major
  std::size_t row = 0, col = 0;
  double offset[3] = {0, 0, 0};
  double z = 0;
};

/// `box` is in the region frame; its center must fall on the grid.
HeadTargets build_targets(const geometry::Box3D& box, const OutputGrid& grid);

/// Box at the heat argmax (first maximum in row-major order), in the region
/// frame, with the given size.
template <typename T>
geometry::Box3D decode_box(const PredictionMaps<T>& maps, const OutputGrid& grid, const geometry::Vec3& size);

}  // namespace stk::model
