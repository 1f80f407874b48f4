#include "stk/model/rgs_head.hpp"

#include <cmath>

#include "stk/core/error.hpp"
#include "stk/tensor/ops.hpp"

namespace stk::model {

std::vector<std::int64_t> bev_cells(const geometry::PointCloud& coords, const BevConfig& bev) {
  const auto rows = static_cast<std::int64_t>(bev.rows());
  const auto cols = static_cast<std::int64_t>(bev.cols());
  std::vector<std::int64_t> cells(coords.size(), -1);
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const double i = std::floor((static_cast<double>(coords[n].x()) - bev.x_min) / bev.voxel);
    const double j = std::floor((static_cast<double>(coords[n].y()) - bev.y_min) / bev.voxel);
    if (i >= 0 && j >= 0 && i < static_cast<double>(rows) && j < static_cast<double>(cols)) {
      cells[n] = static_cast<std::int64_t>(i) * cols + static_cast<std::int64_t>(j);
    }
  }
  return cells;
}

template <typename T>
BasicTensor<T> voxelize_bev(const geometry::PointCloud& coords, const BasicTensor<T>& features, const BevConfig& bev) {
  require(features.rank() == 2 && features.dim(0) == coords.size(), ErrorKind::kShapeMismatch,
          "voxelize_bev: " + std::to_string(coords.size()) + " points vs features " + shape_str(features.shape()));
  const std::size_t rows = bev.rows(), cols = bev.cols();
  const auto pooled = scatter_max(features, bev_cells(coords, bev), rows * cols);
  return reshape(pooled, {rows, cols, features.dim(1)});
}

template <typename T>
VitLayer<T>::VitLayer(std::size_t rows, std::size_t cols, std::size_t channels, std::size_t out_channels,
                      std::size_t depth, std::size_t heads, Initializer& init)
    : position(init.uniform<T>({rows * cols, channels}, rows * cols, channels)) {
  for (std::size_t b = 0; b < depth; ++b) blocks.emplace_back(channels, heads, init, nn::AttentionKind::kSelf);
  proj = nn::Linear<T>(channels, out_channels, init);
}

template <typename T>
BasicTensor<T> VitLayer<T>::operator()(const BasicTensor<T>& grid) const {
  require(grid.rank() == 3 && grid.dim(0) * grid.dim(1) == position.dim(0) && grid.dim(2) == position.dim(1),
          ErrorKind::kShapeMismatch,
          "vit_layer: grid " + shape_str(grid.shape()) + " vs position table " + shape_str(position.shape()));
  auto tokens = add(reshape(grid, {position.dim(0), position.dim(1)}), position);
  for (const auto& block : blocks) tokens = block(tokens);
  return reshape(proj(tokens), {grid.dim(0), grid.dim(1), proj.weight.dim(1)});
}

template <typename T>
void VitLayer<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  out.push_back({prefix + ".position", position});
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(prefix + ".block" + std::to_string(b), out);
  proj.collect(prefix + ".proj", out);
}

template <typename T>
BasicTensor<T> upsample(const BasicTensor<T>& x, std::size_t out_channels) {
  require(x.rank() == 3 && x.dim(2) == 4 * out_channels, ErrorKind::kShapeMismatch,
          "upsample: expected " + std::to_string(4 * out_channels) + " channels, got " + shape_str(x.shape()));
  return pixel_shuffle(x, 2);
}

template <typename T>
MapPredictor<T>::MapPredictor(std::size_t channels, Initializer& init)
    : conv1(init.uniform<T>({3, 3, channels, channels}, 9 * channels, 9 * channels)),
      bias1(init.uniform_bounded<T>({channels}, 1.0 / std::sqrt(9.0 * static_cast<double>(channels)))),
      conv2(init.uniform<T>({3, 3, channels, channels}, 9 * channels, 9 * channels)),
      bias2(init.uniform_bounded<T>({channels}, 1.0 / std::sqrt(9.0 * static_cast<double>(channels)))),
      heat(channels, 1, init),
      offset(channels, 3, init),
      z(channels, 1, init) {
  heat.bias.mutable_data()[0] = static_cast<T>(kHeatPrior);
}

template <typename T>
PredictionMaps<T> MapPredictor<T>::operator()(const BasicTensor<T>& grid) const {
  require(grid.rank() == 3 && grid.dim(2) == conv1.dim(2), ErrorKind::kShapeMismatch,
          "predict_maps: grid " + shape_str(grid.shape()) + " vs " + std::to_string(conv1.dim(2)) + " channels");
  const std::size_t rows = grid.dim(0), cols = grid.dim(1), c = grid.dim(2);
  auto trunk = relu(add_bias(conv2d(grid, conv1), bias1));
  trunk = relu(add_bias(conv2d(trunk, conv2), bias2));
  const auto flat = reshape(trunk, {rows * cols, c});
  return {reshape(sigmoid(heat(flat)), {rows, cols, 1}), reshape(offset(flat), {rows, cols, 3}),
          reshape(z(flat), {rows, cols, 1})};
}

template <typename T>
void MapPredictor<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  out.push_back({prefix + ".conv1", conv1});
  out.push_back({prefix + ".bias1", bias1});
  out.push_back({prefix + ".conv2", conv2});
  out.push_back({prefix + ".bias2", bias2});
  heat.collect(prefix + ".heat", out);
  offset.collect(prefix + ".offset", out);
  z.collect(prefix + ".z", out);
}

template <typename T>
RgsHead<T>::RgsHead(const ModelConfig& cfg, Initializer& init)
    : bev_(cfg.bev), shuffle_(cfg.use_shuffle), head_channels_(cfg.head_channels) {
  const std::size_t lifted = cfg.use_shuffle ? cfg.vit_channels : cfg.head_channels;
  if (cfg.use_vit) {
    vit.emplace(cfg.bev.rows(), cfg.bev.cols(), cfg.feature_dim, lifted, cfg.vit_blocks, cfg.heads, init);
  } else {
    lift.emplace(cfg.feature_dim, lifted, init);
  }
  predictor = MapPredictor<T>(cfg.head_channels, init);
}

template <typename T>
PredictionMaps<T> RgsHead<T>::operator()(const geometry::PointCloud& coords, const BasicTensor<T>& features) const {
  const auto grid = voxelize_bev(coords, features, bev_);
  BasicTensor<T> lifted;
  if (vit) {
    lifted = (*vit)(grid);
  } else {
    const std::size_t rows = grid.dim(0), cols = grid.dim(1);
    lifted = reshape((*lift)(reshape(grid, {rows * cols, grid.dim(2)})), {rows, cols, lift->weight.dim(1)});
  }
  return predictor(shuffle_ ? upsample(lifted, head_channels_) : lifted);
}

template <typename T>
void RgsHead<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  if (vit) vit->collect(prefix + ".vit", out);
  if (lift) lift->collect(prefix + ".lift", out);
  predictor.collect(prefix + ".predict", out);
}

HeadTargets build_targets(const geometry::Box3D& box, const OutputGrid& grid) {
  const double cx = (box.center.x() - grid.x_min) / grid.cell;
  const double cy = (box.center.y() - grid.y_min) / grid.cell;
  const double fi = std::floor(cx), fj = std::floor(cy);
  require(fi >= 0 && fj >= 0 && fi < static_cast<double>(grid.rows) && fj < static_cast<double>(grid.cols),
          ErrorKind::kOutOfRange, "target center lies outside the search region");
  HeadTargets t;
  t.row = static_cast<std::size_t>(fi);
  t.col = static_cast<std::size_t>(fj);
  t.heat.resize(grid.rows * grid.cols);
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      const double d = std::hypot(static_cast<double>(i) - fi, static_cast<double>(j) - fj);
      t.heat[i * grid.cols + j] = 1.0 / (1.0 + d);
    }
  }
  t.offset[0] = fi - cx;
  t.offset[1] = fj - cy;
  t.offset[2] = box.heading;
  t.z = box.center.z();
  return t;
}

template <typename T>
geometry::Box3D decode_box(const PredictionMaps<T>& maps, const OutputGrid& grid, const geometry::Vec3& size) {
  require(maps.heat.numel() == grid.rows * grid.cols && maps.offset.numel() == 3 * grid.rows * grid.cols &&
              maps.z.numel() == grid.rows * grid.cols,
          ErrorKind::kShapeMismatch, "decode_box: maps do not match the output grid");
  const auto heat = maps.heat.data();
  std::size_t best = 0;
  for (std::size_t k = 1; k < heat.size(); ++k) {
    if (heat[k] > heat[best]) best = k;
  }
  const auto off = maps.offset.data().subspan(3 * best, 3);
  const double ci = static_cast<double>(best / grid.cols) - static_cast<double>(off[0]);
  const double cj = static_cast<double>(best % grid.cols) - static_cast<double>(off[1]);
  const geometry::Vec3 center(grid.x_min + grid.cell * ci, grid.y_min + grid.cell * cj,
                              static_cast<double>(maps.z.data()[best]));
  return geometry::make_box(center, size, static_cast<double>(off[2]));
}

template BasicTensor<float> voxelize_bev(const geometry::PointCloud&, const BasicTensor<float>&, const BevConfig&);
template BasicTensor<double> voxelize_bev(const geometry::PointCloud&, const BasicTensor<double>&, const BevConfig&);
template BasicTensor<float> upsample(const BasicTensor<float>&, std::size_t);
template BasicTensor<double> upsample(const BasicTensor<double>&, std::size_t);
template geometry::Box3D decode_box(const PredictionMaps<float>&, const OutputGrid&, const geometry::Vec3&);
template geometry::Box3D decode_box(const PredictionMaps<double>&, const OutputGrid&, const geometry::Vec3&);
template class VitLayer<float>;
template class VitLayer<double>;
template class MapPredictor<float>;
template class MapPredictor<double>;
template class RgsHead<float>;
template class RgsHead<double>;

}  // namespace stk::model
