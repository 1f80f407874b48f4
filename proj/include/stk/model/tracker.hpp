#pragma once

// The full tracker: shared encoder and fusion, optional prototype mining,
// and the bird's-eye-view head, all in the reference-box frame.

#include <cstdint>
#include <filesystem>
#include <optional>

#include "stk/model/backbone.hpp"
#include "stk/model/config.hpp"
#include "stk/model/rgs_head.hpp"
#include "stk/model/tapm.hpp"

namespace stk::model {

template <typename T>
struct TrackerOutput {
  PredictionMaps<T> maps;
  std::optional<TapmOutput<T>> tapm;
};

template <typename T>
class TrackerNet {
 public:
  explicit TrackerNet(const ModelConfig& cfg, std::uint64_t seed = 0);

  /// `search` is in the reference-box frame and `template_points` in the
  /// template box frame.
  TrackerOutput<T> forward(const geometry::PointCloud& search, const geometry::PointCloud& template_points) const;

  /// World-frame box for a search cloud already expressed relative to
  /// `reference`; runs without gradient tracking.
  geometry::Box3D predict(const geometry::PointCloud& search, const geometry::PointCloud& template_points,
                          const geometry::Box3D& reference, const geometry::Vec3& size) const;

  nn::ParameterList<T> parameters() const;
  const ModelConfig& config() const { return cfg_; }

  Backbone<T> backbone;
  std::optional<Tapm<T>> tapm;
  RgsHead<T> head;

 private:
  ModelConfig cfg_;
};

/// Saves the parameters (as f32) with the model config as the sidecar.
template <typename T>
void save_model(const std::filesystem::path& path, const TrackerNet<T>& net);
/// Rebuilds the model from the sidecar config and loads its parameters.
template <typename T>
TrackerNet<T> load_model(const std::filesystem::path& path);

}  // namespace stk::model
