#pragma once

// Search-region and template assembly shared by training and tracking.

#include <cstdint>
#include <optional>
#include <random>

#include "stk/dataset/dataset.hpp"

namespace stk::dataset {

struct SampleConfig {
  std::size_t search_points = 1024;
  std::size_t template_points = 512;
  double margin = 2.0;     // search region = reference box grown by this much per side
  double jitter_xy = 0.3;  // training-time reference jitter, uniform +-
  double jitter_z = 0.1;
};

/// Exactly `count` points: a random subset when there are enough, otherwise
/// every point once plus draws with replacement. `pc` must be non-empty.
PointCloud resample(const PointCloud& pc, std::size_t count, std::mt19937_64& rng);

/// Points of `cloud` inside `reference` grown by `margin`, resampled to
/// `count`; empty when the region holds no points.
PointCloud crop_search(const PointCloud& cloud, const Box3D& reference, double margin, std::size_t count,
                       std::mt19937_64& rng);

/// In-box points of two frames, each expressed in its own box frame, merged
/// and resampled to `count`; empty when both crops are empty.
PointCloud build_template(const PointCloud& first_cloud, const Box3D& first_box, const PointCloud& prev_cloud,
                          const Box3D& prev_box, std::size_t count, std::mt19937_64& rng);

struct TrainingSample {
  PointCloud search;            // world frame
  PointCloud template_points;   // box frame of the target
  Box3D gt;                     // world frame
  Box3D reference;              // box the search region was cut around
  PointCloud aligned_template;  // template re-posed onto gt, world frame
};

/// Sample for frame `index` (>= 1): search region around the jittered
/// previous gt, template from frames 0 and index - 1. Empty when the region
/// or the template has no points, or the gt center leaves the region.
std::optional<TrainingSample> make_training_sample(const Sequence& seq, std::size_t index, std::mt19937_64& rng,
                                                   const SampleConfig& cfg = {});

}  // namespace stk::dataset
