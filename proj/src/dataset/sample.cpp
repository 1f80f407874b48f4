#include "stk/dataset/sample.hpp"

#include <numeric>

#include "stk/core/error.hpp"

namespace stk::dataset {

using geometry::Vec3;

PointCloud resample(const PointCloud& pc, std::size_t count, std::mt19937_64& rng) {
  require(!pc.empty(), ErrorKind::kEmptyInput, "resample: empty cloud");
  std::vector<std::size_t> order(pc.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  PointCloud out;
  out.reserve(count);
  if (pc.size() >= count) {
    // Partial Fisher-Yates: the first `count` slots become a uniform subset.
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
      out.push_back(pc[order[i]]);
    }
    return out;
  }
  out = pc;
  std::uniform_int_distribution<std::size_t> pick(0, pc.size() - 1);
  while (out.size() < count) out.push_back(pc[pick(rng)]);
  return out;
}

PointCloud crop_search(const PointCloud& cloud, const Box3D& reference, double margin, std::size_t count,
                       std::mt19937_64& rng) {
  const PointCloud region = geometry::enlarge_and_crop(cloud, reference, margin);
  if (region.empty()) return {};
  return resample(region, count, rng);
}

PointCloud build_template(const PointCloud& first_cloud, const Box3D& first_box, const PointCloud& prev_cloud,
                          const Box3D& prev_box, std::size_t count, std::mt19937_64& rng) {
  PointCloud merged =
      geometry::cloud_in_frame(geometry::select(first_cloud, geometry::points_in_box(first_cloud, first_box)), first_box);
  const PointCloud prev =
      geometry::cloud_in_frame(geometry::select(prev_cloud, geometry::points_in_box(prev_cloud, prev_box)), prev_box);
  merged.insert(merged.end(), prev.begin(), prev.end());
  if (merged.empty()) return {};
  return resample(merged, count, rng);
}

std::optional<TrainingSample> make_training_sample(const Sequence& seq, std::size_t index, std::mt19937_64& rng,
                                                   const SampleConfig& cfg) {
  require(index >= 1 && index < seq.frames.size(), ErrorKind::kOutOfRange,
          "training sample index " + std::to_string(index) + " outside 1.." + std::to_string(seq.frames.size() - 1));
  const Frame& current = seq.frames[index];
  const Frame& previous = seq.frames[index - 1];

  std::uniform_real_distribution<double> jxy(-cfg.jitter_xy, cfg.jitter_xy), jz(-cfg.jitter_z, cfg.jitter_z);
  Box3D reference = previous.gt;
  reference.center += Vec3(jxy(rng), jxy(rng), jz(rng));

  TrainingSample sample;
  sample.gt = current.gt;
  sample.reference = reference;
  const Box3D region = geometry::enlarge(reference, cfg.margin);
  if (geometry::points_in_box({current.gt.center.cast<float>()}, region).empty()) return std::nullopt;
  sample.search = crop_search(current.cloud, reference, cfg.margin, cfg.search_points, rng);
  if (sample.search.empty()) return std::nullopt;
  sample.template_points = build_template(seq.frames.front().cloud, seq.frames.front().gt, previous.cloud,
                                          previous.gt, cfg.template_points, rng);
  if (sample.template_points.empty()) return std::nullopt;
  sample.aligned_template.reserve(sample.template_points.size());
  for (const auto& p : sample.template_points) {
    sample.aligned_template.push_back(geometry::from_box_frame(p.cast<double>(), current.gt).cast<float>());
  }
  return sample;
}

}  // namespace stk::dataset
