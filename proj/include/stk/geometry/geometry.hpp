#pragma once

// Box and point-cloud geometry. Boxes rotate about +z; `size` is
// (width, length, height) with width measured along the heading direction.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "stk/tensor/tensor.hpp"

namespace stk::geometry {

using Point = Eigen::Vector3f;
using PointCloud = std::vector<Point>;
using Vec3 = Eigen::Vector3d;
using IndexList = std::vector<std::uint32_t>;

struct Box3D {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double heading = 0.0;

  bool operator==(const Box3D& other) const {
    return center == other.center && size == other.size && heading == other.heading;
  }
};

/// Maps an angle into (-pi, pi].
double normalize_angle(double theta);

/// Validated box with normalized heading; rejects non-positive sizes.
Box3D make_box(const Vec3& center, const Vec3& size, double heading);

/// Corner k has x sign bit 0, y sign bit 1, z sign bit 2 of k (0 = minus).
std::array<Vec3, 8> box_corners(const Box3D& box);

/// World point expressed in the box frame (origin at center, x along heading).
Vec3 to_box_frame(const Vec3& p, const Box3D& box);
Vec3 from_box_frame(const Vec3& local, const Box3D& box);

/// Box `b` (world) expressed in the frame of `reference`, and back.
Box3D box_in_frame(const Box3D& b, const Box3D& reference);
Box3D box_from_frame(const Box3D& local, const Box3D& reference);

/// Every point of `pc` re-expressed in the frame of `reference`.
PointCloud cloud_in_frame(const PointCloud& pc, const Box3D& reference);

/// Indices of points inside the box, faces included.
IndexList points_in_box(const PointCloud& pc, const Box3D& box);

PointCloud select(const PointCloud& pc, const IndexList& index);

/// Box grown by `margin` on every side.
Box3D enlarge(const Box3D& box, double margin);
PointCloud enlarge_and_crop(const PointCloud& pc, const Box3D& box, double margin);

/// Oriented 3D IoU: exact bird's-eye polygon overlap times z overlap.
double rotated_iou_3d(const Box3D& a, const Box3D& b);

double center_distance(const Box3D& a, const Box3D& b);

/// Re-poses points given in `from`'s world pose into `to`'s world pose.
PointCloud align_template_to_box(const PointCloud& template_points, const Box3D& from, const Box3D& to);

/// Sum of squared nearest-neighbor distances, both directions, unnormalized.
double chamfer_distance(const PointCloud& p, const PointCloud& q);

/// Differentiable chamfer distance between row sets p [n x 3] and q [m x 3].
template <typename T>
BasicTensor<T> chamfer_distance(const BasicTensor<T>& p, const BasicTensor<T>& q);

/// Greedy max-min selection of k indices starting from `start`; ties go to
/// the lowest index.
IndexList farthest_point_sample(const PointCloud& pc, std::size_t k, std::size_t start = 0);

/// For every center index, the k nearest points of `pc` (center included),
/// nearest first; ties go to the lowest index. Flat [centers x k].
IndexList k_nearest(const PointCloud& pc, const IndexList& centers, std::size_t k);

PointCloud to_cloud(std::span<const float> xyz);
PointCloud to_cloud(std::span<const double> xyz);
template <typename T>
BasicTensor<T> to_tensor(const PointCloud& pc);

}  // namespace stk::geometry
