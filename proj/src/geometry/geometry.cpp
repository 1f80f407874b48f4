#include "stk/geometry/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "stk/core/error.hpp"

namespace stk::geometry {

namespace {

using Vec2 = Eigen::Vector2d;
using Polygon = std::vector<Vec2>;

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

Polygon footprint(const Box3D& box) {
  const double c = std::cos(box.heading), s = std::sin(box.heading);
  const double hw = box.size.x() / 2.0, hl = box.size.y() / 2.0;
  const std::array<Vec2, 4> local{Vec2(-hw, -hl), Vec2(hw, -hl), Vec2(hw, hl), Vec2(-hw, hl)};  // CCW
  Polygon out;
  for (const auto& p : local) {
    out.emplace_back(box.center.x() + c * p.x() - s * p.y(), box.center.y() + s * p.x() + c * p.y());
  }
  return out;
}

double polygon_area(const Polygon& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) twice += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * std::abs(twice);
}

// Sutherland-Hodgman: clips `subject` against the convex CCW `clip`.
Polygon clip_polygon(Polygon subject, const Polygon& clip) {
  constexpr double kEps = 1e-12;
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2 edge = clip[(e + 1) % clip.size()] - a;
    Polygon next;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2& cur = subject[i];
      const Vec2& prev = subject[(i + subject.size() - 1) % subject.size()];
      const double sc = cross(edge, cur - a), sp = cross(edge, prev - a);
      const bool cur_in = sc >= -kEps, prev_in = sp >= -kEps;
      if (cur_in != prev_in) {
        const double t = std::clamp(sp / (sp - sc), 0.0, 1.0);
        next.push_back(prev + t * (cur - prev));
      }
      if (cur_in) next.push_back(cur);
    }
    subject = std::move(next);
  }
  return subject;
}

double sq_dist(const Point& a, const Point& b) {
  const double dx = static_cast<double>(a.x()) - b.x();
  const double dy = static_cast<double>(a.y()) - b.y();
  const double dz = static_cast<double>(a.z()) - b.z();
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

double normalize_angle(double theta) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double r = std::fmod(theta, kTwoPi);
  if (r <= -std::numbers::pi) r += kTwoPi;
  if (r > std::numbers::pi) r -= kTwoPi;
  return r;
}

Box3D make_box(const Vec3& center, const Vec3& size, double heading) {
  require(size.minCoeff() > 0.0, ErrorKind::kInvalidArgument, "box size must be strictly positive");
  require(center.allFinite() && std::isfinite(heading), ErrorKind::kNonFinite, "box has non-finite values");
  return Box3D{center, size, normalize_angle(heading)};
}

std::array<Vec3, 8> box_corners(const Box3D& box) {
  std::array<Vec3, 8> corners;
  for (std::size_t k = 0; k < 8; ++k) {
    const Vec3 local((k & 1 ? 0.5 : -0.5) * box.size.x(), (k & 2 ? 0.5 : -0.5) * box.size.y(),
                     (k & 4 ? 0.5 : -0.5) * box.size.z());
    corners[k] = from_box_frame(local, box);
  }
  return corners;
}

Vec3 to_box_frame(const Vec3& p, const Box3D& box) {
  const double c = std::cos(box.heading), s = std::sin(box.heading);
  const Vec3 d = p - box.center;
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
}

Vec3 from_box_frame(const Vec3& local, const Box3D& box) {
  const double c = std::cos(box.heading), s = std::sin(box.heading);
  return box.center + Vec3(c * local.x() - s * local.y(), s * local.x() + c * local.y(), local.z());
}

Box3D box_in_frame(const Box3D& b, const Box3D& reference) {
  return Box3D{to_box_frame(b.center, reference), b.size, normalize_angle(b.heading - reference.heading)};
}

Box3D box_from_frame(const Box3D& local, const Box3D& reference) {
  return Box3D{from_box_frame(local.center, reference), local.size,
               normalize_angle(local.heading + reference.heading)};
}

PointCloud cloud_in_frame(const PointCloud& pc, const Box3D& reference) {
  PointCloud out;
  out.reserve(pc.size());
  for (const auto& p : pc) out.push_back(to_box_frame(p.cast<double>(), reference).cast<float>());
  return out;
}

IndexList points_in_box(const PointCloud& pc, const Box3D& box) {
  IndexList inside;
  const Vec3 half = box.size / 2.0;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3 local = to_box_frame(pc[i].cast<double>(), box);
    if (std::abs(local.x()) <= half.x() && std::abs(local.y()) <= half.y() && std::abs(local.z()) <= half.z()) {
      inside.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return inside;
}

PointCloud select(const PointCloud& pc, const IndexList& index) {
  PointCloud out;
  out.reserve(index.size());
  for (auto i : index) out.push_back(pc.at(i));
  return out;
}

Box3D enlarge(const Box3D& box, double margin) {
  require(margin >= 0.0, ErrorKind::kInvalidArgument, "margin must be non-negative");
  return Box3D{box.center, box.size + Vec3::Constant(2.0 * margin), box.heading};
}

PointCloud enlarge_and_crop(const PointCloud& pc, const Box3D& box, double margin) {
  return select(pc, points_in_box(pc, enlarge(box, margin)));
}

double rotated_iou_3d(const Box3D& a, const Box3D& b) {
  const Polygon overlap = clip_polygon(footprint(a), footprint(b));
  if (overlap.size() < 3) return 0.0;
  const double area = polygon_area(overlap);
  if (area < 1e-12) return 0.0;
  const double top = std::min(a.center.z() + a.size.z() / 2.0, b.center.z() + b.size.z() / 2.0);
  const double bottom = std::max(a.center.z() - a.size.z() / 2.0, b.center.z() - b.size.z() / 2.0);
  const double inter = area * std::max(0.0, top - bottom);
  if (inter <= 0.0) return 0.0;
  const double uni = a.size.prod() + b.size.prod() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double center_distance(const Box3D& a, const Box3D& b) { return (a.center - b.center).norm(); }

PointCloud align_template_to_box(const PointCloud& template_points, const Box3D& from, const Box3D& to) {
  PointCloud out;
  out.reserve(template_points.size());
  for (const auto& p : template_points) {
    out.push_back(from_box_frame(to_box_frame(p.cast<double>(), from), to).cast<float>());
  }
  return out;
}

double chamfer_distance(const PointCloud& p, const PointCloud& q) {
  require(!p.empty() && !q.empty(), ErrorKind::kEmptyInput, "chamfer_distance needs two non-empty clouds");
  auto one_way = [](const PointCloud& from, const PointCloud& to) {
    double total = 0.0;
    for (const auto& a : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : to) best = std::min(best, sq_dist(a, b));
      total += best;
    }
    return total;
  };
  return one_way(p, q) + one_way(q, p);
}

template <typename T>
BasicTensor<T> chamfer_distance(const BasicTensor<T>& p, const BasicTensor<T>& q) {
  require(p.rank() == 2 && p.dim(1) == 3 && q.rank() == 2 && q.dim(1) == 3, ErrorKind::kShapeMismatch,
          "chamfer_distance expects [n x 3] and [m x 3], got " + shape_str(p.shape()) + " and " + shape_str(q.shape()));
  const std::size_t n = p.dim(0), m = q.dim(0);
  const T* pd = p.data().data();
  const T* qd = q.data().data();
  auto sq = [](const T* a, const T* b) {
    Accum s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const Accum d = static_cast<Accum>(a[c]) - static_cast<Accum>(b[c]);
      s += d * d;
    }
    return s;
  };
  std::vector<std::uint32_t> nearest_in_q(n), nearest_in_p(m);
  // Each direction is summed separately, then added, as in the cloud overload.
  Accum forward = 0.0, backward = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Accum best = std::numeric_limits<Accum>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const Accum d = sq(pd + 3 * i, qd + 3 * j);
      if (d < best) best = d, nearest_in_q[i] = static_cast<std::uint32_t>(j);
    }
    forward += best;
  }
  for (std::size_t j = 0; j < m; ++j) {
    Accum best = std::numeric_limits<Accum>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const Accum d = sq(qd + 3 * j, pd + 3 * i);
      if (d < best) best = d, nearest_in_p[j] = static_cast<std::uint32_t>(i);
    }
    backward += best;
  }
  const Accum total = forward + backward;
  return make_result<T>(
      {1}, {static_cast<T>(total)}, {p, q}, "chamfer",
      [n, m, nearest_in_q = std::move(nearest_in_q), nearest_in_p = std::move(nearest_in_p)](detail::Node<T>& node) {
        const T* pv = node.parents[0]->data.data();
        const T* qv = node.parents[1]->data.data();
        const Accum g = node.grad[0];
        std::vector<Accum> gp(3 * n, 0.0), gq(3 * m, 0.0);
        auto pair = [&](std::size_t i, std::size_t j) {
          for (int c = 0; c < 3; ++c) {
            const Accum d = 2.0 * g * (static_cast<Accum>(pv[3 * i + c]) - static_cast<Accum>(qv[3 * j + c]));
            gp[3 * i + c] += d;
            gq[3 * j + c] -= d;
          }
        };
        for (std::size_t i = 0; i < n; ++i) pair(i, nearest_in_q[i]);
        for (std::size_t j = 0; j < m; ++j) pair(nearest_in_p[j], j);
        if (node.parents[0]->requires_grad) {
          node.parents[0]->ensure_grad();
          for (std::size_t k = 0; k < gp.size(); ++k) node.parents[0]->grad[k] += static_cast<T>(gp[k]);
        }
        if (node.parents[1]->requires_grad) {
          node.parents[1]->ensure_grad();
          for (std::size_t k = 0; k < gq.size(); ++k) node.parents[1]->grad[k] += static_cast<T>(gq[k]);
        }
      });
}

IndexList farthest_point_sample(const PointCloud& pc, std::size_t k, std::size_t start) {
  require(k <= pc.size(), ErrorKind::kOutOfRange,
          "farthest_point_sample: k=" + std::to_string(k) + " exceeds " + std::to_string(pc.size()) + " points");
  IndexList chosen;
  if (k == 0) return chosen;
  require(start < pc.size(), ErrorKind::kOutOfRange, "farthest_point_sample: start index out of range");
  chosen.reserve(k);
  std::vector<double> dist(pc.size(), std::numeric_limits<double>::infinity());
  std::size_t current = start;
  for (std::size_t step = 0; step < k; ++step) {
    chosen.push_back(static_cast<std::uint32_t>(current));
    dist[current] = -1.0;
    std::size_t next = current;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pc.size(); ++i) {
      if (dist[i] < 0.0) continue;
      dist[i] = std::min(dist[i], sq_dist(pc[i], pc[current]));
      if (dist[i] > best) best = dist[i], next = i;
    }
    current = next;
  }
  return chosen;
}

IndexList k_nearest(const PointCloud& pc, const IndexList& centers, std::size_t k) {
  require(k >= 1 && k <= pc.size(), ErrorKind::kOutOfRange,
          "k_nearest: k=" + std::to_string(k) + " with " + std::to_string(pc.size()) + " points");
  IndexList out;
  out.reserve(centers.size() * k);
  std::vector<std::pair<double, std::uint32_t>> cand(pc.size());
  for (auto c : centers) {
    for (std::size_t i = 0; i < pc.size(); ++i) cand[i] = {sq_dist(pc[c], pc[i]), static_cast<std::uint32_t>(i)};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t i = 0; i < k; ++i) out.push_back(cand[i].second);
  }
  return out;
}

PointCloud to_cloud(std::span<const float> xyz) {
  require(xyz.size() % 3 == 0, ErrorKind::kShapeMismatch, "to_cloud: length not a multiple of 3");
  PointCloud out(xyz.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Point(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
  return out;
}

PointCloud to_cloud(std::span<const double> xyz) {
  require(xyz.size() % 3 == 0, ErrorKind::kShapeMismatch, "to_cloud: length not a multiple of 3");
  PointCloud out(xyz.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Vec3(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]).cast<float>();
  return out;
}

template <typename T>
BasicTensor<T> to_tensor(const PointCloud& pc) {
  require(!pc.empty(), ErrorKind::kEmptyInput, "to_tensor: empty cloud");
  std::vector<T> data;
  data.reserve(pc.size() * 3);
  for (const auto& p : pc) {
    data.push_back(static_cast<T>(p.x()));
    data.push_back(static_cast<T>(p.y()));
    data.push_back(static_cast<T>(p.z()));
  }
  return BasicTensor<T>({pc.size(), 3}, std::move(data));
}

template BasicTensor<float> chamfer_distance(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> chamfer_distance(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> to_tensor(const PointCloud&);
template BasicTensor<double> to_tensor(const PointCloud&);

}  // namespace stk::geometry
