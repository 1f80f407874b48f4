#include "stk/dataset/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "json.hpp"

#include "stk/core/error.hpp"

namespace stk::dataset {

namespace {

using geometry::Point;
using geometry::Vec3;
using Rng = std::mt19937_64;

constexpr double kPi = std::numbers::pi;
const Vec3 kSensor(0.0, 0.0, 1.7);
constexpr double kReferenceRange = 10.0;
constexpr double kGroundClearance = 0.05;
constexpr double kGroundHalfExtent = 8.0;
constexpr double kGroundDensity = 1.5;  // points per square meter
constexpr double kSurfaceNoise = 0.01;
constexpr double kInset = 1e-3;  // keeps noisy surface samples strictly inside the gt box

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Values stored in frame files are f32; generating them already rounded keeps
// in-memory sequences identical to their on-disk form.
double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Box3D quantized(const Vec3& center, const Vec3& size, double heading) {
  double h = f32(geometry::normalize_angle(heading));
  if (h > kPi) h = static_cast<double>(std::nextafter(static_cast<float>(kPi), 0.0f));
  if (h <= -kPi) h = static_cast<double>(std::nextafter(static_cast<float>(-kPi), 0.0f));
  return Box3D{center.unaryExpr(&f32), size.unaryExpr(&f32), h};
}

struct SurfaceSample {
  Vec3 local;
  Vec3 normal;
};

// A solid that emits surface samples in its own box frame (z spans -h/2..h/2).
struct Shape {
  enum class Form { kSlab, kCylinder, kCapsulePair } form;
  Vec3 size;
  double stride_phase = 0.0;  // leg swing, capsule pair only

  double area() const {
    switch (form) {
      case Form::kSlab:
        return 2.0 * size.z() * (size.x() + size.y()) + size.x() * size.y();
      case Form::kCylinder: {
        const double r = size.x() / 2.0;
        return 2.0 * kPi * r * size.z() + kPi * r * r;
      }
      case Form::kCapsulePair:
        return 1.5;
    }
    return 0.0;
  }

  SurfaceSample sample(Rng& rng) const {
    const Vec3 half = size / 2.0;
    switch (form) {
      case Form::kSlab: {
        const double side_x = size.y() * size.z(), side_y = size.x() * size.z(), top = size.x() * size.y();
        double pick = uniform(rng, 0.0, 2.0 * side_x + 2.0 * side_y + top);
        Vec3 p(uniform(rng, -half.x(), half.x()), uniform(rng, -half.y(), half.y()), uniform(rng, -half.z(), half.z()));
        if (pick < 2.0 * side_x) {
          const double s = pick < side_x ? 1.0 : -1.0;
          p.x() = s * half.x();
          return {p, Vec3(s, 0, 0)};
        }
        pick -= 2.0 * side_x;
        if (pick < 2.0 * side_y) {
          const double s = pick < side_y ? 1.0 : -1.0;
          p.y() = s * half.y();
          return {p, Vec3(0, s, 0)};
        }
        p.z() = half.z();
        return {p, Vec3(0, 0, 1)};
      }
      case Form::kCylinder: {
        const double r = half.x();
        const double side = 2.0 * kPi * r * size.z(), top = kPi * r * r;
        const double a = uniform(rng, -kPi, kPi);
        if (uniform(rng, 0.0, side + top) < side) {
          return {Vec3(r * std::cos(a), r * std::sin(a), uniform(rng, -half.z(), half.z())),
                  Vec3(std::cos(a), std::sin(a), 0)};
        }
        const double rr = r * std::sqrt(uniform(rng, 0.0, 1.0));
        return {Vec3(rr * std::cos(a), rr * std::sin(a), half.z()), Vec3(0, 0, 1)};
      }
      case Form::kCapsulePair:
        return sample_capsule_pair(rng);
    }
    return {};
  }

  // Torso (elliptic column) and head above two legs that swing along x.
  SurfaceSample sample_capsule_pair(Rng& rng) const {
    const double bottom = -size.z() / 2.0;
    const double hip = bottom + 0.47 * size.z();
    const double shoulder = bottom + 0.85 * size.z();
    const double torso_ax = 0.3 * size.x(), torso_ay = 0.42 * size.y();
    const double head_r = 0.065 * size.z();
    const double head_z = bottom + size.z() - head_r - 0.01;
    const double leg_r = 0.17 * size.y(), leg_y = 0.22 * size.y();
    const double swing = 0.3 * size.x();

    const double a = uniform(rng, -kPi, kPi);
    const double pick = uniform(rng, 0.0, 1.0);
    if (pick < 0.45) {
      const Vec3 n(std::cos(a) / torso_ax, std::sin(a) / torso_ay, 0.0);
      return {Vec3(torso_ax * std::cos(a), torso_ay * std::sin(a), uniform(rng, hip, shoulder)), n.normalized()};
    }
    if (pick < 0.55) {
      const double u = uniform(rng, -1.0, 1.0), phi = std::acos(u);
      const Vec3 n(std::sin(phi) * std::cos(a), std::sin(phi) * std::sin(a), u);
      return {Vec3(0, 0, head_z) + head_r * n, n};
    }
    const double side = pick < 0.775 ? 1.0 : -1.0;
    const double foot_x = side * swing * std::sin(stride_phase);
    const double t = uniform(rng, 0.0, 1.0);  // 0 at hip, 1 at foot
    const Vec3 axis(t * foot_x, side * leg_y, hip + t * (bottom - hip));
    const Vec3 n(std::cos(a), std::sin(a), 0.0);
    return {axis + leg_r * n, n};
  }
};

Shape::Form form_of(TargetKind kind) {
  switch (kind) {
    case TargetKind::kSlab: return Shape::Form::kSlab;
    case TargetKind::kCylinder: return Shape::Form::kCylinder;
    case TargetKind::kCapsulePair: return Shape::Form::kCapsulePair;
  }
  return Shape::Form::kSlab;
}

// Visible surface samples of `shape` posed at `pose`, with range falloff.
void emit_object(const Shape& shape, const Box3D& pose, double density, Rng& rng, PointCloud& out) {
  const double range = std::max(1.0, (pose.center - kSensor).head<2>().norm());
  const double falloff = std::min(1.0, (kReferenceRange / range) * (kReferenceRange / range));
  const auto count = static_cast<std::size_t>(std::ceil(density * 0.5 * shape.area() * falloff));
  const Vec3 limit = pose.size / 2.0 - Vec3::Constant(kInset);
  std::normal_distribution<double> noise(0.0, kSurfaceNoise);
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  std::size_t emitted = 0;
  for (std::size_t tries = 0; emitted < count && tries < 100 * count; ++tries) {
    const SurfaceSample sample = shape.sample(rng);
    const Vec3 world_normal(c * sample.normal.x() - s * sample.normal.y(), s * sample.normal.x() + c * sample.normal.y(),
                            sample.normal.z());
    const Vec3 world = geometry::from_box_frame(sample.local, pose);
    if (world_normal.dot(kSensor - world) <= 0.0) continue;  // faces away from the sensor
    Vec3 local = sample.local + Vec3(noise(rng), noise(rng), noise(rng));
    local = local.cwiseMax(-limit).cwiseMin(limit);
    out.push_back(geometry::from_box_frame(local, pose).cast<float>());
    ++emitted;
  }
}

void emit_ground(const Vec3& around, Rng& rng, PointCloud& out) {
  const auto count = static_cast<std::size_t>(kGroundDensity * 4.0 * kGroundHalfExtent * kGroundHalfExtent);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = around.x() + uniform(rng, -kGroundHalfExtent, kGroundHalfExtent);
    const double y = around.y() + uniform(rng, -kGroundHalfExtent, kGroundHalfExtent);
    out.emplace_back(static_cast<float>(x), static_cast<float>(y), static_cast<float>(uniform(rng, -0.03, 0.03)));
  }
}

struct Mover {
  Vec3 position;
  double heading;
  double speed;
};

struct MotionLimits {
  double min_speed, max_speed, max_turn;
};

MotionLimits motion_of(TargetKind kind) {
  switch (kind) {
    case TargetKind::kSlab: return {0.4, 1.2, 0.05};
    case TargetKind::kCylinder: return {0.1, 0.4, 0.12};
    case TargetKind::kCapsulePair: return {0.08, 0.25, 0.15};
  }
  return {0.1, 0.3, 0.1};
}

}  // namespace

std::string_view to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::kSlab: return "slab";
    case TargetKind::kCylinder: return "cylinder";
    case TargetKind::kCapsulePair: return "capsule-pair";
  }
  return "slab";
}

TargetKind parse_target_kind(std::string_view text) {
  for (auto kind : {TargetKind::kSlab, TargetKind::kCylinder, TargetKind::kCapsulePair}) {
    if (text == to_string(kind)) return kind;
  }
  fail(ErrorKind::kInvalidArgument, "unknown target kind '" + std::string(text) + "'");
}

Vec3 target_size(TargetKind kind) {
  switch (kind) {
    case TargetKind::kSlab: return {4.0, 1.8, 1.5};
    case TargetKind::kCylinder: return {0.7, 0.7, 1.2};
    case TargetKind::kCapsulePair: return {0.6, 0.4, 1.7};
  }
  return Vec3::Ones();
}

Category category_of(TargetKind kind) {
  return kind == TargetKind::kCapsulePair ? Category::kNonRigid : Category::kRigid;
}

GenSpec parse_gen_spec(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("generator spec: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kInvalidArgument, "generator spec must be a JSON object");
  GenSpec spec;
  try {
    spec.num_sequences = j.value("numSequences", spec.num_sequences);
    spec.frames_per_seq = j.value("framesPerSeq", spec.frames_per_seq);
    spec.target = parse_target_kind(j.value("targetKind", std::string(to_string(spec.target))));
    spec.clutter_count = j.value("clutterCount", spec.clutter_count);
    spec.point_density = j.value("pointDensity", spec.point_density);
    spec.id_prefix = j.value("idPrefix", spec.id_prefix);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("generator spec: ") + e.what());
  }
  require(spec.num_sequences >= 1 && spec.frames_per_seq >= 2, ErrorKind::kInvalidArgument,
          "generator spec needs numSequences >= 1 and framesPerSeq >= 2");
  require(std::isfinite(spec.point_density) && spec.point_density > 0.0, ErrorKind::kInvalidArgument,
          "generator spec needs a positive pointDensity");
  return spec;
}

std::string to_json(const GenSpec& spec) {
  return nlohmann::json{{"numSequences", spec.num_sequences},
                        {"framesPerSeq", spec.frames_per_seq},
                        {"targetKind", to_string(spec.target)},
                        {"clutterCount", spec.clutter_count},
                        {"pointDensity", spec.point_density},
                        {"idPrefix", spec.id_prefix}}
      .dump(2);
}

Sequence generate_sequence(std::uint64_t seed, std::size_t index, const GenSpec& spec) {
  std::seed_seq seeds{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  Rng rng(seeds);

  const Vec3 size = target_size(spec.target);
  const MotionLimits limits = motion_of(spec.target);
  const double z = size.z() / 2.0 + kGroundClearance;

  // Target trajectory: smooth random walk with bounded turn per frame.
  const double range = uniform(rng, 6.0, 14.0), bearing = uniform(rng, -kPi, kPi);
  Mover target{Vec3(range * std::cos(bearing), range * std::sin(bearing), z), uniform(rng, -kPi, kPi),
               uniform(rng, limits.min_speed, limits.max_speed)};
  std::vector<Box3D> track;
  for (std::size_t t = 0; t < spec.frames_per_seq; ++t) {
    track.push_back(quantized(target.position, size, target.heading));
    target.heading += uniform(rng, -limits.max_turn, limits.max_turn);
    target.speed = std::clamp(target.speed + uniform(rng, -0.02, 0.02), limits.min_speed, limits.max_speed);
    target.position += target.speed * Vec3(std::cos(target.heading), std::sin(target.heading), 0.0);
  }
  const double target_radius = size.head<2>().norm() / 2.0;

  // Near-target distractors: same kind, moving alongside at a lateral offset
  // that keeps a gap of at least 0.4 m to the target.
  struct Distractor {
    double along, lateral, wobble_phase, stride_phase;
  };
  std::vector<Distractor> distractors((spec.clutter_count + 3) / 4);
  for (auto& d : distractors) {
    const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    d = {uniform(rng, -0.8, 0.8), side * (size.y() + uniform(rng, 0.4, 1.4)), uniform(rng, 0.0, 2.0 * kPi),
         uniform(rng, 0.0, 2.0 * kPi)};
  }

  // Static clutter: boxes and poles kept clear of the whole trajectory.
  std::vector<std::pair<Shape, Box3D>> statics;
  const Vec3 mid = (track.front().center + track.back().center) / 2.0;
  for (std::size_t k = distractors.size(); k < spec.clutter_count; ++k) {
    const bool pole = uniform(rng, 0.0, 1.0) < 0.4;
    Vec3 csize;
    if (pole) {
      const double d = 2.0 * uniform(rng, 0.08, 0.3);
      csize = Vec3(d, d, uniform(rng, 1.5, 3.5));
    } else {
      csize = Vec3(uniform(rng, 0.3, 2.5), uniform(rng, 0.3, 2.5), uniform(rng, 0.5, 2.5));
    }
    const double radius = csize.head<2>().norm() / 2.0;
    for (int attempt = 0; attempt < 50; ++attempt) {
      const Vec3 c(mid.x() + uniform(rng, -10.0, 10.0), mid.y() + uniform(rng, -10.0, 10.0),
                   csize.z() / 2.0 + kGroundClearance);
      const bool clear = std::all_of(track.begin(), track.end(), [&](const Box3D& b) {
        return (b.center - c).head<2>().norm() > target_radius + radius + 0.3;
      });
      if (clear) {
        statics.push_back({Shape{pole ? Shape::Form::kCylinder : Shape::Form::kSlab, csize},
                           quantized(c, csize, uniform(rng, -kPi, kPi))});
        break;
      }
    }
  }

  Sequence seq;
  char id[64];
  std::snprintf(id, sizeof(id), "%s%04zu", spec.id_prefix.c_str(), index);
  seq.id = id;
  seq.category = category_of(spec.target);
  double stride = uniform(rng, 0.0, 2.0 * kPi);
  for (std::size_t t = 0; t < spec.frames_per_seq; ++t) {
    const Box3D& gt = track[t];
    Frame frame;
    frame.gt = gt;
    emit_ground(gt.center, rng, frame.cloud);
    emit_object(Shape{form_of(spec.target), size, stride}, gt, spec.point_density, rng, frame.cloud);
    for (auto& d : distractors) {
      const double along = d.along + 0.3 * std::sin(d.wobble_phase + 0.2 * static_cast<double>(t));
      const Vec3 c = geometry::from_box_frame(Vec3(along, d.lateral, 0.0), gt);
      emit_object(Shape{form_of(spec.target), size, d.stride_phase + stride}, Box3D{c, size, gt.heading},
                  spec.point_density, rng, frame.cloud);
    }
    for (const auto& [shape, pose] : statics) emit_object(shape, pose, spec.point_density, rng, frame.cloud);
    seq.frames.push_back(std::move(frame));
    if (t + 1 < spec.frames_per_seq) stride += (track[t + 1].center - gt.center).norm() / 0.12;
  }
  return seq;
}

std::vector<Sequence> generate_synthetic(std::uint64_t seed, const GenSpec& spec) {
  std::vector<Sequence> out;
  out.reserve(spec.num_sequences);
  for (std::size_t i = 0; i < spec.num_sequences; ++i) out.push_back(generate_sequence(seed, i, spec));
  return out;
}

Sequence scale_sequence(const Sequence& seq, double rate) {
  require(rate > 0.0 && rate <= 1.0, ErrorKind::kOutOfRange,
          "scaling rate must lie in (0, 1], got " + std::to_string(rate));
  if (rate == 1.0) return seq;
  Sequence out = seq;
  for (auto& frame : out.frames) {
    const Vec3 center = frame.gt.center;
    for (auto i : geometry::points_in_box(frame.cloud, frame.gt)) {
      const Vec3 p = frame.cloud[i].cast<double>();
      frame.cloud[i] = (center + rate * (p - center)).cast<float>();
    }
    frame.gt.size = (rate * frame.gt.size).unaryExpr(&f32);
  }
  return out;
}

}  // namespace stk::dataset
