#pragma once

// Deterministic synthetic tracking benchmark and the foreground scaling
// transform used by the small-object experiment.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stk/dataset/dataset.hpp"

namespace stk::dataset {

enum class TargetKind { kSlab, kCylinder, kCapsulePair };

std::string_view to_string(TargetKind kind);
TargetKind parse_target_kind(std::string_view text);

/// Slab: 4.0 x 1.8 x 1.5 m (car-like, rigid). Cylinder: 0.7 x 0.7 x 1.2 m
/// (rigid). Capsule pair: torso over swinging legs, 0.6 x 0.4 x 1.7 m
/// (pedestrian-like, non-rigid).
geometry::Vec3 target_size(TargetKind kind);
Category category_of(TargetKind kind);

struct GenSpec {
  std::size_t num_sequences = 20;
  std::size_t frames_per_seq = 40;
  TargetKind target = TargetKind::kCapsulePair;
  std::size_t clutter_count = 8;
  /// Target surface points per square meter of visible area at 10 m range;
  /// the count falls off with the squared range. Every positive density
  /// yields at least one target point per frame (counts round up).
  double point_density = 60.0;
  /// Prefix of sequence ids, followed by a four-digit index.
  std::string id_prefix = "seq";
};

/// Parses {"numSequences", "framesPerSeq", "targetKind", "clutterCount",
/// "pointDensity", "idPrefix"}; absent keys keep their defaults.
GenSpec parse_gen_spec(std::string_view json_text);
std::string to_json(const GenSpec& spec);

/// Sequence `index` depends only on (seed, index, spec).
Sequence generate_sequence(std::uint64_t seed, std::size_t index, const GenSpec& spec);
std::vector<Sequence> generate_synthetic(std::uint64_t seed, const GenSpec& spec);

/// Shrinks every frame's foreground (points inside the gt box) toward the box
/// center by `rate` and scales the gt size by `rate`; background points are
/// untouched. `rate` must lie in (0, 1].
Sequence scale_sequence(const Sequence& seq, double rate);

}  // namespace stk::dataset
