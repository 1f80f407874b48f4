#pragma once

// Frames, sequences and their on-disk formats.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "stk/geometry/geometry.hpp"

namespace stk::dataset {

using geometry::Box3D;
using geometry::PointCloud;

enum class Category { kRigid, kNonRigid };

std::string_view to_string(Category category);
Category parse_category(std::string_view text);

struct Frame {
  PointCloud cloud;
  Box3D gt;
};

struct Sequence {
  std::string id;
  Category category = Category::kRigid;
  std::vector<Frame> frames;
};

/// Checks the sequence invariants: at least two frames, constant gt size,
/// finite coordinates.
void validate(const Sequence& seq);

/// Binary frame: "PCF1" | u32 count | count x 3 f32 | 7 f32 box
/// (x, y, z, w, l, h, heading), little-endian.
std::vector<char> encode_frame(const Frame& frame);
Frame decode_frame(std::string_view bytes);

void write_frame(const std::filesystem::path& path, const Frame& frame);
Frame read_frame(const std::filesystem::path& path);

/// Writes `<dir>/<id>.json` plus one frame file per frame under `<dir>/<id>/`.
/// The manifest lists frame paths relative to `dir`.
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);
Sequence read_sequence(const std::filesystem::path& manifest);

void write_dataset(const std::filesystem::path& dir, const std::vector<Sequence>& sequences);
/// Every manifest in `dir`, ordered by sequence id.
std::vector<Sequence> read_dataset(const std::filesystem::path& dir);

}  // namespace stk::dataset
