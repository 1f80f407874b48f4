#include "stk/dataset/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>

#include "json.hpp"

#include "stk/core/error.hpp"
#include "stk/core/io.hpp"

namespace stk::dataset {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'C', 'F', '1'};
constexpr std::size_t kHeaderBytes = 8;
constexpr std::size_t kBoxBytes = 7 * sizeof(float);

}  // namespace

std::string_view to_string(Category category) {
  return category == Category::kRigid ? "rigid" : "non-rigid";
}

Category parse_category(std::string_view text) {
  if (text == "rigid") return Category::kRigid;
  if (text == "non-rigid") return Category::kNonRigid;
  fail(ErrorKind::kInvalidArgument, "unknown category '" + std::string(text) + "'");
}

void validate(const Sequence& seq) {
  require(seq.frames.size() >= 2, ErrorKind::kInvalidArgument, "sequence " + seq.id + " has fewer than 2 frames");
  const auto& size = seq.frames.front().gt.size;
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& frame = seq.frames[t];
    require(frame.gt.size == size, ErrorKind::kInvalidArgument,
            "sequence " + seq.id + ": gt size changes at frame " + std::to_string(t));
    for (const auto& p : frame.cloud) {
      require(p.allFinite(), ErrorKind::kNonFinite, "sequence " + seq.id + ": non-finite point");
    }
  }
}

std::vector<char> encode_frame(const Frame& frame) {
  require(frame.cloud.size() <= UINT32_MAX, ErrorKind::kOutOfRange, "frame has too many points");
  std::vector<char> out;
  out.reserve(kHeaderBytes + frame.cloud.size() * 3 * sizeof(float) + kBoxBytes);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  io::put(out, static_cast<std::uint32_t>(frame.cloud.size()));
  for (const auto& p : frame.cloud) {
    io::put(out, p.x());
    io::put(out, p.y());
    io::put(out, p.z());
  }
  const auto& b = frame.gt;
  for (double v : {b.center.x(), b.center.y(), b.center.z(), b.size.x(), b.size.y(), b.size.z(), b.heading}) {
    io::put(out, static_cast<float>(v));
  }
  return out;
}

Frame decode_frame(std::string_view bytes) {
  require(bytes.size() >= kHeaderBytes, ErrorKind::kTruncated, "frame shorter than its header");
  require(std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()), ErrorKind::kBadMagic,
          "frame does not start with PCF1");
  const auto count = io::get<std::uint32_t>(bytes.data() + 4);
  const std::size_t expected = kHeaderBytes + std::size_t{count} * 3 * sizeof(float) + kBoxBytes;
  require(bytes.size() >= expected, ErrorKind::kTruncated,
          "frame declares " + std::to_string(count) + " points but holds " + std::to_string(bytes.size()) + " bytes");
  require(bytes.size() == expected, ErrorKind::kInvalidArgument, "frame has trailing bytes");

  Frame frame;
  frame.cloud.resize(count);
  const char* p = bytes.data() + kHeaderBytes;
  for (auto& point : frame.cloud) {
    point = geometry::Point(io::get<float>(p), io::get<float>(p + 4), io::get<float>(p + 8));
    require(point.allFinite(), ErrorKind::kNonFinite, "frame holds a non-finite coordinate");
    p += 12;
  }
  float box[7];
  std::memcpy(box, p, kBoxBytes);
  for (float v : box) require(std::isfinite(v), ErrorKind::kNonFinite, "frame box holds a non-finite value");
  require(box[3] > 0 && box[4] > 0 && box[5] > 0, ErrorKind::kInvalidArgument, "frame box size must be positive");
  // Stored headings are already normalized; keep the float value exactly.
  frame.gt = Box3D{geometry::Vec3(box[0], box[1], box[2]), geometry::Vec3(box[3], box[4], box[5]), box[6]};
  return frame;
}

void write_frame(const fs::path& path, const Frame& frame) {
  const auto bytes = encode_frame(frame);
  io::write_file(path, {bytes.data(), bytes.size()});
}

Frame read_frame(const fs::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_frame(std::string_view(bytes.data(), bytes.size()));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.detail());
  }
}

void write_sequence(const fs::path& dir, const Sequence& seq) {
  validate(seq);
  json manifest{{"id", seq.id}, {"category", to_string(seq.category)}, {"frames", json::array()}};
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.pcf", t);
    const fs::path rel = fs::path(seq.id) / name;
    write_frame(dir / rel, seq.frames[t]);
    manifest["frames"].push_back(rel.generic_string());
  }
  const std::string text = manifest.dump(2) + "\n";
  io::write_file(dir / (seq.id + ".json"), text);
}

Sequence read_sequence(const fs::path& manifest_path) {
  const auto bytes = io::read_file(manifest_path);
  json manifest;
  try {
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, manifest_path.string() + ": " + e.what());
  }
  require(manifest.is_object() && manifest.contains("id") && manifest.contains("category") &&
              manifest.contains("frames") && manifest["frames"].is_array(),
          ErrorKind::kInvalidArgument, manifest_path.string() + ": manifest needs id, category and frames");
  Sequence seq;
  seq.id = manifest["id"].get<std::string>();
  seq.category = parse_category(manifest["category"].get<std::string>());
  const fs::path root = manifest_path.parent_path();
  for (const auto& rel : manifest["frames"]) seq.frames.push_back(read_frame(root / rel.get<std::string>()));
  validate(seq);
  return seq;
}

void write_dataset(const fs::path& dir, const std::vector<Sequence>& sequences) {
  fs::create_directories(dir);
  for (const auto& seq : sequences) write_sequence(dir, seq);
}

std::vector<Sequence> read_dataset(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::kIo, dir.string() + " is not a directory");
  std::vector<fs::path> manifests;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") manifests.push_back(entry.path());
  }
  std::sort(manifests.begin(), manifests.end());
  std::vector<Sequence> out;
  for (const auto& m : manifests) out.push_back(read_sequence(m));
  std::sort(out.begin(), out.end(), [](const Sequence& a, const Sequence& b) { return a.id < b.id; });
  require(!out.empty(), ErrorKind::kEmptyInput, "no sequence manifests in " + dir.string());
  return out;
}

}  // namespace stk::dataset
