#include "stk/model/config.hpp"

#include <cmath>

#include "json.hpp"

#include "stk/core/error.hpp"

namespace stk::model {

namespace {

std::size_t whole_cells(double lo, double hi, double voxel, const char* axis) {
  const double cells = (hi - lo) / voxel;
  const double rounded = std::round(cells);
  require(rounded >= 1.0 && std::abs(cells - rounded) < 1e-9, ErrorKind::kInvalidArgument,
          std::string("bev ") + axis + " extent is not a whole number of cells");
  return static_cast<std::size_t>(rounded);
}

}  // namespace

std::size_t BevConfig::rows() const { return whole_cells(x_min, x_max, voxel, "x"); }
std::size_t BevConfig::cols() const { return whole_cells(y_min, y_max, voxel, "y"); }

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::kInvalidArgument, "model config: " + what); };
  check(feature_dim >= 1 && heads >= 1 && feature_dim % heads == 0, "feature_dim must be divisible by heads");
  check(bev.voxel > 0.0 && bev.z_max > bev.z_min, "bev needs a positive voxel and z_max > z_min");
  bev.rows();
  bev.cols();
  auto decreasing = [](const std::vector<std::size_t>& stages, std::size_t input) {
    std::size_t prev = input;
    for (auto s : stages) {
      if (s == 0 || s >= prev) return false;
      prev = s;
    }
    return !stages.empty();
  };
  check(decreasing(search_stages, search_points + 1), "search_stages must be strictly decreasing and <= search_points");
  check(decreasing(template_stages, template_points + 1),
        "template_stages must be strictly decreasing and <= template_points");
  check(neighbors >= 1 && neighbors <= std::min(search_points, template_points), "neighbors out of range");
  check(!use_tapm || tapm_depth >= 1, "tapm_depth must be >= 1");
  check(vit_blocks >= 1 || !use_vit, "vit_blocks must be >= 1");
  check(!use_shuffle || vit_channels == 4 * head_channels, "shuffle needs vit_channels == 4 * head_channels");
  check(head_channels >= 1, "head_channels must be >= 1");
}

OutputGrid ModelConfig::output_grid() const {
  const std::size_t up = use_shuffle ? 2 : 1;
  return OutputGrid{bev.x_min, bev.y_min, bev.voxel / static_cast<double>(up), bev.rows() * up, bev.cols() * up};
}

std::string to_json(const ModelConfig& c) {
  nlohmann::json j{{"featureDim", c.feature_dim},
                   {"heads", c.heads},
                   {"searchPoints", c.search_points},
                   {"templatePoints", c.template_points},
                   {"searchStages", c.search_stages},
                   {"templateStages", c.template_stages},
                   {"neighbors", c.neighbors},
                   {"useTapm", c.use_tapm},
                   {"prototypes", c.prototypes},
                   {"tapmDepth", c.tapm_depth},
                   {"useVit", c.use_vit},
                   {"useShuffle", c.use_shuffle},
                   {"vitBlocks", c.vit_blocks},
                   {"vitChannels", c.vit_channels},
                   {"headChannels", c.head_channels},
                   {"bev",
                    {{"voxel", c.bev.voxel},
                     {"xMin", c.bev.x_min},
                     {"xMax", c.bev.x_max},
                     {"yMin", c.bev.y_min},
                     {"yMax", c.bev.y_max},
                     {"zMin", c.bev.z_min},
                     {"zMax", c.bev.z_max}}}};
  return j.dump(2);
}

ModelConfig model_config_from_json(std::string_view text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    require(j.is_object(), ErrorKind::kInvalidArgument, "model config must be a JSON object");
    c.feature_dim = j.value("featureDim", c.feature_dim);
    c.heads = j.value("heads", c.heads);
    c.search_points = j.value("searchPoints", c.search_points);
    c.template_points = j.value("templatePoints", c.template_points);
    c.search_stages = j.value("searchStages", c.search_stages);
    c.template_stages = j.value("templateStages", c.template_stages);
    c.neighbors = j.value("neighbors", c.neighbors);
    c.use_tapm = j.value("useTapm", c.use_tapm);
    c.prototypes = j.value("prototypes", c.prototypes);
    c.tapm_depth = j.value("tapmDepth", c.tapm_depth);
    c.use_vit = j.value("useVit", c.use_vit);
    c.use_shuffle = j.value("useShuffle", c.use_shuffle);
    c.vit_blocks = j.value("vitBlocks", c.vit_blocks);
    c.vit_channels = j.value("vitChannels", c.vit_channels);
    c.head_channels = j.value("headChannels", c.head_channels);
    if (j.contains("bev")) {
      const auto& b = j["bev"];
      c.bev.voxel = b.value("voxel", c.bev.voxel);
      c.bev.x_min = b.value("xMin", c.bev.x_min);
      c.bev.x_max = b.value("xMax", c.bev.x_max);
      c.bev.y_min = b.value("yMin", c.bev.y_min);
      c.bev.y_max = b.value("yMax", c.bev.y_max);
      c.bev.z_min = b.value("zMin", c.bev.z_min);
      c.bev.z_max = b.value("zMax", c.bev.z_max);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> variant_names() {
  return {"full", "baseline", "tapm", "shuffle", "vit", "tapm+shuffle", "shuffle+vit", "tapm+vit"};
}

ModelConfig apply_variant(ModelConfig cfg, std::string_view variant) {
  if (variant == "full") {
    cfg.use_tapm = cfg.use_vit = cfg.use_shuffle = true;
    return cfg;
  }
  if (variant == "baseline") {
    cfg.use_tapm = cfg.use_vit = cfg.use_shuffle = false;
    return cfg;
  }
  bool known = false;
  for (const auto& name : variant_names()) known = known || name == variant;
  require(known, ErrorKind::kInvalidArgument, "unknown variant '" + std::string(variant) + "'");
  auto has = [&](std::string_view part) {
    for (std::size_t start = 0; start <= variant.size();) {
      const auto end = std::min(variant.find('+', start), variant.size());
      if (variant.substr(start, end - start) == part) return true;
      start = end + 1;
    }
    return false;
  };
  cfg.use_tapm = has("tapm");
  cfg.use_shuffle = has("shuffle");
  cfg.use_vit = has("vit");
  return cfg;
}

}  // namespace stk::model
