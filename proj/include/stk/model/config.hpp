#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace stk::model {

/// Bird's-eye grid in the search-region frame: cells of `voxel` meters
/// covering [x_min, x_max) x [y_min, y_max); row i runs along x, column j
/// along y.
struct BevConfig {
  double voxel = 0.2;
  double x_min = -2.4, x_max = 2.4;
  double y_min = -2.4, y_max = 2.4;
  /// Prototype coordinates are squashed into this z band.
  double z_min = -2.0, z_max = 2.0;

  std::size_t rows() const;  // H
  std::size_t cols() const;  // W
};

/// Prediction grid: the BEV grid at `upscale` times its resolution.
struct OutputGrid {
  double x_min = 0, y_min = 0;
  double cell = 0;
  std::size_t rows = 0, cols = 0;
};

struct ModelConfig {
  std::size_t feature_dim = 32;  // C
  std::size_t heads = 4;
  std::size_t search_points = 1024;
  std::size_t template_points = 512;
  std::vector<std::size_t> search_stages{256, 128};
  std::vector<std::size_t> template_stages{128, 64};
  std::size_t neighbors = 16;  // kNN group size

  bool use_tapm = true;
  std::size_t prototypes = 64;  // N_I
  std::size_t tapm_depth = 5;   // l

  bool use_vit = true;
  bool use_shuffle = true;
  std::size_t vit_blocks = 2;
  std::size_t vit_channels = 128;  // ViT output, split 4 ways by the shuffle
  std::size_t head_channels = 32;
  BevConfig bev;

  /// Validates the invariants; throws on violation.
  void validate() const;
  OutputGrid output_grid() const;
};

std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);

/// Named ablation variants: "full", "baseline" (no TAPM, no RGS), "tapm",
/// "shuffle", "vit", "tapm+shuffle", "shuffle+vit", "tapm+vit".
ModelConfig apply_variant(ModelConfig cfg, std::string_view variant);
std::vector<std::string> variant_names();

}  // namespace stk::model
