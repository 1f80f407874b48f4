#pragma once

// Variant grids: train each (variant, seed) pair, track the held-out split
// and aggregate Success and Precision, optionally on a scaled copy of both
// splits for the before/after score gap.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stk/eval/harness.hpp"
#include "stk/training/trainer.hpp"

namespace stk::eval {

/// Variant names for every subset of the listed components. Components are
/// "tapm", "rgs" (transformer plus shuffle), "vit" and "shuffle"; the empty
/// subset is "baseline".
std::vector<std::string> grid_variants(std::string_view components);

struct RunResult {
  std::string variant;
  std::string setting;  // "original" or "scaled"
  std::uint64_t seed = 0;
  Summary summary;
  double seconds = 0;
};

struct GridSpec {
  training::TrainConfig train;  // seed and variant are set per run
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string setting = "original";
  std::uint64_t track_seed = 0;
  /// When set, each checkpoint is saved as <dir>/<setting>-<variant>-s<seed>.ckpt.
  std::filesystem::path checkpoint_dir;
};

using Progress = std::function<void(const RunResult&)>;

std::vector<RunResult> run_grid(const std::vector<dataset::Sequence>& train_split,
                                 const std::vector<dataset::Sequence>& test_split, const GridSpec& spec,
                                 const Progress& progress = {});

/// Mean Success (and Precision) over seeds for one variant and setting.
Summary mean_over_seeds(const std::vector<RunResult>& results, std::string_view variant, std::string_view setting);

/// Original minus scaled mean Success.
double success_gap(const std::vector<RunResult>& results, std::string_view variant);

/// "variant,setting,seed,success,precision" rows.
std::string results_csv(const std::vector<RunResult>& results);

}  // namespace stk::eval
