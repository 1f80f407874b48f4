#pragma once

// Seeded optimization loop with checkpointing and a CSV loss log.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "stk/dataset/sample.hpp"
#include "stk/model/tracker.hpp"
#include "stk/training/losses.hpp"
#include "stk/training/optimizer.hpp"

namespace stk::training {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t steps = 400;
  std::size_t batch_size = 4;
  std::size_t checkpoint_every = 100;
  AdamConfig adam;
  std::string variant = "full";
  model::ModelConfig model;
  dataset::SampleConfig sample;

  void validate() const;
  /// Model config with the variant switches applied.
  model::ModelConfig variant_model() const;
};

std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(std::string_view text);

struct StepLog {
  std::uint64_t step = 0;
  LossComponents parts;
  double total = 0;
};

std::string csv_header();
std::string csv_row(const StepLog& row);
/// Path of the loss log written beside a checkpoint.
std::filesystem::path log_path(const std::filesystem::path& checkpoint);

/// Network inputs for one training sample, in the reference-box frame.
struct PreparedSample {
  geometry::PointCloud search;
  geometry::PointCloud template_points;
  geometry::Box3D gt;  // region frame
  geometry::PointCloud aligned_template;
};
PreparedSample prepare(const dataset::TrainingSample& sample);

/// Loss of one prepared sample; throws when the target is off the grid.
template <typename T>
LossTerms<T> sample_loss(const model::TrackerNet<T>& net, const PreparedSample& sample, const LossWeights& weights);

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const std::vector<dataset::Sequence>& data);

  /// One optimizer step on a freshly drawn batch; the draw depends only on
  /// (seed, step index).
  StepLog step();
  std::uint64_t steps_done() const { return optimizer_.steps(); }

  /// Checkpoint with parameters, optimizer state and the train config.
  void save(const std::filesystem::path& path) const;
  /// Restores parameters and optimizer state written by save().
  void restore(const std::filesystem::path& path);

  const model::TrackerNet<float>& net() const { return *net_; }

 private:
  TrainConfig cfg_;
  const std::vector<dataset::Sequence>& data_;
  std::unique_ptr<model::TrackerNet<float>> net_;
  Adam<float> optimizer_;
};

/// Runs the configured number of steps, appending each step to the log and
/// checkpointing at the configured cadence and at the end. With `resume`,
/// training continues from the checkpoint at `path` and the log is cut back
/// to its step. A failing step leaves the last checkpoint in place.
void train(const std::vector<dataset::Sequence>& data, const TrainConfig& cfg, const std::filesystem::path& path,
           bool resume = false);

}  // namespace stk::training
