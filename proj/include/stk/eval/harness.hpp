#pragma once

// One-pass tracking, Success/Precision curves and CSV reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stk/dataset/sample.hpp"
#include "stk/model/tracker.hpp"

namespace stk::eval {

using dataset::Box3D;
using dataset::PointCloud;

/// Everything a tracker sees for one frame. `search` is already expressed in
/// the frame of `reference`, the previous prediction.
struct TrackInput {
  const dataset::Sequence& seq;
  std::size_t frame;
  const PointCloud& search;
  const PointCloud& template_points;
  const Box3D& reference;
  const geometry::Vec3& size;
};

/// Returns the world-frame box for the frame.
using Predictor = std::function<Box3D(const TrackInput&)>;

Predictor model_predictor(const model::TrackerNet<float>& net);
/// Returns the ground truth; scores 100/100.
Predictor oracle_predictor();
/// Returns the reference box unchanged.
Predictor constant_predictor();

struct FrameResult {
  std::size_t frame = 0;
  double iou = 0;
  double center_error = 0;
  bool carried = false;  // empty search region, previous box carried forward
};

struct TrackReport {
  std::string seq;
  std::vector<FrameResult> frames;  // frames 1..n-1
  double success = 0;
  double precision = 0;
};

struct TrackOptions {
  std::uint64_t seed = 0;
  std::size_t search_points = 1024;
  std::size_t template_points = 512;
  double margin = 2.0;
};

/// One pass: frame 0 is initialized from the ground truth, then each frame is
/// searched around the previous prediction with a template merged from the
/// frame-0 ground-truth crop and the previous predicted crop. Resampling draws
/// depend only on (seed, sequence index, frame).
TrackReport track_sequence(const Predictor& predictor, const dataset::Sequence& seq, std::size_t seq_index,
                           const TrackOptions& options);
std::vector<TrackReport> track_dataset(const Predictor& predictor, const std::vector<dataset::Sequence>& data,
                                       const TrackOptions& options);

/// Area under tau -> mean(iou > tau) on [0, 1], times 100, integrated exactly
/// from the sorted values and cross-checked against 100 mean(iou).
double success_auc(const std::vector<double>& ious);
/// Area under tau -> mean(err < tau) on [0, 2], divided by 2, times 100.
double precision_auc(const std::vector<double>& errors);

struct Summary {
  double success = 0;
  double precision = 0;
  std::size_t frames = 0;
};
/// Scores pooled over every frame of every report.
Summary summarize(const std::vector<TrackReport>& reports);

/// "seq,frame,iou,center_err" rows with round-trip precision.
std::string report_csv(const std::vector<TrackReport>& reports);
/// "seq,success,precision" rows.
std::string summary_csv(const std::vector<TrackReport>& reports);
/// Parses report_csv output back into per-sequence reports with their scores.
std::vector<TrackReport> parse_report_csv(std::string_view text);
/// "<stem>.summary.csv" beside the report.
std::filesystem::path summary_path(const std::filesystem::path& report);

void write_reports(const std::filesystem::path& report, const std::vector<TrackReport>& reports);

}  // namespace stk::eval
