#include "stk/eval/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "stk/core/error.hpp"
#include "stk/core/io.hpp"

namespace stk::eval {

namespace {

constexpr double kMaxDistance = 2.0;

std::mt19937_64 frame_rng(std::uint64_t seed, std::size_t seq_index, std::size_t frame) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(seq_index), static_cast<std::uint32_t>(frame)};
  return std::mt19937_64(seq);
}

// Area under tau -> mean(v > tau) on [0, hi] for values clipped to [0, hi],
// summed over the gaps between order statistics.
double step_area(std::vector<double> values, double hi) {
  for (double& v : values) v = std::clamp(v, 0.0, hi);
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double area = 0, prev = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    area += (values[k] - prev) * (n - static_cast<double>(k)) / n;
    prev = values[k];
  }
  return area;
}

double parse_double(std::string_view text, const std::string& where) {
  double value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  require(ec == std::errc() && end == text.data() + text.size(), ErrorKind::kInvalidArgument,
          where + ": not a number '" + std::string(text) + "'");
  return value;
}

std::string format_row(const char* fmt, const std::string& seq, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, fmt, a, b);
  return seq + "," + buf + "\n";
}

}  // namespace

Predictor model_predictor(const model::TrackerNet<float>& net) {
  return [&net](const TrackInput& in) { return net.predict(in.search, in.template_points, in.reference, in.size); };
}

Predictor oracle_predictor() {
  return [](const TrackInput& in) { return in.seq.frames[in.frame].gt; };
}

Predictor constant_predictor() {
  return [](const TrackInput& in) { return in.reference; };
}

TrackReport track_sequence(const Predictor& predictor, const dataset::Sequence& seq, std::size_t seq_index,
                           const TrackOptions& options) {
  require(seq.frames.size() >= 2, ErrorKind::kInvalidArgument, "sequence '" + seq.id + "' needs at least two frames");
  TrackReport report;
  report.seq = seq.id;
  const auto& first = seq.frames.front();
  const geometry::Vec3 size = first.gt.size;
  Box3D previous = first.gt;
  for (std::size_t t = 1; t < seq.frames.size(); ++t) {
    const auto& frame = seq.frames[t];
    auto rng = frame_rng(options.seed, seq_index, t);
    const auto search = dataset::crop_search(frame.cloud, previous, options.margin, options.search_points, rng);
    const auto templ = dataset::build_template(first.cloud, first.gt, seq.frames[t - 1].cloud, previous,
                                               options.template_points, rng);
    FrameResult result;
    result.frame = t;
    Box3D predicted = previous;
    if (search.empty() || templ.empty()) {
      result.carried = true;
    } else {
      const auto local = geometry::cloud_in_frame(search, previous);
      predicted = predictor(TrackInput{seq, t, local, templ, previous, size});
    }
    result.iou = geometry::rotated_iou_3d(predicted, frame.gt);
    result.center_error = (predicted.center - frame.gt.center).norm();
    report.frames.push_back(result);
    previous = predicted;
  }
  std::vector<double> ious, errors;
  for (const auto& f : report.frames) {
    ious.push_back(f.iou);
    errors.push_back(f.center_error);
  }
  report.success = success_auc(ious);
  report.precision = precision_auc(errors);
  return report;
}

std::vector<TrackReport> track_dataset(const Predictor& predictor, const std::vector<dataset::Sequence>& data,
                                       const TrackOptions& options) {
  require(!data.empty(), ErrorKind::kEmptyInput, "no sequences to track");
  std::vector<TrackReport> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back(track_sequence(predictor, data[i], i, options));
  return out;
}

double success_auc(const std::vector<double>& ious) {
  require(!ious.empty(), ErrorKind::kEmptyInput, "success needs at least one IoU");
  for (double v : ious) {
    require(std::isfinite(v) && v >= 0 && v <= 1, ErrorKind::kOutOfRange, "IoU outside [0, 1]");
  }
  const double exact = 100.0 * step_area(ious, 1.0);
  const double mean = 100.0 * std::accumulate(ious.begin(), ious.end(), 0.0) / static_cast<double>(ious.size());
  require(std::abs(exact - mean) <= 1e-9, ErrorKind::kNonFinite, "success integral disagrees with the mean IoU");
  return exact;
}

double precision_auc(const std::vector<double>& errors) {
  require(!errors.empty(), ErrorKind::kEmptyInput, "precision needs at least one error");
  for (double v : errors) require(std::isfinite(v) && v >= 0, ErrorKind::kOutOfRange, "negative or non-finite error");
  // mean(err < tau) = 1 - mean(err >= tau); the boundary has measure zero.
  return 100.0 * (1.0 - step_area(errors, kMaxDistance) / kMaxDistance);
}

Summary summarize(const std::vector<TrackReport>& reports) {
  std::vector<double> ious, errors;
  for (const auto& r : reports) {
    for (const auto& f : r.frames) {
      ious.push_back(f.iou);
      errors.push_back(f.center_error);
    }
  }
  return {success_auc(ious), precision_auc(errors), ious.size()};
}

std::string report_csv(const std::vector<TrackReport>& reports) {
  std::string out = "seq,frame,iou,center_err\n";
  for (const auto& r : reports) {
    for (const auto& f : r.frames) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", f.frame, f.iou, f.center_error);
      out += r.seq + "," + buf;
    }
  }
  return out;
}

std::string summary_csv(const std::vector<TrackReport>& reports) {
  std::string out = "seq,success,precision\n";
  for (const auto& r : reports) out += format_row("%.17g,%.17g", r.seq, r.success, r.precision);
  const auto all = summarize(reports);
  out += format_row("%.17g,%.17g", "all", all.success, all.precision);
  return out;
}

std::vector<TrackReport> parse_report_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  require(std::getline(in, line) && line == "seq,frame,iou,center_err", ErrorKind::kBadMagic,
          "report must start with 'seq,frame,iou,center_err'");
  std::vector<TrackReport> reports;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "report line " + std::to_string(line_no);
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1)) {
      fields.push_back(rest.substr(0, pos));
    }
    fields.push_back(rest);
    require(fields.size() == 4, ErrorKind::kTruncated, where + ": expected 4 fields");
    const std::string seq(fields[0]);
    auto [it, inserted] = index.try_emplace(seq, reports.size());
    if (inserted) reports.push_back(TrackReport{seq, {}, 0, 0});
    FrameResult f;
    const double frame = parse_double(fields[1], where);
    require(frame >= 0 && frame == std::floor(frame), ErrorKind::kInvalidArgument, where + ": bad frame index");
    f.frame = static_cast<std::size_t>(frame);
    f.iou = parse_double(fields[2], where);
    f.center_error = parse_double(fields[3], where);
    reports[it->second].frames.push_back(f);
  }
  require(!reports.empty(), ErrorKind::kEmptyInput, "report has no rows");
  for (auto& r : reports) {
    std::vector<double> ious, errors;
    for (const auto& f : r.frames) {
      ious.push_back(f.iou);
      errors.push_back(f.center_error);
    }
    r.success = success_auc(ious);
    r.precision = precision_auc(errors);
  }
  return reports;
}

std::filesystem::path summary_path(const std::filesystem::path& report) {
  auto p = report;
  p.replace_extension(".summary.csv");
  return p;
}

void write_reports(const std::filesystem::path& report, const std::vector<TrackReport>& reports) {
  io::write_file_atomic(report, report_csv(reports));
  io::write_file_atomic(summary_path(report), summary_csv(reports));
}

}  // namespace stk::eval
