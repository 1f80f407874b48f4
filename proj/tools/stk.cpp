// Command-line driver: data generation, scaling, training, tracking,
// evaluation and ablation grids.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "stk/core/error.hpp"
#include "stk/core/io.hpp"
#include "stk/dataset/synthetic.hpp"
#include "stk/eval/experiment.hpp"
#include "stk/eval/harness.hpp"
#include "stk/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace stk;

namespace {

std::string read_text(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return {bytes.begin(), bytes.end()};
}

training::TrainConfig load_train_config(const std::string& path) {
  return path.empty() ? training::train_config_from_json("{}") : training::train_config_from_json(read_text(path));
}

void print_summary(const eval::Summary& s) {
  std::printf("Success: %.4f\nPrecision: %.4f\nFrames: %zu\n", s.success, s.precision, s.frames);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud single object tracker"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string spec_path, out, in, data, config, ckpt, report, variants, scaled;
  double rate = 1.0;
  bool resume = false;
  std::size_t seeds = 3;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic benchmark");
  gen->add_option("--seed", seed, "Generator seed")->required();
  gen->add_option("--spec", spec_path, "Generator spec JSON file");
  gen->add_option("--out", out, "Output dataset directory")->required();

  auto* scale = app.add_subcommand("scale", "Shrink every target foreground by a rate");
  scale->add_option("--in", in, "Input dataset directory")->required();
  scale->add_option("--rate", rate, "Scaling rate in (0, 1]")->required();
  scale->add_option("--out", out, "Output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train a tracker");
  train->add_option("--data", data, "Training dataset directory")->required();
  train->add_option("--config", config, "Train config JSON file");
  train->add_option("--out", ckpt, "Checkpoint path")->required();
  train->add_flag("--resume", resume, "Continue from the checkpoint at --out");

  auto* track = app.add_subcommand("track", "Track every sequence of a dataset");
  track->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  track->add_option("--data", data, "Dataset directory")->required();
  track->add_option("--report", report, "Per-frame report CSV")->required();
  track->add_option("--seed", seed, "Resampling seed");

  auto* evaluate = app.add_subcommand("eval", "Score a per-frame report");
  evaluate->add_option("--report", report, "Per-frame report CSV")->required();

  auto* ablate = app.add_subcommand("ablate", "Train and score a variant grid");
  ablate->add_option("--variants", variants, "Components to ablate, e.g. tapm,rgs")->required();
  ablate->add_option("--data", data, "Directory with train/ and test/ splits")->required();
  ablate->add_option("--scaled", scaled, "Scaled counterpart of --data; adds the score gap");
  ablate->add_option("--config", config, "Train config JSON file");
  ablate->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  ablate->add_option("--out", out, "Directory for checkpoints and results.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kInvalidArgument);
  }

  try {
    if (*gen) {
      const auto spec = spec_path.empty() ? dataset::GenSpec{} : dataset::parse_gen_spec(read_text(spec_path));
      dataset::write_dataset(out, dataset::generate_synthetic(seed, spec));
    } else if (*scale) {
      auto sequences = dataset::read_dataset(in);
      for (auto& seq : sequences) seq = dataset::scale_sequence(seq, rate);
      dataset::write_dataset(out, sequences);
    } else if (*train) {
      training::train(dataset::read_dataset(data), load_train_config(config), ckpt, resume);
    } else if (*track) {
      const auto net = model::load_model<float>(ckpt);
      eval::TrackOptions options;
      options.seed = seed;
      options.search_points = net.config().search_points;
      options.template_points = net.config().template_points;
      const auto reports = eval::track_dataset(eval::model_predictor(net), dataset::read_dataset(data), options);
      eval::write_reports(report, reports);
      print_summary(eval::summarize(reports));
    } else if (*evaluate) {
      const auto reports = eval::parse_report_csv(read_text(report));
      for (const auto& r : reports) std::printf("%s success %.4f precision %.4f\n", r.seq.c_str(), r.success, r.precision);
      print_summary(eval::summarize(reports));
    } else if (*ablate) {
      eval::GridSpec grid;
      grid.train = load_train_config(config);
      grid.variants = eval::grid_variants(variants);
      grid.seeds.clear();
      for (std::size_t s = 0; s < seeds; ++s) grid.seeds.push_back(s);
      if (!out.empty()) {
        fs::create_directories(out);
        grid.checkpoint_dir = out;
      }
      const auto progress = [](const eval::RunResult& r) {
        std::printf("%-14s %-8s seed %llu  success %7.3f  precision %7.3f  (%.0f s)\n", r.variant.c_str(),
                    r.setting.c_str(), static_cast<unsigned long long>(r.seed), r.summary.success, r.summary.precision,
                    r.seconds);
        std::fflush(stdout);
      };
      const fs::path root(data);
      auto results = eval::run_grid(dataset::read_dataset(root / "train"), dataset::read_dataset(root / "test"), grid,
                                    progress);
      if (!scaled.empty()) {
        grid.setting = "scaled";
        const fs::path sroot(scaled);
        const auto more = eval::run_grid(dataset::read_dataset(sroot / "train"), dataset::read_dataset(sroot / "test"),
                                         grid, progress);
        results.insert(results.end(), more.begin(), more.end());
      }
      std::printf("\n%-14s %9s %9s", "variant", "success", "precision");
      if (!scaled.empty()) std::printf(" %9s %9s", "scaled", "gap");
      std::printf("\n");
      for (const auto& v : grid.variants) {
        const auto m = eval::mean_over_seeds(results, v, "original");
        std::printf("%-14s %9.3f %9.3f", v.c_str(), m.success, m.precision);
        if (!scaled.empty()) {
          std::printf(" %9.3f %9.3f", eval::mean_over_seeds(results, v, "scaled").success, eval::success_gap(results, v));
        }
        std::printf("\n");
      }
      if (!out.empty()) io::write_file_atomic(fs::path(out) / "results.csv", eval::results_csv(results));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
