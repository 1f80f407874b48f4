#include "stk/eval/experiment.hpp"

#include <chrono>
#include <cstdio>

#include "stk/core/error.hpp"
#include "stk/model/config.hpp"

namespace stk::eval {

std::vector<std::string> grid_variants(std::string_view components) {
  std::vector<std::string> parts;
  for (std::size_t start = 0; start <= components.size();) {
    const auto end = std::min(components.find(',', start), components.size());
    const std::string part(components.substr(start, end - start));
    require(part == "tapm" || part == "rgs" || part == "vit" || part == "shuffle", ErrorKind::kInvalidArgument,
            "unknown component '" + part + "'; expected tapm, rgs, vit or shuffle");
    for (const auto& p : parts) require(p != part, ErrorKind::kInvalidArgument, "component '" + part + "' repeated");
    parts.push_back(part);
    start = end + 1;
  }
  require(parts.size() <= 4, ErrorKind::kInvalidArgument, "too many components");
  std::vector<std::string> out;
  for (std::size_t mask = 0; mask < (1u << parts.size()); ++mask) {
    bool tapm = false, vit = false, shuffle = false;
    for (std::size_t b = 0; b < parts.size(); ++b) {
      if (!(mask >> b & 1)) continue;
      tapm |= parts[b] == "tapm";
      vit |= parts[b] == "rgs" || parts[b] == "vit";
      shuffle |= parts[b] == "rgs" || parts[b] == "shuffle";
    }
    std::string name;
    for (const auto& candidate : model::variant_names()) {
      const auto c = model::apply_variant({}, candidate);
      if (c.use_tapm == tapm && c.use_vit == vit && c.use_shuffle == shuffle) name = candidate;
    }
    bool seen = false;
    for (const auto& v : out) seen = seen || v == name;
    if (!seen) out.push_back(name);
  }
  return out;
}

std::vector<RunResult> run_grid(const std::vector<dataset::Sequence>& train_split,
                                const std::vector<dataset::Sequence>& test_split, const GridSpec& spec,
                                const Progress& progress) {
  require(!spec.variants.empty() && !spec.seeds.empty(), ErrorKind::kEmptyInput, "grid needs variants and seeds");
  require(!test_split.empty(), ErrorKind::kEmptyInput, "grid needs held-out sequences");
  std::vector<RunResult> results;
  for (const auto& variant : spec.variants) {
    for (const auto seed : spec.seeds) {
      const auto start = std::chrono::steady_clock::now();
      auto cfg = spec.train;
      cfg.variant = variant;
      cfg.seed = seed;
      training::Trainer trainer(cfg, train_split);
      while (trainer.steps_done() < cfg.steps) trainer.step();
      if (!spec.checkpoint_dir.empty()) {
        trainer.save(spec.checkpoint_dir / (spec.setting + "-" + variant + "-s" + std::to_string(seed) + ".ckpt"));
      }
      TrackOptions options;
      options.seed = spec.track_seed;
      options.search_points = cfg.model.search_points;
      options.template_points = cfg.model.template_points;
      options.margin = cfg.sample.margin;
      const auto reports = track_dataset(model_predictor(trainer.net()), test_split, options);
      RunResult r{variant, spec.setting, seed, summarize(reports), 0};
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (progress) progress(r);
      results.push_back(r);
    }
  }
  return results;
}

Summary mean_over_seeds(const std::vector<RunResult>& results, std::string_view variant, std::string_view setting) {
  Summary out;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (r.variant != variant || r.setting != setting) continue;
    out.success += r.summary.success;
    out.precision += r.summary.precision;
    out.frames += r.summary.frames;
    ++n;
  }
  require(n > 0, ErrorKind::kEmptyInput,
          "no runs for variant '" + std::string(variant) + "' in setting '" + std::string(setting) + "'");
  out.success /= static_cast<double>(n);
  out.precision /= static_cast<double>(n);
  return out;
}

double success_gap(const std::vector<RunResult>& results, std::string_view variant) {
  return mean_over_seeds(results, variant, "original").success - mean_over_seeds(results, variant, "scaled").success;
}

std::string results_csv(const std::vector<RunResult>& results) {
  std::string out = "variant,setting,seed,success,precision\n";
  for (const auto& r : results) {
    char buf[96];
    std::snprintf(buf, sizeof buf, ",%llu,%.6f,%.6f\n", static_cast<unsigned long long>(r.seed), r.summary.success,
                  r.summary.precision);
    out += r.variant + "," + r.setting + buf;
  }
  return out;
}

}  // namespace stk::eval
