#include "stk/training/trainer.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "stk/core/error.hpp"
#include "stk/core/io.hpp"
#include "stk/model/checkpoint.hpp"
#include "stk/tensor/ops.hpp"

namespace stk::training {

namespace {

constexpr int kDrawAttempts = 32;

std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  return std::mt19937_64(seq);
}

nlohmann::json parse_json(std::string_view text, const char* what) {
  try {
    auto j = nlohmann::json::parse(text);
    require(j.is_object(), ErrorKind::kInvalidArgument, std::string(what) + " must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string(what) + ": " + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::kInvalidArgument, "train config: " + what); };
  check(steps >= 1, "steps must be >= 1");
  check(batch_size >= 1, "batchSize must be >= 1");
  check(checkpoint_every >= 1, "checkpointEvery must be >= 1");
  check(adam.learning_rate > 0, "learningRate must be positive");
  check(sample.search_points == model.search_points && sample.template_points == model.template_points,
        "sample point counts must match the model");
  check(sample.margin > 0 && sample.jitter_xy >= 0 && sample.jitter_z >= 0, "invalid sample settings");
  variant_model().validate();
}

model::ModelConfig TrainConfig::variant_model() const { return model::apply_variant(model, variant); }

std::string to_json(const TrainConfig& c) {
  const nlohmann::json j{{"seed", c.seed},
                         {"steps", c.steps},
                         {"batchSize", c.batch_size},
                         {"checkpointEvery", c.checkpoint_every},
                         {"learningRate", c.adam.learning_rate},
                         {"beta1", c.adam.beta1},
                         {"beta2", c.adam.beta2},
                         {"epsilon", c.adam.epsilon},
                         {"variant", c.variant},
                         {"model", nlohmann::json::parse(model::to_json(c.model))},
                         {"sample",
                          {{"margin", c.sample.margin}, {"jitterXy", c.sample.jitter_xy}, {"jitterZ", c.sample.jitter_z}}}};
  return j.dump(2);
}

TrainConfig train_config_from_json(std::string_view text) {
  TrainConfig c;
  const auto j = parse_json(text, "train config");
  try {
    c.seed = j.value("seed", c.seed);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batchSize", c.batch_size);
    c.checkpoint_every = j.value("checkpointEvery", c.checkpoint_every);
    c.adam.learning_rate = j.value("learningRate", c.adam.learning_rate);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
    c.variant = j.value("variant", c.variant);
    if (j.contains("model")) c.model = model::model_config_from_json(j["model"].dump());
    if (j.contains("sample")) {
      const auto& s = j["sample"];
      c.sample.margin = s.value("margin", c.sample.margin);
      c.sample.jitter_xy = s.value("jitterXy", c.sample.jitter_xy);
      c.sample.jitter_z = s.value("jitterZ", c.sample.jitter_z);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("train config: ") + e.what());
  }
  c.sample.search_points = c.model.search_points;
  c.sample.template_points = c.model.template_points;
  c.validate();
  return c;
}

std::string csv_header() { return "step,hm,off,z,cd,total"; }

std::string csv_row(const StepLog& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(r.step), r.parts.hm,
                r.parts.off, r.parts.z, r.parts.cd, r.total);
  return buf;
}

std::filesystem::path log_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".log.csv";
  return p;
}

PreparedSample prepare(const dataset::TrainingSample& s) {
  return {geometry::cloud_in_frame(s.search, s.reference), s.template_points, geometry::box_in_frame(s.gt, s.reference),
          geometry::cloud_in_frame(s.aligned_template, s.reference)};
}

template <typename T>
LossTerms<T> sample_loss(const model::TrackerNet<T>& net, const PreparedSample& sample, const LossWeights& weights) {
  const auto targets = model::build_targets(sample.gt, net.config().output_grid());
  const auto out = net.forward(sample.search, sample.template_points);
  const auto aligned = geometry::to_tensor<T>(sample.aligned_template);
  return total_loss(out.maps, targets, out.tapm ? &out.tapm->coords : nullptr, aligned, weights);
}

Trainer::Trainer(const TrainConfig& cfg, const std::vector<dataset::Sequence>& data)
    : cfg_((cfg.validate(), cfg)),
      data_(data),
      net_(std::make_unique<model::TrackerNet<float>>(cfg.variant_model(), cfg.seed)),
      optimizer_(net_->parameters(), cfg.adam) {
  require(!data.empty(), ErrorKind::kEmptyInput, "training needs at least one sequence");
  for (const auto& seq : data) dataset::validate(seq);
}

StepLog Trainer::step() {
  auto rng = step_rng(cfg_.seed, optimizer_.steps());
  StepLog log;
  log.step = optimizer_.steps() + 1;
  const double inv_batch = 1.0 / static_cast<double>(cfg_.batch_size);
  const auto grid = net_->config().output_grid();
  for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
    std::optional<PreparedSample> prepared;
    dataset::Category category = dataset::Category::kRigid;
    for (int attempt = 0; attempt < kDrawAttempts && !prepared; ++attempt) {
      const auto& seq = data_[std::uniform_int_distribution<std::size_t>(0, data_.size() - 1)(rng)];
      const auto frame = std::uniform_int_distribution<std::size_t>(1, seq.frames.size() - 1)(rng);
      const auto sample = dataset::make_training_sample(seq, frame, rng, cfg_.sample);
      if (!sample) continue;
      auto p = prepare(*sample);
      const double cx = (p.gt.center.x() - grid.x_min) / grid.cell, cy = (p.gt.center.y() - grid.y_min) / grid.cell;
      if (cx < 0 || cy < 0 || cx >= static_cast<double>(grid.rows) || cy >= static_cast<double>(grid.cols)) continue;
      prepared = std::move(p);
      category = seq.category;
    }
    require(prepared.has_value(), ErrorKind::kEmptyInput,
            "no usable training sample after " + std::to_string(kDrawAttempts) + " draws");
    const auto terms = sample_loss(*net_, *prepared, weights_for(category));
    scale(terms.total, inv_batch).backward();
    log.parts.hm += terms.parts.hm * inv_batch;
    log.parts.off += terms.parts.off * inv_batch;
    log.parts.z += terms.parts.z * inv_batch;
    log.parts.cd += terms.parts.cd * inv_batch;
    log.total += static_cast<double>(terms.total.item()) * inv_batch;
  }
  optimizer_.step();
  return log;
}

void Trainer::save(const std::filesystem::path& path) const {
  nn::ParameterList<float> tensors = net_->parameters();
  for (auto& entry : optimizer_.state()) tensors.push_back(std::move(entry));
  auto train_json = nlohmann::json::parse(to_json(cfg_));
  train_json["step"] = optimizer_.steps();
  const nlohmann::json sidecar{{"model", nlohmann::json::parse(model::to_json(net_->config()))}, {"train", train_json}};
  model::save_checkpoint(path, tensors, sidecar.dump(2) + "\n");
}

void Trainer::restore(const std::filesystem::path& path) {
  const auto tensors = model::load_checkpoint_tensors(path);
  auto params = net_->parameters();
  model::assign_by_name(tensors, params);
  optimizer_.load_state(tensors);
}

void train(const std::vector<dataset::Sequence>& data, const TrainConfig& cfg, const std::filesystem::path& path,
           bool resume) {
  Trainer trainer(cfg, data);
  std::vector<std::string> rows;
  const auto log_file = log_path(path);
  if (resume) {
    trainer.restore(path);
    const auto bytes = io::read_file(log_file);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    std::getline(in, line);
    require(line == csv_header(), ErrorKind::kInvalidArgument, log_file.string() + ": unexpected header");
    while (rows.size() < trainer.steps_done() && std::getline(in, line)) rows.push_back(line);
    require(rows.size() == trainer.steps_done(), ErrorKind::kTruncated,
            log_file.string() + ": fewer rows than checkpointed steps");
  }
  auto flush_log = [&] {
    std::string text = csv_header() + "\n";
    for (const auto& r : rows) text += r + "\n";
    io::write_file_atomic(log_file, text);
  };
  while (trainer.steps_done() < cfg.steps) {
    rows.push_back(csv_row(trainer.step()));
    if (trainer.steps_done() % cfg.checkpoint_every == 0 || trainer.steps_done() == cfg.steps) {
      trainer.save(path);
      flush_log();
    }
  }
}

template LossTerms<float> sample_loss(const model::TrackerNet<float>&, const PreparedSample&, const LossWeights&);
template LossTerms<double> sample_loss(const model::TrackerNet<double>&, const PreparedSample&, const LossWeights&);

}  // namespace stk::training
