#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>

#include "stk/core/error.hpp"
#include "stk/core/io.hpp"
#include "stk/dataset/synthetic.hpp"
#include "stk/tensor/grad_check.hpp"
#include "stk/training/trainer.hpp"
#include "test_util.hpp"

using namespace stk;
using namespace stk::training;
using stk::test::kGradTol;
using stk::test::kTrials;
using stk::test::random_tensor;

namespace fs = std::filesystem;

namespace {

model::ModelConfig small_model() {
  model::ModelConfig c;
  c.feature_dim = 8;
  c.heads = 2;
  c.search_points = 64;
  c.template_points = 32;
  c.search_stages = {32, 16};
  c.template_stages = {16, 8};
  c.neighbors = 4;
  c.prototypes = 8;
  c.tapm_depth = 1;
  c.vit_blocks = 1;
  c.vit_channels = 16;
  c.head_channels = 4;
  return c;
}

TrainConfig small_train(std::uint64_t seed = 0) {
  TrainConfig c;
  c.seed = seed;
  c.model = small_model();
  c.sample.search_points = c.model.search_points;
  c.sample.template_points = c.model.template_points;
  c.batch_size = 2;
  c.steps = 6;
  c.checkpoint_every = 3;
  return c;
}

std::vector<dataset::Sequence> small_data() {
  dataset::GenSpec spec;
  spec.num_sequences = 2;
  spec.frames_per_seq = 6;
  return dataset::generate_synthetic(11, spec);
}

PreparedSample first_sample(const std::vector<dataset::Sequence>& data, const TrainConfig& cfg) {
  std::mt19937_64 rng(3);
  for (std::size_t f = 1;; ++f) {
    const auto s = dataset::make_training_sample(data[0], f, rng, cfg.sample);
    if (s) return prepare(*s);
  }
}

double focal_term(double p, double g) {
  return g == 1.0 ? -(1 - p) * (1 - p) * std::log(p) : -std::pow(1 - g, 4) * p * p * std::log(1 - p);
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("stk_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  const auto bytes = io::read_file(p);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

// ---- losses ------------------------------------------------------------------

TEST(Focal, MatchesHandComputedTerms) {
  const Tensor64 heat({1, 3, 1}, {0.5, 0.2, 0.1});
  const std::vector<double> target{1.0, 0.5, 0.0};
  const double expected = focal_term(0.5, 1.0) + focal_term(0.2, 0.5) + focal_term(0.1, 0.0);
  EXPECT_NEAR(focal_loss(heat, target).item(), expected, 1e-15);
  EXPECT_NEAR(focal_loss(heat, {1.0, 0.0, 0.0}).item(), 0.25 * std::log(2.0) + focal_term(0.2, 0) + focal_term(0.1, 0),
              1e-15);
  // Two positives halve the sum.
  const Tensor64 pair({2}, {0.5, 0.5});
  EXPECT_NEAR(focal_loss(pair, {1.0, 1.0}).item(), focal_term(0.5, 1.0), 1e-15);
}

TEST(Focal, PerfectPredictionIsNearZeroAndClampedFinite) {
  const Tensor64 heat({4}, {1.0, 0.0, 0.0, 0.0});
  const double loss = focal_loss(heat, {1.0, 0.5, 0.25, 0.0}).item();
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-3);
  const Tensor64 worst({2}, {0.0, 1.0});
  EXPECT_TRUE(std::isfinite(focal_loss(worst, {1.0, 0.0}).item()));
}

TEST(Focal, GradientMatchesCentralDifferences) {
  for (int t = 0; t < kTrials; ++t) {
    const auto logits = random_tensor({5, 4, 1}, 100 + t, -2.5, 2.5);
    std::vector<double> target(20);
    std::mt19937_64 rng(200 + t);
    for (auto& g : target) g = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
    target[rng() % 20] = 1.0;
    EXPECT_LT(grad_check([&](const Tensor64& x) { return focal_loss(sigmoid(x), target); }, logits), kGradTol);
  }
}

TEST(SmoothL1, QuadraticAndLinearBranches) {
  EXPECT_EQ(smooth_l1(Tensor64({1}, {0.3}), {0.3}).item(), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor64({1}, {0.5}), {0.0}).item(), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor64({1}, {-2.0}), {0.0}).item(), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor64({2}, {0.5, 2.0}), {0.0, 0.0}).item(), (0.125 + 1.5) / 2);
}

TEST(SmoothL1, GradientMatchesCentralDifferences) {
  for (int t = 0; t < kTrials; ++t) {
    const auto x = random_tensor({6}, 300 + t, -3, 3);
    const std::vector<double> target{0.1, -0.2, 0.0, 0.4, -1.5, 2.2};
    EXPECT_LT(grad_check([&](const Tensor64& p) { return smooth_l1(p, target); }, x), kGradTol);
  }
}

TEST(TotalLoss, ExactLinearCombinationOfComponents) {
  const model::OutputGrid grid{-0.4, -0.4, 0.2, 4, 4};
  const auto targets = model::build_targets(geometry::make_box({0.05, -0.03, 0.2}, {0.5, 0.5, 1}, 0.3), grid);
  model::PredictionMaps<double> maps{sigmoid(random_tensor({4, 4, 1}, 1)), random_tensor({4, 4, 3}, 2),
                                     random_tensor({4, 4, 1}, 3)};
  const auto protos = random_tensor({5, 3}, 4);
  const auto aligned = random_tensor({7, 3}, 5);
  for (const LossWeights w : {LossWeights{}, LossWeights{1, 2, 2e-7}, LossWeights{0.5, 3, 0}}) {
    const auto terms = total_loss(maps, targets, &protos, aligned, w);
    EXPECT_GE(terms.parts.hm, 0);
    EXPECT_GE(terms.parts.off, 0);
    EXPECT_GE(terms.parts.z, 0);
    EXPECT_GT(terms.parts.cd, 0);
    EXPECT_NEAR(terms.total.item(), combine(terms.parts, w), 1e-12);
  }
  LossComponents c{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(combine(c, LossWeights{}), 9.000004);
  // Without prototypes the chamfer term is absent.
  const auto plain = total_loss<double>(maps, targets, nullptr, aligned, LossWeights{});
  EXPECT_EQ(plain.parts.cd, 0.0);
  EXPECT_NEAR(plain.total.item(), plain.parts.hm + plain.parts.off + 2 * plain.parts.z, 1e-12);
}

TEST(TotalLoss, NonFiniteComponentIsNamed) {
  const model::OutputGrid grid{-0.4, -0.4, 0.2, 4, 4};
  const auto targets = model::build_targets(geometry::make_box({0, 0, 0}, {0.5, 0.5, 1}, 0), grid);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto check = [&](model::PredictionMaps<double> maps, Tensor64 protos, const std::string& name) {
    try {
      total_loss(maps, targets, &protos, random_tensor({3, 3}, 9), LossWeights{});
      ADD_FAILURE() << "accepted non-finite " << name;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
      EXPECT_NE(e.detail().find("'" + name + "'"), std::string::npos) << e.detail();
    }
  };
  auto maps = [&] {
    return model::PredictionMaps<double>{sigmoid(random_tensor({4, 4, 1}, 1)), random_tensor({4, 4, 3}, 2),
                                         random_tensor({4, 4, 1}, 3)};
  };
  auto heat = maps();
  heat.heat.mutable_data()[5] = nan;
  check(heat, random_tensor({2, 3}, 4), "hm");
  auto off = maps();
  off.offset.mutable_data()[(targets.row * 4 + targets.col) * 3] = nan;
  check(off, random_tensor({2, 3}, 4), "off");
  auto z = maps();
  z.z.mutable_data()[targets.row * 4 + targets.col] = nan;
  check(z, random_tensor({2, 3}, 4), "z");
  auto protos = random_tensor({2, 3}, 4);
  protos.mutable_data()[0] = nan;
  check(maps(), protos, "cd");
  EXPECT_THROW(total_loss<double>(maps(), targets, nullptr, random_tensor({3, 3}, 9), LossWeights{1, -1, 0}), Error);
}

TEST(TotalLoss, EveryParameterGroupReceivesGradient) {
  const auto cfg = small_train();
  const auto data = small_data();
  const auto sample = first_sample(data, cfg);
  model::TrackerNet<double> net(cfg.variant_model(), 5);
  sample_loss(net, sample, weights_for(data[0].category)).total.backward();
  std::map<std::string, bool> touched;
  for (const auto& p : net.parameters()) {
    const auto group = p.name.substr(0, p.name.find('.', p.name.find('.') + 1));
    bool nonzero = p.tensor.has_grad() &&
                   std::any_of(p.tensor.grad().begin(), p.tensor.grad().end(), [](double g) { return g != 0; });
    touched[group] = touched[group] || nonzero;
  }
  for (const auto& [group, nonzero] : touched) EXPECT_TRUE(nonzero) << group;
  EXPECT_GE(touched.size(), 6u);
}

TEST(Weights, ChamferWeightFollowsCategory) {
  EXPECT_EQ(weights_for(dataset::Category::kRigid).lambda3, 2e-7);
  EXPECT_EQ(weights_for(dataset::Category::kNonRigid).lambda3, 1e-6);
  EXPECT_EQ(weights_for(dataset::Category::kRigid).lambda1, 1.0);
  EXPECT_EQ(weights_for(dataset::Category::kNonRigid).lambda2, 2.0);
}

// ---- optimizer -----------------------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor64 w({3}, {1.0, -2.0, 0.5}, true);
  Adam<double> adam({{"w", w}}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  sum(mul(w, Tensor64({3}, {2.0, -3.0, 0.0}))).backward();
  adam.step();
  EXPECT_NEAR(w.data()[0], 0.9, 1e-9);
  EXPECT_NEAR(w.data()[1], -1.9, 1e-9);
  EXPECT_EQ(w.data()[2], 0.5);
  EXPECT_EQ(w.grad()[0], 0.0);
  EXPECT_EQ(adam.steps(), 1u);
  EXPECT_THROW(Adam<double>({{"w", w}}, AdamConfig{0.0}), Error);
}

// ---- trainer -------------------------------------------------------------------

TEST(Trainer, ConfigJsonRoundTripAndRejections) {
  auto cfg = small_train(7);
  cfg.variant = "shuffle+vit";
  cfg.adam.learning_rate = 5e-4;
  const auto back = train_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(train_config_from_json("{}").variant, "full");
  auto kind = [](const std::string& text) {
    try {
      train_config_from_json(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kIo;
  };
  EXPECT_EQ(kind(R"({"batchSize": 0})"), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind(R"({"variant": "bogus"})"), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind(R"({"steps": "many"})"), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind("[1]"), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind("{"), ErrorKind::kInvalidArgument);
}

TEST(Trainer, RepeatedSampleLossDecreases) {
  const auto data = small_data();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto cfg = small_train(seed);
    const auto sample = first_sample(data, cfg);
    model::TrackerNet<float> net(cfg.variant_model(), seed);
    Adam<float> adam(net.parameters(), cfg.adam);
    const auto weights = weights_for(data[0].category);
    double first = 0, last = 0, first_cd = 0, last_cd = 0;
    for (int step = 1; step <= 50; ++step) {
      const auto terms = sample_loss(net, sample, weights);
      terms.total.backward();
      adam.step();
      if (step == 1) {
        first = terms.total.item();
        first_cd = terms.parts.cd;
      }
      last = terms.total.item();
      last_cd = terms.parts.cd;
    }
    EXPECT_LT(last, first) << "seed " << seed;
    EXPECT_LT(last_cd, first_cd) << "seed " << seed;
  }
}

TEST(Trainer, StepDrawDependsOnlyOnSeedAndStep) {
  const auto data = small_data();
  Trainer a(small_train(4), data), b(small_train(4), data), c(small_train(5), data);
  const auto la = a.step(), lb = b.step(), lc = c.step();
  EXPECT_EQ(csv_row(la), csv_row(lb));
  EXPECT_NE(csv_row(la), csv_row(lc));
  EXPECT_EQ(la.step, 1u);
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  TempDir dir("training_resume");
  const auto data = small_data();
  auto cfg = small_train(2);
  const auto straight = dir.path() / "straight.ckpt";
  train(data, cfg, straight);

  const auto resumed = dir.path() / "resumed.ckpt";
  auto half = cfg;
  half.steps = 3;
  train(data, half, resumed);
  EXPECT_NE(slurp(resumed), slurp(straight));
  train(data, cfg, resumed, true);

  EXPECT_EQ(slurp(resumed), slurp(straight));
  EXPECT_EQ(slurp(log_path(resumed)), slurp(log_path(straight)));
  const auto log = slurp(log_path(straight));
  EXPECT_EQ(log.rfind(csv_header() + "\n", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 7);

  // The saved parameters load as a plain model.
  const auto net = model::load_model<float>(straight);
  EXPECT_EQ(model::to_json(net.config()), model::to_json(cfg.variant_model()));
}

TEST(Trainer, DivergenceKeepsLastCheckpoint) {
  TempDir dir("training_diverge");
  const auto data = small_data();
  auto cfg = small_train(1);
  cfg.checkpoint_every = 1;
  cfg.steps = 50;
  cfg.adam.learning_rate = 1e30;
  const auto path = dir.path() / "run.ckpt";
  try {
    train(data, cfg, path);
    FAIL() << "training with a huge step size stayed finite";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
  }
  ASSERT_TRUE(fs::exists(path));
  Trainer check(cfg, data);
  check.restore(path);
  EXPECT_GE(check.steps_done(), 1u);
  EXPECT_FALSE(fs::exists(dir.path() / "run.ckpt.tmp"));
}

TEST(Trainer, RejectsEmptyData) {
  EXPECT_THROW(Trainer(small_train(), {}), Error);
}
