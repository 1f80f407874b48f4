#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "stk/core/error.hpp"
#include "stk/model/checkpoint.hpp"
#include "stk/model/tracker.hpp"
#include "stk/tensor/grad_check.hpp"
#include "stk/tensor/ops.hpp"
#include "test_util.hpp"

using namespace stk;
using namespace stk::model;
using geometry::Point;
using geometry::PointCloud;
using stk::test::kGradTol;
using stk::test::kProbes;
using stk::test::kTrials;
using stk::test::probe;
using stk::test::random_tensor;

namespace {

ModelConfig tiny_config(bool tapm = true, bool vit = true, bool shuffle = true) {
  ModelConfig c;
  c.feature_dim = 8;
  c.heads = 2;
  c.search_points = 32;
  c.template_points = 16;
  c.search_stages = {16, 8};
  c.template_stages = {8, 4};
  c.neighbors = 4;
  c.prototypes = 4;
  c.tapm_depth = 2;
  c.vit_blocks = 1;
  c.vit_channels = 16;
  c.head_channels = 4;
  c.bev = BevConfig{0.2, -0.4, 0.4, -0.6, 0.6, -0.5, 0.5};
  c.use_tapm = tapm;
  c.use_vit = vit;
  c.use_shuffle = shuffle;
  return c;
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double hx = 0.5, double hy = 0.7, double hz = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-hx, hx), uy(-hy, hy), uz(-hz, hz);
  PointCloud pc(n);
  for (auto& p : pc) p = Point(static_cast<float>(ux(rng)), static_cast<float>(uy(rng)), static_cast<float>(uz(rng)));
  return pc;
}

template <typename T>
std::vector<Tensor64> leaves_of(const nn::ParameterList<T>& params) {
  std::vector<Tensor64> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

template <typename Module>
nn::ParameterList<double> params_of(const Module& m) {
  nn::ParameterList<double> out;
  m.collect("m", out);
  return out;
}

void expect_rows_equal(const Tensor64& a, const Tensor64& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t k = 0; k < a.numel(); ++k) EXPECT_NEAR(a.data()[k], b.data()[k], tol) << "index " << k;
}

bool all_zero_grad(const Tensor64& t) {
  if (!t.has_grad()) return true;
  return std::all_of(t.grad().begin(), t.grad().end(), [](double g) { return g == 0.0; });
}

}  // namespace

// ---- config ----------------------------------------------------------------

TEST(Config, JsonRoundTripAndVariants) {
  auto c = tiny_config(false, true, false);
  const auto back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(model_config_from_json("{\"heads\": 3}"), Error);
  EXPECT_THROW(model_config_from_json("not json"), Error);
  const auto full = apply_variant(c, "full");
  EXPECT_TRUE(full.use_tapm && full.use_vit && full.use_shuffle);
  const auto sv = apply_variant(c, "shuffle+vit");
  EXPECT_TRUE(!sv.use_tapm && sv.use_vit && sv.use_shuffle);
  EXPECT_THROW(apply_variant(c, "rgs+magic"), Error);
}

TEST(Config, OutputGridDoublesWithShuffle) {
  ModelConfig c;
  EXPECT_EQ(c.bev.rows(), 24u);
  const auto g = c.output_grid();
  EXPECT_EQ(g.rows, 48u);
  EXPECT_DOUBLE_EQ(g.cell, 0.1);
  c.use_shuffle = false;
  EXPECT_EQ(c.output_grid().rows, 24u);
  c.bev.x_max = 2.5;
  EXPECT_THROW(c.validate(), Error);
}

// ---- backbone --------------------------------------------------------------

TEST(Encoder, EmbeddingIsPermutationEquivariant) {
  Initializer init(3);
  PointEncoder<double> enc(tiny_config(), init);
  const auto pc = random_cloud(20, 4);
  std::vector<std::uint32_t> perm(pc.size());
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), std::mt19937(5));
  const auto permuted = geometry::select(pc, perm);
  expect_rows_equal(enc.embed(permuted), gather_rows(enc.embed(pc), perm), 0.0);
}

TEST(Encoder, SharedWeightsGiveIdenticalPaths) {
  auto cfg = tiny_config();
  cfg.template_stages = cfg.search_stages;
  cfg.template_points = cfg.search_points;
  TrackerNet<double> net(cfg, 1);
  const auto pc = random_cloud(32, 2);
  const auto s = net.backbone.encode_search(pc);
  const auto t = net.backbone.encode_template(pc);
  expect_rows_equal(s.features, t.features, 0.0);
  for (const auto& p : net.parameters()) EXPECT_EQ(p.name.find("template"), std::string::npos) << p.name;
}

TEST(Encoder, OutputShapesAndTooFewPoints) {
  TrackerNet<double> net(tiny_config(), 1);
  const auto s = net.backbone.encode_search(random_cloud(32, 3));
  EXPECT_EQ(s.features.shape(), (Shape{8, 8}));
  EXPECT_EQ(s.coords.size(), 8u);
  EXPECT_THROW(net.backbone.encode_search(random_cloud(10, 3)), Error);
}

TEST(Encoder, GradientMatchesCentralDifferences) {
  for (int seed = 0; seed < kTrials; ++seed) {
    Initializer init(100 + seed);
    PointEncoder<double> enc(tiny_config(), init);
    const auto pc = random_cloud(32, 200 + seed);
    const auto params = params_of(enc);
    const auto err = grad_check_leaves([&] { return probe(enc(pc, {16, 8}).features, seed); }, leaves_of(params),
                                       1e-3, kProbes);
    EXPECT_LT(err, kGradTol) << "seed " << seed;
  }
}

TEST(Fusion, InvariantToTemplateRowOrderAndShaped) {
  TrackerNet<double> net(tiny_config(), 7);
  const auto ft = random_tensor({6, 8}, 1);
  const auto fs = random_tensor({5, 8}, 2);
  const std::vector<std::uint32_t> perm{3, 0, 5, 1, 4, 2};
  const auto a = net.backbone.relation_fuse(ft, fs);
  EXPECT_EQ(a.shape(), (Shape{5, 8}));
  expect_rows_equal(a, net.backbone.relation_fuse(gather_rows(ft, perm), fs), 1e-12);
  EXPECT_THROW(net.backbone.relation_fuse(random_tensor({6, 4}, 1), fs), Error);
}

TEST(Fusion, GradientMatchesCentralDifferences) {
  for (int seed = 0; seed < kTrials; ++seed) {
    TrackerNet<double> net(tiny_config(), 300 + seed);
    auto ft = random_tensor({6, 8}, 400 + seed);
    auto fs = random_tensor({5, 8}, 500 + seed);
    auto leaves = leaves_of(params_of(net.backbone.fusion));
    leaves.push_back(ft);
    leaves.push_back(fs);
    const auto err = grad_check_leaves([&] { return probe(net.backbone.relation_fuse(ft, fs), seed); }, leaves,
                                       1e-3, kProbes);
    EXPECT_LT(err, kGradTol) << "seed " << seed;
  }
}

// ---- prototype mining --------------------------------------------------------

TEST(Tapm, ZeroMaskWeightsHalveFeatures) {
  Initializer init(1);
  Tapm<double> tapm(tiny_config(), init);
  std::fill(tapm.mask_proj.weight.mutable_data().begin(), tapm.mask_proj.weight.mutable_data().end(), 0.0);
  tapm.mask_proj.bias.mutable_data()[0] = 0.0;
  const auto f = random_tensor({5, 8}, 3);
  const auto out = tapm.mask_and_enhance(f);
  for (double m : out.mask.data()) EXPECT_EQ(m, 0.5);
  for (std::size_t k = 0; k < f.numel(); ++k) EXPECT_EQ(out.enhanced.data()[k], 0.5 * f.data()[k]);
  tapm.mask_proj.bias.mutable_data()[0] = 20.0;
  expect_rows_equal(tapm.mask_and_enhance(f).enhanced, f, 1e-6);
}

TEST(Tapm, MaskInsideUnitIntervalAndShrinksRows) {
  Initializer init(2);
  Tapm<double> tapm(tiny_config(), init);
  const auto f = random_tensor({7, 8}, 4, -3, 3);
  const auto out = tapm.mask_and_enhance(f);
  for (double m : out.mask.data()) {
    EXPECT_GT(m, 0.0);
    EXPECT_LT(m, 1.0);
  }
  for (std::size_t r = 0; r < 7; ++r) {
    double a = 0, b = 0;
    for (std::size_t c = 0; c < 8; ++c) {
      a += std::pow(out.enhanced.data()[r * 8 + c], 2);
      b += std::pow(f.data()[r * 8 + c], 2);
    }
    EXPECT_LE(a, b);
  }
}

TEST(Tapm, TwoTokenAttentionIsConvexMixOfValues) {
  auto cfg = tiny_config();
  cfg.heads = 1;
  cfg.prototypes = 1;
  cfg.tapm_depth = 1;
  Initializer init(9);
  Tapm<double> tapm(cfg, init);
  const auto x = random_tensor({2, 8}, 10);
  const auto& mha = tapm.blocks[0].attention;
  const auto out = mha(x, x, x);
  const auto values = mha.out_proj(mha.v_proj(x));  // rows: projected values of the two tokens
  for (std::size_t r = 0; r < 2; ++r) {
    // out_r = a * values_0 + (1 - a) * values_1 for one a in [0, 1]
    const double d0 = values.data()[0] - values.data()[8];
    const double a = (out.data()[r * 8] - values.data()[8]) / d0;
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    for (std::size_t c = 0; c < 8; ++c) {
      EXPECT_NEAR(out.data()[r * 8 + c], a * values.data()[c] + (1 - a) * values.data()[8 + c], 1e-12);
    }
  }
  const auto split = tapm.iterate_prototypes(random_tensor({1, 8}, 11));
  EXPECT_EQ(split.teacher.shape(), (Shape{1, 8}));
  EXPECT_EQ(split.prototypes.shape(), (Shape{1, 8}));
}

TEST(Tapm, PrototypesIgnoreSearchRowOrder) {
  Initializer init(12);
  Tapm<double> tapm(tiny_config(), init);
  const auto f = random_tensor({6, 8}, 13);
  const std::vector<std::uint32_t> perm{5, 3, 1, 0, 2, 4};
  const auto a = tapm.iterate_prototypes(f);
  const auto b = tapm.iterate_prototypes(gather_rows(f, perm));
  EXPECT_EQ(a.teacher.shape(), (Shape{6, 8}));
  EXPECT_EQ(a.prototypes.shape(), (Shape{4, 8}));
  expect_rows_equal(a.prototypes, b.prototypes, 1e-6);
  expect_rows_equal(gather_rows(a.teacher, perm), b.teacher, 1e-6);
}

TEST(Tapm, ZeroCoordinateHeadPutsPrototypesAtRegionCenter) {
  auto cfg = tiny_config();
  Initializer init(14);
  Tapm<double> tapm(cfg, init);
  for (auto* t : {&tapm.coord_out.weight, &tapm.coord_out.bias}) {
    std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
  }
  const auto coords = tapm.predict_prototype_coords(random_tensor({4, 8}, 15));
  ASSERT_EQ(coords.shape(), (Shape{4, 3}));
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_NEAR(coords.data()[3 * r + 0], 0.0, 1e-15);
    EXPECT_NEAR(coords.data()[3 * r + 1], 0.0, 1e-15);
    EXPECT_NEAR(coords.data()[3 * r + 2], 0.0, 1e-15);
  }
  // Large outputs stay inside the region.
  std::fill(tapm.coord_out.bias.mutable_data().begin(), tapm.coord_out.bias.mutable_data().end(), 50.0);
  const auto far = tapm.predict_prototype_coords(random_tensor({4, 8}, 15));
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_LE(far.data()[3 * r + 0], cfg.bev.x_max);
    EXPECT_LE(far.data()[3 * r + 1], cfg.bev.y_max);
    EXPECT_LE(far.data()[3 * r + 2], cfg.bev.z_max);
  }
}

TEST(Tapm, BranchDoesNotReachUpstreamGraph) {
  Initializer init(16);
  Tapm<double> tapm(tiny_config(), init);
  auto upstream = random_tensor({5, 8}, 17).set_requires_grad(true);
  nn::Linear<double> proj(8, 8, init);
  const auto fused = proj(upstream);
  const auto out = tapm(fused);
  sum(add(out.coords, Tensor64::zeros({4, 3}))).backward();
  EXPECT_TRUE(all_zero_grad(upstream));
  EXPECT_TRUE(all_zero_grad(proj.weight));
  EXPECT_FALSE(all_zero_grad(tapm.mask_proj.weight));
  EXPECT_FALSE(all_zero_grad(tapm.substrate));
}

TEST(Tapm, GradientMatchesCentralDifferences) {
  for (int seed = 0; seed < kTrials; ++seed) {
    Initializer init(600 + seed);
    Tapm<double> tapm(tiny_config(), init);
    const auto fused = random_tensor({6, 8}, 700 + seed);
    const auto target = random_tensor({5, 3}, 800 + seed, -0.4, 0.4);
    const auto err = grad_check_leaves(
        [&] {
          const auto out = tapm(fused);
          return add(geometry::chamfer_distance(out.coords, target), probe(out.prototypes, seed));
        },
        leaves_of(params_of(tapm)), 1e-3, kProbes);
    EXPECT_LT(err, kGradTol) << "seed " << seed;
  }
}

TEST(Assemble, OrderPassthroughAndMismatch) {
  const auto pc = random_cloud(3, 1);
  const auto f = random_tensor({3, 8}, 2);
  const auto same = assemble_enhanced<double>(pc, f, nullptr, nullptr);
  EXPECT_EQ(same.coords, pc);
  EXPECT_EQ(same.features.id(), f.id());
  const auto pi = Tensor64({2, 3}, {0.1, 0.2, 0.3, -0.1, -0.2, -0.3});
  const auto fi = random_tensor({2, 8}, 3);
  const auto out = assemble_enhanced(pc, f, &pi, &fi);
  ASSERT_EQ(out.coords.size(), 5u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out.coords[k], pc[k]);
  EXPECT_FLOAT_EQ(out.coords[4].z(), -0.3f);
  for (std::size_t k = 0; k < 24; ++k) EXPECT_EQ(out.features.data()[k], f.data()[k]);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(out.features.data()[24 + k], fi.data()[k]);
  const auto bad = random_tensor({3, 8}, 4);
  EXPECT_THROW(assemble_enhanced(pc, f, &pi, &bad), Error);
  EXPECT_THROW(assemble_enhanced(pc, random_tensor({4, 8}, 5), &pi, &fi), Error);
}

TEST(Assemble, PrototypesOnlyTouchTheirCells) {
  const auto bev = tiny_config().bev;
  for (int seed = 0; seed < kTrials; ++seed) {
    const auto pc = random_cloud(12, 900 + seed);
    const auto f = random_tensor({12, 8}, 1000 + seed);
    const auto pi = random_tensor({3, 3}, 1100 + seed, -0.4, 0.4);
    const auto fi = random_tensor({3, 8}, 1200 + seed);
    const auto before = voxelize_bev(pc, f, bev);
    const auto enhanced = assemble_enhanced(pc, f, &pi, &fi);
    const auto after = voxelize_bev(enhanced.coords, enhanced.features, bev);
    std::set<std::int64_t> touched;
    for (auto cell : bev_cells(geometry::to_cloud(pi.data()), bev)) touched.insert(cell);
    const std::size_t c = 8;
    for (std::size_t cell = 0; cell < before.numel() / c; ++cell) {
      bool differs = false;
      for (std::size_t k = 0; k < c; ++k) differs |= before.data()[cell * c + k] != after.data()[cell * c + k];
      if (differs) {
        EXPECT_TRUE(touched.count(static_cast<std::int64_t>(cell))) << "cell " << cell;
      }
    }
  }
}

// ---- bird's-eye head -----------------------------------------------------------

TEST(Voxelize, SinglePointAndSharedCellMax) {
  const auto bev = tiny_config().bev;  // 4 x 6
  const PointCloud one{Point(0.05f, -0.55f, 0.3f)};
  const auto f = Tensor64({1, 2}, {3.0, -1.0});
  const auto v = voxelize_bev(one, f, bev);
  ASSERT_EQ(v.shape(), (Shape{4, 6, 2}));
  std::size_t nonzero_cells = 0;
  for (std::size_t cell = 0; cell < 24; ++cell) nonzero_cells += v.data()[2 * cell] != 0 || v.data()[2 * cell + 1] != 0;
  EXPECT_EQ(nonzero_cells, 1u);
  EXPECT_EQ(v.data()[2 * (2 * 6 + 0)], 3.0);
  EXPECT_EQ(v.data()[2 * (2 * 6 + 0) + 1], -1.0);

  const PointCloud two{Point(0.05f, -0.55f, 0.3f), Point(0.15f, -0.45f, -0.4f), Point(9.f, 0.f, 0.f)};
  const auto f2 = Tensor64({3, 2}, {3.0, -1.0, 1.0, 5.0, 100.0, 100.0});
  const auto v2 = voxelize_bev(two, f2, bev);
  EXPECT_EQ(v2.data()[2 * 12], 3.0);
  EXPECT_EQ(v2.data()[2 * 12 + 1], 5.0);
  for (double x : v2.data()) EXPECT_NE(x, 100.0);
}

TEST(Voxelize, TranslationByOneCellShiftsGrid) {
  auto bev = tiny_config().bev;
  bev.voxel = 0.25;
  bev.x_min = -0.5, bev.x_max = 0.5, bev.y_min = -0.75, bev.y_max = 0.75;
  auto pc = random_cloud(30, 5, 0.49, 0.74);
  const auto f = random_tensor({30, 3}, 6);
  const auto a = voxelize_bev(pc, f, bev);
  for (auto& p : pc) p.x() += 0.25f;
  bev.x_min += 0.25, bev.x_max += 0.25;
  const auto b = voxelize_bev(pc, f, bev);
  for (std::size_t k = 0; k < a.numel(); ++k) EXPECT_EQ(a.data()[k], b.data()[k]);
  bev.x_min -= 0.25, bev.x_max -= 0.25;
  const auto c = voxelize_bev(pc, f, bev);
  for (std::size_t i = 1; i < 4; ++i) {
    for (std::size_t k = 0; k < 6 * 3; ++k) EXPECT_EQ(c.data()[i * 18 + k], a.data()[(i - 1) * 18 + k]);
  }
}

TEST(Voxelize, GradientReachesArgmaxRows) {
  const auto bev = tiny_config().bev;
  for (int seed = 0; seed < kTrials; ++seed) {
    const auto pc = random_cloud(20, 1300 + seed);
    auto f = random_tensor({20, 4}, 1400 + seed);
    EXPECT_LT(grad_check_leaves([&] { return probe(voxelize_bev(pc, f, bev), seed); }, {f}), kGradTol);
  }
}

TEST(Vit, KeepsExtentsAndIsEquivariantWithoutPositions) {
  Initializer init(20);
  VitLayer<double> vit(4, 4, 8, 16, 2, 2, init);
  const auto x = random_tensor({4, 4, 8}, 21);
  EXPECT_EQ(vit(x).shape(), (Shape{4, 4, 16}));
  std::fill(vit.position.mutable_data().begin(), vit.position.mutable_data().end(), 0.0);
  std::vector<std::uint32_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), std::mt19937(22));
  const auto flat = reshape(x, {16, 8});
  const auto y = reshape(vit(reshape(gather_rows(flat, perm), {4, 4, 8})), {16, 16});
  expect_rows_equal(y, gather_rows(reshape(vit(x), {16, 16}), perm), 1e-12);
}

TEST(Vit, GradientMatchesCentralDifferences) {
  for (int seed = 0; seed < kTrials; ++seed) {
    Initializer init(1500 + seed);
    VitLayer<double> vit(4, 4, 8, 16, 2, 2, init);
    auto x = random_tensor({4, 4, 8}, 1600 + seed);
    auto leaves = leaves_of(params_of(vit));
    leaves.push_back(x);
    EXPECT_LT(grad_check_leaves([&] { return probe(vit(x), seed); }, leaves, 1e-3, kProbes), kGradTol)
        << "seed " << seed;
  }
}

TEST(Upsample, FigureExtentsAndChannelSplit) {
  const auto x = Tensor({38, 56, 128}, std::vector<float>(38 * 56 * 128, 1.0f));
  const auto y = upsample(x, 32);
  EXPECT_EQ(y.shape(), (Shape{76, 112, 32}));
  EXPECT_THROW(upsample(Tensor({2, 2, 64}, std::vector<float>(256)), 32), Error);
  const auto one = upsample(Tensor64({1, 1, 4}, {1, 2, 3, 4}), 1);
  EXPECT_EQ(one.shape(), (Shape{2, 2, 1}));
  EXPECT_EQ(one.to_vector(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(MapPredictor, ShapesHeatRangeAndPrior) {
  Initializer init(30);
  MapPredictor<double> pred(4, init);
  const auto maps = pred(random_tensor({8, 12, 4}, 31));
  EXPECT_EQ(maps.heat.shape(), (Shape{8, 12, 1}));
  EXPECT_EQ(maps.offset.shape(), (Shape{8, 12, 3}));
  EXPECT_EQ(maps.z.shape(), (Shape{8, 12, 1}));
  for (double h : maps.heat.data()) {
    EXPECT_GT(h, 0.0);
    EXPECT_LT(h, 1.0);
  }
  EXPECT_THROW(pred(random_tensor({8, 12, 5}, 31)), Error);
}

TEST(MapPredictor, GradientMatchesCentralDifferences) {
  for (int seed = 0; seed < kTrials; ++seed) {
    Initializer init(1700 + seed);
    MapPredictor<double> pred(4, init);
    auto x = random_tensor({4, 6, 4}, 1800 + seed);
    auto leaves = leaves_of(params_of(pred));
    leaves.push_back(x);
    const auto err = grad_check_leaves(
        [&] {
          const auto m = pred(x);
          return add(add(probe(m.heat, seed), probe(m.offset, seed + 1)), probe(m.z, seed + 2));
        },
        leaves);
    EXPECT_LT(err, kGradTol) << "seed " << seed;
  }
}

TEST(Head, EndToEndGradientOnSmallGrid) {
  for (int seed = 0; seed < kTrials; ++seed) {
    const bool vit = seed % 2 == 0, shuffle = seed % 4 < 2;
    Initializer init(1900 + seed);
    RgsHead<double> head(tiny_config(true, vit, shuffle), init);
    const auto pc = random_cloud(24, 2000 + seed);
    auto f = random_tensor({24, 8}, 2100 + seed);
    auto leaves = leaves_of(params_of(head));
    leaves.push_back(f);
    const auto err = grad_check_leaves(
        [&] {
          const auto m = head(pc, f);
          return add(add(probe(m.heat, seed), probe(m.offset, seed + 1)), probe(m.z, seed + 2));
        },
        leaves, 1e-3, kProbes);
    EXPECT_LT(err, kGradTol) << "vit " << vit << " shuffle " << shuffle << " seed " << seed;
  }
}

// ---- targets and decoding ----------------------------------------------------

TEST(Targets, PeakNeighborsAndMonotoneDecay) {
  const auto grid = ModelConfig{}.output_grid();
  const auto box = geometry::make_box({0.33, -0.71, 0.2}, {0.6, 0.4, 1.7}, 0.4);
  const auto t = build_targets(box, grid);
  EXPECT_EQ(t.row, 27u);  // floor((0.33 + 2.4) / 0.1)
  EXPECT_EQ(t.col, 16u);  // floor((-0.71 + 2.4) / 0.1)
  const auto at = [&](std::size_t i, std::size_t j) { return t.heat[i * grid.cols + j]; };
  EXPECT_EQ(at(27, 16), 1.0);
  EXPECT_EQ(at(26, 16), 0.5);
  EXPECT_EQ(at(28, 16), 0.5);
  EXPECT_EQ(at(27, 15), 0.5);
  EXPECT_EQ(at(27, 17), 0.5);
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      const double d = std::hypot(double(i) - 27, double(j) - 16);
      for (std::size_t i2 = 0; i2 < grid.rows; i2 += 7) {
        for (std::size_t j2 = 0; j2 < grid.cols; j2 += 5) {
          const double d2 = std::hypot(double(i2) - 27, double(j2) - 16);
          if (d < d2) {
            EXPECT_GT(at(i, j), at(i2, j2));
          }
        }
      }
    }
  }
  EXPECT_DOUBLE_EQ(t.z, 0.2);
  EXPECT_DOUBLE_EQ(t.offset[2], 0.4);
  EXPECT_THROW(build_targets(geometry::make_box({2.5, 0, 0}, {1, 1, 1}, 0), grid), Error);
  EXPECT_THROW(build_targets(geometry::make_box({0, -2.41, 0}, {1, 1, 1}, 0), grid), Error);
}

namespace {

template <typename T>
PredictionMaps<T> maps_from_targets(const HeadTargets& t, const OutputGrid& grid) {
  const std::size_t cells = grid.rows * grid.cols;
  std::vector<T> heat(t.heat.begin(), t.heat.end()), offset(3 * cells, T(0)), z(cells, T(0));
  const std::size_t k = t.row * grid.cols + t.col;
  for (std::size_t c = 0; c < 3; ++c) offset[3 * k + c] = static_cast<T>(t.offset[c]);
  z[k] = static_cast<T>(t.z);
  return {BasicTensor<T>({grid.rows, grid.cols, 1}, heat), BasicTensor<T>({grid.rows, grid.cols, 3}, offset),
          BasicTensor<T>({grid.rows, grid.cols, 1}, z)};
}

}  // namespace

TEST(Decode, RoundTripsFiftyBoxes) {
  const auto grid = ModelConfig{}.output_grid();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> pos(-2.39, 2.39), zpos(-1, 1), ang(-3.14, 3.14);
  for (int n = 0; n < 50; ++n) {
    const auto box = geometry::make_box({pos(rng), pos(rng), zpos(rng)}, {0.6, 0.4, 1.7}, ang(rng));
    const auto t = build_targets(box, grid);
    const auto maps = maps_from_targets<float>(t, grid);
    const auto out = decode_box(maps, grid, box.size);
    EXPECT_LE(std::abs(out.center.x() - box.center.x()), grid.cell / 2);
    EXPECT_LE(std::abs(out.center.y() - box.center.y()), grid.cell / 2);
    EXPECT_EQ(out.center.z(), static_cast<double>(static_cast<float>(box.center.z())));
    EXPECT_EQ(out.heading, static_cast<double>(static_cast<float>(box.heading)));
    EXPECT_EQ(out.size, box.size);
    const auto exact = decode_box(maps_from_targets<double>(t, grid), grid, box.size);
    EXPECT_EQ(exact.center.z(), box.center.z());
    EXPECT_EQ(exact.heading, box.heading);
  }
}

TEST(Decode, UniformHeatPicksFirstCellAndShiftMovesArgmax) {
  const auto grid = ModelConfig{}.output_grid();
  const std::size_t cells = grid.rows * grid.cols;
  PredictionMaps<double> flat{Tensor64::full({grid.rows, grid.cols, 1}, 0.3),
                              Tensor64::zeros({grid.rows, grid.cols, 3}), Tensor64::zeros({grid.rows, grid.cols, 1})};
  const auto b = decode_box(flat, grid, {1, 1, 1});
  EXPECT_DOUBLE_EQ(b.center.x(), grid.x_min);
  EXPECT_DOUBLE_EQ(b.center.y(), grid.y_min);
  (void)cells;

  const auto box = geometry::make_box({0.05, 0.05, 0}, {1, 1, 1}, 0);
  const auto t0 = build_targets(box, grid);
  auto shifted = box;
  shifted.center.x() += grid.cell;
  const auto t1 = build_targets(shifted, grid);
  EXPECT_EQ(t1.row, t0.row + 1);
  EXPECT_EQ(t1.col, t0.col);
}

// ---- full model and checkpoint -----------------------------------------------------

TEST(Tracker, ChamferOnlyLossLeavesBackboneUntouched) {
  for (int seed = 0; seed < kTrials; ++seed) {
    TrackerNet<double> net(tiny_config(), 2200 + seed);
    const auto out = net.forward(random_cloud(32, 2300 + seed), random_cloud(16, 2400 + seed));
    ASSERT_TRUE(out.tapm.has_value());
    const auto target = random_tensor({10, 3}, 2500 + seed, -0.3, 0.3);
    geometry::chamfer_distance(out.tapm->coords, target).backward();
    for (const auto& p : net.parameters()) {
      if (p.name.rfind("backbone.", 0) == 0) {
        EXPECT_TRUE(all_zero_grad(p.tensor)) << p.name;
      }
    }
    EXPECT_FALSE(all_zero_grad(net.tapm->coord_out.weight));
    EXPECT_FALSE(all_zero_grad(net.tapm->substrate));
    EXPECT_FALSE(all_zero_grad(net.tapm->mask_proj.weight));
  }
}

TEST(Tracker, VariantsBuildAndPredict) {
  for (const auto& name : variant_names()) {
    TrackerNet<float> net(apply_variant(tiny_config(), name), 5);
    const auto out = net.forward(random_cloud(32, 1), random_cloud(16, 2));
    const auto grid = net.config().output_grid();
    EXPECT_EQ(out.maps.heat.shape(), (Shape{grid.rows, grid.cols, 1})) << name;
    EXPECT_EQ(out.tapm.has_value(), net.config().use_tapm) << name;
  }
}

// With prototype mining the backbone gradient deliberately omits the path
// through the detached branch, so only the mining and head parameters have a
// true derivative there; without it every parameter does.
TEST(Tracker, FullModelGradientMatchesCentralDifferences) {
  for (int seed = 0; seed < kTrials; ++seed) {
    const bool mining = seed % 2 == 0;
    TrackerNet<double> net(tiny_config(mining), 2600 + seed);
    const auto search = random_cloud(32, 2700 + seed);
    const auto templ = random_cloud(16, 2800 + seed);
    const auto target = random_tensor({6, 3}, 2900 + seed, -0.3, 0.3);
    std::vector<Tensor64> leaves;
    for (const auto& p : net.parameters()) {
      if (!mining || p.name.rfind("backbone.", 0) != 0) leaves.push_back(p.tensor);
    }
    const auto err = grad_check_leaves(
        [&] {
          const auto out = net.forward(search, templ);
          auto loss = add(add(probe(out.maps.heat, seed), probe(out.maps.offset, seed + 1)),
                          probe(out.maps.z, seed + 2));
          return out.tapm ? add(loss, geometry::chamfer_distance(out.tapm->coords, target)) : loss;
        },
        leaves, 1e-3, 4);
    EXPECT_LT(err, kGradTol) << "mining " << mining << " seed " << seed;
  }
}

TEST(Checkpoint, RoundTripAndRejections) {
  const auto dir = std::filesystem::temp_directory_path() / "stk_model_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.stk";
  TrackerNet<float> net(tiny_config(), 31);
  save_model(path, net);
  const auto back = load_model<float>(path);
  const auto a = net.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].name, b[k].name);
    EXPECT_EQ(a[k].tensor.to_vector(), b[k].tensor.to_vector()) << a[k].name;
  }
  const auto search = random_cloud(32, 1), templ = random_cloud(16, 2);
  EXPECT_EQ(net.forward(search, templ).maps.heat.to_vector(), back.forward(search, templ).maps.heat.to_vector());

  const auto bytes = encode_tensors({{"w", Tensor({2, 3}, {1, 2, 3, 4, 5, 6})}});
  const auto decoded = decode_tensors(bytes);
  ASSERT_EQ(decoded.size(), 1u);
  EXPECT_EQ(decoded[0].tensor.shape(), (Shape{2, 3}));
  auto expect_kind = [](std::string_view data, ErrorKind kind) {
    try {
      decode_tensors(data);
      ADD_FAILURE() << "accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), kind) << e.what();
    }
  };
  expect_kind(std::string_view(bytes).substr(0, bytes.size() - 1), ErrorKind::kTruncated);
  expect_kind("STK2", ErrorKind::kBadMagic);
  expect_kind("ST", ErrorKind::kTruncated);
  auto nan_bytes = bytes;
  const float nan = std::nanf("");
  std::memcpy(nan_bytes.data() + nan_bytes.size() - 4, &nan, 4);
  expect_kind(nan_bytes, ErrorKind::kNonFinite);

  auto other = tiny_config();
  other.feature_dim = 16;
  TrackerNet<float> wide(other, 1);
  auto params = wide.parameters();
  EXPECT_THROW(assign_by_name(load_checkpoint_tensors(path), params), Error);
  std::filesystem::remove_all(dir);
}
