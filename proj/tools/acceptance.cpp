// Acceptance gate: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stk/core/error.hpp"
#include "stk/core/io.hpp"
#include "stk/dataset/synthetic.hpp"
#include "stk/eval/experiment.hpp"
#include "stk/eval/harness.hpp"
#include "stk/geometry/geometry.hpp"
#include "stk/tensor/grad_check.hpp"
#include "stk/tensor/init.hpp"
#include "stk/tensor/ops.hpp"
#include "stk/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace stk;
using geometry::Box3D;
using geometry::Point;
using geometry::PointCloud;
using geometry::Vec3;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

constexpr int kTrials = 10;
constexpr double kGradTol = 1e-4;

Tensor64 random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor64(std::move(shape), std::move(data));
}

// sum(y * R) with fixed random R so each output element gets its own upstream value.
Tensor64 probe(const Tensor64& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor(y.shape(), seed ^ 0x9e3779b97f4a7c15ULL)));
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double hx, double hy, double hz) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-hx, hx), uy(-hy, hy), uz(-hz, hz);
  PointCloud pc(n);
  for (auto& p : pc) p = Point(static_cast<float>(ux(rng)), static_cast<float>(uy(rng)), static_cast<float>(uz(rng)));
  return pc;
}

model::ModelConfig tiny_config(bool tapm = true, bool vit = true, bool shuffle = true) {
  model::ModelConfig c;
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
  c.bev = model::BevConfig{0.2, -0.4, 0.4, -0.6, 0.6, -0.5, 0.5};
  c.use_tapm = tapm;
  c.use_vit = vit;
  c.use_shuffle = shuffle;
  return c;
}

template <typename Module>
std::vector<Tensor64> leaves_of(const Module& m) {
  nn::ParameterList<double> params;
  m.collect("m", params);
  std::vector<Tensor64> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

Tensor64 probe_maps(const model::PredictionMaps<double>& m, std::uint64_t seed) {
  return add(add(probe(m.heat, seed), probe(m.offset, seed + 1)), probe(m.z, seed + 2));
}

// ---- 1: gradient integrity ----------------------------------------------------

Outcome gradient_integrity() {
  const auto start = Clock::now();
  using Case = std::function<double(int)>;
  std::vector<std::pair<std::string, Case>> cases;
  auto unary = [&](const std::string& name, std::function<Tensor64(const Tensor64&)> f, Shape shape, double lo = -1,
                   double hi = 1) {
    cases.emplace_back(name, [=](int t) {
      return grad_check([&](const Tensor64& x) { return probe(f(x), t); }, random_tensor(shape, 100 + t, lo, hi));
    });
  };
  auto binary = [&](const std::string& name, std::function<Tensor64(const Tensor64&, const Tensor64&)> f, Shape sa,
                    Shape sb) {
    cases.emplace_back(name, [=](int t) {
      auto a = random_tensor(sa, 200 + t), b = random_tensor(sb, 300 + t);
      return grad_check_leaves([&] { return probe(f(a, b), t); }, {a, b});
    });
  };
  binary("matmul", [](auto& a, auto& b) { return matmul(a, b); }, {5, 4}, {4, 3});
  binary("add", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {3, 4});
  binary("sub", [](auto& a, auto& b) { return sub(a, b); }, {3, 4}, {3, 4});
  binary("mul", [](auto& a, auto& b) { return mul(a, b); }, {3, 4}, {3, 4});
  binary("add_bias", [](auto& a, auto& b) { return add_bias(a, b); }, {3, 4}, {4});
  binary("mul_lastdim", [](auto& a, auto& b) { return mul_lastdim(a, b); }, {3, 4}, {4});
  binary("scale_rows", [](auto& a, auto& b) { return scale_rows(a, b); }, {3, 4}, {3, 1});
  binary("concat_rows", [](auto& a, auto& b) { return concat_rows<double>({a, b}); }, {3, 4}, {2, 4});
  binary("concat_cols", [](auto& a, auto& b) { return concat_cols<double>({a, b}); }, {3, 4}, {3, 2});
  binary("conv2d", [](auto& x, auto& k) { return conv2d(x, k); }, {6, 6, 2}, {3, 3, 2, 3});
  unary("transpose", [](auto& x) { return transpose(x); }, {3, 5});
  unary("scale", [](auto& x) { return scale(x, -2.5); }, {3, 5});
  unary("sigmoid", [](auto& x) { return sigmoid(x); }, {4, 6}, -3, 3);
  unary("tanh", [](auto& x) { return stk::tanh(x); }, {4, 6}, -3, 3);
  unary("relu", [](auto& x) { return relu(x); }, {4, 6}, 0.05, 2);
  unary("relu_negative", [](auto& x) { return relu(scale(x, -1)); }, {4, 6}, 0.05, 2);
  unary("softmax", [](auto& x) { return softmax_lastdim(x); }, {4, 6}, -2, 2);
  unary("layernorm", [](auto& x) { return layernorm_lastdim(x); }, {4, 6}, -2, 2);
  unary("sum", [](auto& x) { return sum(x); }, {4, 6});
  unary("mean", [](auto& x) { return mean(x); }, {4, 6});
  unary("reshape", [](auto& x) { return reshape(x, {6, 4}); }, {4, 6});
  unary("slice_rows", [](auto& x) { return slice_rows(x, 1, 3); }, {4, 6});
  unary("slice_cols", [](auto& x) { return slice_cols(x, 2, 5); }, {4, 6});
  unary("gather_rows", [](auto& x) { return gather_rows(x, {3, 0, 0, 2}); }, {4, 6});
  unary("group_max", [](auto& x) { return group_max(x, 3); }, {6, 3});
  unary("scatter_max", [](auto& x) { return scatter_max(x, {0, 2, 2, -1, 0, 3}, 4); }, {6, 3});
  unary("pixel_shuffle", [](auto& x) { return pixel_shuffle(x); }, {2, 3, 8});
  unary("pixel_unshuffle", [](auto& x) { return pixel_unshuffle(x); }, {4, 6, 2});
  cases.emplace_back("attention", [](int t) {
    auto q = random_tensor({4, 8}, 400 + t), k = random_tensor({5, 8}, 500 + t), v = random_tensor({5, 8}, 600 + t);
    return grad_check_leaves([&] { return probe(scaled_dot_attention(q, k, v, 2), t); }, {q, k, v});
  });
  cases.emplace_back("chamfer", [](int t) {
    auto p = geometry::to_tensor<double>(random_cloud(12, 700 + t, 2, 2, 2));
    auto q = geometry::to_tensor<double>(random_cloud(9, 800 + t, 2, 2, 2));
    return grad_check_leaves([&] { return geometry::chamfer_distance(p, q); }, {p, q});
  });
  cases.emplace_back("encoder", [](int t) {
    Initializer init(900 + t);
    model::PointEncoder<double> enc(tiny_config(), init);
    const auto pc = random_cloud(32, 1000 + t, 0.5, 0.7, 0.5);
    return grad_check_leaves([&] { return probe(enc(pc, {16, 8}).features, t); }, leaves_of(enc), 1e-3, 12);
  });
  cases.emplace_back("fusion", [](int t) {
    model::TrackerNet<double> net(tiny_config(), 1100 + t);
    auto ft = random_tensor({6, 8}, 1200 + t), fs = random_tensor({5, 8}, 1300 + t);
    auto leaves = leaves_of(net.backbone.fusion);
    leaves.push_back(ft);
    leaves.push_back(fs);
    return grad_check_leaves([&] { return probe(net.backbone.relation_fuse(ft, fs), t); }, leaves, 1e-3, 12);
  });
  cases.emplace_back("tapm", [](int t) {
    Initializer init(1400 + t);
    model::Tapm<double> tapm(tiny_config(), init);
    const auto fused = random_tensor({6, 8}, 1500 + t);
    const auto target = random_tensor({5, 3}, 1600 + t, -0.4, 0.4);
    return grad_check_leaves(
        [&] {
          const auto out = tapm(fused);
          return add(geometry::chamfer_distance(out.coords, target), probe(out.prototypes, t));
        },
        leaves_of(tapm), 1e-3, 12);
  });
  cases.emplace_back("vit_shuffle_head", [](int t) {
    Initializer init(1700 + t);
    model::RgsHead<double> head(tiny_config(), init);
    const auto pc = random_cloud(24, 1800 + t, 0.5, 0.7, 0.5);
    auto f = random_tensor({24, 8}, 1900 + t);
    auto leaves = leaves_of(head);
    leaves.push_back(f);
    return grad_check_leaves([&] { return probe_maps(head(pc, f), t); }, leaves, 1e-3, 12);
  });
  cases.emplace_back("focal_loss", [](int t) {
    std::mt19937_64 rng(2000 + t);
    std::vector<double> target(20);
    for (auto& g : target) g = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
    target[rng() % 20] = 1.0;
    return grad_check([&](const Tensor64& x) { return training::focal_loss(sigmoid(x), target); },
                      random_tensor({5, 4, 1}, 2100 + t, -2.5, 2.5));
  });
  cases.emplace_back("smooth_l1", [](int t) {
    const std::vector<double> target{0.1, -0.2, 0.0, 0.4, -1.5, 2.2};
    return grad_check([&](const Tensor64& p) { return training::smooth_l1(p, target); },
                      random_tensor({6}, 2200 + t, -3, 3));
  });
  cases.emplace_back("total_loss", [](int t) {
    const model::OutputGrid grid{-0.4, -0.4, 0.2, 4, 4};
    std::mt19937_64 rng(2300 + t);
    std::uniform_real_distribution<double> u(-0.35, 0.35);
    const auto targets = model::build_targets(geometry::make_box({u(rng), u(rng), 0.1}, {0.5, 0.5, 1}, u(rng)), grid);
    auto logits = random_tensor({4, 4, 1}, 2400 + t, -2, 2), offset = random_tensor({4, 4, 3}, 2500 + t),
         z = random_tensor({4, 4, 1}, 2600 + t), protos = random_tensor({5, 3}, 2700 + t);
    const auto aligned = random_tensor({7, 3}, 2800 + t);
    return grad_check_leaves(
        [&] {
          model::PredictionMaps<double> maps{sigmoid(logits), offset, z};
          return training::total_loss(maps, targets, &protos, aligned, training::LossWeights{1, 2, 0.1}).total;
        },
        {logits, offset, z, protos});
  });
  cases.emplace_back("full_model", [](int t) {
    const bool mining = t % 2 == 0;
    model::TrackerNet<double> net(tiny_config(mining, t % 4 < 2, t % 4 < 2), 2900 + t);
    const auto search = random_cloud(32, 3000 + t, 0.5, 0.7, 0.5);
    const auto templ = random_cloud(16, 3100 + t, 0.5, 0.7, 0.5);
    const auto target = random_tensor({6, 3}, 3200 + t, -0.3, 0.3);
    std::vector<Tensor64> leaves;
    // The mining branch reads detached features, so with it the backbone has
    // no true derivative along that path; its leaves are checked without mining.
    for (const auto& p : net.parameters()) {
      if (!mining || p.name.rfind("backbone.", 0) != 0) leaves.push_back(p.tensor);
    }
    return grad_check_leaves(
        [&] {
          const auto out = net.forward(search, templ);
          const auto loss = probe_maps(out.maps, t);
          return out.tapm ? add(loss, geometry::chamfer_distance(out.tapm->coords, target)) : loss;
        },
        leaves, 1e-3, 4);
  });

  double worst = 0;
  std::string worst_name;
  for (const auto& [name, fn] : cases) {
    for (int t = 0; t < kTrials; ++t) {
      const double err = fn(t);
      if (!(err <= worst)) {
        worst = err;
        worst_name = name;
      }
    }
  }
  const double elapsed = seconds_since(start);
  return {worst < kGradTol && elapsed < 120,
          fmt("max rel err %.2e (%s) over %zu checks x %d trials, %.1f s (limit 1e-4, 120 s)", worst,
              worst_name.c_str(), cases.size(), kTrials, elapsed)};
}

// ---- 2: stop-gradient ----------------------------------------------------------

Outcome stop_gradient() {
  std::size_t backbone_nonzero = 0, tapm_zero = 0, backbone_tensors = 0, tapm_tensors = 0;
  for (int t = 0; t < kTrials; ++t) {
    model::TrackerNet<double> net(tiny_config(), 4000 + t);
    const auto out = net.forward(random_cloud(32, 4100 + t, 0.5, 0.7, 0.5), random_cloud(16, 4200 + t, 0.5, 0.7, 0.5));
    geometry::chamfer_distance(out.tapm->coords, random_tensor({10, 3}, 4300 + t, -0.3, 0.3)).backward();
    for (const auto& p : net.parameters()) {
      const auto& g = p.tensor.has_grad() ? p.tensor.grad() : std::vector<double>{};
      const bool any = std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
      if (p.name.rfind("backbone.", 0) == 0) {
        ++backbone_tensors;
        backbone_nonzero += any;
      } else if (p.name.rfind("tapm.", 0) == 0) {
        ++tapm_tensors;
        tapm_zero += !any;
      }
    }
  }
  return {backbone_nonzero == 0 && tapm_zero == 0 && tapm_tensors > 0,
          fmt("%zu/%zu backbone+fusion tensors with nonzero grad, %zu/%zu TAPM tensors with all-zero grad, %d seeds",
              backbone_nonzero, backbone_tensors, tapm_zero, tapm_tensors, kTrials)};
}

// ---- 3: pixel shuffle -------------------------------------------------------------

Outcome pixel_shuffle_layout() {
  bool round_trip = true;
  for (std::size_t t = 0; t < kTrials; ++t) {
    const auto x = random_tensor({3 + t % 3, 2 + t % 4, 4 * (1 + t % 3)}, 5000 + t);
    round_trip &= pixel_unshuffle(pixel_shuffle(x)).to_vector() == x.to_vector();
    const auto y = random_tensor({2 * (1 + t % 3), 2 * (2 + t % 2), 3}, 5100 + t);
    round_trip &= pixel_shuffle(pixel_unshuffle(y)).to_vector() == y.to_vector();
  }
  const auto one = pixel_shuffle(Tensor64({1, 1, 4}, {1, 2, 3, 4}));
  const bool layout = one.shape() == Shape{2, 2, 1} && one.to_vector() == std::vector<double>{1, 2, 3, 4};
  // 128 channels split into four 32-channel sub-pixels: group g fills (g / 2, g % 2).
  std::vector<float> ramp(2 * 3 * 128);
  std::iota(ramp.begin(), ramp.end(), 0.0f);
  const auto up = model::upsample(Tensor({2, 3, 128}, ramp), 32);
  bool split = up.shape() == Shape{4, 6, 32};
  for (std::size_t i = 0; i < 2 && split; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t g = 0; g < 4; ++g)
        for (std::size_t c = 0; c < 32; ++c) {
          const std::size_t oi = 2 * i + g / 2, oj = 2 * j + g % 2;
          split &= up.data()[(oi * 6 + oj) * 32 + c] == ramp[(i * 3 + j) * 128 + g * 32 + c];
        }
  return {round_trip && layout && split, fmt("round trip bit-exact: %s, 1x1x4 -> 2x2x1 layout: %s, 128 -> 4x32 split: %s",
                                             round_trip ? "yes" : "no", layout ? "yes" : "no", split ? "yes" : "no")};
}

// ---- 4: rotated IoU vs Monte Carlo ----------------------------------------------------

double monte_carlo_iou(const Box3D& a, const Box3D& b, std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double ca = std::cos(a.heading), sa = std::sin(a.heading);
  const double cb = std::cos(b.heading), sb = std::sin(b.heading);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double lx = u(rng) * a.size.x(), ly = u(rng) * a.size.y(), lz = u(rng) * a.size.z();
    const double wx = a.center.x() + ca * lx - sa * ly - b.center.x();
    const double wy = a.center.y() + sa * lx + ca * ly - b.center.y();
    const double wz = a.center.z() + lz - b.center.z();
    const double bx = cb * wx + sb * wy, by = -sb * wx + cb * wy;
    hits += std::abs(bx) <= b.size.x() / 2 && std::abs(by) <= b.size.y() / 2 && std::abs(wz) <= b.size.z() / 2;
  }
  const double va = a.size.prod(), vb = b.size.prod();
  const double inter = va * static_cast<double>(hits) / static_cast<double>(samples);
  return inter / (va + vb - inter);
}

Outcome iou_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(6000);
  std::uniform_real_distribution<double> c(-0.6, 0.6), s(0.5, 2.0), th(-3.14159, 3.14159);
  auto box = [&] { return geometry::make_box(Vec3(c(rng), c(rng), c(rng) * 0.5), Vec3(s(rng), s(rng), s(rng)), th(rng)); };
  double worst = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const Box3D a = box(), b = box();
    worst = std::max(worst, std::abs(geometry::rotated_iou_3d(a, b) - monte_carlo_iou(a, b, 1'000'000, 6100 + pair)));
  }
  const double elapsed = seconds_since(start);
  return {worst < 0.01 && elapsed < 300,
          fmt("max |IoU - MC| %.4f over 100 pairs x 1e6 samples, %.1f s (limit 0.01, 300 s)", worst, elapsed)};
}

// ---- 5: chamfer -------------------------------------------------------------------------

double brute_chamfer(const PointCloud& p, const PointCloud& q) {
  auto one_way = [](const PointCloud& from, const PointCloud& to) {
    double total = 0;
    for (const auto& a : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : to) {
        const double dx = static_cast<double>(a.x()) - b.x(), dy = static_cast<double>(a.y()) - b.y(),
                     dz = static_cast<double>(a.z()) - b.z();
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      total += best;
    }
    return total;
  };
  return one_way(p, q) + one_way(q, p);
}

Outcome chamfer_oracle() {
  std::size_t mismatches = 0, nonzero_identity = 0, perm_failures = 0;
  double worst_perm = 0;
  for (int t = 0; t < 50; ++t) {
    const auto p = random_cloud(1 + t % 13, 7000 + t, 2, 2, 2), q = random_cloud(1 + (t * 7) % 11, 7100 + t, 2, 2, 2);
    const double value = geometry::chamfer_distance(p, q);
    const double tensor_value =
        geometry::chamfer_distance(geometry::to_tensor<double>(p), geometry::to_tensor<double>(q)).item();
    mismatches += value != brute_chamfer(p, q) || tensor_value != value;
    nonzero_identity += geometry::chamfer_distance(p, p) != 0.0;
    auto ps = p, qs = q;
    std::mt19937_64 rng(7200 + t);
    std::shuffle(ps.begin(), ps.end(), rng);
    std::shuffle(qs.begin(), qs.end(), rng);
    const double rel = std::abs(geometry::chamfer_distance(ps, qs) - value) / value;
    worst_perm = std::max(worst_perm, rel);
    perm_failures += rel > 1e-12;
  }
  return {mismatches == 0 && nonzero_identity == 0 && perm_failures == 0,
          fmt("%zu/50 differ from the brute-force oracle, %zu nonzero on identical clouds, max permutation rel diff %.1e",
              mismatches, nonzero_identity, worst_perm)};
}

// ---- 6: targets and decoding -------------------------------------------------------------

Outcome target_round_trip() {
  const auto cfg = model::ModelConfig{};
  const auto grid = cfg.output_grid();
  std::mt19937_64 rng(8000);
  std::uniform_real_distribution<double> xy(-2.3, 2.3), z(-1.0, 1.0), th(-3.14159, 3.14159);
  double worst_center = 0;
  std::size_t inexact = 0;
  for (int t = 0; t < 50; ++t) {
    const auto box = geometry::make_box({xy(rng), xy(rng), z(rng)}, {0.6, 0.4, 1.7}, th(rng));
    const auto targets = model::build_targets(box, grid);
    const std::size_t cells = grid.rows * grid.cols, cell = targets.row * grid.cols + targets.col;
    std::vector<double> offset(cells * 3, 0.0), zmap(cells, 0.0);
    for (int k = 0; k < 3; ++k) offset[cell * 3 + k] = targets.offset[k];
    zmap[cell] = targets.z;
    const model::PredictionMaps<double> maps{Tensor64({grid.rows, grid.cols, 1}, targets.heat),
                                             Tensor64({grid.rows, grid.cols, 3}, offset),
                                             Tensor64({grid.rows, grid.cols, 1}, zmap)};
    const auto decoded = model::decode_box(maps, grid, box.size);
    worst_center = std::max(worst_center, (decoded.center.head<2>() - box.center.head<2>()).norm());
    inexact += decoded.center.z() != box.center.z() || decoded.heading != box.heading;
  }
  return {worst_center <= grid.cell / 2 && inexact == 0,
          fmt("max center error %.2e m (limit %.3f m), %zu/50 with inexact heading or z", worst_center, grid.cell / 2,
              inexact)};
}

// ---- 7: scaling protocol -------------------------------------------------------------------

Outcome scaling_protocol() {
  dataset::GenSpec spec;
  spec.num_sequences = 3;
  spec.frames_per_seq = 10;
  const auto data = dataset::generate_synthetic(9000, spec);
  auto bytes = [](const dataset::Sequence& s) {
    std::string out;
    for (const auto& f : s.frames) {
      const auto b = dataset::encode_frame(f);
      out.append(b.begin(), b.end());
    }
    return out;
  };
  bool identity = true, background = true, commutes = true;
  for (const auto& seq : data) {
    identity &= bytes(dataset::scale_sequence(seq, 1.0)) == bytes(seq);
    for (double rate : {0.25, 0.5, 0.8}) {
      const auto scaled = dataset::scale_sequence(seq, rate);
      for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const auto fg = geometry::points_in_box(seq.frames[t].cloud, seq.frames[t].gt);
        std::set<std::size_t> fg_set(fg.begin(), fg.end());
        for (std::size_t i = 0; i < seq.frames[t].cloud.size(); ++i) {
          if (!fg_set.count(i)) background &= scaled.frames[t].cloud[i] == seq.frames[t].cloud[i];
        }
      }
    }
    const Vec3 shift(5, -3, 1);
    auto translate = [&](dataset::Sequence s) {
      for (auto& f : s.frames) {
        for (auto& p : f.cloud) p += shift.cast<float>();
        f.gt.center += shift;
      }
      return s;
    };
    const auto a = translate(dataset::scale_sequence(seq, 0.5)), b = dataset::scale_sequence(translate(seq), 0.5);
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
      commutes &= a.frames[t].cloud.size() == b.frames[t].cloud.size() && a.frames[t].gt.size == b.frames[t].gt.size;
      for (std::size_t i = 0; i < a.frames[t].cloud.size() && commutes; ++i) {
        commutes &= (a.frames[t].cloud[i] - b.frames[t].cloud[i]).norm() < 1e-5f;
      }
    }
  }
  dataset::Sequence s;
  s.id = "spot";
  dataset::Frame f;
  f.gt = Box3D{Vec3(2, 0, 0), Vec3(4, 4, 4), 0.0};
  f.cloud = {Point(3, 0, 1)};
  s.frames = {f, f};
  const bool spot = dataset::scale_sequence(s, 0.25).frames[0].cloud[0] == Point(2.25f, 0.f, 0.25f);
  return {identity && background && commutes && spot,
          fmt("r=1 identity: %s, background bit-identical: %s, spot value (2.25, 0, 0.25): %s, "
              "translation commutes (1e-5 m f32 rounding): %s",
              identity ? "yes" : "no", background ? "yes" : "no", spot ? "yes" : "no", commutes ? "yes" : "no")};
}

// ---- 8: metric identities -------------------------------------------------------------------

Outcome metric_identities() {
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    std::mt19937_64 rng(10000 + t);
    std::vector<double> ious(1 + rng() % 500);
    for (auto& v : ious) v = std::uniform_real_distribution<double>(0, 1)(rng);
    const double mean = std::accumulate(ious.begin(), ious.end(), 0.0) / static_cast<double>(ious.size());
    worst = std::max(worst, std::abs(eval::success_auc(ious) - 100 * mean));
  }
  dataset::GenSpec spec;
  spec.num_sequences = 3;
  spec.frames_per_seq = 10;
  const auto oracle = eval::summarize(
      eval::track_dataset(eval::oracle_predictor(), dataset::generate_synthetic(10100, spec), eval::TrackOptions{}));
  const double one_meter = eval::precision_auc({1.0});
  const bool pass = worst <= 1e-9 && std::abs(oracle.success - 100) <= 1e-9 && oracle.precision == 100 &&
                    one_meter == 50;
  return {pass, fmt("max |success - 100 mean| %.1e, oracle %.6f/%.6f, single 1 m error precision %.6f", worst,
                    oracle.success, oracle.precision, one_meter)};
}

// ---- 9 and 10: desk-scale experiments --------------------------------------------------------

struct ExperimentSettings {
  std::size_t steps = 1600;
  std::size_t batch = 2;
  std::size_t seeds = 3;
  std::size_t train_sequences = 20;
  std::size_t test_sequences = 10;
  std::size_t frames = 40;
  double rate = 0.5;
};

struct ExperimentResults {
  std::vector<eval::RunResult> runs;
  double seconds = 0;
  bool ran = false;
};

ExperimentResults run_experiments(const ExperimentSettings& s, const fs::path& work) {
  const auto start = Clock::now();
  dataset::GenSpec spec;
  spec.target = dataset::TargetKind::kCapsulePair;
  spec.frames_per_seq = s.frames;
  spec.num_sequences = s.train_sequences;
  spec.id_prefix = "train";
  const auto train = dataset::generate_synthetic(20240, spec);
  spec.num_sequences = s.test_sequences;
  spec.id_prefix = "test";
  const auto test = dataset::generate_synthetic(20241, spec);
  auto scale_all = [&](const std::vector<dataset::Sequence>& in) {
    std::vector<dataset::Sequence> out;
    for (const auto& seq : in) out.push_back(dataset::scale_sequence(seq, s.rate));
    return out;
  };

  eval::GridSpec grid;
  grid.train.steps = s.steps;
  grid.train.batch_size = s.batch;
  grid.train.checkpoint_every = s.steps;
  grid.seeds.clear();
  for (std::size_t k = 0; k < s.seeds; ++k) grid.seeds.push_back(k);
  grid.checkpoint_dir = work / "experiments";
  fs::create_directories(grid.checkpoint_dir);
  const auto progress = [start](const eval::RunResult& r) {
    std::printf("  .. %-12s %-8s seed %llu  success %6.2f  precision %6.2f  (%.0f s, total %.0f s)\n", r.variant.c_str(),
                r.setting.c_str(), static_cast<unsigned long long>(r.seed), r.summary.success, r.summary.precision,
                r.seconds, seconds_since(start));
    std::fflush(stdout);
  };
  ExperimentResults out;
  grid.variants = {"baseline", "shuffle", "shuffle+vit", "full"};
  out.runs = eval::run_grid(train, test, grid, progress);
  grid.setting = "scaled";
  grid.variants = {"baseline", "full"};
  const auto scaled = eval::run_grid(scale_all(train), scale_all(test), grid, progress);
  out.runs.insert(out.runs.end(), scaled.begin(), scaled.end());
  out.seconds = seconds_since(start);
  out.ran = true;
  io::write_file_atomic(grid.checkpoint_dir / "results.csv", eval::results_csv(out.runs));
  return out;
}

Outcome ablation_direction(const ExperimentResults& r) {
  auto m = [&](const char* v) { return eval::mean_over_seeds(r.runs, v, "original").success; };
  const double base = m("baseline"), shuffle = m("shuffle"), rgs = m("shuffle+vit"), full = m("full");
  const bool pass = full >= base && shuffle <= rgs && shuffle <= full && r.seconds < 7200;
  return {pass, fmt("mean success: full %.2f vs baseline %.2f; shuffle-only %.2f vs shuffle+vit %.2f, full %.2f; "
                    "experiments %.0f s (limit 7200 s)",
                    full, base, shuffle, rgs, full, r.seconds)};
}

Outcome scaling_direction(const ExperimentResults& r) {
  const double full = eval::success_gap(r.runs, "full"), base = eval::success_gap(r.runs, "baseline");
  return {full <= base && r.seconds < 7200,
          fmt("success drop original -> r=0.5: full %.2f (%.2f -> %.2f) vs baseline %.2f (%.2f -> %.2f)", full,
              eval::mean_over_seeds(r.runs, "full", "original").success,
              eval::mean_over_seeds(r.runs, "full", "scaled").success, base,
              eval::mean_over_seeds(r.runs, "baseline", "original").success,
              eval::mean_over_seeds(r.runs, "baseline", "scaled").success)};
}

// ---- 11: determinism ----------------------------------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto bytes = io::read_file(e.path());
    out[fs::relative(e.path(), root).string()] = std::string(bytes.begin(), bytes.end());
  }
  return out;
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  io::write_file(root / "spec.json", R"({"numSequences": 3, "framesPerSeq": 8})");
  io::write_file(root / "train.json", R"({"steps": 6, "batchSize": 2, "checkpointEvery": 3, "seed": 4,
    "model": {"featureDim": 8, "heads": 2, "searchPoints": 128, "templatePoints": 64, "searchStages": [64, 32],
              "templateStages": [32, 16], "neighbors": 8, "prototypes": 16, "tapmDepth": 2, "vitBlocks": 1,
              "vitChannels": 32, "headChannels": 8}})");
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + (root / "cli.log").string() + "\" 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  bool ok = true;
  std::vector<std::string> differing;
  for (const char* run_id : {"a", "b"}) {
    const fs::path dir = root / run_id;
    const std::string spec = (root / "spec.json").string(), cfg = (root / "train.json").string();
    ok &= run("gen --seed 17 --spec \"" + spec + "\" --out \"" + (dir / "data").string() + "\"");
    ok &= run("train --data \"" + (dir / "data").string() + "\" --config \"" + cfg + "\" --out \"" +
              (dir / "model" / "m.ckpt").string() + "\"");
    ok &= run("track --ckpt \"" + (dir / "model" / "m.ckpt").string() + "\" --data \"" + (dir / "data").string() +
              "\" --report \"" + (dir / "report" / "r.csv").string() + "\" --seed 3");
  }
  std::size_t files = 0;
  for (const char* part : {"data", "model", "report"}) {
    const auto a = tree_bytes(root / "a" / part), b = tree_bytes(root / "b" / part);
    files += a.size();
    if (a != b || a.empty()) differing.push_back(part);
  }
  std::string diff;
  for (const auto& d : differing) diff += (diff.empty() ? "" : ",") + d;
  return {ok && differing.empty(),
          fmt("gen/train/track each run twice: commands %s, %zu files compared, differing: %s", ok ? "ok" : "FAILED",
              files, diff.empty() ? "none" : diff.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::string only, work = "acceptance_work", cli = STK_CLI_PATH;
  ExperimentSettings exp;
  app.add_option("--criteria", only, "Comma-separated criterion numbers to run (default: all)");
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--cli", cli, "Path to the stk binary");
  app.add_option("--steps", exp.steps, "Training steps per experiment model");
  app.add_option("--batch", exp.batch, "Batch size per experiment model");
  app.add_option("--seeds", exp.seeds, "Seeds per experiment variant");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  if (only.empty()) {
    for (int i = 1; i <= 11; ++i) selected.insert(i);
  } else {
    std::size_t start = 0;
    while (start <= only.size()) {
      const auto end = std::min(only.find(',', start), only.size());
      selected.insert(std::stoi(only.substr(start, end - start)));
      start = end + 1;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<int, std::string>> names{
      {1, "gradient integrity"},     {2, "stop-gradient invariant"}, {3, "pixel-shuffle correctness"},
      {4, "IoU oracle agreement"},   {5, "chamfer correctness"},     {6, "target/decode round trip"},
      {7, "scaling protocol"},       {8, "metric identities"},       {9, "ablation direction"},
      {10, "scaling robustness"},    {11, "determinism"}};
  ExperimentResults experiments;
  int failures = 0;
  for (const auto& [id, name] : names) {
    if (!selected.count(id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      switch (id) {
        case 1: o = gradient_integrity(); break;
        case 2: o = stop_gradient(); break;
        case 3: o = pixel_shuffle_layout(); break;
        case 4: o = iou_oracle(); break;
        case 5: o = chamfer_oracle(); break;
        case 6: o = target_round_trip(); break;
        case 7: o = scaling_protocol(); break;
        case 8: o = metric_identities(); break;
        case 9:
        case 10:
          if (!experiments.ran) experiments = run_experiments(exp, work);
          o = id == 9 ? ablation_direction(experiments) : scaling_direction(experiments);
          break;
        case 11: o = determinism(cli, work); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s  %2d  %-26s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
