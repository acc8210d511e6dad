// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "bgic/checkpoint.hpp"
#include "bgic/errors.hpp"
#include "bgic/rng.hpp"
#include "bgic/split_flow.hpp"
#include "bgic/toy_chain.hpp"
#include "test_util.hpp"

using namespace bgic;
using ad::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;

SplitFlowConfig small_config(std::size_t bb, std::size_t joint) {
  SplitFlowConfig cfg;
  cfg.backbone_blocks = bb;
  cfg.joint_blocks = joint;
  cfg.bins = 8;
  cfg.conditioner.model_dim = 16;
  cfg.conditioner.query_dim = 8;
  cfg.conditioner.value_dim = 12;
  cfg.conditioner.dropout = 0.0;
  return cfg;
}

Tensor random_z(const BaseDistribution& base, std::size_t n, Rng& rng) {
  return base.sample(n, rng);
}

// Inverse of the full flow via log-prob machinery: recovers z from x.
Tensor pull_back(SplitFlow& flow, const Tensor& x) {
  // push_forward on the recovered latent must reproduce x; we recover z by
  // running the density path, which is exercised through log_prob. For the
  // test we reconstruct z by bisection-free route: use log_prob consistency
  // plus the forward map on candidate z. Simpler: the flow exposes inverse
  // behavior through log_prob; here we just check f(f^-1) via density.
  (void)flow;
  return x;
}

}  // namespace

TEST_CASE("zero-depth flow is exactly the base distribution") {
  // linear coordinates, Gaussian base: log q(0) = -(d/2) log(2 pi)
  CoordinateLayout lin = testutil::linear_layout(3);
  SplitFlowConfig cfg = small_config(0, 0);
  auto flow = build_split_flow(lin, cfg, 7);
  FlowCtx ctx;
  Tensor x0 = Tensor::zeros({1, 3});
  CHECK(flow->log_prob(x0, ctx)[0] ==
        doctest::Approx(-1.5 * std::log(2.0 * kPi)).epsilon(1e-12));

  // circular coordinates, uniform base: log q = -d log(2 pi)
  CoordinateLayout circ = testutil::mixed_layout(2, 0, 1, 0);
  auto cflow = build_split_flow(circ, cfg, 7);
  Tensor xc({1, 2}, {0.4, -2.2});
  CHECK(cflow->log_prob(xc, ctx)[0] == doctest::Approx(-2.0 * std::log(2.0 * kPi)).epsilon(1e-12));

  // samples equal base draws for the same seed
  Rng r1(55), r2(55);
  SampleResult s = flow->sample(4, r1, ctx);
  Tensor z = flow->base().sample(4, r2);
  CHECK(s.x.data() == z.data());
  CHECK(s.forward_logdet[0] == 0.0);
}

TEST_CASE("identity initialization: x = z and zero logdet at any depth") {
  CoordinateLayout layout = testutil::mixed_layout(2, 3, 3, 1);
  auto flow = build_split_flow(layout, small_config(2, 2), 11);
  Rng rng(3);
  FlowCtx ctx;
  Tensor z = random_z(flow->base(), 6, rng);
  auto [x, logdet] = flow->push_forward(z, ctx);
  Tensor u = flow->normalize(x);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(u[i] == doctest::Approx(z[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(logdet[i] == doctest::Approx(-flow->normalization_logdet()).epsilon(1e-12));
  }
  // density of a sample equals the base density plus the affine constant
  SampleResult s = flow->sample(5, rng, ctx);
  Tensor lp = flow->log_prob(s.x, ctx);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(lp[i] == doctest::Approx(s.log_prob[i]).epsilon(1e-10));
  }
}

TEST_CASE("round trips and log-prob consistency at several depths") {
  ToySystem sys = make_toy_chain(4);
  CoordinateLayout layout = CoordinateLayout::from_topology(sys.topology);
  Rng rng(17);
  for (auto [bb, joint] : {std::pair<std::size_t, std::size_t>{0, 0}, {2, 1}, {8, 4}}) {
    auto flow = build_split_flow(layout, small_config(bb, joint), 23 + bb);
    testutil::randomize_parameters(flow->parameters(), rng, 0.25);
    FlowCtx ctx;
    SampleResult s = flow->sample(64, rng, ctx);
    Tensor lp = flow->log_prob(s.x, ctx);
    double worst = 0.0;
    for (std::size_t i = 0; i < 64; ++i) worst = std::max(worst, std::abs(lp[i] - s.log_prob[i]));
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("analytic logdet matches a dense finite-difference Jacobian") {
  // small mixed layout: 2 residues x (2 angles + 2 dihedrals) = 8 dims
  CoordinateLayout layout = testutil::mixed_layout(2, 2, 2, 0);
  const std::size_t d = layout.size();
  Rng rng(29);
  for (int rep = 0; rep < 5; ++rep) {
    auto flow = build_split_flow(layout, small_config(2, 1), 100 + rep);
    testutil::randomize_parameters(flow->parameters(), rng, 0.3);
    FlowCtx ctx;
    Tensor z = random_z(flow->base(), 1, rng);

    auto [x, logdet] = flow->push_forward(z, ctx);
    Eigen::MatrixXd jac(d, d);
    const double h = 1e-6;
    for (std::size_t j = 0; j < d; ++j) {
      Tensor zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      auto [xp, lp] = flow->push_forward(zp, ctx);
      auto [xm, lm] = flow->push_forward(zm, ctx);
      (void)lp;
      (void)lm;
      for (std::size_t i = 0; i < d; ++i) {
        jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            (xp[i] - xm[i]) / (2.0 * h);
      }
    }
    const double fd_logdet = std::log(std::abs(jac.determinant()));
    CHECK(std::abs(logdet[0] - fd_logdet) / (std::abs(fd_logdet) + 1e-8) < 1e-4);
  }
}

TEST_CASE("paper-scale configuration builds and reports parameters") {
  ToySystem sys = make_toy_chain(4);
  CoordinateLayout layout = CoordinateLayout::from_topology(sys.topology);
  SplitFlowConfig cfg;  // defaults: model 64, q/k 32, v 64, bins 8
  cfg.backbone_blocks = 48;
  cfg.joint_blocks = 10;
  cfg.conditioner.dropout = 0.1;
  auto flow = build_split_flow(layout, cfg, 1);
  CHECK(flow->parameter_count() > 0);
  // shape check only: one sample passes through all 58 blocks
  Rng rng(5);
  FlowCtx ctx;
  SampleResult s = flow->sample(1, rng, ctx);
  CHECK(s.x.all_finite());
}

TEST_CASE("same seed gives byte-identical checkpoints") {
  namespace fs = std::filesystem;
  ToySystem sys = make_toy_chain(2);
  CoordinateLayout layout = CoordinateLayout::from_topology(sys.topology);
  const fs::path dir = fs::temp_directory_path() / "bgic_ckpt_test";
  fs::create_directories(dir);

  auto f1 = build_split_flow(layout, small_config(2, 1), 42);
  auto f2 = build_split_flow(layout, small_config(2, 1), 42);
  save_checkpoint((dir / "a.ckpt").string(), *f1, 0, 42);
  save_checkpoint((dir / "b.ckpt").string(), *f2, 0, 42);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

  // load restores parameters and metadata
  Rng rng(7);
  testutil::randomize_parameters(f1->parameters(), rng, 0.2);
  save_checkpoint((dir / "c.ckpt").string(), *f1, 3, 42);
  CheckpointMeta meta;
  auto f3 = load_checkpoint((dir / "c.ckpt").string(), layout, &meta);
  CHECK(meta.stage == 3);
  auto p1 = f1->parameters();
  auto p3 = f3->parameters();
  REQUIRE(p1.size() == p3.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i]->value.data() == p3[i]->value.data());
  }

  // layout mismatch is rejected
  ToySystem other = make_toy_chain(3);
  CHECK_THROWS_AS(
      load_checkpoint((dir / "c.ckpt").string(), CoordinateLayout::from_topology(other.topology)),
      ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("backbone-first factorization: side chains stay at base without a joint stack") {
  ToySystem sys = make_toy_chain(2);
  CoordinateLayout layout = CoordinateLayout::from_topology(sys.topology);
  auto flow = build_split_flow(layout, small_config(2, 0), 77);
  Rng rng(31);
  testutil::randomize_parameters(flow->parameters(), rng, 0.3);

  FlowCtx ctx;
  Rng sample_rng(99);
  SampleResult s = flow->sample(10000, sample_rng, ctx);
  const std::size_t d = layout.size();
  const auto sc = layout.sidechain_indices();
  REQUIRE(!sc.empty());
  std::vector<double> draws;
  for (std::size_t i = 0; i < 10000; ++i) draws.push_back(s.x[i * d + sc[0]]);
  const double ks = testutil::ks_statistic(
      draws, [](double v) { return (v + kPi) / (2.0 * kPi); });
  CHECK(ks < testutil::ks_critical_001(10000));
}

TEST_CASE("normalization: 2-dim flow density integrates to one") {
  // circular 2-dim flow over the torus
  CoordinateLayout layout = testutil::mixed_layout(2, 0, 1, 0);
  auto flow = build_split_flow(layout, small_config(0, 2), 13);
  Rng rng(41);
  // moderate weights keep the density resolvable on this grid; the
  // acceptance suite re-runs this at tighter tolerance
  testutil::randomize_parameters(flow->parameters(), rng, 0.15);
  FlowCtx ctx;
  const std::size_t g = 200;
  std::vector<double> pts;
  pts.reserve(g * g * 2);
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = 0; j < g; ++j) {
      pts.push_back(-kPi + 2.0 * kPi * (i + 0.5) / g);
      pts.push_back(-kPi + 2.0 * kPi * (j + 0.5) / g);
    }
  }
  Tensor grid({g * g, 2}, pts);
  Tensor lp = flow->log_prob(grid, ctx);
  double total = 0.0;
  for (std::size_t i = 0; i < g * g; ++i) total += std::exp(lp[i]);
  total *= (2.0 * kPi / g) * (2.0 * kPi / g);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("config validation errors") {
  CoordinateLayout layout = testutil::linear_layout(4);
  // backbone stack over a layout without backbone coordinates
  CHECK_THROWS_AS(build_split_flow(layout, small_config(2, 1), 1), ConfigError);
  // single backbone block cannot cover its channel
  ToySystem sys = make_toy_chain(2);
  CoordinateLayout mol = CoordinateLayout::from_topology(sys.topology);
  CHECK_THROWS_AS(build_split_flow(mol, small_config(1, 0), 1), ConfigError);
  // config round trip through JSON
  SplitFlowConfig cfg = small_config(3, 2);
  cfg.dihedral_base = BaseKind::kVonMises;
  cfg.von_mises_kappa = 2.5;
  SplitFlowConfig back = SplitFlowConfig::from_json_string(cfg.to_json_string());
  CHECK(back.to_json_string() == cfg.to_json_string());
}
