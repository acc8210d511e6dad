// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bgic/conditioner.hpp"
#include "bgic/rng.hpp"
#include "bgic/spline.hpp"
#include "test_util.hpp"

using namespace bgic;
using ad::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;

GAUConfig tiny_config() {
  GAUConfig cfg;
  cfg.model_dim = 16;
  cfg.query_dim = 8;
  cfg.value_dim = 12;
  cfg.dropout = 0.1;
  return cfg;
}

}  // namespace

TEST_CASE("circle augment: values, length, periodicity, unit norm") {
  Tensor a({1, 3}, {0.0, kPi / 2, 1.1});
  Tensor f = circle_augment(a);
  REQUIRE(f.shape() == ad::Shape{1, 6});
  CHECK(f[0] == doctest::Approx(1.0));
  CHECK(f[1] == doctest::Approx(0.0));
  CHECK(f[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[3] == doctest::Approx(1.0));
  for (int i = 0; i < 3; ++i) {
    CHECK(f[2 * i] * f[2 * i] + f[2 * i + 1] * f[2 * i + 1] == doctest::Approx(1.0));
  }
  Tensor shifted({1, 3}, {2.0 * kPi, kPi / 2 + 2.0 * kPi, 1.1 - 2.0 * kPi});
  Tensor g = circle_augment(shifted);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g[i] == doctest::Approx(f[i]).epsilon(1e-12));
}

TEST_CASE("scale norm: fixed points, scale invariance, output norm") {
  Rng rng(3);
  Tensor gain(1.0);
  // unit-norm row with g=1 passes through unchanged
  Tensor unit({1, 1, 2}, {0.6, 0.8});
  Tensor out = scale_norm(unit, gain);
  CHECK(out[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(0.8).epsilon(1e-12));

  Tensor x = Tensor::zeros({2, 3, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  Tensor x10 = x;
  for (double& v : x10.data()) v *= 10.0;
  Tensor a = scale_norm(x, gain), b = scale_norm(x10, gain);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  const double g = 1.7;
  Tensor c = scale_norm(x, Tensor(g));
  for (std::size_t t = 0; t < 6; ++t) {
    double norm = 0.0;
    for (std::size_t d = 0; d < 4; ++d) norm += c[t * 4 + d] * c[t * 4 + d];
    CHECK(std::sqrt(norm) == doctest::Approx(g).epsilon(1e-10));
  }
}

TEST_CASE("laplace attention: midpoint, limits, scalar reference") {
  const double mu = std::sqrt(0.5), sigma = 0.5;
  CHECK(laplace_attention(Tensor(mu)).scalar() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(laplace_attention(Tensor(50.0)).scalar() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(laplace_attention(Tensor(-50.0)).scalar() == doctest::Approx(0.0).epsilon(1e-12));

  Rng rng(5);
  Tensor z = Tensor::zeros({3, 3});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform(-3, 3);
  Tensor w = laplace_attention(z);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double expect = 0.5 * (1.0 + std::erf((z[i] - mu) / (sigma * std::sqrt(2.0))));
    CHECK(w[i] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(w[i] > 0.0);
    CHECK(w[i] < 1.0);
  }
}

TEST_CASE("relative bucket structure is bidirectional") {
  CHECK(relative_bucket(0, 32, 128) == 0);
  CHECK(relative_bucket(1, 32, 128) != relative_bucket(-1, 32, 128));
  CHECK(relative_bucket(3, 32, 128) == relative_bucket(3, 32, 128));
  // saturates below the bucket count
  CHECK(relative_bucket(4000, 32, 128) < 32);
  CHECK(relative_bucket(-4000, 32, 128) < 16);
}

TEST_CASE("gau block: residual identity at zero weights and single-token case") {
  GAUConfig cfg = tiny_config();
  Rng rng(11);
  PositionalScheme pos(cfg, 3, rng);
  GauBlock block("g", cfg, rng);
  for (ad::Parameter* p : block.parameters()) {
    if (p->name != "g.norm_gain") {
      for (double& v : p->value.data()) v = 0.0;
    }
  }
  Tensor tokens = Tensor::zeros({2, 3, cfg.model_dim});
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = rng.normal();
  FlowCtx ctx;
  Tensor out = block.forward(tokens, pos, ctx);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    CHECK(out[i] == doctest::Approx(tokens[i]).epsilon(1e-12));
  }

  // single token: attention degenerates to a scalar gate, output stays finite
  PositionalScheme pos1(cfg, 1, rng);
  GauBlock block1("h", cfg, rng);
  Tensor one = Tensor::zeros({1, 1, cfg.model_dim});
  for (std::size_t i = 0; i < one.size(); ++i) one[i] = rng.normal();
  CHECK(block1.forward(one, pos1, ctx).all_finite());
}

TEST_CASE("gau block gradients match finite differences on a 2-token instance") {
  GAUConfig cfg = tiny_config();
  cfg.model_dim = 6;
  cfg.query_dim = 4;
  cfg.value_dim = 5;
  Rng rng(13);
  PositionalScheme pos(cfg, 2, rng);
  GauBlock block("g", cfg, rng);

  Tensor tokens = Tensor::zeros({1, 2, cfg.model_dim});
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = rng.normal();

  auto params = block.parameters();
  for (ad::Parameter* p : pos.parameters()) params.push_back(p);
  auto loss = [&](FlowCtx ctx) {
    Tensor out = block.forward(ctx.tape ? ctx.tape->constant(tokens) : tokens, pos, ctx);
    return ad::sum(out * out);
  };
  // h large enough to stay out of the roundoff regime of central differences
  CHECK(testutil::parameter_fd_check(loss, params, 1e-4) < 1e-4);
}

TEST_CASE("rotary variant runs and differs from the bias variant") {
  GAUConfig cfg = tiny_config();
  Rng rng(17);
  PositionalScheme pos(cfg, 4, rng);
  GauBlock biased("a", cfg, rng);

  GAUConfig rcfg = cfg;
  rcfg.rotary = true;
  Rng rng2(17);
  PositionalScheme pos2(rcfg, 4, rng2);
  GauBlock rotary("a", rcfg, rng2);

  Tensor tokens = Tensor::zeros({1, 4, cfg.model_dim});
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = rng.normal();
  FlowCtx ctx;
  Tensor out_a = biased.forward(tokens, pos, ctx);
  Tensor out_b = rotary.forward(tokens, pos2, ctx);
  CHECK(out_a.all_finite());
  CHECK(out_b.all_finite());
}

namespace {

struct CondFixture {
  StackLayout stack;
  std::vector<std::size_t> a_pos, b_pos;
  GAUConfig cfg;
  Rng rng{23};

  CondFixture() {
    CoordinateLayout layout = testutil::mixed_layout(2, 1, 2, 1);  // 8 coords, 2 residues
    std::vector<std::size_t> universe(layout.size());
    for (std::size_t i = 0; i < universe.size(); ++i) universe[i] = i;
    stack = StackLayout::build(layout, universe);
    for (std::size_t i = 0; i < layout.size(); ++i) {
      (i % 2 == 0 ? a_pos : b_pos).push_back(i);
    }
    cfg = tiny_config();
  }
};

}  // namespace

TEST_CASE("conditioner: zero head means identity coupling parameters") {
  CondFixture fx;
  PositionalScheme pos(fx.cfg, fx.stack.tokens, fx.rng);
  Conditioner cond("c", fx.stack, fx.a_pos, fx.b_pos, fx.cfg, 8, &pos, fx.rng);
  Tensor x_a = Tensor::zeros({3, fx.a_pos.size()});
  for (std::size_t i = 0; i < x_a.size(); ++i) x_a[i] = fx.rng.uniform(-1, 1);
  FlowCtx ctx;
  Tensor raw = cond.forward(x_a, ctx);
  REQUIRE(raw.shape() == ad::Shape{3, fx.b_pos.size(), spline_param_count(8)});
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(raw[i] == 0.0);
}

TEST_CASE("conditioner: eval determinism and position sensitivity") {
  CondFixture fx;
  PositionalScheme pos(fx.cfg, fx.stack.tokens, fx.rng);
  Conditioner cond("c", fx.stack, fx.a_pos, fx.b_pos, fx.cfg, 8, &pos, fx.rng);
  std::vector<ad::Parameter*> params = cond.parameters();
  for (ad::Parameter* p : pos.parameters()) params.push_back(p);
  testutil::randomize_parameters(params, fx.rng, 0.4);

  Tensor x_a = Tensor::zeros({1, fx.a_pos.size()});
  for (std::size_t i = 0; i < x_a.size(); ++i) x_a[i] = fx.rng.uniform(-1, 1);
  FlowCtx ctx;
  Tensor r1 = cond.forward(x_a, ctx);
  Tensor r2 = cond.forward(x_a, ctx);
  CHECK(r1.data() == r2.data());  // bit-identical in eval mode

  // swapping the two residues' conditioning inputs must change the output
  Tensor swapped = x_a;
  // a_pos holds alternating coordinates; find two with matching slot kinds on
  // different residues by brute force and swap their values
  bool changed = false;
  for (std::size_t i = 0; i < fx.a_pos.size() && !changed; ++i) {
    for (std::size_t j = i + 1; j < fx.a_pos.size() && !changed; ++j) {
      const StackCoord& ci = fx.stack.coords[fx.a_pos[i]];
      const StackCoord& cj = fx.stack.coords[fx.a_pos[j]];
      if (ci.token != cj.token && ci.slot == cj.slot && ci.kind == cj.kind) {
        std::swap(swapped[i], swapped[j]);
        changed = true;
      }
    }
  }
  REQUIRE(changed);
  Tensor r3 = cond.forward(swapped, ctx);
  double diff = 0.0;
  for (std::size_t i = 0; i < r1.size(); ++i) diff = std::max(diff, std::abs(r1[i] - r3[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("dropout: train-mode mean approaches the eval output") {
  CondFixture fx;
  fx.cfg.dropout = 0.1;
  PositionalScheme pos(fx.cfg, fx.stack.tokens, fx.rng);
  GauBlock block("g", fx.cfg, fx.rng);
  testutil::randomize_parameters(block.parameters(), fx.rng, 0.4);

  Tensor tokens = Tensor::zeros({1, fx.stack.tokens, fx.cfg.model_dim});
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = fx.rng.normal();

  FlowCtx eval_ctx;
  Tensor eval_out = block.forward(tokens, pos, eval_ctx);

  Rng drop(99);
  Tensor acc = Tensor::zeros(eval_out.shape());
  const int passes = 10000;
  for (int i = 0; i < passes; ++i) {
    FlowCtx ctx{nullptr, true, &drop};
    Tensor out = block.forward(tokens, pos, ctx);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += out[j];
  }
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < acc.size(); ++j) {
    const double m = acc[j] / passes;
    num += (m - eval_out[j]) * (m - eval_out[j]);
    den += eval_out[j] * eval_out[j];
  }
  CHECK(std::sqrt(num) <= 0.02 * std::sqrt(den) + 1e-9);
}

TEST_CASE("no dead units at random weights") {
  CondFixture fx;
  PositionalScheme pos(fx.cfg, fx.stack.tokens, fx.rng);
  Conditioner cond("c", fx.stack, fx.a_pos, fx.b_pos, fx.cfg, 8, &pos, fx.rng);
  std::vector<ad::Parameter*> params = cond.parameters();
  for (ad::Parameter* p : pos.parameters()) params.push_back(p);
  testutil::randomize_parameters(params, fx.rng, 0.4);

  Tensor x_a = Tensor::zeros({16, fx.a_pos.size()});
  for (std::size_t i = 0; i < x_a.size(); ++i) x_a[i] = fx.rng.uniform(-1, 1);

  ad::Tape tape;
  FlowCtx ctx{&tape, false, nullptr};
  Tensor raw = cond.forward(tape.constant(x_a), ctx);
  ad::Gradients grads = tape.backward(ad::sum(raw * raw));

  // Structurally silent entries: input-projection rows of feature slots the
  // mask never fills, head columns of slots the mask never reads, and
  // relative-position buckets a short sequence cannot reach.
  std::vector<bool> fed_slot(2 * fx.stack.slots, false);
  for (std::size_t pos_a : fx.a_pos) {
    const StackCoord& c = fx.stack.coords[pos_a];
    fed_slot[2 * c.slot] = true;
    fed_slot[2 * c.slot + 1] = true;
  }
  std::vector<bool> read_slot(fx.stack.slots, false);
  for (std::size_t pos_b : fx.b_pos) read_slot[fx.stack.coords[pos_b].slot] = true;
  const std::size_t pcount = spline_param_count(8);

  for (ad::Parameter* p : params) {
    Tensor g = grads.at(*p);
    std::size_t checked = 0, zeros = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      bool structural = false;
      if (p->name == "pos.rel_bias") {
        structural = g[i] == 0.0;  // untouched buckets
      } else if (p->name == "c.w_in") {
        structural = !fed_slot[i / fx.cfg.model_dim];
      } else if (p->name == "c.w_head" || p->name == "c.b_head") {
        const std::size_t col = p->name == "c.w_head" ? i % (fx.stack.slots * pcount) : i;
        structural = !read_slot[col / pcount];
      }
      if (structural) continue;
      ++checked;
      if (g[i] == 0.0) ++zeros;
    }
    CAPTURE(p->name);
    CHECK(checked > 0);
    CHECK(zeros == 0);
  }
}
