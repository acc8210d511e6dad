// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <numbers>

#include "bgic/energy.hpp"
#include "bgic/geometry.hpp"
#include "bgic/losses.hpp"
#include "bgic/rng.hpp"
#include "bgic/spline.hpp"
#include "bgic/split_flow.hpp"
#include "bgic/toy_chain.hpp"

using namespace bgic;
using ad::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;

Tensor random_raw(std::size_t b, std::size_t m, std::size_t bins, Rng& rng) {
  Tensor raw = Tensor::zeros({b, m, spline_param_count(bins)});
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = rng.normal();
  return raw;
}

void bm_rqs_forward(benchmark::State& state) {
  Rng rng(1);
  const std::size_t b = static_cast<std::size_t>(state.range(0));
  Tensor raw = random_raw(b, 16, 8, rng);
  SplineKnots k = make_circular_knots(raw, 8, -kPi, kPi);
  Tensor x = Tensor::zeros({b, 16});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-kPi, kPi);
  for (auto _ : state) {
    auto [y, ld] = rqs_forward(x, k, true);
    benchmark::DoNotOptimize(y.raw());
    benchmark::DoNotOptimize(ld.raw());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(b * 16));
}
BENCHMARK(bm_rqs_forward)->Arg(64)->Arg(256);

void bm_rqs_inverse(benchmark::State& state) {
  Rng rng(2);
  const std::size_t b = static_cast<std::size_t>(state.range(0));
  Tensor raw = random_raw(b, 16, 8, rng);
  SplineKnots k = make_circular_knots(raw, 8, -kPi, kPi);
  Tensor x = Tensor::zeros({b, 16});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-kPi, kPi);
  for (auto _ : state) {
    auto [y, ld] = rqs_inverse(x, k, true);
    benchmark::DoNotOptimize(y.raw());
    benchmark::DoNotOptimize(ld.raw());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(b * 16));
}
BENCHMARK(bm_rqs_inverse)->Arg(64)->Arg(256);

void bm_reconstruct(benchmark::State& state) {
  ToySystem sys = make_toy_chain(8);
  CoordinateLayout layout = CoordinateLayout::from_topology(sys.topology);
  Rng rng(3);
  const std::size_t b = static_cast<std::size_t>(state.range(0));
  Tensor x = Tensor::zeros({b, layout.size()});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < layout.size(); ++j) {
      const CoordInfo& c = layout.coords[j];
      x[i * layout.size() + j] =
          c.kind == CoordKind::kBoundedAngle ? rng.uniform(1.4, 2.3) : rng.uniform(-kPi, kPi);
    }
  }
  for (auto _ : state) {
    auto pos = reconstruct_positions(sys.topology, sys.topology.reference, x);
    benchmark::DoNotOptimize(pos.back().x.raw());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(b));
}
BENCHMARK(bm_reconstruct)->Arg(64)->Arg(256);

void bm_batch_energy(benchmark::State& state) {
  ToySystem sys = make_toy_chain(8);
  CoordinateLayout layout = CoordinateLayout::from_topology(sys.topology);
  ChainTarget target(sys.topology, sys.forcefield, 300.0);
  Rng rng(4);
  const std::size_t b = 256;
  Tensor x = Tensor::zeros({b, layout.size()});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < layout.size(); ++j) {
      const CoordInfo& c = layout.coords[j];
      x[i * layout.size() + j] =
          c.kind == CoordKind::kBoundedAngle ? rng.uniform(1.4, 2.3) : rng.uniform(-kPi, kPi);
    }
  }
  for (auto _ : state) {
    Tensor u = target.reduced_energy(x);
    benchmark::DoNotOptimize(u.raw());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(b));
}
BENCHMARK(bm_batch_energy);

void bm_flow_log_prob(benchmark::State& state) {
  ToySystem sys = make_toy_chain(8);
  CoordinateLayout layout = CoordinateLayout::from_topology(sys.topology);
  SplitFlowConfig cfg;  // desk-scale defaults
  auto flow = build_split_flow(layout, cfg, 9);
  Rng rng(5);
  FlowCtx eval;
  SampleResult s = flow->sample(256, rng, eval);
  for (auto _ : state) {
    Tensor lp = flow->log_prob(s.x, eval);
    benchmark::DoNotOptimize(lp.raw());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 256);
}
BENCHMARK(bm_flow_log_prob);

void bm_nll_step_backward(benchmark::State& state) {
  ToySystem sys = make_toy_chain(8);
  CoordinateLayout layout = CoordinateLayout::from_topology(sys.topology);
  SplitFlowConfig cfg;
  auto flow = build_split_flow(layout, cfg, 9);
  Rng rng(6);
  FlowCtx eval;
  SampleResult s = flow->sample(256, rng, eval);
  Tensor batch = s.x;
  for (auto _ : state) {
    ad::Tape tape;
    FlowCtx ctx{&tape, false, nullptr};
    Tensor loss = nll_loss(*flow, tape.constant(batch), ctx);
    ad::Gradients g = tape.backward(loss);
    benchmark::DoNotOptimize(&g);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 256);
}
BENCHMARK(bm_nll_step_backward);

void bm_psd_sqrt_grad(benchmark::State& state) {
  Rng rng(7);
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  Tensor b = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
  Tensor spd = ad::matmul(ad::transpose(b), b);
  for (auto _ : state) {
    ad::Tape tape;
    Tensor m = tape.leaf(spd);
    Tensor loss = ad::sum(psd_sqrt(m));
    ad::Gradients g = tape.backward(loss);
    benchmark::DoNotOptimize(&g);
  }
}
BENCHMARK(bm_psd_sqrt_grad)->Arg(64)->Arg(276);

}  // namespace

BENCHMARK_MAIN();
