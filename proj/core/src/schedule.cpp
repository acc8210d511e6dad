// SPDX-License-Identifier: Apache-2.0
#include "bgic/schedule.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "bgic/errors.hpp"
#include "bgic/geometry.hpp"

namespace bgic {

using ad::Tensor;

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<EpochMetrics> run_schedule(SplitFlow& flow, const TrajectoryDataset& data,
                                       const EnergyModel& target, const Topology* topology,
                                       const StageSchedule& schedule, const TrainConfig& config,
                                       const TrainHooks& hooks) {
  if (data.frame_count() < 2) throw NumericError("run_schedule: dataset too small");
  if (data.width() != flow.dim()) {
    throw NumericError("run_schedule: dataset width does not match the flow");
  }
  const bool any_w2 = std::any_of(schedule.stages.begin(), schedule.stages.end(),
                                  [](const StageSpec& s) { return s.w2 && s.epochs > 0; });
  if (any_w2 && topology == nullptr) {
    throw ConfigError("run_schedule: the distance-matrix loss needs a molecular topology");
  }

  MomentEstimates reference;
  if (any_w2) reference = fit_reference_moments(data, *topology);

  AdamW optimizer(flow.parameters(), config.optimizer);
  PlateauScheduler plateau(config.plateau_factor, config.plateau_patience);

  Rng master(config.seed);
  Rng shuffle_rng = master.split(1);
  Rng kl_rng = master.split(2);
  Rng dropout_rng = master.split(3);
  Rng probe_rng = master.split(4);

  const std::size_t frames = data.frame_count();
  const std::size_t width = data.width();
  const std::size_t batch = std::max<std::size_t>(2, std::min(config.batch_size, frames));
  const std::size_t kl_n = config.kl_samples == 0 ? batch : config.kl_samples;

  std::vector<EpochMetrics> log;
  std::vector<std::size_t> order(frames);
  for (std::size_t i = 0; i < frames; ++i) order[i] = i;

  int global_epoch = 0;
  bool w2_seen = false, kl_seen = false;
  for (int stage_idx = 0; stage_idx < 4; ++stage_idx) {
    const StageSpec& stage = schedule.stages[static_cast<std::size_t>(stage_idx)];
    const bool w2_new = stage.w2 && !w2_seen;
    const bool kl_new = stage.kl && !kl_seen;
    if (stage.epochs > 0) {
      w2_seen = w2_seen || stage.w2;
      kl_seen = kl_seen || stage.kl;
    }
    plateau.reset();
    optimizer.set_lr(config.optimizer.lr);

    const std::size_t ramp =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(
                                     config.anneal_fraction * static_cast<double>(stage.epochs))));

    for (std::size_t e = 0; e < stage.epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      ++global_epoch;
      const double ramp_factor =
          std::min(1.0, static_cast<double>(e + 1) / static_cast<double>(ramp));
      const double w_w2 = stage.w2 ? (w2_new ? ramp_factor : 1.0) * config.w_w2 : 0.0;
      const double w_kl = stage.kl ? (kl_new ? ramp_factor : 1.0) * config.w_kl : 0.0;

      // deterministic shuffle per epoch
      for (std::size_t i = frames; i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      }

      EpochMetrics m;
      m.stage = stage_idx + 1;
      m.epoch = global_epoch;
      std::size_t steps = 0;
      double epoch_loss = 0.0;

      for (std::size_t start = 0; start + batch <= frames; start += batch) {
        std::vector<double> flat(batch * width);
        for (std::size_t i = 0; i < batch; ++i) {
          const std::size_t f = order[start + i];
          std::copy(data.values.begin() + static_cast<std::ptrdiff_t>(f * width),
                    data.values.begin() + static_cast<std::ptrdiff_t>((f + 1) * width),
                    flat.begin() + static_cast<std::ptrdiff_t>(i * width));
        }

        ad::Tape tape;
        FlowCtx ctx{&tape, true, &dropout_rng};
        Tensor loss(0.0);
        double nll_v = 0.0, w2_v = 0.0, kl_v = 0.0;

        Tensor nll = nll_loss(flow, Tensor({batch, width}, flat), ctx);
        nll_v = nll.scalar();
        loss = nll * Tensor(config.w_nll);

        SampleResult w2_kl_draws;  // shared flow samples for the sample-driven terms
        if (stage.w2 || stage.kl) w2_kl_draws = flow.sample(kl_n, kl_rng, ctx);

        if (stage.w2) {
          std::vector<Vec3T> pos =
              reconstruct_positions(*topology, topology->reference, w2_kl_draws.x);
          Tensor w2 = w2_loss(backbone_distances(*topology, pos), reference);
          w2_v = w2.scalar();
          loss = loss + w2 * Tensor(w_w2);
        }
        if (stage.kl) {
          Tensor reduced = target.reduced_energy(w2_kl_draws.x);
          Tensor over = ad::mask_gt(reduced, config.energy_clip);
          for (double v : over.data()) m.clipped += v != 0.0 ? 1 : 0;
          Tensor kl =
              ad::mean(ad::where(over, Tensor(config.energy_clip), reduced) -
                       w2_kl_draws.forward_logdet);
          kl_v = kl.scalar();
          loss = loss + kl * Tensor(w_kl);
        }

        if (!std::isfinite(loss.scalar())) {
          std::ostringstream os;
          os << "non-finite loss at stage " << (stage_idx + 1) << " epoch " << global_epoch
             << " (nll=" << nll_v << " w2=" << w2_v << " kl=" << kl_v << ")";
          throw NumericError(os.str());
        }

        ad::Gradients grads = tape.backward(loss);
        optimizer.step(grads);

        epoch_loss += loss.scalar();
        m.nll += nll_v;
        m.w2 += w2_v;
        m.kl += kl_v;
        ++steps;
      }
      if (steps == 0) throw NumericError("run_schedule: batch size exceeds the dataset");
      const double inv = 1.0 / static_cast<double>(steps);
      m.nll *= inv;
      m.w2 *= inv;
      m.kl *= inv;
      epoch_loss *= inv;

      // evaluation probe: median reduced energy and ESS of fresh samples
      {
        FlowCtx eval{nullptr, false, nullptr};
        SampleResult probe = flow.sample(config.probe_samples, probe_rng, eval);
        Tensor reduced = target.reduced_energy(probe.x);
        std::vector<double> energies(reduced.data());
        m.median_energy = median_of(energies);
        std::vector<double> logq(probe.log_prob.data());
        m.ess = importance_metrics(energies, logq).ess_percent;
      }

      optimizer.set_lr(plateau.update(epoch_loss, optimizer.lr()));
      m.lr = optimizer.lr();
      m.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.push_back(m);
      if (hooks.on_epoch) hooks.on_epoch(m);
    }
    if (hooks.on_stage_end) hooks.on_stage_end(stage_idx + 1, flow);
  }
  return log;
}

}  // namespace bgic
