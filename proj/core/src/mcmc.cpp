// SPDX-License-Identifier: Apache-2.0
#include "bgic/mcmc.hpp"

#include <cmath>
#include <numbers>

#include "bgic/errors.hpp"
#include "bgic/geometry.hpp"

namespace bgic {

using ad::Tensor;

namespace {

double integrated_autocorr(const std::vector<double>& series) {
  const std::size_t n = series.size();
  if (n < 8) return 1.0;
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : series) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  if (var <= 0.0) return 1.0;
  double tau = 1.0;
  for (std::size_t lag = 1; lag < n / 4; ++lag) {
    double c = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) c += (series[i] - mean) * (series[i + lag] - mean);
    c /= static_cast<double>(n - lag) * var;
    if (c < 0.05) break;
    tau += 2.0 * c;
  }
  return tau;
}

}  // namespace

TrajectoryDataset run_mcmc(const EnergyModel& target, const CoordinateLayout& layout,
                           const std::vector<double>& init, std::size_t n_frames,
                           const McmcConfig& config, Rng rng, McmcDiagnostics* diagnostics) {
  const std::size_t d = layout.size();
  if (init.size() != d) throw NumericError("mcmc: init state has wrong dimension");
  if (target.dim() != d) throw NumericError("mcmc: target dimension mismatch");
  const std::size_t chains = std::max<std::size_t>(1, config.chains);
  const std::size_t thin = std::max<std::size_t>(1, config.thinning);

  // All chains start from init and advance together; one batched energy
  // evaluation per sweep.
  std::vector<double> state(chains * d);
  for (std::size_t c = 0; c < chains; ++c) {
    for (std::size_t k = 0; k < d; ++k) state[c * d + k] = init[k];
  }
  Tensor st({chains, d}, state);
  std::vector<double> energy(chains);
  {
    Tensor e = target.reduced_energy(st);
    for (std::size_t c = 0; c < chains; ++c) energy[c] = e[c];
  }

  const std::size_t retained_steps = (n_frames + chains - 1) / chains;
  const std::size_t total_steps = config.burn_in + retained_steps * thin;

  TrajectoryDataset out;
  out.layout = RoleLayout::from_layout(layout);
  out.values.reserve(n_frames * d);

  std::uint64_t accepted = 0, proposed = 0;
  std::vector<double> energy_series;
  energy_series.reserve(retained_steps * chains);

  std::vector<double> prop(chains * d);
  std::vector<char> valid(chains);
  for (std::size_t step = 0; step < total_steps; ++step) {
    for (std::size_t c = 0; c < chains; ++c) {
      bool ok = true;
      for (std::size_t k = 0; k < d; ++k) {
        const CoordInfo& info = layout.coords[k];
        double sd = config.step_linear;
        if (info.kind == CoordKind::kBoundedAngle) sd = config.step_angle;
        if (info.kind == CoordKind::kCircular) sd = config.step_dihedral;
        double v = st[c * d + k] + sd * rng.normal();
        if (info.kind == CoordKind::kCircular) {
          v = wrap_angle(v);
        } else if (info.kind == CoordKind::kBoundedAngle) {
          if (v <= info.lo || v >= info.hi) ok = false;
        }
        prop[c * d + k] = v;
      }
      valid[c] = ok ? 1 : 0;
    }
    Tensor pt({chains, d}, prop);
    Tensor pe = target.reduced_energy(pt);
    for (std::size_t c = 0; c < chains; ++c) {
      ++proposed;
      if (!valid[c]) continue;  // out-of-domain proposals are rejected outright
      const double delta = pe[c] - energy[c];
      if (delta <= 0.0 || rng.uniform() < std::exp(-delta)) {
        ++accepted;
        for (std::size_t k = 0; k < d; ++k) st[c * d + k] = prop[c * d + k];
        energy[c] = pe[c];
      }
    }
    if (step >= config.burn_in && (step - config.burn_in) % thin == thin - 1) {
      for (std::size_t c = 0; c < chains && out.frame_count() < n_frames; ++c) {
        out.values.insert(out.values.end(), st.data().begin() + static_cast<std::ptrdiff_t>(c * d),
                          st.data().begin() + static_cast<std::ptrdiff_t>((c + 1) * d));
        energy_series.push_back(energy[c]);
      }
    }
  }

  if (diagnostics) {
    diagnostics->acceptance_rate =
        proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
    diagnostics->autocorr_time = integrated_autocorr(energy_series);
    diagnostics->coord_means.assign(d, 0.0);
    const std::size_t frames = out.frame_count();
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t k = 0; k < d; ++k) diagnostics->coord_means[k] += out.values[f * d + k];
    }
    for (double& v : diagnostics->coord_means) {
      v /= std::max<std::size_t>(1, frames);
    }
  }
  return out;
}

}  // namespace bgic
