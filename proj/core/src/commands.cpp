// SPDX-License-Identifier: Apache-2.0
#include "bgic/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "bgic/analysis.hpp"
#include "bgic/checkpoint.hpp"
#include "bgic/errors.hpp"
#include "bgic/geometry.hpp"
#include "bgic/losses.hpp"
#include "bgic/toy_chain.hpp"

namespace bgic {

namespace fs = std::filesystem;
using ad::Tensor;
using nlohmann::json;

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("config: missing path for ") + what);
  if (!fs::exists(path)) {
    throw ConfigError(std::string("config: ") + what + " '" + path + "' does not exist");
  }
}

std::string ensure_output_dir(const RunConfig& config, const CommandOptions& opts) {
  const std::string dir = opts.out.value_or(config.output_dir);
  if (dir.empty()) throw ConfigError("config: empty output directory");
  fs::create_directories(dir);
  return dir;
}

// %.17g keeps doubles bit-exact through the text round trip
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Topology load_topology(const RunConfig& config) {
  require_file(config.topology_path, "topology");
  Topology top = Topology::load(config.topology_path);
  if (top.reference.empty()) {
    throw ConfigError("topology '" + config.topology_path +
                      "' carries no reference geometry (fit or embed one first)");
  }
  return top;
}

ToyForceField load_forcefield(const RunConfig& config) {
  require_file(config.target.forcefield_path, "force field");
  return ToyForceField::load(config.target.forcefield_path);
}

std::vector<double> initial_state(const CoordinateLayout& layout) {
  std::vector<double> init(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const CoordInfo& c = layout.coords[i];
    init[i] = c.kind == CoordKind::kBoundedAngle ? 0.5 * (c.lo + c.hi) : 0.0;
  }
  return init;
}

// Ordered parallel map over [0, n): results land by index, so thread count
// never changes the output.
template <class F>
void parallel_for(std::size_t n, int threads, F&& body) {
  const int workers = std::max(1, threads);
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t next = 0;
  const std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) /
                            static_cast<std::size_t>(workers);
  for (int w = 0; w < workers && next < n; ++w) {
    const std::size_t begin = next;
    const std::size_t end = std::min(n, begin + chunk);
    next = end;
    pool.emplace_back([begin, end, &body]() {
      for (std::size_t i = begin; i < end; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<std::vector<double>> frames_of(const TrajectoryDataset& ds, std::size_t begin,
                                           std::size_t end) {
  std::vector<std::vector<double>> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(ds.frame(i));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_generate_data(RunConfig config, const CommandOptions& opts, std::ostream& log) {
  Topology top = load_topology(config);
  ToyForceField ff = load_forcefield(config);
  if (config.dataset_path.empty()) throw ConfigError("config: missing dataset path");
  ensure_output_dir(config, opts);

  CoordinateLayout layout = CoordinateLayout::from_topology(top);
  ChainTarget target(top, ff, config.target.temperature);
  const std::uint64_t seed = opts.seed.value_or(config.training.seed);

  McmcDiagnostics diag;
  TrajectoryDataset ds = run_mcmc(target, layout, initial_state(layout), config.datagen.frames,
                                  config.datagen.mcmc, Rng(seed), &diag);

  log << "chains: " << config.datagen.mcmc.chains << ", burn-in: " << config.datagen.mcmc.burn_in
      << ", thinning: " << config.datagen.mcmc.thinning << "\n";
  log << "acceptance rate: " << fmt(diag.acceptance_rate) << "\n";
  log << "energy autocorrelation time (retained frames): " << fmt(diag.autocorr_time) << "\n";
  if (diag.acceptance_rate < 0.01) {
    throw NumericError(
        "mcmc acceptance rate below 1%; lower data_generation.step_angle / step_dihedral");
  }
  ds.save(config.dataset_path);
  log << "wrote " << ds.frame_count() << " frames to " << config.dataset_path << "\n";
}

// ---------------------------------------------------------------------------

void cmd_train(RunConfig config, const CommandOptions& opts, const std::string& resume_path,
               bool dry_run, std::ostream& log) {
  Topology top = load_topology(config);
  CoordinateLayout layout = CoordinateLayout::from_topology(top);
  const std::string out_dir = ensure_output_dir(config, opts);
  const std::uint64_t seed = opts.seed.value_or(config.training.seed);
  config.training.seed = seed;

  std::unique_ptr<SplitFlow> flow;
  std::uint32_t done_stage = 0;
  if (!resume_path.empty()) {
    CheckpointMeta meta;
    flow = load_checkpoint(resume_path, layout, &meta);
    done_stage = meta.stage;
    log << "resumed from " << resume_path << " (after stage " << done_stage << ")\n";
  } else {
    flow = build_split_flow(layout, config.architecture, seed);
  }

  if (dry_run) {
    log << "configuration is valid\n";
    log << "coordinates: " << layout.size() << " ("
        << layout.count_kind(CoordKind::kBoundedAngle) << " bounded angles, "
        << layout.count_kind(CoordKind::kCircular) << " dihedrals)\n";
    log << "parameters: " << flow->parameter_count() << "\n";
    return;
  }

  require_file(config.dataset_path, "dataset");
  TrajectoryDataset data = TrajectoryDataset::load(config.dataset_path);
  if (data.width() != layout.size()) {
    throw FormatError("dataset width does not match the topology's free coordinates");
  }
  ToyForceField ff = load_forcefield(config);
  ChainTarget target(top, ff, config.target.temperature);

  StageSchedule schedule = config.schedule;
  for (std::uint32_t s = 0; s < done_stage && s < 4; ++s) schedule.stages[s].epochs = 0;

  std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
  if (!metrics) throw ConfigError("cannot write metrics.csv in '" + out_dir + "'");
  metrics << "epoch,stage,nll,w2,kl,median_energy,ess,lr,wall_seconds\n";

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    metrics << m.epoch << "," << m.stage << "," << fmt(m.nll) << "," << fmt(m.w2) << ","
            << fmt(m.kl) << "," << fmt(m.median_energy) << "," << fmt(m.ess) << "," << fmt(m.lr)
            << "," << fmt(m.wall_seconds) << "\n";
    metrics.flush();
    log << "stage " << m.stage << " epoch " << m.epoch << ": nll=" << fmt(m.nll);
    if (m.w2 != 0.0) log << " w2=" << fmt(m.w2);
    if (m.kl != 0.0) log << " kl=" << fmt(m.kl);
    log << " ess=" << fmt(m.ess) << "%";
    if (m.clipped > 0) log << " (energy clip active on " << m.clipped << " samples)";
    log << "\n";
  };
  hooks.on_stage_end = [&](int stage, SplitFlow& f) {
    const std::string path = (fs::path(out_dir) / ("stage" + std::to_string(stage) + ".ckpt")).string();
    save_checkpoint(path, f, static_cast<std::uint32_t>(stage), seed);
    log << "wrote " << path << "\n";
  };

  run_schedule(*flow, data, target, &top, schedule, config.training, hooks);
  log << "training complete; metrics in " << (fs::path(out_dir) / "metrics.csv").string() << "\n";
}

// ---------------------------------------------------------------------------

void cmd_sample(RunConfig config, const CommandOptions& opts, const std::string& checkpoint_path,
                std::size_t n, std::ostream& log) {
  Topology top = load_topology(config);
  CoordinateLayout layout = CoordinateLayout::from_topology(top);
  require_file(checkpoint_path, "checkpoint");
  auto flow = load_checkpoint(checkpoint_path, layout);
  ToyForceField ff = load_forcefield(config);
  ChainTarget target(top, ff, config.target.temperature);
  const std::string out_dir = ensure_output_dir(config, opts);
  const std::uint64_t seed = opts.seed.value_or(0);

  TrajectoryDataset samples;
  samples.layout = RoleLayout::from_layout(layout);

  std::ofstream csv(fs::path(out_dir) / "samples.csv");
  if (!csv) throw ConfigError("cannot write samples.csv in '" + out_dir + "'");
  csv << "index,log_prob,energy_kcal_mol\n";

  Rng rng(seed);
  FlowCtx eval;
  const double kT = target.kT();
  std::size_t produced = 0;
  while (produced < n) {
    const std::size_t chunk = std::min<std::size_t>(4096, n - produced);
    SampleResult s = flow->sample(chunk, rng, eval);
    Tensor reduced = target.reduced_energy(s.x);
    for (std::size_t i = 0; i < chunk; ++i) {
      samples.values.insert(samples.values.end(),
                            s.x.data().begin() + static_cast<std::ptrdiff_t>(i * layout.size()),
                            s.x.data().begin() +
                                static_cast<std::ptrdiff_t>((i + 1) * layout.size()));
      csv << (produced + i) << "," << fmt(s.log_prob[i]) << "," << fmt(reduced[i] * kT) << "\n";
    }
    produced += chunk;
  }
  const std::string path = (fs::path(out_dir) / "samples.bgic").string();
  samples.save(path);
  log << "wrote " << produced << " samples to " << path << "\n";
}

// ---------------------------------------------------------------------------

void cmd_evaluate(RunConfig config, const CommandOptions& opts,
                  const std::string& checkpoint_path, std::ostream& log) {
  Topology top = load_topology(config);
  CoordinateLayout layout = CoordinateLayout::from_topology(top);
  require_file(checkpoint_path, "checkpoint");
  require_file(config.dataset_path, "dataset");
  CheckpointMeta meta;
  auto flow = load_checkpoint(checkpoint_path, layout, &meta);
  TrajectoryDataset data = TrajectoryDataset::load(config.dataset_path);
  if (data.width() != layout.size()) {
    throw FormatError("dataset width does not match the topology's free coordinates");
  }
  ToyForceField ff = load_forcefield(config);
  ChainTarget target(top, ff, config.target.temperature);
  const std::string out_dir = ensure_output_dir(config, opts);
  const EvalConfig& ev = config.evaluation;
  const std::uint64_t seed = opts.seed.value_or(ev.seed);
  const double kT = target.kT();

  const std::size_t holdout =
      std::min(data.frame_count() - 1,
               static_cast<std::size_t>(ev.holdout_fraction * static_cast<double>(data.frame_count())));
  const std::size_t train_frames = data.frame_count() - holdout;
  if (train_frames < ev.batch_size) {
    throw NumericError("evaluate: dataset too small for the distance-distortion batch size");
  }

  Rng master(seed);
  Rng sample_rng = master.split(1);
  Rng pick_rng = master.split(2);
  FlowCtx eval;

  // --- distance distortion over paired batches ---
  std::vector<double> dd(ev.batches, 0.0);
  std::vector<std::vector<std::vector<double>>> flow_batches(ev.batches);
  std::vector<std::vector<std::vector<double>>> data_batches(ev.batches);
  for (std::size_t b = 0; b < ev.batches; ++b) {
    SampleResult s = flow->sample(ev.batch_size, sample_rng, eval);
    flow_batches[b].resize(ev.batch_size);
    for (std::size_t i = 0; i < ev.batch_size; ++i) {
      flow_batches[b][i].assign(
          s.x.data().begin() + static_cast<std::ptrdiff_t>(i * layout.size()),
          s.x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * layout.size()));
    }
    data_batches[b].resize(ev.batch_size);
    for (std::size_t i = 0; i < ev.batch_size; ++i) {
      data_batches[b][i] = data.frame(pick_rng.below(train_frames));
    }
  }
  parallel_for(ev.batches, opts.threads, [&](std::size_t b) {
    std::vector<CartesianState> q = to_cartesian_batch(top, top.reference, flow_batches[b]);
    std::vector<CartesianState> p = to_cartesian_batch(top, top.reference, data_batches[b]);
    dd[b] = distance_distortion(top, q, p);
  });
  double dd_mean = 0.0, dd_sd = 0.0;
  for (double v : dd) dd_mean += v;
  dd_mean /= static_cast<double>(ev.batches);
  for (double v : dd) dd_sd += (v - dd_mean) * (v - dd_mean);
  dd_sd = ev.batches > 1 ? std::sqrt(dd_sd / static_cast<double>(ev.batches - 1)) : 0.0;

  // --- energies, ESS over the big sample set ---
  std::vector<double> energies;  // kcal/mol
  std::vector<double> reduced_all, logq_all;
  energies.reserve(ev.samples);
  {
    std::size_t produced = 0;
    while (produced < ev.samples) {
      const std::size_t chunk = std::min<std::size_t>(4096, ev.samples - produced);
      SampleResult s = flow->sample(chunk, sample_rng, eval);
      Tensor reduced = target.reduced_energy(s.x);
      for (std::size_t i = 0; i < chunk; ++i) {
        energies.push_back(reduced[i] * kT);
        reduced_all.push_back(reduced[i]);
        logq_all.push_back(s.log_prob[i]);
      }
      produced += chunk;
    }
  }
  std::vector<double> sorted_e = energies;
  std::sort(sorted_e.begin(), sorted_e.end());
  const double median_e = sorted_e[sorted_e.size() / 2];
  double e_mean = 0.0, e_sd = 0.0;
  std::size_t kept = 0;
  for (double v : energies) {
    if (v <= median_e) {
      e_mean += v;
      ++kept;
    }
  }
  e_mean /= static_cast<double>(kept);
  for (double v : energies) {
    if (v <= median_e) e_sd += (v - e_mean) * (v - e_mean);
  }
  e_sd = kept > 1 ? std::sqrt(e_sd / static_cast<double>(kept - 1)) : 0.0;

  const ImportanceMetrics im = importance_metrics(reduced_all, logq_all);

  // --- held-out NLL ---
  double nll_holdout = 0.0;
  if (holdout > 0) {
    std::size_t done = 0;
    while (done < holdout) {
      const std::size_t chunk = std::min<std::size_t>(4096, holdout - done);
      std::vector<double> flat;
      flat.reserve(chunk * layout.size());
      for (std::size_t i = 0; i < chunk; ++i) {
        const auto frame = data.frame(train_frames + done + i);
        flat.insert(flat.end(), frame.begin(), frame.end());
      }
      Tensor lp = flow->log_prob(Tensor({chunk, layout.size()}, flat), eval);
      for (std::size_t i = 0; i < chunk; ++i) nll_holdout -= lp[i];
      done += chunk;
    }
    nll_holdout /= static_cast<double>(holdout);
  }

  // --- RMSF: model samples vs dataset ---
  const std::size_t rmsf_n = std::min<std::size_t>({2000, ev.samples, train_frames});
  std::vector<double> rmsf_model, rmsf_data;
  {
    SampleResult s = flow->sample(rmsf_n, sample_rng, eval);
    std::vector<std::vector<double>> rows(rmsf_n);
    for (std::size_t i = 0; i < rmsf_n; ++i) {
      rows[i].assign(s.x.data().begin() + static_cast<std::ptrdiff_t>(i * layout.size()),
                     s.x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * layout.size()));
    }
    rmsf_model = rmsf(top, to_cartesian_batch(top, top.reference, rows));
    rmsf_data = rmsf(top, to_cartesian_batch(top, top.reference, frames_of(data, 0, rmsf_n)));
  }

  // --- energy histograms over shared fixed bins ---
  std::vector<double> data_energies(rmsf_n);
  {
    std::vector<CartesianState> carts =
        to_cartesian_batch(top, top.reference, frames_of(data, 0, rmsf_n));
    parallel_for(carts.size(), opts.threads, [&](std::size_t i) {
      data_energies[i] = potential_energy(ff, carts[i]);
    });
  }
  double lo = *std::min_element(data_energies.begin(), data_energies.end());
  double hi = *std::max_element(data_energies.begin(), data_energies.end());
  lo = std::min(lo, sorted_e.front());
  // cap the top edge at the below-median range so clash outliers cannot
  // flatten the histogram
  hi = std::max(hi, median_e);
  const std::size_t nbins = std::max<std::size_t>(4, ev.hist_bins);
  const double width = (hi - lo) / static_cast<double>(nbins);
  std::vector<std::size_t> hist_data(nbins, 0), hist_model(nbins, 0);
  auto bin_of = [&](double v) {
    if (v < lo || v > hi) return static_cast<std::ptrdiff_t>(-1);
    return std::min(static_cast<std::ptrdiff_t>(nbins) - 1,
                    static_cast<std::ptrdiff_t>((v - lo) / width));
  };
  for (double v : data_energies) {
    const auto b = bin_of(v);
    if (b >= 0) ++hist_data[static_cast<std::size_t>(b)];
  }
  for (double v : energies) {
    const auto b = bin_of(v);
    if (b >= 0) ++hist_model[static_cast<std::size_t>(b)];
  }

  // --- CSV exports ---
  {
    std::ofstream f(fs::path(out_dir) / "delta_d.csv");
    f << "batch,delta_d\n";
    for (std::size_t b = 0; b < dd.size(); ++b) f << b << "," << fmt(dd[b]) << "\n";
  }
  {
    std::ofstream f(fs::path(out_dir) / "rmsf.csv");
    f << "residue,rmsf_data,rmsf_model\n";
    for (std::size_t r = 0; r < rmsf_model.size(); ++r) {
      f << r + 1 << "," << fmt(rmsf_data[r]) << "," << fmt(rmsf_model[r]) << "\n";
    }
  }
  {
    std::ofstream f(fs::path(out_dir) / "energy_hist.csv");
    f << "bin_lo,bin_hi,count_data,count_model\n";
    for (std::size_t b = 0; b < nbins; ++b) {
      f << fmt(lo + width * static_cast<double>(b)) << ","
        << fmt(lo + width * static_cast<double>(b + 1)) << "," << hist_data[b] << ","
        << hist_model[b] << "\n";
    }
  }
  {
    // raw feature export (vectorized backbone distance matrices)
    const std::size_t rows = std::min<std::size_t>(ev.feature_rows, rmsf_n);
    std::ofstream fd(fs::path(out_dir) / "features_data.csv");
    std::ofstream fm(fs::path(out_dir) / "features_model.csv");
    std::vector<CartesianState> dc =
        to_cartesian_batch(top, top.reference, frames_of(data, 0, rows));
    SampleResult s = flow->sample(rows, sample_rng, eval);
    std::vector<std::vector<double>> mrows(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      mrows[i].assign(s.x.data().begin() + static_cast<std::ptrdiff_t>(i * layout.size()),
                      s.x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * layout.size()));
    }
    std::vector<CartesianState> mc = to_cartesian_batch(top, top.reference, mrows);
    for (std::size_t i = 0; i < rows; ++i) {
      const auto vd = backbone_distance_vector(top, dc[i]);
      const auto vm = backbone_distance_vector(top, mc[i]);
      for (std::size_t k = 0; k < vd.size(); ++k) fd << (k ? "," : "") << fmt(vd[k]);
      fd << "\n";
      for (std::size_t k = 0; k < vm.size(); ++k) fm << (k ? "," : "") << fmt(vm[k]);
      fm << "\n";
    }
  }

  json report;
  report["checkpoint"] = checkpoint_path;
  report["stage"] = meta.stage;
  report["seed"] = seed;
  report["delta_d"] = {{"mean", dd_mean},
                       {"sd", dd_sd},
                       {"batches", ev.batches},
                       {"batch_size", ev.batch_size}};
  report["energy_kcal_mol"] = {{"mean", e_mean},
                               {"sd", e_sd},
                               {"median", median_e},
                               {"filter", "below_median"},
                               {"samples", ev.samples}};
  report["nll_holdout"] = nll_holdout;
  report["holdout_frames"] = holdout;
  report["ess_percent"] = im.ess_percent;
  report["ess_degenerate"] = im.degenerate;
  report["rmsf_data"] = rmsf_data;
  report["rmsf_model"] = rmsf_model;
  {
    std::ofstream f(fs::path(out_dir) / "report.json");
    if (!f) throw ConfigError("cannot write report.json in '" + out_dir + "'");
    f << report.dump(2) << "\n";
  }

  log << "delta_d: " << fmt(dd_mean) << " +/- " << fmt(dd_sd) << " A\n";
  log << "energy (below median): " << fmt(e_mean) << " +/- " << fmt(e_sd) << " kcal/mol\n";
  log << "held-out nll: " << fmt(nll_holdout) << "\n";
  log << "ess: " << fmt(im.ess_percent) << "%\n";
  log << "report written to " << (fs::path(out_dir) / "report.json").string() << "\n";
}

// ---------------------------------------------------------------------------

void cmd_inspect(RunConfig config, const CommandOptions& opts,
                 const std::string& checkpoint_path, std::ostream& log) {
  (void)opts;
  if (!config.topology_path.empty() && fs::exists(config.topology_path)) {
    Topology top = Topology::load(config.topology_path);
    CoordinateLayout layout = CoordinateLayout::from_topology(top);
    log << "topology: " << config.topology_path << "\n";
    log << "  atoms: " << top.atom_count() << ", backbone: " << top.backbone_atoms().size()
        << ", flexible residues: " << layout.residues().size() << "\n";
    log << "  free coordinates: " << layout.size() << " ("
        << top.count_role(CoordRole::kBackboneAngle) << " backbone angles, "
        << top.count_role(CoordRole::kBackboneDihedral) << " backbone dihedrals, "
        << top.count_role(CoordRole::kSidechainDihedral) << " side-chain dihedrals)\n";
    log << "  frozen coordinates: " << top.count_role(CoordRole::kFrozen) << "\n";
    log << "  reference geometry: " << (top.reference.empty() ? "absent" : "embedded") << "\n";
  }
  if (!config.dataset_path.empty() && fs::exists(config.dataset_path)) {
    TrajectoryDataset ds = TrajectoryDataset::load(config.dataset_path);
    log << "dataset: " << config.dataset_path << "\n";
    log << "  frames: " << ds.frame_count() << ", width: " << ds.width() << "\n";
  }
  if (!checkpoint_path.empty()) {
    require_file(checkpoint_path, "checkpoint");
    CheckpointMeta meta = peek_checkpoint(checkpoint_path);
    log << "checkpoint: " << checkpoint_path << "\n";
    log << "  stage: " << meta.stage << ", build seed: " << meta.seed << "\n";
    log << "  parameters: " << meta.parameter_count << " tensors\n";
    log << "  architecture: " << meta.config_json << "\n";
  }
  log << "config echo:\n" << config.to_json_string();
}

}  // namespace bgic
