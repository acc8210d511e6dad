// SPDX-License-Identifier: Apache-2.0
#include "bgic/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bgic/errors.hpp"

namespace bgic {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* section) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) {
      throw ConfigError(std::string("config: unknown key '") + key + "' in " + section);
    }
  }
}

}  // namespace

std::string RunConfig::to_json_string() const {
  json j;
  j["topology"] = topology_path;
  j["dataset"] = dataset_path;
  j["output_dir"] = output_dir;
  j["architecture"] = json::parse(architecture.to_json_string());
  j["training"] = {{"learning_rate", training.optimizer.lr},
                   {"weight_decay", training.optimizer.weight_decay},
                   {"plateau_factor", training.plateau_factor},
                   {"plateau_patience", training.plateau_patience},
                   {"batch_size", training.batch_size},
                   {"w_nll", training.w_nll},
                   {"w_w2", training.w_w2},
                   {"w_kl", training.w_kl},
                   {"anneal_fraction", training.anneal_fraction},
                   {"energy_clip", training.energy_clip},
                   {"kl_samples", training.kl_samples},
                   {"probe_samples", training.probe_samples},
                   {"seed", training.seed},
                   {"stages",
                    {{"nll_epochs", schedule.stages[0].epochs},
                     {"w2_epochs", schedule.stages[1].epochs},
                     {"kl_epochs", schedule.stages[2].epochs},
                     {"final_epochs", schedule.stages[3].epochs}}}};
  j["target"] = {{"forcefield", target.forcefield_path}, {"temperature", target.temperature}};
  j["data_generation"] = {{"frames", datagen.frames},
                          {"burn_in", datagen.mcmc.burn_in},
                          {"thinning", datagen.mcmc.thinning},
                          {"chains", datagen.mcmc.chains},
                          {"step_angle", datagen.mcmc.step_angle},
                          {"step_dihedral", datagen.mcmc.step_dihedral},
                          {"step_linear", datagen.mcmc.step_linear}};
  j["evaluation"] = {{"batch_size", evaluation.batch_size},
                     {"batches", evaluation.batches},
                     {"samples", evaluation.samples},
                     {"holdout_fraction", evaluation.holdout_fraction},
                     {"hist_bins", evaluation.hist_bins},
                     {"feature_rows", evaluation.feature_rows},
                     {"seed", evaluation.seed}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"topology", "dataset", "output_dir", "architecture", "training", "target",
                  "data_generation", "evaluation"},
                 "the top level");

  RunConfig c;
  c.topology_path = j.value("topology", std::string());
  c.dataset_path = j.value("dataset", std::string());
  c.output_dir = j.value("output_dir", std::string("out"));

  if (j.contains("architecture")) {
    reject_unknown(j["architecture"],
                   {"backbone_blocks", "joint_blocks", "bins", "model_dim", "query_dim",
                    "value_dim", "dropout", "gau_layers", "positional", "rel_buckets",
                    "rel_max_distance", "max_residues", "dihedral_base", "von_mises_kappa"},
                   "architecture");
    c.architecture = SplitFlowConfig::from_json_string(j["architecture"].dump());
  }

  if (j.contains("training")) {
    const json& t = j["training"];
    reject_unknown(t,
                   {"learning_rate", "weight_decay", "plateau_factor", "plateau_patience",
                    "batch_size", "w_nll", "w_w2", "w_kl", "anneal_fraction", "energy_clip",
                    "kl_samples", "probe_samples", "seed", "stages"},
                   "training");
    c.training.optimizer.lr = t.value("learning_rate", c.training.optimizer.lr);
    c.training.optimizer.weight_decay =
        t.value("weight_decay", c.training.optimizer.weight_decay);
    c.training.plateau_factor = t.value("plateau_factor", c.training.plateau_factor);
    c.training.plateau_patience = t.value("plateau_patience", c.training.plateau_patience);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.w_nll = t.value("w_nll", c.training.w_nll);
    c.training.w_w2 = t.value("w_w2", c.training.w_w2);
    c.training.w_kl = t.value("w_kl", c.training.w_kl);
    c.training.anneal_fraction = t.value("anneal_fraction", c.training.anneal_fraction);
    c.training.energy_clip = t.value("energy_clip", c.training.energy_clip);
    c.training.kl_samples = t.value("kl_samples", c.training.kl_samples);
    c.training.probe_samples = t.value("probe_samples", c.training.probe_samples);
    c.training.seed = t.value("seed", c.training.seed);
    if (t.contains("stages")) {
      reject_unknown(t["stages"], {"nll_epochs", "w2_epochs", "kl_epochs", "final_epochs"},
                     "training.stages");
      c.schedule.stages[0].epochs = t["stages"].value("nll_epochs", c.schedule.stages[0].epochs);
      c.schedule.stages[1].epochs = t["stages"].value("w2_epochs", c.schedule.stages[1].epochs);
      c.schedule.stages[2].epochs = t["stages"].value("kl_epochs", c.schedule.stages[2].epochs);
      c.schedule.stages[3].epochs =
          t["stages"].value("final_epochs", c.schedule.stages[3].epochs);
    }
  }

  if (j.contains("target")) {
    reject_unknown(j["target"], {"forcefield", "temperature"}, "target");
    c.target.forcefield_path = j["target"].value("forcefield", std::string());
    c.target.temperature = j["target"].value("temperature", 300.0);
    if (c.target.temperature <= 0.0) throw ConfigError("config: temperature must be positive");
  }

  if (j.contains("data_generation")) {
    const json& d = j["data_generation"];
    reject_unknown(
        d, {"frames", "burn_in", "thinning", "chains", "step_angle", "step_dihedral",
            "step_linear"},
        "data_generation");
    c.datagen.frames = d.value("frames", c.datagen.frames);
    c.datagen.mcmc.burn_in = d.value("burn_in", c.datagen.mcmc.burn_in);
    c.datagen.mcmc.thinning = d.value("thinning", c.datagen.mcmc.thinning);
    c.datagen.mcmc.chains = d.value("chains", c.datagen.mcmc.chains);
    c.datagen.mcmc.step_angle = d.value("step_angle", c.datagen.mcmc.step_angle);
    c.datagen.mcmc.step_dihedral = d.value("step_dihedral", c.datagen.mcmc.step_dihedral);
    c.datagen.mcmc.step_linear = d.value("step_linear", c.datagen.mcmc.step_linear);
  }

  if (j.contains("evaluation")) {
    const json& e = j["evaluation"];
    reject_unknown(e,
                   {"batch_size", "batches", "samples", "holdout_fraction", "hist_bins",
                    "feature_rows", "seed"},
                   "evaluation");
    c.evaluation.batch_size = e.value("batch_size", c.evaluation.batch_size);
    c.evaluation.batches = e.value("batches", c.evaluation.batches);
    c.evaluation.samples = e.value("samples", c.evaluation.samples);
    c.evaluation.holdout_fraction = e.value("holdout_fraction", c.evaluation.holdout_fraction);
    c.evaluation.hist_bins = e.value("hist_bins", c.evaluation.hist_bins);
    c.evaluation.feature_rows = e.value("feature_rows", c.evaluation.feature_rows);
    c.evaluation.seed = e.value("seed", c.evaluation.seed);
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

}  // namespace bgic
