#pragma once

// End-to-end runs wired together for the command line: configuration files,
// dataset assembly (manifest-listed or synthetic), search, leave-one-out
// evaluation, robustness sweeps, and the artifact files they produce.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsfuse/evaluation.hpp"
#include "tsfuse/genome.hpp"
#include "tsfuse/metaheuristics.hpp"
#include "tsfuse/network.hpp"
#include "tsfuse/signal.hpp"

namespace tsfuse {

struct DatasetSpec {
  std::vector<std::string> manifests;  // explicit manifest paths
  std::string manifest_index;          // file with one manifest path per line
  int synth_subjects = 0;              // > 0 switches to generated data
  SynthParams synth;
  bool shuffle_labels = false;  // permutation control on every subject
};

struct RobustnessSpec {
  std::vector<double> snr_grid_db = {-20, -15, -10, -5, 0, 5, 10, 15, 20};
  bool channel_loss = true;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::optional<Genome> genome;        // model.genome
  std::optional<ModelConfig> model;    // model.config
  StructureOverrides overrides;
  TrainSpec train;
  GaConfig ga;
  PsoConfig pso;
  RobustnessSpec robustness;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int jobs = 1;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

// The configured model: model.config, or model.genome decoded.  Subcommands
// that need one throw ConfigError when neither is set.
ModelConfig resolve_model(const ExperimentConfig& cfg);

// Loads manifests or generates subjects, standardized and cut into epochs.
// Applies the label permutation when asked.
std::vector<std::shared_ptr<const PreparedSubject>> load_dataset(
    const ExperimentConfig& cfg);

// Advisory lock on <out_dir>/.lock; RunError when another run holds it.
class OutDirLock {
 public:
  explicit OutDirLock(const std::string& out_dir);
  ~OutDirLock();
  OutDirLock(const OutDirLock&) = delete;
  OutDirLock& operator=(const OutDirLock&) = delete;

 private:
  int fd_ = -1;
};

// Subcommand bodies.  Each writes its artifacts under cfg.out_dir.
void run_synth(const ExperimentConfig& cfg);
void run_optimize(const ExperimentConfig& cfg,
                  const std::vector<std::string>& algos);
void run_evaluate(const ExperimentConfig& cfg);
void run_robustness(const ExperimentConfig& cfg);
void run_report(const ExperimentConfig& cfg);

// One test-time degradation: keep the data of source_slot[k] in slot k.
struct LossScenario {
  std::string name;
  std::vector<int> source_slot;
};

// Identity, every single-channel loss with each possible stand-in (ordered
// by lost slot then replacement slot), then every two-channel loss with the
// survivor filling all slots.
std::vector<LossScenario> channel_loss_scenarios(int num_slots);

}  // namespace tsfuse
