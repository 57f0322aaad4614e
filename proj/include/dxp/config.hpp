// Experiment configuration: every tunable of a run in one JSON document.
//
// Resolution order is defaults < config file < command-line flags. Unknown
// keys anywhere in the document are rejected so typos cannot silently fall
// back to defaults.

#pragma once

#include "dxp/planner.hpp"
#include "dxp/replay.hpp"
#include "dxp/schedule.hpp"
#include "dxp/worldmodel.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dxp::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepAxes {
  std::vector<std::uint64_t> seeds;
  std::vector<replay::SampleMode> replay_modes;
  std::vector<agent::IntrinsicMode> intrinsic_modes;

  bool empty() const { return seeds.empty() && replay_modes.empty() && intrinsic_modes.empty(); }
};

struct ExperimentConfig {
  std::string env = "chain-20";
  std::string out_dir;

  agent::TrainLoopConfig loop;

  std::size_t replay_capacity = 1024;
  std::size_t seq_len = 64;
  replay::PriorityWeights priority;
  // Reserved: importance-sampling correction is not applied.
  bool importance_weights = false;

  int ensemble_size = 4;
  agent::PlannerConfig planner;

  sched::ScheduleConfig schedule;
  // Unset means 10% of total_env_steps.
  std::optional<double> tau;

  int deter = 32;
  int stoch = 8;
  int hidden = 64;
  wm::TrainConfig optimizer;

  SweepAxes sweep;

  // Schedule with mode and tau filled in from the intrinsic mode and budget.
  sched::ScheduleConfig resolved_schedule() const;
  wm::ModelDims model_dims(int obs_dim, int action_dim) const;
  // Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Overlays `j` on `base`; keys absent from `j` keep their base values.
ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load(const std::filesystem::path& path, ExperimentConfig base = {});
void save(const ExperimentConfig& cfg, const std::filesystem::path& path);

}  // namespace dxp::config
