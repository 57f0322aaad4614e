// Outer training loop: act by planning, store experience, train the
// ensemble from replay, refresh priorities, move lambda.

#pragma once

#include "dxp/config.hpp"
#include "dxp/ensemble.hpp"
#include "dxp/envs.hpp"
#include "dxp/planner.hpp"
#include "dxp/replay.hpp"
#include "dxp/schedule.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace dxp::agent {

struct EpisodeRecord {
  std::uint64_t step = 0;  // env step at which the episode ended
  std::uint64_t episode = 0;
  double return_ext = 0.0;
  double r_intr_mean = 0.0;
  double lambda = 1.0;
  int length = 0;
  bool terminal = false;
};

struct TrainRecord {
  std::uint64_t step = 0;
  std::uint64_t train_step = 0;
  wm::LossBreakdown losses;  // mean over members
  double priority_max = 0.0;
  double priority_mean = 0.0;
  double lambda = 1.0;
};

struct RunSummary {
  std::uint64_t env_steps = 0;
  std::uint64_t train_steps = 0;
  std::uint64_t episodes = 0;
  std::optional<std::uint64_t> first_reward_step;
  double final_lambda = 1.0;
  std::size_t stale_updates = 0;
  std::uint64_t rejected_steps = 0;
  std::vector<EpisodeRecord> episode_log;
  std::vector<TrainRecord> train_log;  // every train step, not only recorded ones
};

// Called after every env step with the transition just stored; tests use
// it to inspect the loop without reaching into its state.
struct LoopHooks {
  std::function<void(const replay::Transition&)> on_transition;
  std::function<void(const replay::ReplayBuffer&, std::span<const replay::Sample>,
                     std::span<const replay::TrajectorySignals>)>
      on_priorities_refreshed;
  // End the run right after the step that earns the first extrinsic reward.
  bool stop_at_first_reward = false;
};

// Runs `cfg` against `env`. With a non-empty `out_dir`, writes metrics.jsonl
// (one JSON object per line) and an experiment checkpoint directory there.
// An exception from the environment writes a checkpoint and rethrows as
// EnvironmentFault.
RunSummary run_training(envs::Environment& env, const config::ExperimentConfig& cfg,
                        const std::filesystem::path& out_dir, const LoopHooks& hooks = {});

class EnvironmentFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dxp::agent
