// Shooting planner over imagined ensemble rollouts, plus the loop-level
// configuration shared with the training driver.

#pragma once

#include "dxp/ensemble.hpp"
#include "dxp/envs.hpp"
#include "dxp/replay.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace dxp::agent {

enum class ActionMode { kDiscreteEnumerable, kContinuousSampled };

struct PlannerConfig {
  int n_candidates = 64;
  int horizon = 15;
  ActionMode action_mode = ActionMode::kDiscreteEnumerable;
  double discount = 0.99;
  double exploration_epsilon = 0.05;
  ens::ImagineOptions imagine;

  void validate() const;
};

enum class IntrinsicMode { kOff, kConstant, kExpDecay, kEmaAdaptive };
std::string_view to_string(IntrinsicMode m);
IntrinsicMode parse_intrinsic_mode(std::string_view s);

std::string_view to_string(replay::SampleMode m);
replay::SampleMode parse_replay_mode(std::string_view s);

struct TrainLoopConfig {
  std::uint64_t total_env_steps = 50000;
  int train_every = 8;
  int batch_size = 16;
  std::uint64_t seed = 0;
  replay::SampleMode replay_mode = replay::SampleMode::kPrioritized;
  IntrinsicMode intrinsic_mode = IntrinsicMode::kOff;
  int record_interval = 10;
  std::uint64_t checkpoint_interval = 0;
  bool record_wall_time = false;

  void validate() const;
};

struct PlanResult {
  int action_index = -1;  // discrete spaces only
  wm::Vector action;      // model encoding (one-hot when discrete)
  std::size_t candidate = 0;
  std::vector<wm::Vector> sequence;
  double score = 0.0;
  // Horizon mean of (member mean + member variance) along the chosen
  // sequence.
  double r_intr = 0.0;
  bool explored = false;
};

wm::Vector encode_action(const envs::ActionSpace& space, int index);

// Candidate action sequences: every sequence in lexicographic order when
// the discrete space holds at most n_candidates of them, otherwise
// n_candidates uniform draws. Entry t holds one column per candidate.
std::vector<wm::Matrix> candidate_actions(const envs::ActionSpace& space, const PlannerConfig& cfg,
                                          std::mt19937_64& rng);

// Scores each candidate by the discounted horizon sum of
// mix_rewards(mean, mean + variance, lambda) and returns the first action
// of the best one (lowest index on ties). With probability
// exploration_epsilon a uniform random action is returned instead.
PlanResult plan_action(const ens::Ensemble& ens, double lambda, std::span<const wm::LatentState> posteriors,
                       const PlannerConfig& cfg, const envs::ActionSpace& space, std::mt19937_64& rng);

}  // namespace dxp::agent
