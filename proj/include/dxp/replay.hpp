// Trajectory replay with composite-score prioritization.
//
// Trajectories are fixed-length chunks of transitions. Each chunk carries
// the signals its priority is computed from: the extrinsic return R, the
// world model's mean reconstruction error eps and the mean absolute value
// error delta. The priority is
//
//   s = (lambda_r + lambda_delta * delta) * R + lambda_eps * eps
//
// floored at `priority_floor`, and sampling is proportional to s through a
// sum-tree. Unscored chunks enter at the current maximum priority.

#pragma once

#include "dxp/sum_tree.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace dxp::replay {

struct Transition {
  // Observation reached at this step, and the action that led to it
  // (zeros on the first step of an episode).
  std::vector<float> observation;
  std::vector<float> action;
  float reward_ext = 0.0f;
  float reward_intr = 0.0f;
  float reward_total = 0.0f;
  bool is_terminal = false;
  bool is_first = false;
};

struct Trajectory {
  std::vector<Transition> transitions;
  double return_R = 0.0;
  double recon_error_eps = 0.0;
  double value_error_delta = 0.0;
  double priority = 0.0;
  std::uint64_t insert_id = 0;
  // False until the first update_priorities() pass fills in eps and delta.
  bool scored = false;

  static Trajectory from_transitions(std::vector<Transition> transitions);
  std::size_t length() const { return transitions.size(); }
};

// Sum of reward_ext accumulated left to right in double precision.
double extrinsic_return(std::span<const Transition> transitions);

struct PriorityWeights {
  double lambda_r = 1.0;
  double lambda_delta = 1.0;
  double lambda_eps = 1.0;
  double priority_floor = 1e-3;

  void validate() const;
};

// Raw composite score before flooring.
double raw_score(double return_R, double value_error_delta, double recon_error_eps,
                 const PriorityWeights& w);

// max(raw_score, priority_floor). Throws std::invalid_argument naming the
// offending field when any input is non-finite.
double score_trajectory(const Trajectory& traj, const PriorityWeights& w);

enum class SampleMode { kPrioritized, kUniform };

struct ReplayConfig {
  std::size_t capacity = 1024;
  std::size_t seq_len = 64;
  std::size_t obs_dim = 1;
  std::size_t action_dim = 1;
  PriorityWeights weights;
};

struct Sample {
  const Trajectory* trajectory = nullptr;
  std::size_t index = 0;
  double normalized_priority = 0.0;
};

struct TrajectorySignals {
  std::uint64_t insert_id = 0;
  double recon_error = 0.0;
  double value_error = 0.0;
};

struct UpdateReport {
  std::size_t updated = 0;
  std::size_t stale = 0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(ReplayConfig config);

  const ReplayConfig& config() const { return config_; }
  std::size_t capacity() const { return config_.capacity; }
  std::size_t size() const { return occupied_; }
  bool empty() const { return occupied_ == 0; }

  // Stores the trajectory at the current maximum priority (the floor when
  // the buffer is empty), evicting the oldest entry when full. Returns the
  // assigned insert id.
  std::uint64_t add(Trajectory traj);

  // Stratified proportional sampling with replacement; uniform mode ignores
  // priorities and draws slots i.i.d.
  std::vector<Sample> sample(std::size_t n, std::mt19937_64& rng,
                             SampleMode mode = SampleMode::kPrioritized) const;
  std::vector<Sample> sample(std::size_t n, std::uint64_t rng_seed,
                             SampleMode mode = SampleMode::kPrioritized) const;

  // Overwrites eps/delta of each slot and rescores it. Slots whose current
  // insert id differs from the signal's (evicted since sampling) are
  // skipped and counted.
  UpdateReport update_priorities(std::span<const std::size_t> indices,
                                 std::span<const TrajectorySignals> signals,
                                 const PriorityWeights& w);
  UpdateReport update_priorities(std::span<const std::size_t> indices,
                                 std::span<const TrajectorySignals> signals) {
    return update_priorities(indices, signals, config_.weights);
  }

  const Trajectory& at(std::size_t index) const;
  bool occupied(std::size_t index) const;
  const SumTree& tree() const { return tree_; }
  double max_priority() const;
  double mean_priority() const;
  std::size_t stale_updates() const { return stale_updates_; }

  // Slot indices in insertion order, oldest first.
  std::vector<std::size_t> insertion_order() const;

  // Versioned binary snapshot ("DXPRBUF1").
  void save(const std::filesystem::path& path) const;
  static ReplayBuffer load(const std::filesystem::path& path, const PriorityWeights& weights = {});

 private:
  void validate(const Trajectory& traj) const;

  ReplayConfig config_;
  SumTree tree_;
  std::vector<Trajectory> slots_;
  std::vector<bool> live_;
  std::size_t occupied_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t next_id_ = 0;
  std::size_t stale_updates_ = 0;
};

}  // namespace dxp::replay
