// Ensemble of independently initialized world models and the
// reward-disagreement intrinsic reward computed from their imagined
// rollouts:
//
//   r_intr = 1/L * sum_t' [ mean_k r_hat(k, t') + 1/K * sum_k (r_hat(k, t') - mean)^2 ]
//
// i.e. the horizon average of the per-step mean reward plus the per-step
// population variance across members.

#pragma once

#include "dxp/worldmodel.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace dxp::ens {

using wm::Index;
using wm::LatentState;
using wm::Matrix;
using wm::Vector;

struct Member {
  wm::WorldModel model;
  wm::AdamState optimizer;
  std::mt19937_64 rng;
};

class Ensemble {
 public:
  // K members with independent initializations and RNG streams derived
  // from `seed`.
  Ensemble(const wm::ModelDims& dims, int members, std::uint64_t seed);
  explicit Ensemble(std::vector<Member> members);

  int size() const { return static_cast<int>(members_.size()); }
  const wm::ModelDims& dims() const { return members_.front().model.dims(); }
  const Member& member(int k) const { return members_.at(static_cast<std::size_t>(k)); }
  Member& member(int k) { return members_.at(static_cast<std::size_t>(k)); }

  // "DXPENS1", u32 K, then K model checkpoints back to back.
  void save(const std::filesystem::path& path) const;
  static Ensemble load(const std::filesystem::path& path);

 private:
  std::vector<Member> members_;
};

std::uint64_t member_seed(std::uint64_t seed, int k);

struct ImagineOptions {
  wm::LatentMode mode = wm::LatentMode::kSample;
  // Every member draws the same noise stream instead of its own.
  bool shared_noise = false;
  // Evaluate member 0's reward head on every member's latents.
  bool shared_reward_head = false;
};

struct ImaginedRollout {
  int horizon = 0;
  std::vector<std::vector<LatentState>> states;  // [member][step]
  Matrix rewards;                                // K x L
  Vector mean_rewards;                           // L
};

// Rolls each member forward from its own start state under the shared
// action sequence. Throws on an empty sequence.
ImaginedRollout imagine_ensemble(const Ensemble& ens, std::span<const LatentState> starts,
                                 std::span<const Vector> actions, std::uint64_t noise_seed,
                                 const ImagineOptions& opts = {});

// Batched variant for planning: `actions[t]` holds one column per candidate
// sequence. Returns one L x N reward matrix per member.
std::vector<Matrix> imagine_rewards(const Ensemble& ens, std::span<const LatentState> starts,
                                    std::span<const Matrix> actions, std::uint64_t noise_seed,
                                    const ImagineOptions& opts = {});

struct StepStats {
  double mean = 0.0;
  double variance = 0.0;
};

// Mean and population variance of one step's member predictions. Values
// are summed in sorted order so the result does not depend on member order.
StepStats member_stats(std::span<const double> predictions);

double intrinsic_reward(const ImaginedRollout& rollout);

// lambda * r_ext + (1 - lambda) * r_intr; lambda outside [0, 1] throws.
double mix_rewards(double r_ext, double r_intr, double lambda);

struct EnsembleTrainResult {
  std::vector<wm::TrainOutcome> members;
  std::vector<std::vector<std::size_t>> resamples;
  // Per batch position: signals averaged over every member that drew it.
  std::vector<wm::SequenceSignals> signals;
  std::vector<bool> covered;
};

// One train_batch step per member, each on its own bootstrap resample of
// the batch (drawn from `rng`).
EnsembleTrainResult train_ensemble(Ensemble& ens, wm::Batch batch, std::mt19937_64& rng,
                                   const wm::TrainConfig& cfg);
EnsembleTrainResult train_ensemble(Ensemble& ens, wm::Batch batch,
                                   std::vector<std::vector<std::size_t>> resamples,
                                   const wm::TrainConfig& cfg);

}  // namespace dxp::ens
