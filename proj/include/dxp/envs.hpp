// Seedable toy environments with sparse and dense rewards.
//
//   chain-N   SparseChain: positions 0..N-1, actions {left, right}, reward 1
//             on reaching N-1 (terminal), truncated after 4N steps.
//   cupcatch  CupCatch1D: a ball falls from height 16 in a fixed column of
//             a 16-wide track; the cup moves {left, stay, right}. Reward 1
//             iff the cup is under the ball when it lands (terminal).
//   grid-G    DenseGrid: G x G grid, 4 moves, per-step reward
//             -manhattan(goal) / (2G - 2), +1 and terminal at the goal.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>

namespace dxp::envs {

using Observation = Eigen::VectorXd;

enum class RewardStructure { kSparse, kDense };

struct ActionSpace {
  bool discrete = true;
  int n = 2;         // discrete actions, or continuous dimension
  double low = -1.0;  // continuous bounds
  double high = 1.0;
};

struct EnvSpec {
  std::string name;
  int obs_dim = 1;
  ActionSpace action_space;
  int max_episode_steps = 1;
  RewardStructure reward_structure = RewardStructure::kSparse;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool is_terminal = false;
  bool is_truncated = false;
};

class EnvError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual Observation reset(std::uint64_t seed) = 0;
  // Throws EnvError when called after the episode ended or before reset.
  virtual StepResult step(int action) = 0;
};

class SparseChain final : public Environment {
 public:
  static constexpr double kObsNoise = 0.01;
  explicit SparseChain(int n);

  const EnvSpec& spec() const override { return spec_; }
  Observation reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  int position() const { return pos_; }

 private:
  Observation observe();

  EnvSpec spec_;
  int n_;
  int pos_ = 0;
  int steps_ = 0;
  bool active_ = false;
  std::mt19937_64 rng_;
};

class CupCatch1D final : public Environment {
 public:
  static constexpr int kHeight = 16;
  static constexpr int kWidth = 16;
  CupCatch1D();

  const EnvSpec& spec() const override { return spec_; }
  Observation reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  int ball_column() const { return ball_col_; }
  int cup_column() const { return cup_col_; }

 private:
  Observation observe() const;

  EnvSpec spec_;
  int ball_col_ = 0;
  int ball_height_ = kHeight;
  int cup_col_ = kWidth / 2;
  bool active_ = false;
};

class DenseGrid final : public Environment {
 public:
  enum Move { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
  explicit DenseGrid(int g);

  const EnvSpec& spec() const override { return spec_; }
  Observation reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  int x() const { return x_; }
  int y() const { return y_; }

 private:
  Observation observe() const;

  EnvSpec spec_;
  int g_;
  int x_ = 0;
  int y_ = 0;
  int steps_ = 0;
  bool active_ = false;
};

// "chain-N", "cupcatch", "grid-G".
std::unique_ptr<Environment> make_env(std::string_view name);

}  // namespace dxp::envs
