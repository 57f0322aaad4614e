// Minimal recurrent latent world model.
//
// Deterministic state h follows a gated recurrent cell driven by the
// previous stochastic latent and action; the posterior encodes (h, obs)
// into a diagonal Gaussian over z, the prior predicts the same Gaussian
// from h alone. Decoder and reward/value/continue heads read the feature
// [h; z]. All parameters live in one flat vector partitioned into named
// segments.

#pragma once

#include "dxp/replay.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dxp::wm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct ModelDims {
  int obs_dim = 1;
  int action_dim = 2;
  int deter = 32;   // D_h
  int stoch = 8;    // D_z
  int hidden = 64;  // MLP width

  int feature() const { return deter + stoch; }
  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

enum class Segment : std::uint8_t {
  kEncoder,
  kRecurrent,
  kPrior,
  kDecoder,
  kReward,
  kValue,
  kContinue,
};
inline constexpr std::size_t kSegmentCount = 7;
std::string_view segment_name(Segment s);

// Weight/bias pairs are adjacent so an MLP can walk them in order.
enum TensorId : std::uint8_t {
  kEncW0, kEncB0, kEncW1, kEncB1, kEncW2, kEncB2,
  kGateW, kGateB, kCandW, kCandB,
  kPriorW0, kPriorB0, kPriorW1, kPriorB1, kPriorW2, kPriorB2,
  kDecW0, kDecB0, kDecW1, kDecB1, kDecW2, kDecB2,
  kRewardW0, kRewardB0, kRewardW1, kRewardB1,
  kValueW0, kValueB0, kValueW1, kValueB1,
  kContW0, kContB0, kContW1, kContB1,
  kTensorCount,
};

struct TensorSpec {
  std::string name;
  Segment segment;
  Index rows;
  Index cols;
  std::size_t offset;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

struct SegmentRange {
  std::size_t offset = 0;
  std::size_t size = 0;
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelDims& dims);

  std::size_t size() const { return total_; }
  const TensorSpec& tensor(TensorId id) const { return tensors_[id]; }
  std::span<const TensorSpec> tensors() const { return tensors_; }
  SegmentRange segment(Segment s) const { return segments_[static_cast<std::size_t>(s)]; }

 private:
  std::array<TensorSpec, kTensorCount> tensors_;
  std::array<SegmentRange, kSegmentCount> segments_{};
  std::size_t total_ = 0;
};

class WorldModel {
 public:
  // All parameters zero.
  explicit WorldModel(const ModelDims& dims);
  // Xavier-uniform weights, zero biases.
  static WorldModel initialized(const ModelDims& dims, std::uint64_t seed);

  const ModelDims& dims() const { return dims_; }
  const ParamLayout& layout() const { return layout_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  Eigen::Map<const Matrix> tensor(TensorId id) const;
  Eigen::Map<Matrix> tensor(TensorId id);

 private:
  ModelDims dims_;
  ParamLayout layout_;
  Vector params_;
};

struct LatentState {
  Vector h;
  Vector z;
  Vector z_mean;
  Vector z_logstd;

  static LatentState zeros(const ModelDims& dims);
  bool operator==(const LatentState&) const = default;
};

// Column-per-sample batch of latent states.
struct LatentBatch {
  Matrix h;
  Matrix z;
  Matrix z_mean;
  Matrix z_logstd;

  Index size() const { return h.cols(); }
  static LatentBatch broadcast(const LatentState& s, Index n);
  LatentState column(Index i) const;
};

enum class LatentMode { kSample, kMean };

// Posterior step: h_t from (h_{t-1}, z_{t-1}, a_{t-1}), then z_t from (h_t, obs_t).
LatentState observe_step(const WorldModel& model, const LatentState& prev, const Vector& action,
                         const Vector& observation, std::mt19937_64& rng,
                         LatentMode mode = LatentMode::kSample);

// Prior step: same recurrence, z_t drawn from the prior head on h_t.
LatentState imagine_step(const WorldModel& model, const LatentState& prev, const Vector& action,
                         std::mt19937_64& rng, LatentMode mode = LatentMode::kSample);
LatentBatch imagine_step(const WorldModel& model, const LatentBatch& prev, const Matrix& actions,
                         std::mt19937_64& rng, LatentMode mode = LatentMode::kSample);

struct HeadOutputs {
  double reward = 0.0;
  double value = 0.0;
  double continue_prob = 0.0;
  Vector observation;
};

HeadOutputs predict_heads(const WorldModel& model, const LatentState& s);
RowVector predict_reward(const WorldModel& model, const LatentBatch& s);

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 100.0;
  double discount = 0.99;
  int value_horizon = 5;
  double beta_dyn = 0.5;
  // Regress the value head on reward_total instead of reward_ext.
  bool mixed_value_target = false;
};

struct LossBreakdown {
  double recon = 0.0;
  double reward = 0.0;
  double value = 0.0;
  double dynamics = 0.0;
  double continue_ = 0.0;
  double total = 0.0;

  static double compose(double recon, double reward, double value, double dynamics,
                        double continue_, double beta_dyn) {
    return recon + reward + value + continue_ + beta_dyn * dynamics;
  }
};

enum class LossComponent { kRecon, kReward, kValue, kDynamics, kContinue, kTotal };

// Per-trajectory priority signals: eps (mean per-step squared reconstruction
// error) and delta (mean |value target - value prediction|).
struct SequenceSignals {
  double recon_error = 0.0;
  double value_error = 0.0;
};

// Quantities the loss treats as constants: the bootstrapped value targets
// and the posterior parameters the prior is regressed onto.
struct StoppedInputs {
  Matrix value_target;  // T x B
  Matrix value_mask;    // T x B
  std::vector<Matrix> posterior_mean;    // per step, D_z x B
  std::vector<Matrix> posterior_logstd;  // per step, D_z x B
};

struct LossEvaluation {
  LossBreakdown losses;
  std::vector<SequenceSignals> signals;
  Vector gradient;  // empty unless requested
  StoppedInputs stopped;
};

using Batch = std::span<const replay::Trajectory* const>;

// Runs the model over the batch with posterior noise drawn from
// `noise_seed`. When `grad_of` is set, also returns the gradient of that
// component with respect to the flat parameter vector. Passing `frozen`
// substitutes previously captured stop-gradient inputs, which turns the
// loss into the plain function the gradient differentiates.
LossEvaluation evaluate_loss(const WorldModel& model, Batch batch, std::uint64_t noise_seed,
                             const TrainConfig& cfg,
                             std::optional<LossComponent> grad_of = std::nullopt,
                             const StoppedInputs* frozen = nullptr);

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t step = 0;
  std::uint64_t rejected_steps = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(Vector::Zero(static_cast<Index>(n))), v(Vector::Zero(static_cast<Index>(n))) {}
};

struct TrainOutcome {
  LossBreakdown losses;
  std::vector<SequenceSignals> signals;
  bool applied = false;
  double grad_norm = 0.0;
};

// One clipped Adam step on the total loss. A non-finite loss or gradient
// leaves the model untouched and bumps `opt.rejected_steps`.
TrainOutcome train_batch(WorldModel& model, AdamState& opt, Batch batch, std::mt19937_64& rng,
                         const TrainConfig& cfg);

// Binary checkpoint ("DXPMDL1") plus a JSON sidecar at `path` + ".json".
void save_checkpoint(const WorldModel& model, const AdamState& opt, const std::filesystem::path& path);
void write_checkpoint(std::ostream& out, const WorldModel& model, const AdamState& opt);
std::pair<WorldModel, AdamState> load_checkpoint(const std::filesystem::path& path);
std::pair<WorldModel, AdamState> read_checkpoint(std::istream& in);

}  // namespace dxp::wm
