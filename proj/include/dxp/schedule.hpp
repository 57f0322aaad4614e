// Mixing weight between extrinsic and intrinsic reward.
//
// constant:     lambda = lambda_0
// exp_decay:    lambda(step) = lambda_end + (lambda_0 - lambda_end) * exp(-step / tau)
// ema_adaptive: after each episode the EMA of the extrinsic return is
//               updated and its change (slope) moves lambda by step_size:
//               down when the slope exceeds the threshold, up otherwise.
//               invert_ema_rule swaps the two directions.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"

namespace dxp::sched {

enum class LambdaMode { kConstant, kExpDecay, kEmaAdaptive };

std::string_view to_string(LambdaMode m);
LambdaMode parse_lambda_mode(std::string_view s);

struct ScheduleConfig {
  LambdaMode mode = LambdaMode::kConstant;
  double lambda_0 = 0.7;
  double lambda_end = 1.0;
  double tau = 5000.0;
  double lambda_min = 0.5;
  double lambda_max = 1.0;
  double ema_decay = 0.9;
  double step_size = 0.02;
  double slope_threshold = 0.0;
  bool invert_ema_rule = false;

  void validate() const;
};

class LambdaSchedule {
 public:
  explicit LambdaSchedule(ScheduleConfig cfg);

  const ScheduleConfig& config() const { return cfg_; }

  // Weight to use at `env_step`. For the adaptive mode this is the current
  // state and ignores the step.
  double lambda_at(std::uint64_t env_step) const;

  // Adaptive mode only: folds an episode's extrinsic return into the EMA
  // and nudges lambda. Throws on a non-finite return.
  void on_episode_end(double episode_return);

  double lambda() const { return lambda_; }
  double ema() const { return ema_; }
  double ema_prev() const { return ema_prev_; }
  std::uint64_t episodes() const { return episodes_; }

  nlohmann::json to_json() const;
  static LambdaSchedule from_json(const nlohmann::json& j);

 private:
  double clamp(double v) const;

  ScheduleConfig cfg_;
  double lambda_;
  double ema_ = 0.0;
  double ema_prev_ = 0.0;
  std::uint64_t episodes_ = 0;
};

}  // namespace dxp::sched
