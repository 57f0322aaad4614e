#include "dxp/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dxp::sched {

std::string_view to_string(LambdaMode m) {
  switch (m) {
    case LambdaMode::kConstant: return "constant";
    case LambdaMode::kExpDecay: return "exp_decay";
    case LambdaMode::kEmaAdaptive: return "ema_adaptive";
  }
  return "?";
}

LambdaMode parse_lambda_mode(std::string_view s) {
  if (s == "constant") return LambdaMode::kConstant;
  if (s == "exp_decay") return LambdaMode::kExpDecay;
  if (s == "ema_adaptive") return LambdaMode::kEmaAdaptive;
  throw std::invalid_argument("unknown lambda schedule mode '" + std::string(s) + "'");
}

void ScheduleConfig::validate() const {
  if (!(lambda_min >= 0.0 && lambda_min <= lambda_max && lambda_max <= 1.0)) {
    throw std::invalid_argument("lambda bounds must satisfy 0 <= lambda_min <= lambda_max <= 1");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw std::invalid_argument("ema_decay must lie in (0, 1)");
  if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be positive");
  if (!(slope_threshold >= 0.0)) throw std::invalid_argument("slope_threshold must be nonnegative");
  if (!std::isfinite(lambda_0) || !std::isfinite(lambda_end)) {
    throw std::invalid_argument("lambda_0 and lambda_end must be finite");
  }
}

LambdaSchedule::LambdaSchedule(ScheduleConfig cfg) : cfg_(cfg), lambda_(0.0) {
  cfg_.validate();
  lambda_ = clamp(cfg_.lambda_0);
}

double LambdaSchedule::clamp(double v) const { return std::clamp(v, cfg_.lambda_min, cfg_.lambda_max); }

double LambdaSchedule::lambda_at(std::uint64_t env_step) const {
  switch (cfg_.mode) {
    case LambdaMode::kConstant:
      return clamp(cfg_.lambda_0);
    case LambdaMode::kExpDecay:
      return clamp(cfg_.lambda_end +
                   (cfg_.lambda_0 - cfg_.lambda_end) * std::exp(-static_cast<double>(env_step) / cfg_.tau));
    case LambdaMode::kEmaAdaptive:
      return lambda_;
  }
  return lambda_;
}

void LambdaSchedule::on_episode_end(double episode_return) {
  if (!std::isfinite(episode_return)) {
    throw std::invalid_argument("episode return must be finite");
  }
  if (cfg_.mode != LambdaMode::kEmaAdaptive) {
    throw std::logic_error("on_episode_end applies to the ema_adaptive schedule only");
  }
  ema_prev_ = ema_;
  if (episodes_ == 0) {
    ema_ = episode_return;
    ema_prev_ = ema_;
  } else {
    ema_ = cfg_.ema_decay * ema_ + (1.0 - cfg_.ema_decay) * episode_return;
  }
  ++episodes_;

  const double slope = ema_ - ema_prev_;
  const bool improving = slope > cfg_.slope_threshold;
  const bool lower = cfg_.invert_ema_rule ? !improving : improving;
  lambda_ = clamp(lower ? lambda_ - cfg_.step_size : lambda_ + cfg_.step_size);
}

nlohmann::json LambdaSchedule::to_json() const {
  return {
      {"mode", to_string(cfg_.mode)},
      {"lambda_0", cfg_.lambda_0},
      {"lambda_end", cfg_.lambda_end},
      {"tau", cfg_.tau},
      {"lambda_min", cfg_.lambda_min},
      {"lambda_max", cfg_.lambda_max},
      {"ema_decay", cfg_.ema_decay},
      {"step_size", cfg_.step_size},
      {"slope_threshold", cfg_.slope_threshold},
      {"invert_ema_rule", cfg_.invert_ema_rule},
      {"lambda", lambda_},
      {"ema", ema_},
      {"ema_prev", ema_prev_},
      {"episodes", episodes_},
  };
}

LambdaSchedule LambdaSchedule::from_json(const nlohmann::json& j) {
  ScheduleConfig cfg;
  cfg.mode = parse_lambda_mode(j.at("mode").get<std::string>());
  cfg.lambda_0 = j.at("lambda_0").get<double>();
  cfg.lambda_end = j.at("lambda_end").get<double>();
  cfg.tau = j.at("tau").get<double>();
  cfg.lambda_min = j.at("lambda_min").get<double>();
  cfg.lambda_max = j.at("lambda_max").get<double>();
  cfg.ema_decay = j.at("ema_decay").get<double>();
  cfg.step_size = j.at("step_size").get<double>();
  cfg.slope_threshold = j.at("slope_threshold").get<double>();
  cfg.invert_ema_rule = j.at("invert_ema_rule").get<bool>();
  LambdaSchedule s(cfg);
  s.lambda_ = j.at("lambda").get<double>();
  s.ema_ = j.at("ema").get<double>();
  s.ema_prev_ = j.at("ema_prev").get<double>();
  s.episodes_ = j.at("episodes").get<std::uint64_t>();
  return s;
}

}  // namespace dxp::sched
