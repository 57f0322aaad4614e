#include "dxp/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace dxp::config {

using nlohmann::json;

namespace {

std::string_view latent_mode_name(wm::LatentMode m) { return m == wm::LatentMode::kMean ? "mean" : "sample"; }

wm::LatentMode parse_latent_mode(const std::string& s) {
  if (s == "mean") return wm::LatentMode::kMean;
  if (s == "sample") return wm::LatentMode::kSample;
  throw ConfigError("planner.latent_mode must be 'sample' or 'mean', got '" + s + "'");
}

// Reads keys out of one JSON object and remembers which ones it saw, so
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError("'" + prefix_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("bad value for '" + name(key) + "': " + it->dump());
    }
  }

  // Nested section, or nullptr when absent.
  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + name(key) + "'");
    }
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

template <typename Fn>
void with_section(Section& parent, const char* key, Fn fn) {
  if (const json* j = parent.child(key)) {
    Section s(*j, parent.name(key));
    fn(s);
    s.finish();
  }
}

template <typename E, typename Parse>
void get_enum(Section& s, const char* key, E& out, Parse parse) {
  std::string v;
  s.get(key, v);
  if (v.empty()) return;
  try {
    out = parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("bad value for '" + s.name(key) + "': " + e.what());
  }
}

}  // namespace

sched::ScheduleConfig ExperimentConfig::resolved_schedule() const {
  sched::ScheduleConfig s = schedule;
  switch (loop.intrinsic_mode) {
    case agent::IntrinsicMode::kOff:
    case agent::IntrinsicMode::kConstant: s.mode = sched::LambdaMode::kConstant; break;
    case agent::IntrinsicMode::kExpDecay: s.mode = sched::LambdaMode::kExpDecay; break;
    case agent::IntrinsicMode::kEmaAdaptive: s.mode = sched::LambdaMode::kEmaAdaptive; break;
  }
  s.tau = tau ? *tau : 0.1 * static_cast<double>(loop.total_env_steps);
  return s;
}

wm::ModelDims ExperimentConfig::model_dims(int obs_dim, int action_dim) const {
  return {obs_dim, action_dim, deter, stoch, hidden};
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  check(!env.empty(), "env must be set");
  check(loop.total_env_steps > 0, "loop.total_env_steps must be positive");
  check(loop.train_every > 0, "loop.train_every must be positive");
  check(loop.batch_size > 0, "loop.batch_size must be positive");
  check(loop.record_interval > 0, "loop.record_interval must be positive");
  check(replay_capacity > 0, "replay.capacity must be positive");
  check(seq_len > 0, "replay.seq_len must be positive");
  check(!importance_weights, "replay.importance_weights is reserved and must be false");
  check(ensemble_size > 0, "intrinsic.ensemble_size must be positive");
  check(deter > 0 && stoch > 0 && hidden > 0, "model dims must be positive");
  check(optimizer.learning_rate > 0.0, "optimizer.learning_rate must be positive");
  check(optimizer.value_horizon >= 0, "optimizer.value_horizon must be nonnegative");
  check(!tau || *tau > 0.0, "schedule.tau must be positive");
  try {
    priority.validate();
    planner.validate();
    resolved_schedule().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json to_json(const ExperimentConfig& c) {
  const sched::ScheduleConfig s = c.resolved_schedule();
  json sweep_replay = json::array();
  for (auto m : c.sweep.replay_modes) sweep_replay.push_back(agent::to_string(m));
  json sweep_intr = json::array();
  for (auto m : c.sweep.intrinsic_modes) sweep_intr.push_back(agent::to_string(m));
  return {
      {"env", c.env},
      {"seed", c.loop.seed},
      {"out_dir", c.out_dir},
      {"loop",
       {{"total_env_steps", c.loop.total_env_steps},
        {"train_every", c.loop.train_every},
        {"batch_size", c.loop.batch_size},
        {"record_interval", c.loop.record_interval},
        {"checkpoint_interval", c.loop.checkpoint_interval},
        {"record_wall_time", c.loop.record_wall_time}}},
      {"replay",
       {{"mode", agent::to_string(c.loop.replay_mode)},
        {"capacity", c.replay_capacity},
        {"seq_len", c.seq_len},
        {"lambda_r", c.priority.lambda_r},
        {"lambda_delta", c.priority.lambda_delta},
        {"lambda_eps", c.priority.lambda_eps},
        {"priority_floor", c.priority.priority_floor},
        {"importance_weights", c.importance_weights}}},
      {"intrinsic",
       {{"mode", agent::to_string(c.loop.intrinsic_mode)},
        {"ensemble_size", c.ensemble_size},
        {"shared_reward_head", c.planner.imagine.shared_reward_head}}},
      {"schedule",
       {{"lambda_0", s.lambda_0},
        {"lambda_end", s.lambda_end},
        {"tau", s.tau},
        {"lambda_min", s.lambda_min},
        {"lambda_max", s.lambda_max},
        {"ema_decay", s.ema_decay},
        {"step_size", s.step_size},
        {"slope_threshold", s.slope_threshold},
        {"invert_ema_rule", s.invert_ema_rule}}},
      {"model", {{"deter", c.deter}, {"stoch", c.stoch}, {"hidden", c.hidden}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.adam_epsilon},
        {"grad_clip", c.optimizer.grad_clip},
        {"discount", c.optimizer.discount},
        {"value_horizon", c.optimizer.value_horizon},
        {"beta_dyn", c.optimizer.beta_dyn},
        {"mixed_value_target", c.optimizer.mixed_value_target}}},
      {"planner",
       {{"n_candidates", c.planner.n_candidates},
        {"horizon", c.planner.horizon},
        {"discount", c.planner.discount},
        {"exploration_epsilon", c.planner.exploration_epsilon},
        {"latent_mode", latent_mode_name(c.planner.imagine.mode)}}},
      {"sweep", {{"seeds", c.sweep.seeds}, {"replay_mode", sweep_replay}, {"intrinsic_mode", sweep_intr}}},
  };
}

ExperimentConfig from_json(const json& j, ExperimentConfig c) {
  Section root(j, "");
  root.get("env", c.env);
  root.get("seed", c.loop.seed);
  root.get("out_dir", c.out_dir);
  with_section(root, "loop", [&](Section& s) {
    s.get("total_env_steps", c.loop.total_env_steps);
    s.get("train_every", c.loop.train_every);
    s.get("batch_size", c.loop.batch_size);
    s.get("record_interval", c.loop.record_interval);
    s.get("checkpoint_interval", c.loop.checkpoint_interval);
    s.get("record_wall_time", c.loop.record_wall_time);
  });
  with_section(root, "replay", [&](Section& s) {
    get_enum(s, "mode", c.loop.replay_mode, agent::parse_replay_mode);
    s.get("capacity", c.replay_capacity);
    s.get("seq_len", c.seq_len);
    s.get("lambda_r", c.priority.lambda_r);
    s.get("lambda_delta", c.priority.lambda_delta);
    s.get("lambda_eps", c.priority.lambda_eps);
    s.get("priority_floor", c.priority.priority_floor);
    s.get("importance_weights", c.importance_weights);
  });
  with_section(root, "intrinsic", [&](Section& s) {
    get_enum(s, "mode", c.loop.intrinsic_mode, agent::parse_intrinsic_mode);
    s.get("ensemble_size", c.ensemble_size);
    s.get("shared_reward_head", c.planner.imagine.shared_reward_head);
  });
  with_section(root, "schedule", [&](Section& s) {
    s.get("lambda_0", c.schedule.lambda_0);
    s.get("lambda_end", c.schedule.lambda_end);
    if (const json* t = s.child("tau")) {
      if (t->is_null()) {
        c.tau.reset();
      } else if (t->is_number()) {
        c.tau = t->get<double>();
      } else {
        throw ConfigError("bad value for 'schedule.tau': " + t->dump());
      }
    }
    s.get("lambda_min", c.schedule.lambda_min);
    s.get("lambda_max", c.schedule.lambda_max);
    s.get("ema_decay", c.schedule.ema_decay);
    s.get("step_size", c.schedule.step_size);
    s.get("slope_threshold", c.schedule.slope_threshold);
    s.get("invert_ema_rule", c.schedule.invert_ema_rule);
  });
  with_section(root, "model", [&](Section& s) {
    s.get("deter", c.deter);
    s.get("stoch", c.stoch);
    s.get("hidden", c.hidden);
  });
  with_section(root, "optimizer", [&](Section& s) {
    s.get("learning_rate", c.optimizer.learning_rate);
    s.get("beta1", c.optimizer.beta1);
    s.get("beta2", c.optimizer.beta2);
    s.get("epsilon", c.optimizer.adam_epsilon);
    s.get("grad_clip", c.optimizer.grad_clip);
    s.get("discount", c.optimizer.discount);
    s.get("value_horizon", c.optimizer.value_horizon);
    s.get("beta_dyn", c.optimizer.beta_dyn);
    s.get("mixed_value_target", c.optimizer.mixed_value_target);
  });
  with_section(root, "planner", [&](Section& s) {
    s.get("n_candidates", c.planner.n_candidates);
    s.get("horizon", c.planner.horizon);
    s.get("discount", c.planner.discount);
    s.get("exploration_epsilon", c.planner.exploration_epsilon);
    std::string lm;
    s.get("latent_mode", lm);
    if (!lm.empty()) c.planner.imagine.mode = parse_latent_mode(lm);
  });
  with_section(root, "sweep", [&](Section& s) {
    s.get("seeds", c.sweep.seeds);
    std::vector<std::string> names;
    s.get("replay_mode", names);
    if (!names.empty()) c.sweep.replay_modes.clear();
    for (const auto& n : names) {
      try {
        c.sweep.replay_modes.push_back(agent::parse_replay_mode(n));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("bad value for 'sweep.replay_mode': ") + e.what());
      }
    }
    names.clear();
    s.get("intrinsic_mode", names);
    if (!names.empty()) c.sweep.intrinsic_modes.clear();
    for (const auto& n : names) {
      try {
        c.sweep.intrinsic_modes.push_back(agent::parse_intrinsic_mode(n));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("bad value for 'sweep.intrinsic_mode': ") + e.what());
      }
    }
  });
  root.finish();
  return c;
}

ExperimentConfig load(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, std::move(base));
}

void save(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace dxp::config
