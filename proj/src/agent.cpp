#include "dxp/agent.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

namespace dxp::agent {

namespace {

using ojson = nlohmann::ordered_json;

// Stream tags for the per-run RNGs, all derived from the run seed.
enum StreamTag : int { kActStream = 101, kEnvStream = 102, kReplayStream = 103, kTrainStream = 104 };

std::vector<float> to_float(const Eigen::VectorXd& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  return out;
}

// The model sees exactly what replay stores.
wm::Vector rounded(const Eigen::VectorXd& v) { return v.cast<float>().cast<double>(); }

double lambda_for(IntrinsicMode mode, const sched::LambdaSchedule& s, std::uint64_t step) {
  return mode == IntrinsicMode::kOff ? 1.0 : s.lambda_at(step);
}

class Loop {
 public:
  Loop(envs::Environment& env, const config::ExperimentConfig& cfg, std::filesystem::path out_dir,
       const LoopHooks& hooks)
      : env_(env),
        cfg_(cfg),
        out_dir_(std::move(out_dir)),
        hooks_(hooks),
        space_(env.spec().action_space),
        dims_(cfg.model_dims(env.spec().obs_dim, space_.n)),
        ens_(dims_, cfg.ensemble_size, cfg.loop.seed),
        replay_(replay::ReplayConfig{cfg.replay_capacity, cfg.seq_len, static_cast<std::size_t>(dims_.obs_dim),
                                     static_cast<std::size_t>(dims_.action_dim), cfg.priority}),
        schedule_(cfg.resolved_schedule()),
        act_rng_(ens::member_seed(cfg.loop.seed, kActStream)),
        env_rng_(ens::member_seed(cfg.loop.seed, kEnvStream)),
        replay_rng_(ens::member_seed(cfg.loop.seed, kReplayStream)),
        train_rng_(ens::member_seed(cfg.loop.seed, kTrainStream)),
        start_(std::chrono::steady_clock::now()) {
    if (!space_.discrete) {
      throw std::invalid_argument("training loop supports discrete action spaces only");
    }
    if (!out_dir_.empty()) {
      std::filesystem::create_directories(out_dir_);
      metrics_.open(out_dir_ / "metrics.jsonl", std::ios::trunc);
      if (!metrics_) throw std::runtime_error("cannot write " + (out_dir_ / "metrics.jsonl").string());
    }
  }

  RunSummary run();

 private:
  void begin_episode();
  void env_step();
  void train_step();
  void refresh_uncovered(std::span<const replay::Trajectory* const> batch, const std::vector<bool>& covered,
                         std::vector<wm::SequenceSignals>& signals);
  void emit(const ojson& record);
  ojson record(const char* kind, double r_intr_mean) const;
  void write_checkpoint(const std::filesystem::path& dir) const;
  double wall_ms() const;

  envs::Environment& env_;
  const config::ExperimentConfig& cfg_;
  std::filesystem::path out_dir_;
  const LoopHooks& hooks_;
  envs::ActionSpace space_;
  wm::ModelDims dims_;
  ens::Ensemble ens_;
  replay::ReplayBuffer replay_;
  sched::LambdaSchedule schedule_;
  std::mt19937_64 act_rng_, env_rng_, replay_rng_, train_rng_;
  std::chrono::steady_clock::time_point start_;
  std::ofstream metrics_;

  std::vector<wm::LatentState> posts_;
  std::vector<replay::Transition> chunk_;
  bool in_episode_ = false;
  std::uint64_t step_ = 0;
  double episode_return_ = 0.0;
  double episode_intr_ = 0.0;
  int episode_len_ = 0;
  double last_return_ = 0.0;
  double window_intr_ = 0.0;
  std::uint64_t window_steps_ = 0;
  wm::LossBreakdown last_losses_;
  RunSummary summary_;
};

double Loop::wall_ms() const {
  if (!cfg_.loop.record_wall_time) return 0.0;
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
}

void Loop::begin_episode() {
  const Eigen::VectorXd obs = rounded(env_.reset(env_rng_()));
  posts_.clear();
  const wm::Vector no_action = wm::Vector::Zero(dims_.action_dim);
  for (int k = 0; k < ens_.size(); ++k) {
    posts_.push_back(wm::observe_step(ens_.member(k).model, wm::LatentState::zeros(dims_), no_action, obs, act_rng_,
                                      cfg_.planner.imagine.mode));
  }
  replay::Transition first;
  first.observation = to_float(obs);
  first.action.assign(static_cast<std::size_t>(dims_.action_dim), 0.0f);
  first.is_first = true;
  chunk_.push_back(std::move(first));
  in_episode_ = true;
  episode_return_ = 0.0;
  episode_intr_ = 0.0;
  episode_len_ = 0;
}

void Loop::env_step() {
  const double lambda = lambda_for(cfg_.loop.intrinsic_mode, schedule_, step_);
  PlanResult plan = plan_action(ens_, lambda, posts_, cfg_.planner, space_, act_rng_);
  if (plan.explored) {
    // Score the action actually taken, followed by the rest of the plan.
    std::vector<wm::Vector> seq = plan.sequence;
    seq.front() = plan.action;
    plan.r_intr = ens::intrinsic_reward(ens::imagine_ensemble(ens_, posts_, seq, act_rng_(), cfg_.planner.imagine));
  }

  envs::StepResult res;
  try {
    res = env_.step(plan.action_index);
  } catch (const std::exception& e) {
    std::string where;
    if (!out_dir_.empty()) {
      write_checkpoint(out_dir_ / "checkpoint");
      where = "; checkpoint written to " + (out_dir_ / "checkpoint").string();
    }
    throw EnvironmentFault("environment '" + env_.spec().name + "' failed at env step " + std::to_string(step_) +
                           " (episode " + std::to_string(summary_.episodes) + "): " + e.what() + where);
  }
  ++step_;

  const Eigen::VectorXd obs = rounded(res.observation);
  replay::Transition t;
  t.observation = to_float(obs);
  t.action = to_float(plan.action);
  t.reward_ext = static_cast<float>(res.reward);
  t.reward_intr = static_cast<float>(plan.r_intr);
  t.reward_total = cfg_.loop.intrinsic_mode == IntrinsicMode::kOff
                       ? t.reward_ext
                       : static_cast<float>(ens::mix_rewards(t.reward_ext, t.reward_intr, lambda));
  t.is_terminal = res.is_terminal;
  if (hooks_.on_transition) hooks_.on_transition(t);
  chunk_.push_back(std::move(t));
  if (chunk_.size() == cfg_.seq_len) {
    replay_.add(replay::Trajectory::from_transitions(std::move(chunk_)));
    chunk_.clear();
  }

  if (res.reward > 0.0 && !summary_.first_reward_step) summary_.first_reward_step = step_;
  episode_return_ += res.reward;
  episode_intr_ += plan.r_intr;
  ++episode_len_;
  window_intr_ += plan.r_intr;
  ++window_steps_;

  for (int k = 0; k < ens_.size(); ++k) {
    posts_[static_cast<std::size_t>(k)] = wm::observe_step(ens_.member(k).model, posts_[static_cast<std::size_t>(k)],
                                                           plan.action, obs, act_rng_, cfg_.planner.imagine.mode);
  }

  if (res.is_terminal || res.is_truncated) {
    in_episode_ = false;
    ++summary_.episodes;
    last_return_ = episode_return_;
    if (cfg_.loop.intrinsic_mode == IntrinsicMode::kEmaAdaptive) schedule_.on_episode_end(episode_return_);
    EpisodeRecord ep;
    ep.step = step_;
    ep.episode = summary_.episodes;
    ep.return_ext = episode_return_;
    ep.r_intr_mean = episode_intr_ / episode_len_;
    ep.lambda = lambda_for(cfg_.loop.intrinsic_mode, schedule_, step_);
    ep.length = episode_len_;
    ep.terminal = res.is_terminal;
    summary_.episode_log.push_back(ep);
    emit(record("episode", ep.r_intr_mean));
  }
}

void Loop::refresh_uncovered(std::span<const replay::Trajectory* const> batch, const std::vector<bool>& covered,
                             std::vector<wm::SequenceSignals>& signals) {
  std::vector<const replay::Trajectory*> rest;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!covered[i]) {
      rest.push_back(batch[i]);
      where.push_back(i);
    }
  }
  if (rest.empty()) return;
  const std::uint64_t noise = train_rng_();
  std::vector<wm::SequenceSignals> sum(rest.size());
  for (int k = 0; k < ens_.size(); ++k) {
    const wm::LossEvaluation ev = wm::evaluate_loss(ens_.member(k).model, rest, noise, cfg_.optimizer);
    for (std::size_t j = 0; j < rest.size(); ++j) {
      sum[j].recon_error += ev.signals[j].recon_error / ens_.size();
      sum[j].value_error += ev.signals[j].value_error / ens_.size();
    }
  }
  for (std::size_t j = 0; j < rest.size(); ++j) signals[where[j]] = sum[j];
}

void Loop::train_step() {
  const std::vector<replay::Sample> samples =
      replay_.sample(static_cast<std::size_t>(cfg_.loop.batch_size), replay_rng_, cfg_.loop.replay_mode);
  std::vector<const replay::Trajectory*> batch;
  for (const replay::Sample& s : samples) batch.push_back(s.trajectory);

  ens::EnsembleTrainResult result = ens::train_ensemble(ens_, batch, train_rng_, cfg_.optimizer);
  refresh_uncovered(batch, result.covered, result.signals);

  // A slot drawn more than once gets the average of its positions' signals.
  std::vector<replay::Sample> unique;
  std::vector<std::size_t> indices;
  std::vector<replay::TrajectorySignals> signals;
  std::vector<double> hits;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto it = std::find(indices.begin(), indices.end(), samples[i].index);
    const auto j = static_cast<std::size_t>(it - indices.begin());
    if (it == indices.end()) {
      unique.push_back(samples[i]);
      indices.push_back(samples[i].index);
      signals.push_back({samples[i].trajectory->insert_id, 0.0, 0.0});
      hits.push_back(0.0);
    }
    signals[j].recon_error += result.signals[i].recon_error;
    signals[j].value_error += result.signals[i].value_error;
    hits[j] += 1.0;
  }
  for (std::size_t j = 0; j < signals.size(); ++j) {
    signals[j].recon_error /= hits[j];
    signals[j].value_error /= hits[j];
  }
  replay_.update_priorities(indices, signals);
  if (hooks_.on_priorities_refreshed) hooks_.on_priorities_refreshed(replay_, unique, signals);

  wm::LossBreakdown mean;
  for (const wm::TrainOutcome& m : result.members) {
    mean.recon += m.losses.recon;
    mean.reward += m.losses.reward;
    mean.value += m.losses.value;
    mean.dynamics += m.losses.dynamics;
    mean.continue_ += m.losses.continue_;
    mean.total += m.losses.total;
  }
  const double k = static_cast<double>(result.members.size());
  mean.recon /= k;
  mean.reward /= k;
  mean.value /= k;
  mean.dynamics /= k;
  mean.continue_ /= k;
  mean.total /= k;
  last_losses_ = mean;

  ++summary_.train_steps;
  TrainRecord rec;
  rec.step = step_;
  rec.train_step = summary_.train_steps;
  rec.losses = mean;
  rec.priority_max = replay_.max_priority();
  rec.priority_mean = replay_.mean_priority();
  rec.lambda = lambda_for(cfg_.loop.intrinsic_mode, schedule_, step_);
  summary_.train_log.push_back(rec);

  if (summary_.train_steps % static_cast<std::uint64_t>(cfg_.loop.record_interval) == 0) {
    const double intr = window_steps_ ? window_intr_ / static_cast<double>(window_steps_) : 0.0;
    window_intr_ = 0.0;
    window_steps_ = 0;
    emit(record("train", intr));
  }
}

ojson Loop::record(const char* kind, double r_intr_mean) const {
  ojson j;
  j["kind"] = kind;
  j["step"] = step_;
  j["episode"] = summary_.episodes;
  j["train_step"] = summary_.train_steps;
  j["episode_return_ext"] = last_return_;
  j["r_intr_mean"] = r_intr_mean;
  j["lambda"] = lambda_for(cfg_.loop.intrinsic_mode, schedule_, step_);
  j["loss_recon"] = last_losses_.recon;
  j["loss_reward"] = last_losses_.reward;
  j["loss_value"] = last_losses_.value;
  j["loss_dynamics"] = last_losses_.dynamics;
  j["priority_max"] = replay_.empty() ? 0.0 : replay_.max_priority();
  j["priority_mean"] = replay_.empty() ? 0.0 : replay_.mean_priority();
  j["wall_ms"] = wall_ms();
  return j;
}

void Loop::emit(const ojson& rec) {
  if (metrics_.is_open()) metrics_ << rec.dump() << '\n';
}

void Loop::write_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  ens_.save(dir / "ensemble.bin");
  replay_.save(dir / "replay.bin");
  {
    std::ofstream out(dir / "schedule.json", std::ios::trunc);
    out << schedule_.to_json().dump(2) << '\n';
  }
  std::ofstream out(dir / "rng_state.txt", std::ios::trunc);
  out << "env_step " << step_ << "\nepisode " << summary_.episodes << "\ntrain_step " << summary_.train_steps << '\n';
  out << "act " << act_rng_ << "\nenv " << env_rng_ << "\nreplay " << replay_rng_ << "\ntrain " << train_rng_ << '\n';
  for (int k = 0; k < ens_.size(); ++k) out << "member" << k << ' ' << ens_.member(k).rng << '\n';
}

RunSummary Loop::run() {
  const std::uint64_t total = cfg_.loop.total_env_steps;
  const auto train_every = static_cast<std::uint64_t>(cfg_.loop.train_every);
  while (step_ < total) {
    if (!in_episode_) begin_episode();
    env_step();
    if (hooks_.stop_at_first_reward && summary_.first_reward_step) break;
    if (step_ % train_every == 0 && !replay_.empty()) train_step();
    if (cfg_.loop.checkpoint_interval && step_ % cfg_.loop.checkpoint_interval == 0 && !out_dir_.empty()) {
      write_checkpoint(out_dir_ / "checkpoint");
    }
  }
  if (!out_dir_.empty()) write_checkpoint(out_dir_ / "checkpoint");

  summary_.env_steps = step_;
  summary_.final_lambda = lambda_for(cfg_.loop.intrinsic_mode, schedule_, step_);
  summary_.stale_updates = replay_.stale_updates();
  for (int k = 0; k < ens_.size(); ++k) summary_.rejected_steps += ens_.member(k).optimizer.rejected_steps;
  return std::move(summary_);
}

}  // namespace

RunSummary run_training(envs::Environment& env, const config::ExperimentConfig& cfg,
                        const std::filesystem::path& out_dir, const LoopHooks& hooks) {
  cfg.validate();
  Loop loop(env, cfg, out_dir, hooks);
  return loop.run();
}

}  // namespace dxp::agent
