#include "dxp/planner.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dxp::agent {

void PlannerConfig::validate() const {
  if (n_candidates < 1) throw std::invalid_argument("planner n_candidates must be >= 1");
  if (horizon < 1) throw std::invalid_argument("planner horizon must be >= 1");
  if (!(discount > 0.0 && discount <= 1.0)) throw std::invalid_argument("planner discount must lie in (0, 1]");
  if (!(exploration_epsilon >= 0.0 && exploration_epsilon <= 1.0)) {
    throw std::invalid_argument("exploration_epsilon must lie in [0, 1]");
  }
}

std::string_view to_string(IntrinsicMode m) {
  switch (m) {
    case IntrinsicMode::kOff: return "off";
    case IntrinsicMode::kConstant: return "constant";
    case IntrinsicMode::kExpDecay: return "exp_decay";
    case IntrinsicMode::kEmaAdaptive: return "ema_adaptive";
  }
  return "?";
}

IntrinsicMode parse_intrinsic_mode(std::string_view s) {
  if (s == "off") return IntrinsicMode::kOff;
  if (s == "constant") return IntrinsicMode::kConstant;
  if (s == "exp_decay") return IntrinsicMode::kExpDecay;
  if (s == "ema_adaptive") return IntrinsicMode::kEmaAdaptive;
  throw std::invalid_argument("unknown intrinsic mode '" + std::string(s) + "'");
}

std::string_view to_string(replay::SampleMode m) {
  return m == replay::SampleMode::kUniform ? "uniform" : "prioritized";
}

replay::SampleMode parse_replay_mode(std::string_view s) {
  if (s == "uniform") return replay::SampleMode::kUniform;
  if (s == "prioritized") return replay::SampleMode::kPrioritized;
  throw std::invalid_argument("unknown replay mode '" + std::string(s) + "'");
}

void TrainLoopConfig::validate() const {
  if (total_env_steps == 0 || train_every < 1 || batch_size < 1 || record_interval < 1) {
    throw std::invalid_argument("training loop counts must be positive");
  }
}

wm::Vector encode_action(const envs::ActionSpace& space, int index) {
  if (!space.discrete || index < 0 || index >= space.n) {
    throw std::invalid_argument("encode_action: index outside the discrete action space");
  }
  return wm::Vector::Unit(space.n, index);
}

std::vector<wm::Matrix> candidate_actions(const envs::ActionSpace& space, const PlannerConfig& cfg,
                                          std::mt19937_64& rng) {
  if (space.n < 1) {
    throw std::invalid_argument("planner: empty action space");
  }
  const auto horizon = static_cast<std::size_t>(cfg.horizon);
  std::vector<wm::Matrix> steps(horizon);

  if (!space.discrete || cfg.action_mode == ActionMode::kContinuousSampled) {
    if (space.discrete) {
      throw std::invalid_argument("planner: continuous sampling requested for a discrete space");
    }
    std::uniform_real_distribution<double> u(space.low, space.high);
    for (auto& m : steps) {
      m.resize(space.n, cfg.n_candidates);
      for (wm::Index c = 0; c < m.cols(); ++c)
        for (wm::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
    }
    return steps;
  }

  // Does n^L fit within the candidate budget?
  std::size_t total = 1;
  bool enumerable = true;
  for (std::size_t t = 0; t < horizon && enumerable; ++t) {
    total *= static_cast<std::size_t>(space.n);
    enumerable = total <= static_cast<std::size_t>(cfg.n_candidates);
  }

  const std::size_t count = enumerable ? total : static_cast<std::size_t>(cfg.n_candidates);
  for (auto& m : steps) m = wm::Matrix::Zero(space.n, static_cast<wm::Index>(count));
  std::uniform_int_distribution<int> pick(0, space.n - 1);
  for (std::size_t c = 0; c < count; ++c) {
    std::size_t code = c;
    for (std::size_t t = horizon; t-- > 0;) {
      int a;
      if (enumerable) {
        // First step is the most significant digit.
        a = static_cast<int>(code % static_cast<std::size_t>(space.n));
        code /= static_cast<std::size_t>(space.n);
      } else {
        a = -1;
      }
      if (a >= 0) steps[t](a, static_cast<wm::Index>(c)) = 1.0;
    }
    if (!enumerable) {
      for (std::size_t t = 0; t < horizon; ++t) steps[t](pick(rng), static_cast<wm::Index>(c)) = 1.0;
    }
  }
  return steps;
}

PlanResult plan_action(const ens::Ensemble& ens, double lambda, std::span<const wm::LatentState> posteriors,
                       const PlannerConfig& cfg, const envs::ActionSpace& space, std::mt19937_64& rng) {
  cfg.validate();
  if (space.n < 1) {
    throw std::invalid_argument("planner: empty action space");
  }
  const std::uint64_t noise_seed = rng();
  const std::vector<wm::Matrix> actions = candidate_actions(space, cfg, rng);
  const std::vector<wm::Matrix> rewards = ens::imagine_rewards(ens, posteriors, actions, noise_seed, cfg.imagine);

  const wm::Index n = actions.front().cols();
  const int k = ens.size();
  std::vector<double> column(static_cast<std::size_t>(k));
  wm::Vector scores = wm::Vector::Zero(n);
  wm::Vector intr = wm::Vector::Zero(n);
  for (wm::Index c = 0; c < n; ++c) {
    double disc = 1.0;
    for (int t = 0; t < cfg.horizon; ++t) {
      for (int m = 0; m < k; ++m) column[static_cast<std::size_t>(m)] = rewards[static_cast<std::size_t>(m)](t, c);
      const ens::StepStats s = ens::member_stats(column);
      const double augmented = s.mean + s.variance;
      scores[c] += disc * ens::mix_rewards(s.mean, augmented, lambda);
      intr[c] += augmented;
      disc *= cfg.discount;
    }
    intr[c] /= cfg.horizon;
  }

  PlanResult out;
  wm::Index best = 0;
  for (wm::Index c = 1; c < n; ++c) {
    if (scores[c] > scores[best]) best = c;
  }
  out.candidate = static_cast<std::size_t>(best);
  out.score = scores[best];
  out.r_intr = intr[best];
  for (const wm::Matrix& step : actions) out.sequence.push_back(step.col(best));
  out.action = out.sequence.front();
  if (space.discrete) {
    out.action.maxCoeff(&best);
    out.action_index = static_cast<int>(best);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < cfg.exploration_epsilon) {
    out.explored = true;
    if (space.discrete) {
      out.action_index = std::uniform_int_distribution<int>(0, space.n - 1)(rng);
      out.action = encode_action(space, out.action_index);
    } else {
      std::uniform_real_distribution<double> u(space.low, space.high);
      for (wm::Index i = 0; i < out.action.size(); ++i) out.action[i] = u(rng);
    }
  }
  return out;
}

}  // namespace dxp::agent
