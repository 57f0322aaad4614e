#include "dxp/envs.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <stdexcept>

namespace dxp::envs {

namespace {

void require_active(bool active) {
  if (!active) throw EnvError("step() called on a finished or unreset episode");
}

void require_action(int action, int n) {
  if (action < 0 || action >= n) {
    throw std::invalid_argument("action " + std::to_string(action) + " outside [0, " + std::to_string(n) + ")");
  }
}

}  // namespace

SparseChain::SparseChain(int n) : n_(n) {
  if (n < 2) throw std::invalid_argument("SparseChain needs at least 2 positions");
  spec_ = {"chain-" + std::to_string(n), 1, ActionSpace{true, 2}, 4 * n, RewardStructure::kSparse};
}

Observation SparseChain::observe() {
  std::normal_distribution<double> noise(0.0, kObsNoise);
  Observation o(1);
  o[0] = static_cast<double>(pos_) / static_cast<double>(n_ - 1) + noise(rng_);
  return o;
}

Observation SparseChain::reset(std::uint64_t seed) {
  rng_.seed(seed);
  pos_ = 0;
  steps_ = 0;
  active_ = true;
  return observe();
}

StepResult SparseChain::step(int action) {
  require_active(active_);
  require_action(action, 2);
  pos_ = std::clamp(pos_ + (action == 1 ? 1 : -1), 0, n_ - 1);
  ++steps_;
  StepResult r;
  r.is_terminal = pos_ == n_ - 1;
  r.reward = r.is_terminal ? 1.0 : 0.0;
  r.is_truncated = !r.is_terminal && steps_ >= spec_.max_episode_steps;
  r.observation = observe();
  active_ = !(r.is_terminal || r.is_truncated);
  return r;
}

CupCatch1D::CupCatch1D() {
  spec_ = {"cupcatch", 3, ActionSpace{true, 3}, kHeight, RewardStructure::kSparse};
}

Observation CupCatch1D::observe() const {
  Observation o(3);
  o << static_cast<double>(cup_col_) / (kWidth - 1), static_cast<double>(ball_col_) / (kWidth - 1),
      static_cast<double>(ball_height_) / kHeight;
  return o;
}

Observation CupCatch1D::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ball_col_ = std::uniform_int_distribution<int>(0, kWidth - 1)(rng);
  ball_height_ = kHeight;
  cup_col_ = kWidth / 2;
  active_ = true;
  return observe();
}

StepResult CupCatch1D::step(int action) {
  require_active(active_);
  require_action(action, 3);
  cup_col_ = std::clamp(cup_col_ + (action - 1), 0, kWidth - 1);
  --ball_height_;
  StepResult r;
  r.is_terminal = ball_height_ == 0;
  r.reward = r.is_terminal && cup_col_ == ball_col_ ? 1.0 : 0.0;
  r.observation = observe();
  active_ = !r.is_terminal;
  return r;
}

DenseGrid::DenseGrid(int g) : g_(g) {
  if (g < 2) throw std::invalid_argument("DenseGrid needs G >= 2");
  spec_ = {"grid-" + std::to_string(g), 2, ActionSpace{true, 4}, 4 * g * g, RewardStructure::kDense};
}

Observation DenseGrid::observe() const {
  Observation o(2);
  o << static_cast<double>(x_) / (g_ - 1), static_cast<double>(y_) / (g_ - 1);
  return o;
}

Observation DenseGrid::reset(std::uint64_t) {
  x_ = 0;
  y_ = 0;
  steps_ = 0;
  active_ = true;
  return observe();
}

StepResult DenseGrid::step(int action) {
  require_active(active_);
  require_action(action, 4);
  switch (action) {
    case kUp: y_ = std::max(0, y_ - 1); break;
    case kDown: y_ = std::min(g_ - 1, y_ + 1); break;
    case kLeft: x_ = std::max(0, x_ - 1); break;
    case kRight: x_ = std::min(g_ - 1, x_ + 1); break;
    default: break;
  }
  ++steps_;
  StepResult r;
  const int dist = (g_ - 1 - x_) + (g_ - 1 - y_);
  r.is_terminal = dist == 0;
  r.reward = r.is_terminal ? 1.0 : -static_cast<double>(dist) / static_cast<double>(2 * g_ - 2);
  r.is_truncated = !r.is_terminal && steps_ >= spec_.max_episode_steps;
  r.observation = observe();
  active_ = !(r.is_terminal || r.is_truncated);
  return r;
}

std::unique_ptr<Environment> make_env(std::string_view name) {
  auto parse_suffix = [&](std::string_view prefix) -> int {
    const std::string_view rest = name.substr(prefix.size());
    int v = 0;
    const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), v);
    if (ec != std::errc() || ptr != rest.data() + rest.size()) {
      throw std::invalid_argument("bad environment size in '" + std::string(name) + "'");
    }
    return v;
  };
  if (name.starts_with("chain-")) return std::make_unique<SparseChain>(parse_suffix("chain-"));
  if (name.starts_with("grid-")) return std::make_unique<DenseGrid>(parse_suffix("grid-"));
  if (name == "cupcatch") return std::make_unique<CupCatch1D>();
  throw std::invalid_argument("unknown environment '" + std::string(name) + "'");
}

}  // namespace dxp::envs
