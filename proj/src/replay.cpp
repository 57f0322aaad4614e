#include "dxp/replay.hpp"

#include "dxp/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace dxp::replay {

namespace {

constexpr std::string_view kSnapshotMagic = "DXPRBUF1";

void require_finite(double v, const char* field) {
  if (!std::isfinite(v)) {
    throw std::invalid_argument(std::string("non-finite value in field '") + field + "'");
  }
}

}  // namespace

double extrinsic_return(std::span<const Transition> transitions) {
  double total = 0.0;
  for (const Transition& t : transitions) {
    total += static_cast<double>(t.reward_ext);
  }
  return total;
}

Trajectory Trajectory::from_transitions(std::vector<Transition> transitions) {
  Trajectory traj;
  traj.return_R = extrinsic_return(transitions);
  traj.transitions = std::move(transitions);
  return traj;
}

void PriorityWeights::validate() const {
  require_finite(lambda_r, "lambda_r");
  require_finite(lambda_delta, "lambda_delta");
  require_finite(lambda_eps, "lambda_eps");
  require_finite(priority_floor, "priority_floor");
  if (!(priority_floor > 0.0)) {
    throw std::invalid_argument("priority_floor must be positive");
  }
}

double raw_score(double return_R, double value_error_delta, double recon_error_eps,
                 const PriorityWeights& w) {
  return (w.lambda_r + w.lambda_delta * value_error_delta) * return_R + w.lambda_eps * recon_error_eps;
}

double score_trajectory(const Trajectory& traj, const PriorityWeights& w) {
  w.validate();
  require_finite(traj.return_R, "return_R");
  require_finite(traj.recon_error_eps, "recon_error_eps");
  require_finite(traj.value_error_delta, "value_error_delta");
  const double s = raw_score(traj.return_R, traj.value_error_delta, traj.recon_error_eps, w);
  require_finite(s, "priority");
  return std::max(s, w.priority_floor);
}

ReplayBuffer::ReplayBuffer(ReplayConfig config)
    : config_(config), tree_(config.capacity), slots_(config.capacity), live_(config.capacity, false) {
  if (config_.capacity == 0 || config_.seq_len == 0 || config_.obs_dim == 0) {
    throw std::invalid_argument("ReplayBuffer: capacity, seq_len and obs_dim must be positive");
  }
  config_.weights.validate();
}

void ReplayBuffer::validate(const Trajectory& traj) const {
  if (traj.length() != config_.seq_len) {
    throw std::invalid_argument("trajectory length " + std::to_string(traj.length()) +
                                " != seq_len " + std::to_string(config_.seq_len));
  }
  for (const Transition& t : traj.transitions) {
    if (t.observation.size() != config_.obs_dim) {
      throw std::invalid_argument("transition observation has wrong dimension");
    }
    if (t.action.size() != config_.action_dim) {
      throw std::invalid_argument("transition action has wrong dimension");
    }
    if (t.is_first && t.is_terminal) {
      throw std::invalid_argument("transition is both first and terminal");
    }
    if (!std::isfinite(t.reward_ext)) {
      throw std::invalid_argument("non-finite value in field 'reward_ext'");
    }
  }
}

double ReplayBuffer::max_priority() const {
  double best = 0.0;
  for (std::size_t i = 0; i < config_.capacity; ++i) {
    best = std::max(best, tree_.leaf(i));
  }
  return best;
}

double ReplayBuffer::mean_priority() const {
  return occupied_ == 0 ? 0.0 : tree_.total() / static_cast<double>(occupied_);
}

std::uint64_t ReplayBuffer::add(Trajectory traj) {
  validate(traj);
  traj.return_R = extrinsic_return(traj.transitions);
  traj.scored = false;
  traj.priority = occupied_ == 0 ? config_.weights.priority_floor
                                 : std::max(max_priority(), config_.weights.priority_floor);
  traj.insert_id = next_id_++;

  const std::size_t slot = cursor_;
  if (!live_[slot]) {
    ++occupied_;
  }
  live_[slot] = true;
  tree_.set(slot, traj.priority);
  slots_[slot] = std::move(traj);
  cursor_ = (cursor_ + 1) % config_.capacity;
  return slots_[slot].insert_id;
}

std::vector<Sample> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng, SampleMode mode) const {
  if (occupied_ == 0) {
    throw std::logic_error("cannot sample from an empty replay buffer");
  }
  std::vector<Sample> out;
  out.reserve(n);
  if (mode == SampleMode::kUniform) {
    // Live slots are always [0, occupied) because the ring fills from 0.
    std::uniform_int_distribution<std::size_t> pick(0, occupied_ - 1);
    const double p = 1.0 / static_cast<double>(occupied_);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t slot = pick(rng);
      out.push_back({&slots_[slot], slot, p});
    }
    return out;
  }

  const double total = tree_.total();
  const double stratum = total / static_cast<double>(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    // u in (i * stratum, (i + 1) * stratum], never zero.
    const double u = (static_cast<double>(i) + 1.0 - unit(rng)) * stratum;
    const std::size_t slot = tree_.find_prefix(u);
    out.push_back({&slots_[slot], slot, tree_.leaf(slot) / total});
  }
  return out;
}

std::vector<Sample> ReplayBuffer::sample(std::size_t n, std::uint64_t rng_seed, SampleMode mode) const {
  std::mt19937_64 rng(rng_seed);
  return sample(n, rng, mode);
}

UpdateReport ReplayBuffer::update_priorities(std::span<const std::size_t> indices,
                                             std::span<const TrajectorySignals> signals,
                                             const PriorityWeights& w) {
  if (indices.size() != signals.size()) {
    throw std::invalid_argument("update_priorities: indices and signals differ in length");
  }
  UpdateReport report;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t slot = indices[k];
    if (slot >= config_.capacity || !live_[slot] || slots_[slot].insert_id != signals[k].insert_id) {
      ++report.stale;
      ++stale_updates_;
      continue;
    }
    Trajectory& traj = slots_[slot];
    traj.recon_error_eps = signals[k].recon_error;
    traj.value_error_delta = signals[k].value_error;
    traj.priority = score_trajectory(traj, w);
    traj.scored = true;
    tree_.set(slot, traj.priority);
    ++report.updated;
  }
  return report;
}

const Trajectory& ReplayBuffer::at(std::size_t index) const {
  if (!occupied(index)) {
    throw std::out_of_range("replay slot " + std::to_string(index) + " is not occupied");
  }
  return slots_[index];
}

bool ReplayBuffer::occupied(std::size_t index) const { return index < config_.capacity && live_[index]; }

std::vector<std::size_t> ReplayBuffer::insertion_order() const {
  std::vector<std::size_t> order;
  order.reserve(occupied_);
  const std::size_t start = occupied_ < config_.capacity ? 0 : cursor_;
  for (std::size_t k = 0; k < occupied_; ++k) {
    order.push_back((start + k) % config_.capacity);
  }
  return order;
}

void ReplayBuffer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  io::write_magic(out, kSnapshotMagic);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(config_.capacity));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(occupied_));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(config_.seq_len));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(config_.obs_dim));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(config_.action_dim));
  for (const std::size_t slot : insertion_order()) {
    const Trajectory& traj = slots_[slot];
    io::write_pod<std::uint64_t>(out, traj.insert_id);
    for (const Transition& t : traj.transitions) {
      for (const float v : t.observation) io::write_pod(out, v);
    }
    for (const Transition& t : traj.transitions) {
      for (const float v : t.action) io::write_pod(out, v);
    }
    for (const Transition& t : traj.transitions) {
      io::write_pod(out, t.reward_ext);
      io::write_pod(out, t.reward_intr);
      io::write_pod(out, t.reward_total);
    }
    for (const Transition& t : traj.transitions) {
      const std::uint8_t flags =
          static_cast<std::uint8_t>((t.is_first ? 1u : 0u) | (t.is_terminal ? 2u : 0u));
      io::write_pod(out, flags);
    }
    io::write_pod(out, traj.return_R);
    io::write_pod(out, traj.recon_error_eps);
    io::write_pod(out, traj.value_error_delta);
    io::write_pod(out, traj.priority);
    io::write_pod<std::uint8_t>(out, traj.scored ? 1 : 0);
  }
  if (!out) {
    throw std::runtime_error("failed writing replay snapshot " + path.string());
  }
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path, const PriorityWeights& weights) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  io::expect_magic(in, kSnapshotMagic);
  ReplayConfig cfg;
  cfg.capacity = io::read_pod<std::uint32_t>(in);
  const std::size_t occupied = io::read_pod<std::uint32_t>(in);
  cfg.seq_len = io::read_pod<std::uint32_t>(in);
  cfg.obs_dim = io::read_pod<std::uint32_t>(in);
  cfg.action_dim = io::read_pod<std::uint32_t>(in);
  cfg.weights = weights;
  if (occupied > cfg.capacity) {
    throw io::FormatError("replay snapshot claims more trajectories than capacity");
  }
  ReplayBuffer buffer(cfg);
  for (std::size_t k = 0; k < occupied; ++k) {
    Trajectory traj;
    traj.insert_id = io::read_pod<std::uint64_t>(in);
    traj.transitions.resize(cfg.seq_len);
    for (Transition& t : traj.transitions) {
      t.observation.resize(cfg.obs_dim);
      for (float& v : t.observation) v = io::read_pod<float>(in);
    }
    for (Transition& t : traj.transitions) {
      t.action.resize(cfg.action_dim);
      for (float& v : t.action) v = io::read_pod<float>(in);
    }
    for (Transition& t : traj.transitions) {
      t.reward_ext = io::read_pod<float>(in);
      t.reward_intr = io::read_pod<float>(in);
      t.reward_total = io::read_pod<float>(in);
    }
    for (Transition& t : traj.transitions) {
      const auto flags = io::read_pod<std::uint8_t>(in);
      t.is_first = (flags & 1u) != 0;
      t.is_terminal = (flags & 2u) != 0;
    }
    traj.return_R = io::read_pod<double>(in);
    traj.recon_error_eps = io::read_pod<double>(in);
    traj.value_error_delta = io::read_pod<double>(in);
    traj.priority = io::read_pod<double>(in);
    traj.scored = io::read_pod<std::uint8_t>(in) != 0;
    buffer.validate(traj);
    if (traj.return_R != extrinsic_return(traj.transitions)) {
      throw io::FormatError("replay snapshot return does not match stored rewards");
    }

    const std::size_t slot = k;
    buffer.live_[slot] = true;
    buffer.tree_.set(slot, traj.priority);
    buffer.next_id_ = std::max(buffer.next_id_, traj.insert_id + 1);
    buffer.slots_[slot] = std::move(traj);
  }
  buffer.occupied_ = occupied;
  buffer.cursor_ = occupied % cfg.capacity;
  return buffer;
}

}  // namespace dxp::replay
