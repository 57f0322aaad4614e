#include "dxp/ensemble.hpp"

#include "dxp/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace dxp::ens {

namespace {

constexpr std::string_view kEnsembleMagic = "DXPENS1";

void check_starts(const Ensemble& ens, std::span<const LatentState> starts) {
  if (static_cast<int>(starts.size()) != ens.size()) {
    throw std::invalid_argument("imagination needs one start state per ensemble member");
  }
}

// Shared core: rolls every member over the action columns and records
// rewards (and optionally the per-step states of column 0).
std::vector<Matrix> rollout(const Ensemble& ens, std::span<const LatentState> starts,
                            std::span<const Matrix> actions, std::uint64_t noise_seed,
                            const ImagineOptions& opts,
                            std::vector<std::vector<LatentState>>* states) {
  check_starts(ens, starts);
  if (actions.empty()) {
    throw std::invalid_argument("imagination horizon must be at least 1");
  }
  const Index n = actions.front().cols();
  const auto horizon = static_cast<Index>(actions.size());
  std::vector<Matrix> rewards;
  rewards.reserve(static_cast<std::size_t>(ens.size()));
  if (states) states->assign(static_cast<std::size_t>(ens.size()), {});

  for (int k = 0; k < ens.size(); ++k) {
    const wm::WorldModel& model = ens.member(k).model;
    const wm::WorldModel& reward_model = opts.shared_reward_head ? ens.member(0).model : model;
    std::mt19937_64 rng(opts.shared_noise ? noise_seed : member_seed(noise_seed, k));
    wm::LatentBatch s = wm::LatentBatch::broadcast(starts[static_cast<std::size_t>(k)], n);
    Matrix r(horizon, n);
    for (Index t = 0; t < horizon; ++t) {
      const Matrix& a = actions[static_cast<std::size_t>(t)];
      if (a.cols() != n) {
        throw std::invalid_argument("every imagination step needs the same number of candidates");
      }
      s = wm::imagine_step(model, s, a, rng, opts.mode);
      r.row(t) = wm::predict_reward(reward_model, s);
      if (states) (*states)[static_cast<std::size_t>(k)].push_back(s.column(0));
    }
    rewards.push_back(std::move(r));
  }
  return rewards;
}

}  // namespace

std::uint64_t member_seed(std::uint64_t seed, int k) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Ensemble::Ensemble(const wm::ModelDims& dims, int members, std::uint64_t seed) {
  if (members < 1) {
    throw std::invalid_argument("ensemble needs at least one member");
  }
  for (int k = 0; k < members; ++k) {
    const std::uint64_t s = member_seed(seed, k);
    wm::WorldModel model = wm::WorldModel::initialized(dims, s);
    wm::AdamState opt(model.layout().size());
    members_.push_back({std::move(model), std::move(opt), std::mt19937_64(s ^ 0x9e3779b97f4a7c15ull)});
  }
}

Ensemble::Ensemble(std::vector<Member> members) : members_(std::move(members)) {
  if (members_.empty()) {
    throw std::invalid_argument("ensemble needs at least one member");
  }
  for (const Member& m : members_) {
    if (!(m.model.dims() == members_.front().model.dims())) {
      throw std::invalid_argument("ensemble members must share dims");
    }
  }
}

void Ensemble::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  io::write_magic(out, kEnsembleMagic);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(members_.size()));
  for (const Member& m : members_) {
    wm::write_checkpoint(out, m.model, m.optimizer);
  }
}

Ensemble Ensemble::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  io::expect_magic(in, kEnsembleMagic);
  const auto k = io::read_pod<std::uint32_t>(in);
  std::vector<Member> members;
  for (std::uint32_t i = 0; i < k; ++i) {
    auto [model, opt] = wm::read_checkpoint(in);
    members.push_back({std::move(model), std::move(opt), std::mt19937_64(member_seed(0, static_cast<int>(i)))});
  }
  return Ensemble(std::move(members));
}

ImaginedRollout imagine_ensemble(const Ensemble& ens, std::span<const LatentState> starts,
                                 std::span<const Vector> actions, std::uint64_t noise_seed,
                                 const ImagineOptions& opts) {
  std::vector<Matrix> columns;
  columns.reserve(actions.size());
  for (const Vector& a : actions) columns.emplace_back(a);

  ImaginedRollout out;
  const std::vector<Matrix> rewards = rollout(ens, starts, columns, noise_seed, opts, &out.states);
  out.horizon = static_cast<int>(actions.size());
  out.rewards.resize(ens.size(), out.horizon);
  for (int k = 0; k < ens.size(); ++k) {
    out.rewards.row(k) = rewards[static_cast<std::size_t>(k)].col(0).transpose();
  }
  out.mean_rewards.resize(out.horizon);
  std::vector<double> column(static_cast<std::size_t>(ens.size()));
  for (int t = 0; t < out.horizon; ++t) {
    for (int k = 0; k < ens.size(); ++k) column[static_cast<std::size_t>(k)] = out.rewards(k, t);
    out.mean_rewards[t] = member_stats(column).mean;
  }
  return out;
}

std::vector<Matrix> imagine_rewards(const Ensemble& ens, std::span<const LatentState> starts,
                                    std::span<const Matrix> actions, std::uint64_t noise_seed,
                                    const ImagineOptions& opts) {
  return rollout(ens, starts, actions, noise_seed, opts, nullptr);
}

StepStats member_stats(std::span<const double> predictions) {
  if (predictions.empty()) {
    throw std::invalid_argument("member_stats: no predictions");
  }
  std::vector<double> sorted(predictions.begin(), predictions.end());
  std::sort(sorted.begin(), sorted.end());
  const double k = static_cast<double>(sorted.size());
  double sum = 0.0;
  for (const double v : sorted) sum += v;
  StepStats s;
  s.mean = sum / k;
  double sq = 0.0;
  for (const double v : sorted) sq += (v - s.mean) * (v - s.mean);
  s.variance = sq / k;
  return s;
}

double intrinsic_reward(const ImaginedRollout& rollout) {
  const Index k = rollout.rewards.rows();
  const Index horizon = rollout.rewards.cols();
  if (k < 1 || horizon < 1) {
    throw std::invalid_argument("intrinsic_reward: empty rollout");
  }
  std::vector<double> column(static_cast<std::size_t>(k));
  double total = 0.0;
  for (Index t = 0; t < horizon; ++t) {
    for (Index m = 0; m < k; ++m) column[static_cast<std::size_t>(m)] = rollout.rewards(m, t);
    const StepStats s = member_stats(column);
    total += s.mean + s.variance;
  }
  return total / static_cast<double>(horizon);
}

double mix_rewards(double r_ext, double r_intr, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("mixing weight lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  return lambda * r_ext + (1.0 - lambda) * r_intr;
}

EnsembleTrainResult train_ensemble(Ensemble& ens, wm::Batch batch, std::mt19937_64& rng,
                                   const wm::TrainConfig& cfg) {
  if (batch.empty()) {
    throw std::invalid_argument("train_ensemble: empty batch");
  }
  std::uniform_int_distribution<std::size_t> pick(0, batch.size() - 1);
  std::vector<std::vector<std::size_t>> resamples(static_cast<std::size_t>(ens.size()));
  for (auto& r : resamples) {
    r.resize(batch.size());
    for (auto& i : r) i = pick(rng);
  }
  return train_ensemble(ens, batch, std::move(resamples), cfg);
}

EnsembleTrainResult train_ensemble(Ensemble& ens, wm::Batch batch,
                                   std::vector<std::vector<std::size_t>> resamples,
                                   const wm::TrainConfig& cfg) {
  if (static_cast<int>(resamples.size()) != ens.size()) {
    throw std::invalid_argument("train_ensemble: one resample per member required");
  }
  EnsembleTrainResult out;
  std::vector<double> recon(batch.size(), 0.0), value(batch.size(), 0.0), hits(batch.size(), 0.0);
  for (int k = 0; k < ens.size(); ++k) {
    const auto& picks = resamples[static_cast<std::size_t>(k)];
    std::vector<const replay::Trajectory*> sub;
    sub.reserve(picks.size());
    for (const std::size_t i : picks) sub.push_back(batch[i]);
    Member& m = ens.member(k);
    wm::TrainOutcome result = wm::train_batch(m.model, m.optimizer, sub, m.rng, cfg);
    if (result.applied) {
      for (std::size_t j = 0; j < picks.size(); ++j) {
        recon[picks[j]] += result.signals[j].recon_error;
        value[picks[j]] += result.signals[j].value_error;
        hits[picks[j]] += 1.0;
      }
    }
    out.members.push_back(std::move(result));
  }
  out.resamples = std::move(resamples);
  out.signals.resize(batch.size());
  out.covered.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.covered[i] = hits[i] > 0.0;
    if (out.covered[i]) {
      out.signals[i] = {recon[i] / hits[i], value[i] / hits[i]};
    }
  }
  return out;
}

}  // namespace dxp::ens
