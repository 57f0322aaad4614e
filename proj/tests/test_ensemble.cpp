#include "doctest.h"

#include "dxp/ensemble.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

using namespace dxp;
using namespace dxp::ens;

namespace {

wm::ModelDims dims() { return {3, 2, 8, 4, 16}; }

ImaginedRollout rollout_from(const Matrix& rewards) {
  ImaginedRollout r;
  r.horizon = static_cast<int>(rewards.cols());
  r.rewards = rewards;
  return r;
}

// The displayed formula, evaluated the long way.
double brute_intrinsic(const Matrix& r) {
  const long K = r.rows(), L = r.cols();
  double total = 0.0;
  for (long t = 0; t < L; ++t) {
    double mean = 0.0;
    for (long k = 0; k < K; ++k) mean += r(k, t);
    mean /= static_cast<double>(K);
    double var = 0.0;
    for (long k = 0; k < K; ++k) var += (r(k, t) - mean) * (r(k, t) - mean);
    total += mean + var / static_cast<double>(K);
  }
  return total / static_cast<double>(L);
}

std::vector<LatentState> starts_for(const Ensemble& e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LatentState> out;
  Vector obs = Vector::Random(e.dims().obs_dim);
  for (int k = 0; k < e.size(); ++k) {
    out.push_back(wm::observe_step(e.member(k).model, LatentState::zeros(e.dims()), Vector::Zero(e.dims().action_dim),
                                   obs, rng));
  }
  return out;
}

std::vector<Vector> random_actions(int L, int A, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, A - 1);
  std::vector<Vector> out;
  for (int t = 0; t < L; ++t) out.push_back(Vector::Unit(A, pick(rng)));
  return out;
}

}  // namespace

TEST_CASE("intrinsic reward hand example") {
  Matrix r(2, 1);
  r << 1.0, 3.0;
  CHECK(intrinsic_reward(rollout_from(r)) == 3.0);
  const double v[] = {1.0, 3.0};
  const StepStats s = member_stats(v);
  CHECK(s.mean == 2.0);
  CHECK(s.variance == 1.0);
}

TEST_CASE("intrinsic reward matches brute force on random instances") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> kd(1, 8), ld(1, 20);
  std::normal_distribution<double> val(0.0, 2.0);
  for (int i = 0; i < 1000; ++i) {
    Matrix r(kd(rng), ld(rng));
    for (long a = 0; a < r.size(); ++a) r.data()[a] = val(rng);
    CHECK(std::abs(intrinsic_reward(rollout_from(r)) - brute_intrinsic(r)) <= 1e-12);
  }
}

TEST_CASE("intrinsic reward scaling: mean by c, variance by c squared") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> val(0.0, 1.0);
  Matrix r(4, 6);
  for (long a = 0; a < r.size(); ++a) r.data()[a] = val(rng);
  auto split = [](const Matrix& m) {
    double mean_part = 0.0;
    for (long t = 0; t < m.cols(); ++t) mean_part += m.col(t).mean();
    mean_part /= static_cast<double>(m.cols());
    return std::pair{mean_part, intrinsic_reward(rollout_from(m)) - mean_part};
  };
  const auto [m1, v1] = split(r);
  for (const double c : {2.0, 10.0}) {
    const auto [mc, vc] = split(c * r);
    CHECK(std::abs(mc - c * m1) < 1e-12 * c);
    CHECK(std::abs(vc - c * c * v1) < 1e-12 * c * c);
  }
}

TEST_CASE("intrinsic reward is permutation invariant and nonnegative in excess of the mean") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> val(0.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    Matrix r(6, 7);
    for (long a = 0; a < r.size(); ++a) r.data()[a] = val(rng);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix p(6, 7);
    for (int k = 0; k < 6; ++k) p.row(k) = r.row(perm[static_cast<std::size_t>(k)]);
    const double a = intrinsic_reward(rollout_from(r));
    CHECK(a == intrinsic_reward(rollout_from(p)));

    double mean_part = 0.0;
    for (long t = 0; t < r.cols(); ++t) {
      std::vector<double> col(r.col(t).data(), r.col(t).data() + 6);
      mean_part += member_stats(col).mean;
    }
    CHECK(a - mean_part / 7.0 >= 0.0);
  }
}

TEST_CASE("single member collapses to the mean reward") {
  Ensemble e(dims(), 1, 3);
  const auto starts = starts_for(e, 1);
  const auto acts = random_actions(6, 2, 2);
  const ImaginedRollout r = imagine_ensemble(e, starts, acts, 77);
  for (int t = 0; t < 6; ++t) CHECK(r.rewards(0, t) == r.mean_rewards[t]);
  CHECK(intrinsic_reward(r) == r.mean_rewards.sum() / 6.0);
}

TEST_CASE("identical members with shared noise disagree nowhere") {
  Ensemble base(dims(), 1, 9);
  std::vector<Member> members(3, base.member(0));
  Ensemble e(std::move(members));
  std::vector<LatentState> starts(3, starts_for(base, 4).front());
  ImagineOptions opts;
  opts.shared_noise = true;
  const ImaginedRollout r = imagine_ensemble(e, starts, random_actions(8, 2, 3), 123, opts);
  for (int t = 0; t < 8; ++t) {
    CHECK(r.rewards(0, t) == r.rewards(1, t));
    CHECK(r.rewards(0, t) == r.rewards(2, t));
  }
  CHECK(intrinsic_reward(r) == r.mean_rewards.sum() / 8.0);
}

TEST_CASE("three member rollout mean matches direct averaging") {
  Ensemble e(dims(), 3, 21);
  const ImaginedRollout r = imagine_ensemble(e, starts_for(e, 5), random_actions(5, 2, 6), 9);
  REQUIRE(r.rewards.rows() == 3);
  REQUIRE(r.rewards.cols() == 5);
  REQUIRE(r.states.size() == 3);
  for (const auto& s : r.states) CHECK(s.size() == 5);
  for (int t = 0; t < 5; ++t) {
    const double direct = (r.rewards(0, t) + r.rewards(1, t) + r.rewards(2, t)) / 3.0;
    CHECK(std::abs(r.mean_rewards[t] - direct) <= 1e-12);
  }
  // Members differ, so some spread is present.
  CHECK(intrinsic_reward(r) > r.mean_rewards.mean());
}

TEST_CASE("imagination rejects an empty horizon and a start-state mismatch") {
  Ensemble e(dims(), 2, 1);
  const auto starts = starts_for(e, 1);
  CHECK_THROWS_AS(imagine_ensemble(e, starts, std::vector<Vector>{}, 1), std::invalid_argument);
  CHECK_THROWS_AS(imagine_ensemble(e, std::span(starts).first(1), random_actions(2, 2, 1), 1), std::invalid_argument);
}

TEST_CASE("batched rewards agree with the single-sequence rollout") {
  Ensemble e(dims(), 2, 31);
  const auto starts = starts_for(e, 2);
  const auto acts = random_actions(4, 2, 3);
  ImagineOptions opts;
  opts.mode = wm::LatentMode::kMean;
  const ImaginedRollout r = imagine_ensemble(e, starts, acts, 5, opts);
  std::vector<Matrix> cols;
  for (const Vector& a : acts) cols.push_back(a.replicate(1, 3));
  const auto batched = imagine_rewards(e, starts, cols, 5, opts);
  for (int k = 0; k < 2; ++k)
    for (int t = 0; t < 4; ++t)
      for (int c = 0; c < 3; ++c) CHECK(std::abs(batched[static_cast<std::size_t>(k)](t, c) - r.rewards(k, t)) < 1e-12);
}

TEST_CASE("mix rewards") {
  CHECK(mix_rewards(2.0, 10.0, 1.0) == 2.0);
  CHECK(mix_rewards(2.0, 10.0, 0.0) == 10.0);
  CHECK(std::abs(mix_rewards(2.0, 10.0, 0.7) - 4.4) < 1e-12);
  CHECK_THROWS_AS(mix_rewards(1.0, 1.0, 1.01), std::invalid_argument);
  CHECK_THROWS_AS(mix_rewards(1.0, 1.0, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(mix_rewards(1.0, 1.0, std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-10, 10), l(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng), lam = l(rng);
    const double m = mix_rewards(a, b, lam);
    CHECK(m >= std::min(a, b) - 1e-12);
    CHECK(m <= std::max(a, b) + 1e-12);
  }
}

TEST_CASE("single member training equals train_batch on the resample") {
  std::mt19937_64 data_rng(1);
  std::vector<replay::Trajectory> trajs;
  for (int i = 0; i < 4; ++i) trajs.push_back(testing::random_trajectory(12, 3, 2, data_rng));
  std::vector<const replay::Trajectory*> batch;
  for (const auto& t : trajs) batch.push_back(&t);

  Ensemble e(dims(), 1, 17);
  Member copy = e.member(0);
  const std::vector<std::vector<std::size_t>> resample = {{2, 0, 2, 3}};
  const wm::TrainConfig cfg;
  const EnsembleTrainResult res = train_ensemble(e, batch, resample, cfg);

  std::vector<const replay::Trajectory*> sub = {batch[2], batch[0], batch[2], batch[3]};
  const wm::TrainOutcome direct = wm::train_batch(copy.model, copy.optimizer, sub, copy.rng, cfg);
  CHECK(e.member(0).model.params() == copy.model.params());
  CHECK(res.members[0].losses.total == direct.losses.total);
  CHECK(res.covered == std::vector<bool>{true, false, true, true});
  // Position 2 drawn twice: its signal is the average of both draws.
  CHECK(std::abs(res.signals[2].recon_error - 0.5 * (direct.signals[0].recon_error + direct.signals[2].recon_error)) < 1e-15);
}

TEST_CASE("identical members with identical resamples update identically") {
  std::mt19937_64 data_rng(2);
  std::vector<replay::Trajectory> trajs;
  for (int i = 0; i < 3; ++i) trajs.push_back(testing::random_trajectory(10, 3, 2, data_rng));
  std::vector<const replay::Trajectory*> batch;
  for (const auto& t : trajs) batch.push_back(&t);
  Ensemble base(dims(), 1, 5);
  Ensemble e(std::vector<Member>(2, base.member(0)));
  train_ensemble(e, batch, {{0, 1, 1}, {0, 1, 1}}, wm::TrainConfig{});
  CHECK(e.member(0).model.params() == e.member(1).model.params());
  CHECK(e.member(0).model.params() != base.member(0).model.params());
}

TEST_CASE("a rejected member does not block the others") {
  std::mt19937_64 data_rng(3);
  std::vector<replay::Trajectory> trajs;
  for (int i = 0; i < 3; ++i) trajs.push_back(testing::random_trajectory(10, 3, 2, data_rng));
  std::vector<const replay::Trajectory*> batch;
  for (const auto& t : trajs) batch.push_back(&t);
  Ensemble e(dims(), 2, 6);
  e.member(0).model.params()[0] = std::numeric_limits<double>::quiet_NaN();
  const Vector before = e.member(1).model.params();
  const EnsembleTrainResult res = train_ensemble(e, batch, {{0, 1, 2}, {0, 1, 2}}, wm::TrainConfig{});
  CHECK_FALSE(res.members[0].applied);
  CHECK(res.members[1].applied);
  CHECK(e.member(0).optimizer.rejected_steps == 1);
  CHECK(e.member(1).model.params() != before);
}

TEST_CASE("ensemble checkpoint round trip") {
  Ensemble e(dims(), 3, 12);
  const auto path = std::filesystem::temp_directory_path() / "dxp_ensemble_roundtrip.bin";
  e.save(path);
  const Ensemble back = Ensemble::load(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(back.member(k).model.params() == e.member(k).model.params());
    CHECK(back.member(k).model.dims() == e.dims());
  }
}

TEST_CASE("disagreement is larger at unvisited states") {
  // States 0..19 observed as s / 19. The data only ever visits 0..9, with
  // coin-flip rewards; 10..19 are never seen.
  const int S = 20;
  const wm::ModelDims d{1, 2, 8, 4, 32};
  std::mt19937_64 rng(2024);
  std::bernoulli_distribution coin(0.5);
  std::vector<replay::Trajectory> data;
  int pos = 0;
  for (int i = 0; i < 64; ++i) {
    std::vector<replay::Transition> steps(16);
    for (std::size_t t = 0; t < steps.size(); ++t) {
      auto& tr = steps[t];
      tr.action.assign(2, 0.0f);
      if (t > 0) {
        const int a = coin(rng) ? 1 : 0;
        tr.action[static_cast<std::size_t>(a)] = 1.0f;
        pos = std::clamp(pos + (a ? 1 : -1), 0, 9);
        tr.reward_ext = coin(rng) ? 1.0f : 0.0f;
      }
      tr.is_first = t == 0;
      tr.observation = {static_cast<float>(pos) / (S - 1)};
      tr.reward_total = tr.reward_ext;
    }
    data.push_back(replay::Trajectory::from_transitions(std::move(steps)));
  }

  Ensemble e(d, 4, 77);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  wm::TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  for (int step = 0; step < 500; ++step) {
    std::vector<const replay::Trajectory*> batch;
    for (int b = 0; b < 8; ++b) batch.push_back(&data[pick(rng)]);
    train_ensemble(e, batch, rng, cfg);
  }

  std::vector<double> seen, unseen;
  for (int s = 0; s < S; ++s) {
    std::vector<double> preds;
    for (int k = 0; k < e.size(); ++k) {
      std::mt19937_64 r(1);
      const LatentState post = wm::observe_step(e.member(k).model, LatentState::zeros(d), Vector::Zero(2),
                                                Vector::Constant(1, static_cast<double>(s) / (S - 1)), r,
                                                wm::LatentMode::kMean);
      preds.push_back(wm::predict_heads(e.member(k).model, post).reward);
    }
    (s < 10 ? seen : unseen).push_back(member_stats(preds).variance);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  MESSAGE("median variance visited " << median(seen) << ", unvisited " << median(unseen));
  CHECK(median(unseen) > median(seen));
}
