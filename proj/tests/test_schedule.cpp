#include "doctest.h"

#include "dxp/schedule.hpp"

#include <cmath>
#include <random>

using namespace dxp::sched;

namespace {

ScheduleConfig exp_cfg(double l0, double lend, double tau) {
  ScheduleConfig c;
  c.mode = LambdaMode::kExpDecay;
  c.lambda_0 = l0;
  c.lambda_end = lend;
  c.tau = tau;
  c.lambda_min = 0.0;
  c.lambda_max = 1.0;
  return c;
}

ScheduleConfig ema_cfg() {
  ScheduleConfig c;
  c.mode = LambdaMode::kEmaAdaptive;
  return c;
}

}  // namespace

TEST_CASE("exp decay hand example and endpoints") {
  const LambdaSchedule s(exp_cfg(0.5, 1.0, 1000));
  CHECK(s.lambda_at(0) == 0.5);
  CHECK(std::abs(s.lambda_at(1000) - (1.0 - 0.5 * std::exp(-1.0))) < 1e-12);
  CHECK(std::abs(s.lambda_at(1000) - 0.8161) < 1e-4);
  CHECK(std::abs(s.lambda_at(20000) - 1.0) < 1e-6);
}

TEST_CASE("exp decay matches its closed form and is monotone") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 10; ++rep) {
    const double l0 = u(rng), lend = u(rng), tau = 100 + 5000 * u(rng);
    const LambdaSchedule s(exp_cfg(l0, lend, tau));
    double prev = s.lambda_at(0);
    for (std::uint64_t step = 0; step <= 99 * 250; step += 250) {
      const double expect = lend + (l0 - lend) * std::exp(-static_cast<double>(step) / tau);
      CHECK(std::abs(s.lambda_at(step) - expect) < 1e-9);
      if (l0 > lend) CHECK(s.lambda_at(step) <= prev);
      else CHECK(s.lambda_at(step) >= prev);
      prev = s.lambda_at(step);
    }
  }
}

TEST_CASE("constant mode returns lambda_0") {
  ScheduleConfig c;
  c.lambda_0 = 0.7;
  const LambdaSchedule s(c);
  CHECK(s.lambda_at(0) == 0.7);
  CHECK(s.lambda_at(123456) == 0.7);
}

TEST_CASE("rising returns lower lambda each episode") {
  ScheduleConfig c = ema_cfg();
  c.lambda_0 = 0.9;
  LambdaSchedule s(c);
  s.on_episode_end(0.0);  // first episode seeds the EMA
  double prev = s.lambda();
  for (const double r : {1.0, 2.0, 3.0}) {
    s.on_episode_end(r);
    CHECK(s.lambda() < prev);
    CHECK(std::abs(prev - s.lambda() - c.step_size) < 1e-12);
    prev = s.lambda();
  }
}

TEST_CASE("inverted rule raises lambda on rising returns") {
  ScheduleConfig c = ema_cfg();
  c.lambda_0 = 0.6;
  c.invert_ema_rule = true;
  LambdaSchedule s(c);
  s.on_episode_end(0.0);
  double prev = s.lambda();
  for (const double r : {1.0, 2.0, 3.0}) {
    s.on_episode_end(r);
    CHECK(s.lambda() > prev);
    prev = s.lambda();
  }
}

TEST_CASE("stagnant returns raise lambda to the ceiling") {
  ScheduleConfig c = ema_cfg();
  c.lambda_0 = 0.5;
  LambdaSchedule s(c);
  double prev = s.lambda();
  for (int i = 0; i < 40; ++i) {
    s.on_episode_end(2.0);
    const double expect = std::min(c.lambda_max, prev + c.step_size);
    CHECK(std::abs(s.lambda() - expect) < 1e-12);
    prev = s.lambda();
  }
  CHECK(s.lambda() == c.lambda_max);
}

TEST_CASE("lambda at the floor stays there while improving") {
  ScheduleConfig c = ema_cfg();
  c.lambda_0 = c.lambda_min;
  LambdaSchedule s(c);
  s.on_episode_end(0.0);  // stagnation step moves it up once
  for (int i = 1; i < 60; ++i) s.on_episode_end(static_cast<double>(i));
  CHECK(s.lambda() == c.lambda_min);
}

TEST_CASE("EMA converges geometrically to a constant input") {
  ScheduleConfig c = ema_cfg();
  LambdaSchedule s(c);
  s.on_episode_end(0.0);
  const double target = 5.0;
  for (int n = 1; n <= 200; ++n) {
    s.on_episode_end(target);
    const double closed = target * (1.0 - std::pow(c.ema_decay, n));
    CHECK(std::abs(s.ema() - closed) < 1e-9);
  }
}

TEST_CASE("lambda stays in range under random returns") {
  for (const bool inverted : {false, true}) {
    ScheduleConfig c = ema_cfg();
    c.invert_ema_rule = inverted;
    c.step_size = 0.07;
    LambdaSchedule s(c);
    std::mt19937_64 rng(inverted ? 2 : 1);
    std::cauchy_distribution<double> wild(0.0, 10.0);
    for (int i = 0; i < 10000; ++i) {
      s.on_episode_end(wild(rng));
      CHECK(s.lambda() >= c.lambda_min);
      CHECK(s.lambda() <= c.lambda_max);
      CHECK(std::isfinite(s.ema()));
    }
  }
}

TEST_CASE("non-finite returns and wrong modes are rejected") {
  LambdaSchedule s(ema_cfg());
  CHECK_THROWS_AS(s.on_episode_end(NAN), std::invalid_argument);
  CHECK_THROWS_AS(s.on_episode_end(INFINITY), std::invalid_argument);
  LambdaSchedule e(exp_cfg(0.5, 1.0, 10));
  CHECK_THROWS_AS(e.on_episode_end(1.0), std::logic_error);
  ScheduleConfig bad = ema_cfg();
  bad.lambda_min = 0.9;
  bad.lambda_max = 0.8;
  CHECK_THROWS_AS(LambdaSchedule{bad}, std::invalid_argument);
  CHECK_THROWS_AS(parse_lambda_mode("linear"), std::invalid_argument);
}

TEST_CASE("schedule state survives a JSON round trip") {
  LambdaSchedule s(ema_cfg());
  for (const double r : {0.0, 1.0, 0.5, 3.0}) s.on_episode_end(r);
  const LambdaSchedule back = LambdaSchedule::from_json(s.to_json());
  CHECK(back.lambda() == s.lambda());
  CHECK(back.ema() == s.ema());
  CHECK(back.ema_prev() == s.ema_prev());
  CHECK(back.episodes() == s.episodes());
  CHECK(back.to_json() == s.to_json());
}
