#include "nsqcd/montecarlo.hpp"

#include <cmath>

#include <gtest/gtest.h>

namespace {

using namespace nsqcd;

TrialPlan gem_plan(double threshold, std::optional<std::int64_t> nu, std::int64_t trials, std::uint64_t seed) {
  return TrialPlan{.model = GemModel({0.1, 1e4, 0.4}),
                   .detector = DetectorKind::WlCusum,
                   .threshold = threshold,
                   .window = 25,
                   .grid = std::nullopt,
                   .change_point = nu,
                   .num_trials = trials,
                   .max_steps = 100000,
                   .seed = seed,
                   .workers = 1};
}

TEST(MonteCarlo, NonPositiveThresholdGivesUnitTimes) {
  const auto mtfa = estimate_mtfa(gem_plan(0.0, std::nullopt, 200, 1));
  EXPECT_EQ(mtfa.mean, 1.0);
  EXPECT_EQ(mtfa.std_error, 0.0);
  const auto add = estimate_add(gem_plan(-1.0, 1, 200, 1));
  EXPECT_EQ(add.mean, 1.0);
}

TEST(MonteCarlo, SeedReproducible) {
  const auto a = run_trials(gem_plan(std::log(100.0), std::nullopt, 300, 42));
  const auto b = run_trials(gem_plan(std::log(100.0), std::nullopt, 300, 42));
  const auto c = run_trials(gem_plan(std::log(100.0), std::nullopt, 300, 43));
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].time, b[i].time);
    differs |= a[i].time != c[i].time;
  }
  EXPECT_TRUE(differs);
}

TEST(MonteCarlo, InvariantToWorkerCount) {
  auto plan = gem_plan(std::log(100.0), 30, 200, 9);
  const auto one = run_trials(plan);
  plan.workers = 4;
  const auto four = run_trials(plan);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].time, four[i].time);
    EXPECT_EQ(one[i].censored, four[i].censored);
  }
}

TEST(MonteCarlo, StandardErrorShrinksWithTrials) {
  const auto small = estimate_mtfa(gem_plan(std::log(20.0), std::nullopt, 2000, 5));
  const auto large = estimate_mtfa(gem_plan(std::log(20.0), std::nullopt, 4000, 6));
  EXPECT_NEAR(large.std_error / small.std_error, 1.0 / std::sqrt(2.0), 0.15 / std::sqrt(2.0));
}

TEST(MonteCarlo, WindowedFalseAlarmsNoEarlierThanFull) {
  // Same substreams, so the comparison holds trial by trial.
  auto plan = gem_plan(3.0, std::nullopt, 300, 17);
  const auto wl = run_trials(plan);
  plan.detector = DetectorKind::FullCusum;
  const auto full = run_trials(plan);
  for (std::size_t i = 0; i < wl.size(); ++i) EXPECT_LE(full[i].time, wl[i].time);
}

TEST(MonteCarlo, MtfaLowerBound) {
  const auto e = estimate_mtfa(gem_plan(std::log(50.0), std::nullopt, 1500, 23));
  EXPECT_GE(e.mean, 50.0 - 3.0 * e.std_error);
}

TEST(MonteCarlo, CensoringIsReported) {
  auto plan = gem_plan(50.0, std::nullopt, 20, 3);
  plan.max_steps = 30;
  const auto e = estimate_mtfa(plan);
  EXPECT_TRUE(e.lower_bound);
  EXPECT_EQ(e.censor_rate, 1.0);
  EXPECT_EQ(e.mean, 30.0);
  EXPECT_FALSE(e.warnings.empty());

  plan.change_point = 10;
  const auto d = estimate_add(plan);
  EXPECT_GT(d.censor_rate, 0.05);
  EXPECT_FALSE(d.warnings.empty());
}

TEST(MonteCarlo, PlanValidation) {
  auto plan = gem_plan(1.0, std::nullopt, 0, 1);
  EXPECT_THROW(run_trials(plan), std::invalid_argument);
  plan = gem_plan(1.0, std::nullopt, 10, 1);
  plan.detector = DetectorKind::WlGlr;
  EXPECT_THROW(run_trials(plan), std::invalid_argument);
  EXPECT_THROW(estimate_add(gem_plan(1.0, std::nullopt, 10, 1)), std::invalid_argument);
  EXPECT_THROW(estimate_mtfa(gem_plan(1.0, 5, 10, 1)), std::invalid_argument);
  EXPECT_EQ(detector_kind_from_string("wl-glr"), DetectorKind::WlGlr);
  EXPECT_THROW(detector_kind_from_string("shewhart"), std::invalid_argument);
}

TEST(MonteCarlo, GlrTrialsRun) {
  auto plan = gem_plan(std::log(100.0), 40, 50, 2);
  plan.detector = DetectorKind::WlGlr;
  plan.grid = GlrGridSpec{{{0.0, 0.5}}, {10}};
  const auto e = estimate_add(plan);
  EXPECT_EQ(e.num_uncensored + static_cast<std::int64_t>(e.censor_rate * 50 + 0.5), 50 - 0);
  EXPECT_GT(e.mean, 0.0);
}

TEST(MonteCarlo, OperatingCharacteristicRows) {
  OcOptions opt;
  opt.window = 25;
  const auto rows = operating_characteristic(gem_plan(0.0, 1, 200, 4), {1e-2, 1e-3}, opt);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NEAR(rows[0].threshold, std::log(100.0), 1e-12);
  EXPECT_EQ(rows[1].window, 25);
  EXPECT_LT(rows[0].delay.mean, rows[1].delay.mean);
}

TEST(Qq, GeometricQuantile) {
  EXPECT_EQ(geometric_quantile(0.5, 0.5), 1.0);
  EXPECT_EQ(geometric_quantile(0.5, 0.75), 2.0);
  EXPECT_EQ(geometric_quantile(1.0, 0.9), 1.0);
}

TEST(Qq, SyntheticGeometricIsNearlyLinear) {
  RandomStream rng(31);
  std::vector<std::int64_t> times;
  for (int i = 0; i < 5000; ++i) times.push_back(rng.geometric(0.01));
  const auto r = geometric_qq(times);
  EXPECT_GE(r.correlation, 0.995);
  EXPECT_EQ(r.pairs.size(), 99u);
  EXPECT_NEAR(r.p_hat, 0.01, 0.001);
}

TEST(Qq, Errors) {
  EXPECT_THROW(geometric_qq(std::vector<std::int64_t>(50, 3)), std::invalid_argument);
  EXPECT_THROW(geometric_qq(std::vector<std::int64_t>(200, 7)), std::domain_error);
}

TEST(ParallelFor, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(100, 3, [](std::int64_t i) {
                 if (i == 57) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}

}  // namespace
