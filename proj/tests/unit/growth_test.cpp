#include "nsqcd/growth.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

namespace {

using namespace nsqcd;

TEST(Growth, GemExamples) {
  const auto g = GrowthCurve::of(GemModel({1.0, 1.0, 1.0}));
  EXPECT_EQ(g.growth(0), 0.0);
  EXPECT_EQ(g.growth(1), 0.0);
  EXPECT_NEAR(g.growth(2), 0.5 * std::pow(std::numbers::e - 1.0, 2), 1e-12);
  EXPECT_NEAR(g.growth(2), 1.4762, 1e-4);
  EXPECT_THROW(g.growth(-1), std::invalid_argument);
}

TEST(Growth, DecayExample) {
  const auto g = GrowthCurve::of(DecayModel({2.0, 4.0, 0.2}));
  EXPECT_NEAR(g.growth(2), 0.5 * (1.0 + std::pow(2.0, -0.4)), 1e-12);
  EXPECT_NEAR(g.growth(2), 0.8789, 1e-4);
}

TEST(Growth, InverseExamples) {
  const auto g = GrowthCurve::of(GemModel({1.0, 1.0, 1.0}));
  EXPECT_EQ(g.inverse(0.0), 1.0);
  EXPECT_NEAR(g.inverse(1.4762), 2.0, 1e-3);
  EXPECT_EQ(g.inverse(g.growth(2)), 2.0);
  EXPECT_THROW(g.inverse(-1.0), std::invalid_argument);
}

TEST(Growth, DecayInverseAsymptotics) {
  const double mu = 2.0, s2 = 4.0, th = 0.2;
  const auto g = GrowthCurve::of(DecayModel({mu, s2, th}));
  const double p = 1.0 / (1.0 - 2.0 * th);
  const double c = std::pow(2.0 * s2 * (1.0 - 2.0 * th) / (mu * mu), p);
  const double x = 1000.0;
  EXPECT_NEAR(g.inverse(x) / std::pow(x, p), c, 0.05 * c);
}

TEST(Growth, GemGrowthIsExponentialInLag) {
  // log g(n) / (2 theta n) -> 1, and g(n) over the leading exponential tends
  // to the geometric-series constant 1 / (1 - exp(-2 theta)).
  const double mu = 0.1, s2 = 1e4, th = 0.4;
  const auto g = GrowthCurve::of(GemModel({mu, s2, th}));
  const double limit = 1.0 / (1.0 - std::exp(-2.0 * th));
  double prev_gap = std::numeric_limits<double>::infinity();
  for (std::int64_t n : {10, 20, 40, 80}) {
    const double lead = mu * mu * std::exp(2.0 * th * static_cast<double>(n - 1)) / (2.0 * s2);
    const double gap = std::abs(g.growth(n) / lead - limit);
    EXPECT_LT(gap, prev_gap);
    prev_gap = gap;
  }
  EXPECT_LT(prev_gap, 1e-6);
  const double n = 200.0;
  EXPECT_NEAR(std::log(g.growth(200)) / (2.0 * th * n), 1.0, 0.1);
}

TEST(Growth, RoundTripProperty) {
  std::mt19937_64 rng(5);
  const auto gem = GrowthCurve::of(GemModel({0.1, 1e4, 0.4}));
  const auto decay = GrowthCurve::of(DecayModel({2.0, 4.0, 0.2}));
  std::uniform_int_distribution<std::int64_t> pick(2, 300);
  for (int i = 0; i < 200; ++i) {
    const auto n = pick(rng);
    EXPECT_NEAR(gem.inverse(gem.growth(n)), static_cast<double>(n), 1e-9);
    EXPECT_NEAR(decay.inverse(decay.growth(n)), static_cast<double>(n), 1e-9);
  }
}

TEST(Growth, InverseMonotoneProperty) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 500.0);
  for (const ModelHandle& m : {ModelHandle(GemModel({0.1, 1e4, 0.4})), ModelHandle(DecayModel({2.0, 4.0, 0.2}))}) {
    const auto g = GrowthCurve::of(m);
    for (int i = 0; i < 300; ++i) {
      double a = u(rng), b = u(rng);
      if (a > b) std::swap(a, b);
      EXPECT_LE(g.inverse(a), g.inverse(b));
    }
  }
}

TEST(Growth, GrowthConditionHoldsForGemAndDecay) {
  EXPECT_TRUE(check_growth_condition(GrowthCurve::of(GemModel({0.1, 1e4, 0.4})), 1000.0).decreasing_top_decade);
  EXPECT_TRUE(check_growth_condition(GrowthCurve::of(DecayModel({2.0, 4.0, 0.2})), 1000.0).decreasing_top_decade);
}

TEST(Growth, GrowthConditionFailsForSlowGrowth) {
  // g(n) = log(n + 1) gives g^{-1}(x) ~ e^x, so log g^{-1}(x) / x -> 1.
  const GrowthCurve slow([](std::int64_t lag) { return std::log(static_cast<double>(lag + 2) / static_cast<double>(lag + 1)); });
  const auto r = check_growth_condition(slow, 12.0);
  EXPECT_FALSE(r.decreasing_top_decade);
}

TEST(Growth, BetaWaveSaturationWarns) {
  const auto g = GrowthCurve::of(BetaWaveModel({20.6, 2.94e5, {0.464, 3.894, 0.445}}));
  ASSERT_TRUE(g.increasing_prefix().has_value());
  EXPECT_EQ(*g.increasing_prefix(), 3);
  EXPECT_TRUE(std::isinf(g.inverse(1e6)));
  const auto r = check_growth_condition(g, 1000.0);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Growth, VarianceRatioForGaussianModels) {
  // Var Z = 2 E[Z] for the Gaussian mean-shift models, so the ratio is 2 / g(n).
  for (const ModelHandle& m : {ModelHandle(GemModel({0.1, 1e4, 0.4})), ModelHandle(GemModel({1.0, 1.0, 1.0})),
                               ModelHandle(DecayModel({2.0, 4.0, 0.2}))}) {
    const auto g = GrowthCurve::of(m);
    const auto r = lemma1_diagnostics(m, 60);
    for (std::size_t i = 0; i < r.n.size(); ++i) {
      const double gn = g.growth(r.n[i]);
      if (gn == 0.0) {
        EXPECT_TRUE(std::isnan(r.variance_ratio[i]));
        continue;
      }
      EXPECT_NEAR(r.variance_ratio[i], 2.0 / gn, 1e-12 * (2.0 / gn)) << m.kind() << " n=" << r.n[i];
    }
  }
  // With unit pre-change variance this is also (2 / sigma0^2) / g(n).
  const auto unit = lemma1_diagnostics(GemModel({1.0, 1.0, 1.0}), 10);
  const auto g = GrowthCurve::of(GemModel({1.0, 1.0, 1.0}));
  EXPECT_NEAR(unit.variance_ratio.back(), (2.0 / 1.0) / g.growth(10), 1e-12);
}

TEST(Growth, VarianceRatioVanishesAndShiftIsNonNegative) {
  const auto decay = lemma1_diagnostics(DecayModel({2.0, 4.0, 0.2}), 400);
  EXPECT_LT(decay.variance_ratio.back(), decay.variance_ratio.front());
  EXPECT_LT(decay.variance_ratio.back(), 0.1);
  const auto gem = lemma1_diagnostics(GemModel({0.1, 1e4, 0.4}), 40);
  EXPECT_GE(gem.time_shift_minimum, 0.0);
  EXPECT_THROW(lemma1_diagnostics(GemModel({1.0, 1.0, 1.0}), 1), std::invalid_argument);
}

TEST(Growth, ReportsSerialize) {
  const auto r = check_growth_condition(GrowthCurve::of(DecayModel({2.0, 4.0, 0.2})), 100.0);
  const nlohmann::json j = r;
  EXPECT_EQ(j.at("grid").size(), r.grid.size());
  EXPECT_TRUE(j.at("decreasing_top_decade").get<bool>());
}

}  // namespace
