#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsqcd/models.hpp"

namespace nsqcd {

/**
 * Growth function g(n) = sum_{lag=0}^{n-1} E[Z_{nu+lag,nu}] and its inverse.
 *
 * Knots g(0), g(1), ... are cached and extended on demand; the inverse works
 * on the piecewise-linear interpolation between integer knots. Extension is
 * guarded by a mutex so a curve may be shared between threads.
 */
class GrowthCurve {
 public:
  using Increment = std::function<double(std::int64_t lag)>;

  /// Knot budget; curves that saturate below x report g^{-1}(x) = +inf.
  static constexpr std::int64_t kMaxKnots = 20'000'000;

  explicit GrowthCurve(Increment increment, std::optional<std::int64_t> increasing_prefix = std::nullopt)
      : increment_(std::move(increment)),
        prefix_(increasing_prefix),
        max_knots_(increasing_prefix ? 64 * (*increasing_prefix + 1) + 1024 : kMaxKnots),
        knots_{0.0} {}

  GrowthCurve(const GrowthCurve& other) : increment_(other.increment_), prefix_(other.prefix_), max_knots_(other.max_knots_) {
    std::lock_guard lock(other.mutex_);
    knots_ = other.knots_;
  }
  GrowthCurve& operator=(const GrowthCurve&) = delete;

  static GrowthCurve of(const ModelHandle& model) {
    return GrowthCurve([model](std::int64_t lag) { return model.expected_llr(lag); }, model.increasing_prefix());
  }

  /// g(n); g(0) = 0.
  double growth(std::int64_t n) const {
    if (n < 0) throw std::invalid_argument("growth: n must be >= 0");
    std::lock_guard lock(mutex_);
    extend_to(n);
    return knots_[static_cast<std::size_t>(n)];
  }

  /**
   * Smallest t with interpolated g(t) >= x. On a plateau where g equals x
   * exactly, the largest such t is returned instead (GEM has g(0) = g(1) = 0,
   * so g^{-1}(0) = 1).
   */
  double inverse(double x) const {
    if (!(x >= 0.0)) throw std::invalid_argument("growth_inverse: x must be >= 0");
    std::lock_guard lock(mutex_);
    // Grow the cache geometrically until it brackets x.
    std::int64_t top = static_cast<std::int64_t>(knots_.size()) - 1;
    while (knots_[static_cast<std::size_t>(top)] < x) {
      if (top >= max_knots_) return std::numeric_limits<double>::infinity();
      top = std::min<std::int64_t>(max_knots_, std::max<std::int64_t>(16, 2 * top));
      extend_to(top);
    }
    auto it = std::lower_bound(knots_.begin(), knots_.end(), x);
    auto n = static_cast<std::int64_t>(it - knots_.begin());
    if (*it == x) {
      // Walk to the end of a plateau, extending if it reaches the cache edge.
      while (true) {
        if (static_cast<std::size_t>(n + 1) >= knots_.size()) {
          if (n + 1 > max_knots_) break;
          extend_to(n + 1);
        }
        if (knots_[static_cast<std::size_t>(n + 1)] != x) break;
        ++n;
      }
      return static_cast<double>(n);
    }
    const double lo = knots_[static_cast<std::size_t>(n - 1)];
    const double hi = knots_[static_cast<std::size_t>(n)];
    return static_cast<double>(n - 1) + (x - lo) / (hi - lo);
  }

  /// Lag up to which the increments keep rising, if the model bounds it.
  std::optional<std::int64_t> increasing_prefix() const noexcept { return prefix_; }

  /// True when x can only be reached beyond the increasing prefix.
  bool beyond_prefix(double x) const {
    if (!prefix_) return false;
    return x > growth(*prefix_ + 1);
  }

 private:
  void extend_to(std::int64_t n) const {
    knots_.reserve(static_cast<std::size_t>(n + 1));
    while (static_cast<std::int64_t>(knots_.size()) <= n) {
      const auto lag = static_cast<std::int64_t>(knots_.size()) - 1;
      knots_.push_back(knots_.back() + increment_(lag));
    }
  }

  Increment increment_;
  std::optional<std::int64_t> prefix_;
  std::int64_t max_knots_;
  mutable std::mutex mutex_;
  mutable std::vector<double> knots_;
};

inline double growth(const GrowthCurve& curve, std::int64_t n) { return curve.growth(n); }
inline double growth_inverse(const GrowthCurve& curve, double x) { return curve.inverse(x); }

/// Finite-grid trend check of log g^{-1}(x) / x -> 0.
struct GrowthConditionReport {
  std::vector<double> grid;
  std::vector<double> inverse;
  std::vector<double> ratio;
  /// Ratio decreased strictly over every grid step in [x_max / 10, x_max].
  bool decreasing_top_decade = false;
  std::vector<std::string> warnings;
};

inline void to_json(nlohmann::json& j, const GrowthConditionReport& r) {
  j = nlohmann::json{{"grid", r.grid},
                     {"inverse", r.inverse},
                     {"ratio", r.ratio},
                     {"decreasing_top_decade", r.decreasing_top_decade},
                     {"warnings", r.warnings}};
}

/// Evaluates log g^{-1}(x) / x on a log-spaced grid from 1 to x_max with
/// `per_decade` points per decade.
inline GrowthConditionReport check_growth_condition(const GrowthCurve& curve, double x_max, int per_decade = 10) {
  if (!(x_max > 1.0)) throw std::invalid_argument("check_growth_condition: x_max must be > 1");
  GrowthConditionReport r;
  const double decades = std::log10(x_max);
  const int steps = std::max(per_decade, static_cast<int>(std::ceil(decades * per_decade)));
  for (int i = 0; i <= steps; ++i) {
    const double x = std::pow(10.0, decades * i / steps);
    const double inv = curve.inverse(x);
    r.grid.push_back(x);
    r.inverse.push_back(inv);
    r.ratio.push_back(std::log(inv) / x);
    if (curve.beyond_prefix(x) && r.warnings.empty())
      r.warnings.push_back("x = " + std::to_string(x) + " lies beyond the increasing prefix of the growth function");
  }
  r.decreasing_top_decade = true;
  for (std::size_t i = 1; i < r.grid.size(); ++i) {
    if (r.grid[i - 1] < x_max / 10.0 * (1.0 - 1e-12)) continue;
    if (!(r.ratio[i] < r.ratio[i - 1])) r.decreasing_top_decade = false;
  }
  return r;
}

/// Sufficient-condition diagnostics for the LLR upper/lower bounds.
struct ConcentrationReport {
  std::vector<std::int64_t> n;
  /// sum_{lag < n} Var[Z] / g(n)^2; NaN while g(n) = 0.
  std::vector<double> variance_ratio;
  /// min over checked (lag, shift) of E[Z_{i+shift, nu+shift}] - E[Z_{i,nu}].
  double time_shift_minimum = std::numeric_limits<double>::infinity();
};

inline void to_json(nlohmann::json& j, const ConcentrationReport& r) {
  j = nlohmann::json{{"n", r.n}, {"variance_ratio", r.variance_ratio}, {"time_shift_minimum", r.time_shift_minimum}};
}

/// Variance ratios at n = 2..n_max and the time-shift minimum over lags
/// 0..n_max-1 and shifts 1..n_max.
inline ConcentrationReport lemma1_diagnostics(const ModelHandle& model, std::int64_t n_max) {
  if (n_max < 2) throw std::invalid_argument("lemma1_diagnostics: n_max must be >= 2");
  ConcentrationReport r;
  double var_sum = 0.0;
  double g = 0.0;
  for (std::int64_t n = 1; n <= n_max; ++n) {
    var_sum += model.llr_variance(n - 1);
    g += model.expected_llr(n - 1);
    if (n >= 2) {
      r.n.push_back(n);
      r.variance_ratio.push_back(g > 0.0 ? var_sum / (g * g) : std::numeric_limits<double>::quiet_NaN());
    }
  }
  for (std::int64_t lag = 0; lag < n_max; ++lag) {
    const double base = model.expected_llr_under(lag, lag);
    for (std::int64_t shift = 1; shift <= n_max; ++shift)
      r.time_shift_minimum = std::min(r.time_shift_minimum, model.expected_llr_under(lag, lag + shift) - base);
  }
  return r;
}

}  // namespace nsqcd
