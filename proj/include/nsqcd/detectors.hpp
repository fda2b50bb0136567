#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nsqcd/models.hpp"

namespace nsqcd {

/// What a detector reports after each observation.
struct DetectorOutput {
  std::int64_t time = 0;
  double statistic = 0.0;
  bool alarm = false;
  /// Maximizing hypothesized change point; time + 1 means the empty sum won.
  std::int64_t k_star = 1;
  /// Maximizing grid parameter (GLR only, empty when the empty sum won).
  std::vector<double> theta_hat;
};

/// Window large enough that no hypothesis is ever evicted.
inline constexpr std::int64_t kUnboundedWindow = std::numeric_limits<std::int64_t>::max() / 4;

/// Caches per-lag LLR coefficients of a lag-affine model up to `max_lag`.
///
/// Falls back to the wrapped model beyond the table. Immutable, so one
/// instance can be shared by every trial of an experiment.
template <LagAffineModel M>
class TabulatedLlr {
 public:
  TabulatedLlr(M model, std::int64_t max_lag) : model_(std::move(model)) {
    auto table = std::make_shared<std::vector<AffineLlr>>();
    table->reserve(static_cast<std::size_t>(max_lag + 1));
    for (std::int64_t lag = 0; lag <= max_lag; ++lag) table->push_back(model_.llr_coefficients(lag));
    table_ = std::move(table);
  }

  const M& model() const noexcept { return model_; }
  bool in_support(double x) const { return model_.in_support(x); }
  double sufficient_statistic(double x) const { return model_.sufficient_statistic(x); }

  AffineLlr llr_coefficients(std::int64_t lag) const {
    return static_cast<std::size_t>(lag) < table_->size() ? (*table_)[static_cast<std::size_t>(lag)]
                                                          : model_.llr_coefficients(lag);
  }

  double log_likelihood_ratio(double x, std::int64_t n, std::int64_t k) const {
    const auto lag = detail::checked_lag(n, k);
    if (!in_support(x)) throw std::domain_error("observation outside the model support");
    return llr_coefficients(lag)(model_.sufficient_statistic(x));
  }

 private:
  M model_;
  std::shared_ptr<const std::vector<AffineLlr>> table_;
};

namespace detail {

/// Returns (max, argmax index) over `values` with the empty-sum value 0
/// appended last. Ties resolve to the smallest index.
inline std::pair<double, std::size_t> max_with_empty(const std::deque<double>& values) {
  double best = -std::numeric_limits<double>::infinity();
  std::size_t arg = values.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > best) {
      best = values[i];
      arg = i;
    }
  }
  if (!(best >= 0.0)) return {0.0, values.size()};
  return {best + 0.0, arg};  // no -0.0
}

}  // namespace detail

/**
 * Window-limited CuSum for non-stationary post-change observations.
 *
 * Keeps one running sum lambda_{n,k} = sum_{i=k}^n Z_{i,k} per hypothesized
 * change point k in {max(1, n - m), ..., n}. The statistic is
 * W(n) = max(0, max_k lambda_{n,k}); the 0 stands for the empty sum k = n + 1.
 * Each step costs O(m) likelihood-ratio evaluations.
 *
 * The detector stays steppable after an alarm.
 */
template <ObservationModel M>
class WlCusum {
 public:
  WlCusum(M model, double threshold, std::int64_t window)
      : model_(std::move(model)), threshold_(threshold), window_(window) {
    if (window < 0) throw std::invalid_argument("window must be >= 0");
  }

  DetectorOutput step(double x) {
    if (!model_.in_support(x)) throw std::domain_error("observation outside the model support");
    const std::int64_t n = time_ + 1;
    while (first_k_ < n - window_ && !sums_.empty()) {
      sums_.pop_front();
      ++first_k_;
    }
    std::int64_t k = first_k_;
    for (double& s : sums_) s += model_.log_likelihood_ratio(x, n, k++);
    sums_.push_back(model_.log_likelihood_ratio(x, n, n));
    time_ = n;
    first_k_ = n - static_cast<std::int64_t>(sums_.size()) + 1;
    const auto [w, arg] = detail::max_with_empty(sums_);
    statistic_ = w;
    return {n, w, w >= threshold_, first_k_ + static_cast<std::int64_t>(arg), {}};
  }

  void reset() {
    time_ = 0;
    first_k_ = 1;
    statistic_ = 0.0;
    sums_.clear();
  }

  std::int64_t time() const noexcept { return time_; }
  double statistic() const noexcept { return statistic_; }
  double threshold() const noexcept { return threshold_; }
  std::int64_t window() const noexcept { return window_; }
  const M& model() const noexcept { return model_; }

  /// Oldest hypothesis still tracked.
  std::int64_t first_hypothesis() const noexcept { return first_k_; }
  std::size_t active_hypotheses() const noexcept { return sums_.size(); }

  /// lambda_{n,k} for an active hypothesis k.
  double lambda(std::int64_t k) const {
    if (k < first_k_ || k > time_) throw std::out_of_range("hypothesis not active");
    return sums_[static_cast<std::size_t>(k - first_k_)];
  }

 private:
  M model_;
  double threshold_;
  std::int64_t window_;
  std::int64_t time_ = 0;
  std::int64_t first_k_ = 1;
  double statistic_ = 0.0;
  std::deque<double> sums_;
};

/// Full-history CuSum: every hypothesis since time 1 is kept, O(n) per step.
/// Meant as a small-instance oracle for WlCusum.
template <ObservationModel M>
class FullCusum : public WlCusum<M> {
 public:
  FullCusum(M model, double threshold) : WlCusum<M>(std::move(model), threshold, kUnboundedWindow) {}
};

/**
 * Shiryaev-Roberts-type statistic R_n = sum_{k=1}^n exp(lambda_{n,k}).
 *
 * Under the pre-change law R_n - n is a zero-mean martingale. The sum is
 * accumulated in the log domain; because the post-change law depends on the
 * lag, all n running sums are kept.
 */
template <ObservationModel M>
class SrStatistic {
 public:
  explicit SrStatistic(M model) : model_(std::move(model)) {}

  double step(double x) {
    if (!model_.in_support(x)) throw std::domain_error("observation outside the model support");
    const std::int64_t n = time_ + 1;
    for (std::size_t i = 0; i < sums_.size(); ++i) sums_[i] += model_.log_likelihood_ratio(x, n, static_cast<std::int64_t>(i) + 1);
    sums_.push_back(model_.log_likelihood_ratio(x, n, n));
    time_ = n;
    const double top = *std::max_element(sums_.begin(), sums_.end());
    if (std::isinf(top)) {
      log_value_ = top;
    } else {
      double acc = 0.0;
      for (double s : sums_) acc += std::exp(s - top);
      log_value_ = top + std::log(acc);
    }
    return value();
  }

  std::int64_t time() const noexcept { return time_; }
  /// R_n; may overflow to +inf where log_value() stays finite.
  double value() const { return time_ == 0 ? 0.0 : std::exp(log_value_); }
  double log_value() const noexcept { return log_value_; }

 private:
  M model_;
  std::int64_t time_ = 0;
  double log_value_ = -std::numeric_limits<double>::infinity();
  std::vector<double> sums_;
};

// ---------------------------------------------------------------------------
// Parameter grids and the GLR family
// ---------------------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const noexcept { return hi - lo; }
};

using ParameterBox = std::vector<Interval>;

/// Lebesgue volume of a box, the |Theta| entering the GLR threshold.
inline double box_volume(const ParameterBox& box) {
  double v = 1.0;
  for (const auto& iv : box) v *= iv.length();
  return v;
}

/// Finite set of parameter points, stored row-major.
class ParameterGrid {
 public:
  ParameterGrid(std::size_t dim, std::vector<double> coords) : dim_(dim), coords_(std::move(coords)) {
    if (dim_ == 0 || coords_.empty() || coords_.size() % dim_ != 0)
      throw std::invalid_argument("parameter grid must be nonempty with whole points");
  }

  /// Cell-centred tensor grid: counts[d] equally spaced points strictly
  /// inside each open interval. The first coordinate varies slowest, so
  /// index order is lexicographic order.
  static ParameterGrid tensor(const ParameterBox& box, std::span<const std::size_t> counts) {
    if (box.empty() || box.size() != counts.size()) throw std::invalid_argument("grid counts must match box dimension");
    std::size_t total = 1;
    for (std::size_t d = 0; d < box.size(); ++d) {
      if (!(box[d].hi > box[d].lo)) throw std::invalid_argument("grid interval must have hi > lo");
      if (counts[d] == 0) throw std::invalid_argument("grid counts must be >= 1");
      total *= counts[d];
    }
    std::vector<double> coords;
    coords.reserve(total * box.size());
    std::vector<std::size_t> idx(box.size(), 0);
    for (std::size_t p = 0; p < total; ++p) {
      for (std::size_t d = 0; d < box.size(); ++d)
        coords.push_back(box[d].lo + (static_cast<double>(idx[d]) + 0.5) * box[d].length() / static_cast<double>(counts[d]));
      for (std::size_t d = box.size(); d-- > 0;) {
        if (++idx[d] < counts[d]) break;
        idx[d] = 0;
      }
    }
    return ParameterGrid(box.size(), std::move(coords));
  }

  static ParameterGrid points(const std::vector<std::vector<double>>& pts) {
    if (pts.empty()) throw std::invalid_argument("parameter grid must be nonempty");
    std::vector<double> coords;
    for (const auto& p : pts) {
      if (p.size() != pts.front().size()) throw std::invalid_argument("grid points must share a dimension");
      coords.insert(coords.end(), p.begin(), p.end());
    }
    return ParameterGrid(pts.front().size(), std::move(coords));
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return coords_.size() / dim_; }
  std::span<const double> point(std::size_t i) const { return {coords_.data() + i * dim_, dim_}; }

 private:
  std::size_t dim_;
  std::vector<double> coords_;
};

/**
 * The post-change family {p^theta : theta in grid} used by the GLR detector.
 *
 * For lag-affine models the per-(lag, theta) coefficients are tabulated up
 * to `max_lag`, and one sufficient statistic serves the whole grid.
 */
template <ObservationModel M>
class GlrFamily {
 public:
  GlrFamily(std::vector<M> members, ParameterGrid grid, std::int64_t max_lag)
      : members_(std::move(members)), grid_(std::move(grid)), max_lag_(max_lag) {
    if (members_.empty() || members_.size() != grid_.size())
      throw std::invalid_argument("one family member per grid point required");
    if constexpr (LagAffineModel<M>) {
      table_.reserve(static_cast<std::size_t>(max_lag_ + 1) * members_.size());
      for (std::int64_t lag = 0; lag <= max_lag_; ++lag)
        for (const auto& m : members_) table_.push_back(m.llr_coefficients(lag));
    }
  }

  /// Instantiates `base.with_theta(point)` at every grid point.
  template <class Base>
  static GlrFamily from_grid(const Base& base, ParameterGrid grid, std::int64_t max_lag) {
    std::vector<M> members;
    members.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) members.push_back(M(base.with_theta(grid.point(i))));
    return GlrFamily(std::move(members), std::move(grid), max_lag);
  }

  std::size_t size() const noexcept { return members_.size(); }
  const ParameterGrid& grid() const noexcept { return grid_; }
  const M& member(std::size_t i) const { return members_.at(i); }
  bool in_support(double x) const { return members_.front().in_support(x); }

  /// sums[g] += Z^{theta_g}_{n,k}(x) for every grid point g.
  void add_llr(double x, std::int64_t n, std::int64_t k, std::span<double> sums) const {
    if constexpr (LagAffineModel<M>) {
      const auto lag = n - k;
      if (lag <= max_lag_) {
        const double t = members_.front().sufficient_statistic(x);
        const AffineLlr* row = table_.data() + static_cast<std::size_t>(lag) * members_.size();
        for (std::size_t g = 0; g < sums.size(); ++g) sums[g] += row[g](t);
        return;
      }
    }
    for (std::size_t g = 0; g < sums.size(); ++g) sums[g] += members_[g].log_likelihood_ratio(x, n, k);
  }

 private:
  std::vector<M> members_;
  ParameterGrid grid_;
  std::int64_t max_lag_;
  std::vector<AffineLlr> table_;
};

/**
 * Window-limited GLR-CuSum.
 *
 * Statistic max over k in {max(1, n - m), ..., n} and grid theta of
 * lambda^theta_{n,k}, floored at the empty sum 0. Ties go to the smallest k,
 * then the lexicographically smallest theta. Cost O(m |grid|) per step.
 */
template <ObservationModel M>
class WlGlr {
 public:
  WlGlr(std::shared_ptr<const GlrFamily<M>> family, double threshold, std::int64_t window)
      : family_(std::move(family)), threshold_(threshold), window_(window) {
    if (!family_) throw std::invalid_argument("GLR family required");
    if (window < 0) throw std::invalid_argument("window must be >= 0");
  }

  DetectorOutput step(double x) {
    if (!family_->in_support(x)) throw std::domain_error("observation outside the model support");
    const std::int64_t n = time_ + 1;
    const std::size_t g_count = family_->size();
    while (first_k_ < n - window_ && !sums_.empty()) {
      spare_.push_back(std::move(sums_.front()));
      sums_.pop_front();
      ++first_k_;
    }
    std::int64_t k = first_k_;
    for (auto& row : sums_) family_->add_llr(x, n, k++, row);
    std::vector<double> fresh;
    if (!spare_.empty()) {
      fresh = std::move(spare_.back());
      spare_.pop_back();
    }
    fresh.assign(g_count, 0.0);
    family_->add_llr(x, n, n, fresh);
    sums_.push_back(std::move(fresh));
    time_ = n;
    first_k_ = n - static_cast<std::int64_t>(sums_.size()) + 1;

    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_k = 0, best_g = 0;
    for (std::size_t i = 0; i < sums_.size(); ++i) {
      const auto& row = sums_[i];
      for (std::size_t g = 0; g < g_count; ++g) {
        if (row[g] > best) {
          best = row[g];
          best_k = i;
          best_g = g;
        }
      }
    }
    DetectorOutput out{n, 0.0, false, n + 1, {}};
    if (best >= 0.0) {
      out.statistic = best + 0.0;
      out.k_star = first_k_ + static_cast<std::int64_t>(best_k);
      const auto p = family_->grid().point(best_g);
      out.theta_hat.assign(p.begin(), p.end());
    }
    out.alarm = out.statistic >= threshold_;
    statistic_ = out.statistic;
    return out;
  }

  void reset() {
    time_ = 0;
    first_k_ = 1;
    statistic_ = 0.0;
    while (!sums_.empty()) {
      spare_.push_back(std::move(sums_.front()));
      sums_.pop_front();
    }
  }

  std::int64_t time() const noexcept { return time_; }
  double statistic() const noexcept { return statistic_; }
  double threshold() const noexcept { return threshold_; }
  std::int64_t window() const noexcept { return window_; }
  std::int64_t first_hypothesis() const noexcept { return first_k_; }
  std::size_t active_hypotheses() const noexcept { return sums_.size(); }
  const GlrFamily<M>& family() const noexcept { return *family_; }

  double lambda(std::int64_t k, std::size_t g) const {
    if (k < first_k_ || k > time_) throw std::out_of_range("hypothesis not active");
    return sums_[static_cast<std::size_t>(k - first_k_)].at(g);
  }

 private:
  std::shared_ptr<const GlrFamily<M>> family_;
  double threshold_;
  std::int64_t window_;
  std::int64_t time_ = 0;
  std::int64_t first_k_ = 1;
  double statistic_ = 0.0;
  std::deque<std::vector<double>> sums_;
  std::vector<std::vector<double>> spare_;
};

// ---------------------------------------------------------------------------
// Driving detectors
// ---------------------------------------------------------------------------

struct StoppingRecord {
  std::int64_t time = 0;
  bool censored = false;
};

/// Feeds `next()` into `detector` until the first alarm or `max_steps`.
/// `next` returns std::nullopt when the stream is exhausted; the record is
/// then censored at the last time observed.
template <class Detector, class Source>
StoppingRecord run_until_alarm(Detector& detector, Source&& next, std::int64_t max_steps) {
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  std::int64_t t = 0;
  while (t < max_steps) {
    const std::optional<double> x = next();
    if (!x) return {t, true};
    const DetectorOutput out = detector.step(*x);
    t = out.time;
    if (out.alarm) return {t, false};
  }
  return {t, true};
}

/// CSV with columns time,statistic,alarm,k_star[,theta_hat_0,...].
inline void write_trajectory_csv(std::ostream& os, std::span<const DetectorOutput> rows, std::size_t theta_dim = 0) {
  os << "time,statistic,alarm,k_star";
  for (std::size_t d = 0; d < theta_dim; ++d) os << ",theta_hat_" << d;
  os << '\n';
  const auto precision = os.precision(17);
  for (const auto& r : rows) {
    os << r.time << ',' << r.statistic << ',' << (r.alarm ? 1 : 0) << ',' << r.k_star;
    for (std::size_t d = 0; d < theta_dim; ++d) {
      os << ',';
      if (d < r.theta_hat.size()) os << r.theta_hat[d];
    }
    os << '\n';
  }
  os.precision(precision);
}

}  // namespace nsqcd
