#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsqcd/calibration.hpp"
#include "nsqcd/detectors.hpp"
#include "nsqcd/models.hpp"
#include "nsqcd/rng.hpp"

namespace nsqcd {

/// Runs body(i) for i in [0, count) on `workers` threads. Work items are
/// claimed dynamically; the first exception thrown is rethrown here.
template <class F>
void parallel_for(std::int64_t count, unsigned workers, F&& body) {
  if (workers <= 1 || count <= 1) {
    for (std::int64_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    const auto n_threads = std::min<std::int64_t>(workers, count);
    for (std::int64_t w = 0; w < n_threads; ++w) {
      pool.emplace_back([&] {
        for (std::int64_t i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = count;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

inline unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

enum class DetectorKind { WlCusum, FullCusum, WlGlr };

inline std::string to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::WlCusum: return "wl-cusum";
    case DetectorKind::FullCusum: return "full-cusum";
    case DetectorKind::WlGlr: return "wl-glr";
  }
  return "?";
}

inline DetectorKind detector_kind_from_string(const std::string& s) {
  if (s == "wl-cusum") return DetectorKind::WlCusum;
  if (s == "full-cusum") return DetectorKind::FullCusum;
  if (s == "wl-glr") return DetectorKind::WlGlr;
  throw std::invalid_argument("unknown detector '" + s + "' (expected wl-cusum, full-cusum or wl-glr)");
}

/// Parameter grid for GLR experiments.
struct GlrGridSpec {
  ParameterBox box;
  std::vector<std::size_t> counts;
};

/// One Monte-Carlo experiment. `model` generates the data and, for the
/// known-parameter detectors, is also the detector's post-change model.
struct TrialPlan {
  ModelHandle model;
  DetectorKind detector = DetectorKind::WlCusum;
  double threshold = 0.0;
  std::int64_t window = 25;
  std::optional<GlrGridSpec> grid;
  /// Change point; std::nullopt means no change (pre-change law forever).
  std::optional<std::int64_t> change_point;
  std::int64_t num_trials = 1000;
  std::int64_t max_steps = 10000;
  std::uint64_t seed = 1;
  unsigned workers = 1;

  void validate() const {
    detail::require(num_trials >= 1, "num_trials must be >= 1");
    detail::require(max_steps >= 1, "max_steps must be >= 1");
    detail::require(window >= 0, "window must be >= 0");
    detail::require(!change_point || *change_point >= 1, "change point must be >= 1");
    if (detector == DetectorKind::WlGlr) {
      detail::require(grid.has_value(), "wl-glr needs a parameter grid");
      detail::require(grid->box.size() == model.parameter_dim(), "grid dimension must match the model parameter");
    }
  }
};

/// Observation source: pre-change draws before the change point, then
/// post-change draws from the lag-indexed family.
class ChangeStream {
 public:
  ChangeStream(const ModelHandle& model, std::optional<std::int64_t> change_point, RandomStream rng)
      : model_(&model), nu_(change_point), rng_(std::move(rng)) {}

  std::optional<double> operator()() {
    ++n_;
    if (nu_ && n_ >= *nu_) return model_->sample_post(rng_, n_, *nu_);
    return model_->sample_pre(rng_);
  }

 private:
  const ModelHandle* model_;
  std::optional<std::int64_t> nu_;
  RandomStream rng_;
  std::int64_t n_ = 0;
};

/// Stopping records of every trial, in trial-index order. Trial i draws from
/// substream (plan.seed, i), so results do not depend on the worker count.
inline std::vector<StoppingRecord> run_trials(const TrialPlan& plan) {
  plan.validate();
  std::vector<StoppingRecord> records(static_cast<std::size_t>(plan.num_trials));
  const auto trial_stream = [&](std::int64_t i) {
    return ChangeStream(plan.model, plan.change_point, RandomStream(plan.seed, static_cast<std::uint64_t>(i)));
  };

  switch (plan.detector) {
    case DetectorKind::WlCusum: {
      const TabulatedLlr<ModelHandle> llr(plan.model, std::min<std::int64_t>(plan.window, plan.max_steps));
      parallel_for(plan.num_trials, plan.workers, [&](std::int64_t i) {
        WlCusum<TabulatedLlr<ModelHandle>> det(llr, plan.threshold, plan.window);
        records[static_cast<std::size_t>(i)] = run_until_alarm(det, trial_stream(i), plan.max_steps);
      });
      break;
    }
    case DetectorKind::FullCusum: {
      const TabulatedLlr<ModelHandle> llr(plan.model, std::min<std::int64_t>(plan.max_steps, 4096));
      parallel_for(plan.num_trials, plan.workers, [&](std::int64_t i) {
        FullCusum<TabulatedLlr<ModelHandle>> det(llr, plan.threshold);
        records[static_cast<std::size_t>(i)] = run_until_alarm(det, trial_stream(i), plan.max_steps);
      });
      break;
    }
    case DetectorKind::WlGlr: {
      auto family = std::make_shared<const GlrFamily<ModelHandle>>(GlrFamily<ModelHandle>::from_grid(
          plan.model, ParameterGrid::tensor(plan.grid->box, plan.grid->counts), plan.window));
      parallel_for(plan.num_trials, plan.workers, [&](std::int64_t i) {
        WlGlr<ModelHandle> det(family, plan.threshold, plan.window);
        records[static_cast<std::size_t>(i)] = run_until_alarm(det, trial_stream(i), plan.max_steps);
      });
      break;
    }
  }
  return records;
}

struct DelayEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t num_uncensored = 0;
  double censor_rate = 0.0;
  /// Censored trials entered the mean at max_steps (MTFA only).
  bool lower_bound = false;
  std::vector<std::string> warnings;
};

inline void to_json(nlohmann::json& j, const DelayEstimate& e) {
  j = nlohmann::json{{"mean", e.mean},
                     {"stderr", e.std_error},
                     {"num_uncensored", e.num_uncensored},
                     {"censor_rate", e.censor_rate},
                     {"lower_bound", e.lower_bound},
                     {"warnings", e.warnings}};
}

namespace detail {

inline void mean_and_stderr(const std::vector<double>& v, double& mean, double& se) {
  if (v.empty()) {
    mean = std::numeric_limits<double>::quiet_NaN();
    se = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) {
    se = 0.0;
    return;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace detail

/// Mean time to false alarm from stopping records under the pre-change law.
inline DelayEstimate summarize_mtfa(const std::vector<StoppingRecord>& records) {
  DelayEstimate e;
  std::vector<double> times;
  times.reserve(records.size());
  std::int64_t censored = 0;
  for (const auto& r : records) {
    times.push_back(static_cast<double>(r.time));
    censored += r.censored ? 1 : 0;
  }
  detail::mean_and_stderr(times, e.mean, e.std_error);
  e.num_uncensored = static_cast<std::int64_t>(records.size()) - censored;
  e.censor_rate = records.empty() ? 0.0 : static_cast<double>(censored) / static_cast<double>(records.size());
  e.lower_bound = censored > 0;
  if (censored > 0 && e.num_uncensored == 0) e.warnings.push_back("all trials censored: estimate is a pure lower bound");
  else if (censored > 0) e.warnings.push_back("censored trials counted at max_steps: estimate is a lower bound");
  return e;
}

/// Conditional detection delay E[tau - nu + 1 | tau >= nu] from stopping records.
inline DelayEstimate summarize_delay(const std::vector<StoppingRecord>& records, std::int64_t change_point) {
  DelayEstimate e;
  std::vector<double> delays;
  std::int64_t censored = 0, early = 0;
  for (const auto& r : records) {
    if (r.censored) {
      ++censored;
    } else if (r.time < change_point) {
      ++early;
    } else {
      delays.push_back(static_cast<double>(r.time - change_point + 1));
    }
  }
  detail::mean_and_stderr(delays, e.mean, e.std_error);
  e.num_uncensored = static_cast<std::int64_t>(delays.size());
  e.censor_rate = records.empty() ? 0.0 : static_cast<double>(censored) / static_cast<double>(records.size());
  if (e.censor_rate > 0.05) e.warnings.push_back("more than 5% of trials censored");
  if (early > 0) e.warnings.push_back(std::to_string(early) + " trials alarmed before the change point and were excluded");
  if (delays.empty()) e.warnings.push_back("no uncensored post-change alarms");
  return e;
}

inline DelayEstimate estimate_mtfa(const TrialPlan& plan) {
  detail::require(!plan.change_point.has_value(), "estimate_mtfa needs a plan without change point");
  return summarize_mtfa(run_trials(plan));
}

inline DelayEstimate estimate_add(const TrialPlan& plan) {
  detail::require(plan.change_point.has_value(), "estimate_add needs a finite change point");
  return summarize_delay(run_trials(plan), *plan.change_point);
}

/// Default censoring caps: 50 e^b for false-alarm runs, 100 g^{-1}(b) for delay runs.
inline std::int64_t default_mtfa_cap(double threshold) {
  return static_cast<std::int64_t>(std::ceil(50.0 * std::exp(std::max(threshold, 0.0))));
}
inline std::int64_t default_delay_cap(const GrowthCurve& curve, double threshold) {
  const double t = curve.inverse(std::max(threshold, 0.0));
  if (!std::isfinite(t)) return 100000;
  return std::max<std::int64_t>(100, static_cast<std::int64_t>(std::ceil(100.0 * t)));
}

// ---------------------------------------------------------------------------
// Operating characteristics
// ---------------------------------------------------------------------------

enum class GlrThresholdRule {
  /// b = |log alpha|, the same threshold as the known-parameter detector.
  Matched,
  /// b solves the GLR false-alarm equation with the options' epsilon.
  Equation,
};

struct OcOptions {
  /// Fixed window; when empty the window is ceil(safety * g^{-1}(|log alpha|)).
  std::optional<std::int64_t> window;
  double safety = 1.1;
  GlrThresholdRule glr_rule = GlrThresholdRule::Matched;
  double epsilon = 1.0;
  /// Per-row censoring cap; when empty, default_delay_cap().
  std::optional<std::int64_t> max_steps;
};

struct OcRow {
  double alpha = 0.0;
  double threshold = 0.0;
  std::int64_t window = 0;
  DelayEstimate delay;
};

/// One calibrated delay estimate per alpha. Every row uses the template's
/// seed, so rows share common random numbers.
inline std::vector<OcRow> operating_characteristic(const TrialPlan& plan_template, const std::vector<double>& alphas,
                                                   const OcOptions& opt = {}) {
  detail::require(!alphas.empty(), "alphas must be nonempty");
  detail::require(plan_template.change_point.has_value(), "operating characteristic needs a finite change point");
  const GrowthCurve curve = GrowthCurve::of(plan_template.model);
  std::vector<OcRow> rows;
  for (double alpha : alphas) {
    OcRow row;
    row.alpha = alpha;
    row.threshold = cusum_threshold(alpha);
    if (plan_template.detector == DetectorKind::WlGlr && opt.glr_rule == GlrThresholdRule::Equation) {
      const auto& box = plan_template.grid.value().box;
      row.threshold = glr_threshold({alpha, box_volume(box), static_cast<int>(box.size()), opt.epsilon});
    }
    row.window = opt.window ? *opt.window : window_size(curve, alpha, opt.safety);
    TrialPlan plan = plan_template;
    plan.threshold = row.threshold;
    plan.window = row.window;
    plan.max_steps = opt.max_steps ? *opt.max_steps : default_delay_cap(curve, row.threshold);
    row.delay = estimate_add(plan);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Geometric QQ diagnostics
// ---------------------------------------------------------------------------

struct QqReport {
  std::vector<std::int64_t> sorted_times;
  double p_hat = 0.0;
  std::vector<double> probabilities;
  /// (theoretical geometric quantile, empirical quantile), one per probability.
  std::vector<std::pair<double, double>> pairs;
  double correlation = 0.0;
};

inline void to_json(nlohmann::json& j, const QqReport& r) {
  j = nlohmann::json{{"p_hat", r.p_hat}, {"correlation", r.correlation}, {"num_times", r.sorted_times.size()}};
}

/// Smallest k >= 1 with 1 - (1 - p)^k >= q.
inline double geometric_quantile(double p, double q) {
  if (p >= 1.0) return 1.0;
  return std::max(1.0, std::ceil(std::log1p(-q) / std::log1p(-p) - 1e-12));
}

inline double pearson_correlation(const std::vector<std::pair<double, double>>& pairs) {
  const double n = static_cast<double>(pairs.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pairs) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& [x, y] : pairs) {
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
    sxy += (x - mx) * (y - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw std::domain_error("correlation undefined for constant quantiles");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Compares stopping times with the geometric law of the same mean at
/// probabilities 0.01, 0.02, ..., 0.99.
inline QqReport geometric_qq(std::vector<std::int64_t> times) {
  if (times.size() < 100) throw std::invalid_argument("geometric_qq needs at least 100 stopping times");
  QqReport r;
  std::sort(times.begin(), times.end());
  const double mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  r.p_hat = 1.0 / mean;
  const auto n = static_cast<double>(times.size());
  for (int i = 1; i <= 99; ++i) {
    const double q = i / 100.0;
    const auto idx = static_cast<std::size_t>(std::max(1.0, std::ceil(q * n - 1e-9))) - 1;
    r.probabilities.push_back(q);
    r.pairs.emplace_back(geometric_quantile(r.p_hat, q), static_cast<double>(times[idx]));
  }
  r.correlation = pearson_correlation(r.pairs);
  r.sorted_times = std::move(times);
  return r;
}

/// Uncensored stopping times from a no-change plan.
inline std::vector<std::int64_t> false_alarm_times(const TrialPlan& plan) {
  detail::require(!plan.change_point.has_value(), "false_alarm_times needs a plan without change point");
  std::vector<std::int64_t> out;
  for (const auto& r : run_trials(plan))
    if (!r.censored) out.push_back(r.time);
  return out;
}

}  // namespace nsqcd
