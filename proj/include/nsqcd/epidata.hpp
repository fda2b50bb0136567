#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsqcd/calibration.hpp"
#include "nsqcd/detectors.hpp"
#include "nsqcd/models.hpp"
#include "nsqcd/rng.hpp"

namespace nsqcd::epi {

using Date = std::chrono::sys_days;

class EpiDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses YYYY-MM-DD.
inline std::optional<Date> parse_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return ec == std::errc{} && p == s.data() + pos + len;
  };
  if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

inline std::string format_iso_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

struct CaseSeries {
  std::vector<Date> dates;
  /// Daily new cases (cumulative inputs are differenced on load).
  std::vector<double> daily_cases;
  std::int64_t population = 1;
  std::string region;
};

struct CsvSchema {
  std::int64_t population = 1;
  bool cumulative = false;
  std::string region;
};

/// Reads `date,cases` rows. Malformed rows are reported together by line
/// number; dates must be strictly increasing. Cumulative counts are
/// differenced, with negative corrections clamped to zero.
inline CaseSeries read_case_csv(std::istream& in, const CsvSchema& schema) {
  if (schema.population <= 0) throw EpiDataError("population must be positive");
  CaseSeries s;
  s.population = schema.population;
  s.region = schema.region;

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<std::size_t> bad;
  std::vector<double> counts;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!header_seen) {
      header_seen = true;
      std::string h;
      for (char c : line)
        if (c != ' ' && c != '\t') h.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      if (h != "date,cases") throw EpiDataError("line 1: expected header 'date,cases'");
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      bad.push_back(line_no);
      continue;
    }
    auto trim = [](std::string_view v) {
      while (!v.empty() && (v.front() == ' ' || v.front() == '\t')) v.remove_prefix(1);
      while (!v.empty() && (v.back() == ' ' || v.back() == '\t')) v.remove_suffix(1);
      return v;
    };
    const auto date = parse_iso_date(trim(std::string_view(line).substr(0, comma)));
    const auto field = trim(std::string_view(line).substr(comma + 1));
    double value = 0.0;
    const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (!date || ec != std::errc{} || p != field.data() + field.size() || !(value >= 0.0)) {
      bad.push_back(line_no);
      continue;
    }
    s.dates.push_back(*date);
    counts.push_back(value);
  }
  if (!bad.empty()) {
    std::string msg = "malformed rows at lines";
    for (auto b : bad) msg += " " + std::to_string(b);
    throw EpiDataError(msg);
  }
  if (counts.empty()) throw EpiDataError("no case rows");
  for (std::size_t i = 1; i < s.dates.size(); ++i)
    if (s.dates[i] <= s.dates[i - 1]) throw EpiDataError("dates must be strictly increasing (row " + std::to_string(i + 1) + ")");

  if (schema.cumulative) {
    s.daily_cases.reserve(counts.size());
    s.daily_cases.push_back(counts.front());
    for (std::size_t i = 1; i < counts.size(); ++i) s.daily_cases.push_back(std::max(0.0, counts[i] - counts[i - 1]));
  } else {
    s.daily_cases = std::move(counts);
  }
  return s;
}

inline CaseSeries load_case_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw EpiDataError("cannot open " + path);
  return read_case_csv(in, schema);
}

/// Daily observations X_n as fractions of the population.
struct FractionSeries {
  std::vector<Date> dates;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }

  FractionSeries slice(std::size_t from, std::size_t count) const {
    if (from + count > values.size()) throw std::out_of_range("slice beyond series");
    return {{dates.begin() + static_cast<std::ptrdiff_t>(from), dates.begin() + static_cast<std::ptrdiff_t>(from + count)},
            {values.begin() + static_cast<std::ptrdiff_t>(from), values.begin() + static_cast<std::ptrdiff_t>(from + count)}};
  }

  /// Index of the first date >= d, or size().
  std::size_t index_of(Date d) const {
    return static_cast<std::size_t>(std::lower_bound(dates.begin(), dates.end(), d) - dates.begin());
  }
};

/// Trailing `window`-day moving average of daily cases over the population;
/// each value is dated at the last day of its window.
inline FractionSeries to_fraction_series(const CaseSeries& series, std::size_t window = 4) {
  detail::require(window >= 1, "moving-average window must be >= 1");
  if (series.daily_cases.size() < window) throw std::invalid_argument("series shorter than the moving-average window");
  FractionSeries out;
  const double pop = static_cast<double>(series.population);
  double acc = 0.0;
  for (std::size_t i = 0; i < series.daily_cases.size(); ++i) {
    acc += series.daily_cases[i];
    if (i >= window) acc -= series.daily_cases[i - window];
    if (i + 1 >= window) {
      out.dates.push_back(series.dates[i]);
      out.values.push_back(acc / static_cast<double>(window) / pop);
    }
  }
  return out;
}

/// Replaces exact zeros by half the smallest positive value; the Beta
/// log-density is unbounded at 0.
inline void clamp_zero_observations(std::vector<double>& values) {
  double min_pos = std::numeric_limits<double>::infinity();
  for (double v : values)
    if (v > 0.0) min_pos = std::min(min_pos, v);
  if (!std::isfinite(min_pos)) throw EpiDataError("series has no positive observation");
  for (double& v : values)
    if (v == 0.0) v = 0.5 * min_pos;
}

struct BetaFit {
  double a0 = 0.0;
  double b0 = 0.0;
  std::optional<Date> start;
  std::size_t length = 0;
};

/// Method-of-moments Beta fit on the first `window_days` observations.
inline BetaFit fit_beta_prechange(const FractionSeries& series, std::size_t window_days = 20) {
  if (window_days < 2 || series.size() < window_days)
    throw EpiDataError("need at least " + std::to_string(std::max<std::size_t>(window_days, 2)) + " observations to fit");
  const auto first = series.values.begin();
  const auto last = first + static_cast<std::ptrdiff_t>(window_days);
  if (std::any_of(first, last, [](double v) { return !(v > 0.0 && v < 1.0); }))
    throw EpiDataError("pre-change observations must lie in (0, 1)");
  const double n = static_cast<double>(window_days);
  const double mean = std::accumulate(first, last, 0.0) / n;
  double ss = 0.0;
  for (auto it = first; it != last; ++it) ss += (*it - mean) * (*it - mean);
  const double var = ss / (n - 1.0);
  if (!(var > 1e-24 * mean * mean)) throw EpiDataError("pre-change observations have zero variance");
  const double c = mean * (1.0 - mean) / var - 1.0;
  if (!(c > 0.0)) throw EpiDataError("sample variance too large for a Beta fit");
  BetaFit fit{mean * c, (1.0 - mean) * c, std::nullopt, window_days};
  if (!series.dates.empty()) fit.start = series.dates.front();
  return fit;
}

/// Mean of B(a0 h_theta(lag), b0).
inline double wave_mean(const BetaFit& beta, const WaveShape& theta, double lag) {
  const double a = beta.a0 * h_function(theta, lag);
  return a / (a + beta.b0);
}

struct WaveFit {
  WaveShape theta{};
  /// Mean squared distance between the series and the fitted Beta means.
  double residual = 0.0;
  int restarts = 0;
  bool converged = false;
};

class WaveFitError : public std::runtime_error {
 public:
  WaveFitError(const std::string& what, WaveFit best) : std::runtime_error(what), best_(best) {}
  const WaveFit& best() const noexcept { return best_; }

 private:
  WaveFit best_;
};

struct WaveFitOptions {
  int restarts = 20;
  double tolerance = 1e-8;
  int max_iterations = 10000;
  std::uint64_t seed = 20210615;
  /// Points per dimension of the coarse scan that seeds the first start.
  std::size_t scan_points = 12;
};

namespace detail {

inline double wave_objective(std::span<const double> x, const BetaFit& beta, const WaveShape& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - wave_mean(beta, t, static_cast<double>(i));
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

/// Compass search along the coordinate axes with step halving, clipped to
/// the box. Returns {objective, converged}.
inline std::pair<double, bool> coordinate_descent(std::span<const double> x, const BetaFit& beta, const ParameterBox& box,
                                                  WaveShape& t, const WaveFitOptions& opt) {
  std::array<double, 3> step{};
  for (int d = 0; d < 3; ++d) step[d] = 0.25 * box[d].length();
  double best = wave_objective(x, beta, t);
  for (int it = 0; it < opt.max_iterations; ++it) {
    bool improved = false;
    for (int d = 0; d < 3; ++d) {
      for (double dir : {1.0, -1.0}) {
        WaveShape trial = t;
        trial[d] = std::clamp(t[d] + dir * step[d], box[d].lo, box[d].hi);
        if (trial[d] == t[d]) continue;
        const double f = wave_objective(x, beta, trial);
        if (f < best) {
          best = f;
          t = trial;
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      bool done = true;
      for (int d = 0; d < 3; ++d) {
        step[d] *= 0.5;
        if (step[d] > opt.tolerance * box[d].length()) done = false;
      }
      if (done) return {best, true};
    }
  }
  return {best, false};
}

}  // namespace detail

/**
 * Least-squares fit of the wave shape theta, with lag i = position in the
 * series, minimizing mean_i (x_i - mean of B(a0 h_theta(i), b0))^2 over a box.
 *
 * The first start is the best point of a coarse tensor scan; the remaining
 * restarts are uniform in the box. The best local optimum wins.
 */
inline WaveFit fit_wave_shape(std::span<const double> series, const BetaFit& beta, const ParameterBox& box,
                              const WaveFitOptions& opt = {}) {
  if (series.empty()) throw EpiDataError("empty series");
  if (!(beta.a0 > 0.0 && beta.b0 > 0.0)) throw EpiDataError("invalid Beta fit");
  if (box.size() != 3) throw std::invalid_argument("wave box must be 3-dimensional");
  if (!(box[2].lo > 0.0)) throw std::invalid_argument("theta2 lower bound must be > 0");

  std::vector<WaveShape> starts;
  {
    const std::array<std::size_t, 3> counts{opt.scan_points, opt.scan_points, opt.scan_points};
    const auto grid = ParameterGrid::tensor(box, counts);
    double best = std::numeric_limits<double>::infinity();
    WaveShape arg{};
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto p = grid.point(i);
      const WaveShape t{p[0], p[1], p[2]};
      const double f = detail::wave_objective(series, beta, t);
      if (f < best) {
        best = f;
        arg = t;
      }
    }
    starts.push_back(arg);
  }
  RandomStream rng(opt.seed);
  for (int r = 1; r < opt.restarts; ++r)
    starts.push_back({rng.uniform(box[0].lo, box[0].hi), rng.uniform(box[1].lo, box[1].hi), rng.uniform(box[2].lo, box[2].hi)});

  WaveFit best;
  best.residual = std::numeric_limits<double>::infinity();
  for (auto t : starts) {
    const auto [f, ok] = detail::coordinate_descent(series, beta, box, t, opt);
    ++best.restarts;
    if (f < best.residual || (f == best.residual && ok && !best.converged)) {
      best.theta = t;
      best.residual = f;
      best.converged = ok;
    }
  }
  if (!best.converged) throw WaveFitError("wave fit did not converge", best);
  return best;
}

inline void to_json(nlohmann::json& j, const BetaFit& f) {
  j = nlohmann::json{{"a0", f.a0}, {"b0", f.b0}, {"length", f.length}};
  if (f.start) j["start"] = format_iso_date(*f.start);
}

inline void to_json(nlohmann::json& j, const WaveFit& f) {
  j = nlohmann::json{{"theta", f.theta}, {"residual", f.residual}, {"restarts", f.restarts}, {"converged", f.converged}};
}

// ---------------------------------------------------------------------------
// Monitoring
// ---------------------------------------------------------------------------

/// Default box of wave-shape parameters for monitoring.
inline ParameterBox default_wave_box() { return {{0.1, 5.0}, {1.0, 20.0}, {0.1, 5.0}}; }

using WaveFamily = GlrFamily<BetaWaveModel>;

inline std::shared_ptr<const WaveFamily> make_wave_family(const BetaFit& beta, const ParameterBox& box,
                                                          std::span<const std::size_t> counts, std::int64_t window) {
  const BetaWaveModel base({beta.a0, beta.b0, {box[0].lo, box[1].lo, box[2].lo}});
  return std::make_shared<const WaveFamily>(WaveFamily::from_grid(base, ParameterGrid::tensor(box, counts), window));
}

struct MonitorOptions {
  double alpha = 1e-3;
  std::int64_t window = 20;
  std::vector<std::size_t> grid_counts{50, 50, 50};
  double epsilon = 1.0;
};

struct MonitorResult {
  double threshold = 0.0;
  std::vector<DetectorOutput> trajectory;
  /// Index (0-based) of the first observation whose statistic crossed b.
  std::optional<std::size_t> first_crossing;
};

inline double wave_threshold(const ParameterBox& box, double alpha, double epsilon) {
  return glr_threshold({alpha, box_volume(box), static_cast<int>(box.size()), epsilon});
}

/// Runs the window-limited GLR detector over `values` with a prebuilt family.
inline MonitorResult monitor_values(std::span<const double> values, std::shared_ptr<const WaveFamily> family,
                                    double threshold, std::int64_t window) {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!(values[i] > 0.0 && values[i] < 1.0))
      throw EpiDataError("observation " + std::to_string(i) + " outside (0, 1)");
  MonitorResult r;
  r.threshold = threshold;
  WlGlr<BetaWaveModel> det(std::move(family), threshold, window);
  r.trajectory.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    r.trajectory.push_back(det.step(values[i]));
    if (r.trajectory.back().alarm && !r.first_crossing) r.first_crossing = i;
  }
  return r;
}

/// Monitors with p0 = B(a0, b0) and p1 = B(a0 h_theta(n - k), b0), theta
/// ranging over a grid on `box`; threshold from the GLR false-alarm equation.
inline MonitorResult monitor(const FractionSeries& series, const BetaFit& beta, const ParameterBox& box,
                             const MonitorOptions& opt = {}) {
  const double b = wave_threshold(box, opt.alpha, opt.epsilon);
  return monitor_values(series.values, make_wave_family(beta, box, opt.grid_counts, opt.window), b, opt.window);
}

/// Trajectory CSV: date,statistic,threshold,alarm,k_star,theta0,theta1,theta2.
inline void write_monitor_csv(std::ostream& os, const FractionSeries& series, const MonitorResult& r) {
  os << "date,statistic,threshold,alarm,k_star,theta0,theta1,theta2\n";
  const auto precision = os.precision(17);
  for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
    const auto& o = r.trajectory[i];
    os << format_iso_date(series.dates.at(i)) << ',' << o.statistic << ',' << r.threshold << ',' << (o.alarm ? 1 : 0) << ','
       << o.k_star;
    for (std::size_t d = 0; d < 3; ++d) {
      os << ',';
      if (d < o.theta_hat.size()) os << o.theta_hat[d];
    }
    os << '\n';
  }
  os.precision(precision);
}

}  // namespace nsqcd::epi
