#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "nsqcd/growth.hpp"

namespace nsqcd {

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlrThresholdInputs {
  double alpha = 1e-3;
  double theta_volume = 1.0;
  int dim = 1;
  double epsilon = 1.0;

  void validate() const {
    detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    detail::require(theta_volume > 0.0, "theta_volume must be > 0");
    detail::require(dim >= 1, "dim must be >= 1");
    detail::require(epsilon > 0.0, "epsilon must be > 0");
  }
};

struct CalibrationResult {
  double threshold = 0.0;
  std::int64_t window = 1;
  std::vector<std::string> notes;
};

/// b = |log alpha|, which keeps the WL-CuSum mean time to false alarm >= 1/alpha.
inline double cusum_threshold(double alpha) {
  detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  return -std::log(alpha);
}

/// Volume of the d-dimensional unit ball, pi^{d/2} / Gamma(1 + d/2).
inline double unit_ball_volume(int d) {
  detail::require(d >= 1, "dimension must be >= 1");
  return std::exp(0.5 * d * std::log(std::numbers::pi) - std::lgamma(1.0 + 0.5 * d));
}

struct GlrThresholdSolution {
  double threshold = 0.0;
  double residual = 0.0;
};

/**
 * Solves |Theta| C_d^{-1} b^{eps d/2} e^{1-b} = alpha for the largest root b,
 * i.e. b - c log b = K with c = eps d / 2 and
 * K = 1 + log(|Theta| / C_d) + |log alpha|.
 *
 * Left of b = c the map b - c log b decreases, so only the branch b > max(1, c)
 * is searched. Bisection runs until the bracket collapses to adjacent doubles.
 */
inline GlrThresholdSolution solve_glr_threshold(const GlrThresholdInputs& in) {
  in.validate();
  const double c = 0.5 * in.epsilon * in.dim;
  const double k = 1.0 + std::log(in.theta_volume / unit_ball_volume(in.dim)) - std::log(in.alpha);
  auto f = [&](double b) { return b - c * std::log(b) - k; };

  double lo = std::max(1.0, c);
  if (f(lo) > 0.0)
    throw CalibrationError("no threshold root above max(1, eps*d/2) = " + std::to_string(lo) +
                           "; use a smaller epsilon or alpha");
  double hi = std::max(k, lo) + 2.0 * c * std::log(std::max(k, lo) + c) + 10.0;
  while (f(hi) < 0.0) hi *= 2.0;
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (f(mid) < 0.0 ? lo : hi) = mid;
  }
  const double b = std::abs(f(lo)) <= std::abs(f(hi)) ? lo : hi;
  return {b, f(b)};
}

inline double glr_threshold(const GlrThresholdInputs& in) { return solve_glr_threshold(in).threshold; }

/// ceil(safety * g^{-1}(|log alpha|)), at least 1.
inline std::int64_t window_size(const GrowthCurve& curve, double alpha, double safety = 1.1) {
  detail::require(safety >= 1.0, "safety factor must be >= 1");
  const double t = curve.inverse(cusum_threshold(alpha));
  if (!std::isfinite(t)) throw CalibrationError("growth function never reaches |log alpha|; set the window explicitly");
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(safety * t)));
}

/// Smoothness exponent for the GEM family with theta in [theta_min, theta_max].
inline double gem_epsilon(double theta_min, double theta_max, double delta = 0.1) {
  detail::require(theta_min > 0.0 && theta_max >= theta_min, "need 0 < theta_min <= theta_max");
  detail::require(delta >= 0.0, "delta must be >= 0");
  return (1.0 + delta) * theta_max / theta_min;
}

/// Threshold |log alpha| and a growth-calibrated window for the known-parameter detector.
inline CalibrationResult calibrate_cusum(const ModelHandle& model, double alpha, double safety = 1.1) {
  const GrowthCurve curve = GrowthCurve::of(model);
  CalibrationResult r;
  r.threshold = cusum_threshold(alpha);
  r.window = window_size(curve, alpha, safety);
  r.notes.push_back("threshold = |log alpha|");
  r.notes.push_back("window = ceil(" + std::to_string(safety) + " * g^-1(|log alpha|))");
  return r;
}

}  // namespace nsqcd
