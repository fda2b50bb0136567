#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "nsqcd/rng.hpp"

namespace nsqcd {

/// Log-likelihood ratio that is affine in a sufficient statistic T(x):
/// Z = slope * T(x) + intercept.
struct AffineLlr {
  double slope = 0.0;
  double intercept = 0.0;

  double operator()(double statistic) const noexcept {
    // slope == 0 covers T(x) = -inf at the Beta support boundary.
    return slope == 0.0 ? intercept : slope * statistic + intercept;
  }
};

/// Anything that can score an observation against a hypothesized change point.
template <class M>
concept ObservationModel = requires(const M& m, double x, std::int64_t n) {
  { m.in_support(x) } -> std::same_as<bool>;
  { m.log_likelihood_ratio(x, n, n) } -> std::convertible_to<double>;
};

/// Models whose LLR depends on (n, k) only through the lag n - k and is
/// affine in a per-observation statistic. These can be tabulated.
template <class M>
concept LagAffineModel = ObservationModel<M> && requires(const M& m, double x, std::int64_t lag) {
  { m.sufficient_statistic(x) } -> std::convertible_to<double>;
  { m.llr_coefficients(lag) } -> std::same_as<AffineLlr>;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline std::int64_t checked_lag(std::int64_t n, std::int64_t k) {
  if (k < 1 || n < k)
    throw std::invalid_argument("need n >= k >= 1, got n=" + std::to_string(n) + " k=" + std::to_string(k));
  return n - k;
}

inline double gaussian_log_density(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - d * d / (2.0 * variance);
}

/// Z for N(post_mean, var) against N(pre_mean, var), expanded in x.
inline AffineLlr gaussian_shift_llr(double pre_mean, double post_mean, double variance) {
  return {(post_mean - pre_mean) / variance, -(post_mean * post_mean - pre_mean * pre_mean) / (2.0 * variance)};
}

/// E[Z] when Z tests mean `hyp_mean` but data have mean `true_mean`.
inline double gaussian_expected_llr(double pre_mean, double hyp_mean, double true_mean, double variance) {
  const double a = true_mean - pre_mean;
  const double b = true_mean - hyp_mean;
  return (a * a - b * b) / (2.0 * variance);
}

inline long double log_beta_fn(long double a, long double b) {
  return boost::math::lgamma(a) + boost::math::lgamma(b) - boost::math::lgamma(a + b);
}

inline double beta_log_density(double x, double a, double b) {
  // A zero exponent contributes nothing, also at the boundary where the log is infinite.
  auto term = [](double power, double log_value) { return power == 0.0 ? 0.0 : power * log_value; };
  return term(a - 1.0, std::log(x)) + term(b - 1.0, std::log1p(-x)) - static_cast<double>(log_beta_fn(a, b));
}

struct LogMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance of log X for X ~ Beta(a, b), by tanh-sinh quadrature.
///
/// The integration range is clipped to +-60 standard deviations around the
/// mean; for b ~ 3e5 the density is otherwise a spike invisible to the rule.
inline LogMoments beta_log_moments(double a, double b, double tolerance = 1e-10) {
  const double s = a + b;
  const double mean = a / s;
  const double sd = std::sqrt(a * b / (s * s * (s + 1.0)));
  const double lo = std::max(0.0, mean - 60.0 * sd);
  const double hi = std::min(1.0, mean + 60.0 * sd);
  const double log_norm = static_cast<double>(log_beta_fn(a, b));
  auto density = [&](double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_norm);
  };
  boost::math::quadrature::tanh_sinh<double> rule;
  const double mass = rule.integrate(density, lo, hi, tolerance);
  const double m1 = rule.integrate([&](double x) { return x <= 0.0 ? 0.0 : density(x) * std::log(x); }, lo, hi, tolerance) / mass;
  const double m2 = rule.integrate(
                        [&](double x) {
                          if (x <= 0.0) return 0.0;
                          const double d = std::log(x) - m1;
                          return density(x) * d * d;
                        },
                        lo, hi, tolerance) /
                    mass;
  return {m1, m2};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameter records
// ---------------------------------------------------------------------------

/// Gaussian exponential mean change: N(mu0, s2) before, N(mu0 e^{theta lag}, s2) after.
struct GemParams {
  double mu0 = 0.1;
  double sigma0_sq = 1e4;
  double theta = 0.4;

  void validate() const {
    detail::require(mu0 > 0.0, "gem: mu0 must be > 0");
    detail::require(sigma0_sq > 0.0, "gem: sigma0_sq must be > 0");
    detail::require(theta > 0.0, "gem: theta must be > 0");
  }
};

/// Gaussian decaying mean: N(0, s2) before, N(mu1 (lag+1)^{-theta}, s2) after.
struct DecayParams {
  double mu1 = 2.0;
  double sigma_sq = 4.0;
  double theta = 0.2;

  void validate() const {
    detail::require(mu1 > 0.0, "decay: mu1 must be > 0");
    detail::require(sigma_sq > 0.0, "decay: sigma_sq must be > 0");
    detail::require(theta > 0.0 && theta < 0.5, "decay: theta must lie in (0, 0.5)");
  }
};

using WaveShape = std::array<double, 3>;

/// Gaussian-bump multiplier for the Beta mean, always >= 1.
inline double h_function(const WaveShape& theta, double lag) {
  detail::require(theta[2] > 0.0, "h_function: theta2 must be > 0");
  const double z = (lag - theta[1]) / theta[2];
  return 1.0 + std::pow(10.0, theta[0]) / theta[2] * std::exp(-0.5 * z * z);
}

/// Beta wave: B(a0, b0) before, B(a0 h_theta(lag), b0) after.
struct BetaWaveParams {
  double a0 = 20.6;
  double b0 = 2.94e5;
  WaveShape theta{0.464, 3.894, 0.445};

  void validate() const {
    detail::require(a0 > 0.0 && b0 > 0.0, "beta-wave: a0 and b0 must be > 0");
    detail::require(theta[0] >= 0.0 && theta[1] >= 0.0 && theta[2] > 0.0,
                    "beta-wave: theta0, theta1 must be >= 0 and theta2 > 0");
  }
};

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

class GemModel {
 public:
  explicit GemModel(GemParams p) : p_(p) { p_.validate(); }

  const GemParams& params() const noexcept { return p_; }
  static constexpr std::string_view kind() { return "gem"; }

  bool in_support(double x) const noexcept { return std::isfinite(x); }

  double post_mean(std::int64_t lag) const { return p_.mu0 * std::exp(p_.theta * static_cast<double>(lag)); }

  double log_pre_density(double x) const {
    if (!in_support(x)) throw std::domain_error("gem: observation must be finite");
    return detail::gaussian_log_density(x, p_.mu0, p_.sigma0_sq);
  }

  double sufficient_statistic(double x) const noexcept { return x; }

  AffineLlr llr_coefficients(std::int64_t lag) const {
    // Written as in the closed form so lag 0 gives exactly zero.
    const double e1 = std::expm1(p_.theta * static_cast<double>(lag));
    const double e2 = std::expm1(2.0 * p_.theta * static_cast<double>(lag));
    return {p_.mu0 / p_.sigma0_sq * e1, -p_.mu0 * p_.mu0 * e2 / (2.0 * p_.sigma0_sq)};
  }

  double log_likelihood_ratio(double x, std::int64_t n, std::int64_t k) const {
    const auto lag = detail::checked_lag(n, k);
    if (!in_support(x)) throw std::domain_error("gem: observation must be finite");
    return llr_coefficients(lag)(x);
  }

  double sample_pre(RandomStream& rng) const { return rng.normal(p_.mu0, std::sqrt(p_.sigma0_sq)); }

  double sample_post(RandomStream& rng, std::int64_t n, std::int64_t nu) const {
    return rng.normal(post_mean(detail::checked_lag(n, nu)), std::sqrt(p_.sigma0_sq));
  }

  double expected_llr(std::int64_t lag) const {
    const double e1 = std::expm1(p_.theta * static_cast<double>(lag));
    return p_.mu0 * p_.mu0 / (2.0 * p_.sigma0_sq) * e1 * e1;
  }

  double expected_llr_under(std::int64_t hyp_lag, std::int64_t true_lag) const {
    return detail::gaussian_expected_llr(p_.mu0, post_mean(hyp_lag), post_mean(true_lag), p_.sigma0_sq);
  }

  double llr_variance(std::int64_t lag) const {
    const double s = llr_coefficients(lag).slope;
    return s * s * p_.sigma0_sq;
  }

  std::vector<double> theta() const { return {p_.theta}; }

  GemModel with_theta(std::span<const double> t) const {
    detail::require(t.size() == 1, "gem: expects a 1-dimensional parameter");
    GemParams q = p_;
    q.theta = t[0];
    return GemModel(q);
  }

 private:
  GemParams p_;
};

class DecayModel {
 public:
  explicit DecayModel(DecayParams p) : p_(p) { p_.validate(); }

  const DecayParams& params() const noexcept { return p_; }
  static constexpr std::string_view kind() { return "decay"; }

  bool in_support(double x) const noexcept { return std::isfinite(x); }

  double post_mean(std::int64_t lag) const { return p_.mu1 * std::pow(static_cast<double>(lag + 1), -p_.theta); }

  double log_pre_density(double x) const {
    if (!in_support(x)) throw std::domain_error("decay: observation must be finite");
    return detail::gaussian_log_density(x, 0.0, p_.sigma_sq);
  }

  double sufficient_statistic(double x) const noexcept { return x; }

  AffineLlr llr_coefficients(std::int64_t lag) const { return detail::gaussian_shift_llr(0.0, post_mean(lag), p_.sigma_sq); }

  double log_likelihood_ratio(double x, std::int64_t n, std::int64_t k) const {
    const auto lag = detail::checked_lag(n, k);
    if (!in_support(x)) throw std::domain_error("decay: observation must be finite");
    return llr_coefficients(lag)(x);
  }

  double sample_pre(RandomStream& rng) const { return rng.normal(0.0, std::sqrt(p_.sigma_sq)); }

  double sample_post(RandomStream& rng, std::int64_t n, std::int64_t nu) const {
    return rng.normal(post_mean(detail::checked_lag(n, nu)), std::sqrt(p_.sigma_sq));
  }

  double expected_llr(std::int64_t lag) const {
    const double mu = post_mean(lag);
    return mu * mu / (2.0 * p_.sigma_sq);
  }

  double expected_llr_under(std::int64_t hyp_lag, std::int64_t true_lag) const {
    return detail::gaussian_expected_llr(0.0, post_mean(hyp_lag), post_mean(true_lag), p_.sigma_sq);
  }

  double llr_variance(std::int64_t lag) const {
    const double mu = post_mean(lag);
    return mu * mu / p_.sigma_sq;
  }

  std::vector<double> theta() const { return {p_.theta}; }

  DecayModel with_theta(std::span<const double> t) const {
    detail::require(t.size() == 1, "decay: expects a 1-dimensional parameter");
    DecayParams q = p_;
    q.theta = t[0];
    return DecayModel(q);
  }

 private:
  DecayParams p_;
};

class BetaWaveModel {
 public:
  explicit BetaWaveModel(BetaWaveParams p) : p_(p) { p_.validate(); }

  const BetaWaveParams& params() const noexcept { return p_; }
  static constexpr std::string_view kind() { return "beta-wave"; }

  /// Closed unit interval; the open-interval boundary gives infinite log-densities.
  bool in_support(double x) const noexcept { return x >= 0.0 && x <= 1.0; }

  double post_shape_a(std::int64_t lag) const { return p_.a0 * h_function(p_.theta, static_cast<double>(lag)); }

  double log_pre_density(double x) const {
    if (!in_support(x)) throw std::domain_error("beta-wave: observation must lie in [0, 1]");
    return detail::beta_log_density(x, p_.a0, p_.b0);
  }

  double sufficient_statistic(double x) const { return std::log(x); }

  AffineLlr llr_coefficients(std::int64_t lag) const {
    const long double a = p_.a0;
    const long double a1 = post_shape_a(lag);
    const long double b = p_.b0;
    // log B(a, b) - log B(a1, b); the lgamma(b) terms cancel exactly.
    const long double c0 = boost::math::lgamma(a) - boost::math::lgamma(a + b) - boost::math::lgamma(a1) + boost::math::lgamma(a1 + b);
    return {static_cast<double>(a1 - a), static_cast<double>(c0)};
  }

  double log_likelihood_ratio(double x, std::int64_t n, std::int64_t k) const {
    const auto lag = detail::checked_lag(n, k);
    if (!in_support(x)) throw std::domain_error("beta-wave: observation must lie in [0, 1]");
    return llr_coefficients(lag)(std::log(x));
  }

  double sample_pre(RandomStream& rng) const { return rng.beta(p_.a0, p_.b0); }

  double sample_post(RandomStream& rng, std::int64_t n, std::int64_t nu) const {
    return rng.beta(post_shape_a(detail::checked_lag(n, nu)), p_.b0);
  }

  double expected_llr(std::int64_t lag) const { return expected_llr_under(lag, lag); }

  double expected_llr_under(std::int64_t hyp_lag, std::int64_t true_lag) const {
    const AffineLlr c = llr_coefficients(hyp_lag);
    if (c.slope == 0.0) return c.intercept;
    return c(detail::beta_log_moments(post_shape_a(true_lag), p_.b0).mean);
  }

  double llr_variance(std::int64_t lag) const {
    const AffineLlr c = llr_coefficients(lag);
    if (c.slope == 0.0) return 0.0;
    return c.slope * c.slope * detail::beta_log_moments(post_shape_a(lag), p_.b0).variance;
  }

  /// Last lag on which the wave multiplier is still rising.
  std::int64_t increasing_prefix() const { return static_cast<std::int64_t>(std::floor(p_.theta[1])); }

  std::vector<double> theta() const { return {p_.theta.begin(), p_.theta.end()}; }

  BetaWaveModel with_theta(std::span<const double> t) const {
    detail::require(t.size() == 3, "beta-wave: expects a 3-dimensional parameter");
    BetaWaveParams q = p_;
    std::copy(t.begin(), t.end(), q.theta.begin());
    return BetaWaveModel(q);
  }

 private:
  BetaWaveParams p_;
};

// ---------------------------------------------------------------------------
// Runtime-selected model
// ---------------------------------------------------------------------------

/// One of the three built-in models, chosen at runtime.
class ModelHandle {
 public:
  using variant_type = std::variant<GemModel, DecayModel, BetaWaveModel>;

  ModelHandle(GemModel m) : v_(std::move(m)) {}
  ModelHandle(DecayModel m) : v_(std::move(m)) {}
  ModelHandle(BetaWaveModel m) : v_(std::move(m)) {}

  const variant_type& variant() const noexcept { return v_; }

  template <class F>
  decltype(auto) visit(F&& f) const {
    return std::visit(std::forward<F>(f), v_);
  }

  std::string_view kind() const {
    return visit([](const auto& m) { return m.kind(); });
  }
  bool in_support(double x) const {
    return visit([&](const auto& m) { return m.in_support(x); });
  }
  double log_pre_density(double x) const {
    return visit([&](const auto& m) { return m.log_pre_density(x); });
  }
  double sufficient_statistic(double x) const {
    return visit([&](const auto& m) { return m.sufficient_statistic(x); });
  }
  AffineLlr llr_coefficients(std::int64_t lag) const {
    return visit([&](const auto& m) { return m.llr_coefficients(lag); });
  }
  double log_likelihood_ratio(double x, std::int64_t n, std::int64_t k) const {
    return visit([&](const auto& m) { return m.log_likelihood_ratio(x, n, k); });
  }
  double sample_pre(RandomStream& rng) const {
    return visit([&](const auto& m) { return m.sample_pre(rng); });
  }
  double sample_post(RandomStream& rng, std::int64_t n, std::int64_t nu) const {
    return visit([&](const auto& m) { return m.sample_post(rng, n, nu); });
  }
  double expected_llr(std::int64_t lag) const {
    detail::require(lag >= 0, "expected_llr: lag must be >= 0");
    return visit([&](const auto& m) { return m.expected_llr(lag); });
  }
  double expected_llr_under(std::int64_t hyp_lag, std::int64_t true_lag) const {
    return visit([&](const auto& m) { return m.expected_llr_under(hyp_lag, true_lag); });
  }
  double llr_variance(std::int64_t lag) const {
    return visit([&](const auto& m) { return m.llr_variance(lag); });
  }
  std::vector<double> theta() const {
    return visit([](const auto& m) { return m.theta(); });
  }
  std::size_t parameter_dim() const { return theta().size(); }

  ModelHandle with_theta(std::span<const double> t) const {
    return visit([&](const auto& m) { return ModelHandle(m.with_theta(t)); });
  }

  /// Lags beyond which growth diagnostics are not meaningful (BetaWave only).
  std::optional<std::int64_t> increasing_prefix() const {
    if (const auto* b = std::get_if<BetaWaveModel>(&v_)) return b->increasing_prefix();
    return std::nullopt;
  }

 private:
  variant_type v_;
};

/// Builds a model from flat key/value settings such as
/// {model=gem, mu0=0.1, sigma0_sq=10000, theta=0.4}. Missing keys take the
/// defaults of the parameter record.
inline ModelHandle make_model(std::string_view kind, const std::map<std::string, double>& kv) {
  auto get = [&](const char* key, double fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  };
  if (kind == "gem") {
    GemParams p;
    return GemModel({get("mu0", p.mu0), get("sigma0_sq", p.sigma0_sq), get("theta", p.theta)});
  }
  if (kind == "decay") {
    DecayParams p;
    return DecayModel({get("mu1", p.mu1), get("sigma_sq", p.sigma_sq), get("theta", p.theta)});
  }
  if (kind == "beta-wave") {
    BetaWaveParams p;
    return BetaWaveModel(
        {get("a0", p.a0), get("b0", p.b0), {get("theta0", p.theta[0]), get("theta1", p.theta[1]), get("theta2", p.theta[2])}});
  }
  throw std::invalid_argument("unknown model '" + std::string(kind) + "' (expected gem, decay or beta-wave)");
}

}  // namespace nsqcd
