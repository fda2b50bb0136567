// nsqcd command-line front end.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nsqcd/nsqcd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nsqcd;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Configuration mistakes detected after parsing; reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tracks files written under --out so a failed run can remove them.
class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {}

  void open() {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_ = true;
    } else if (!fs::is_directory(dir_)) {
      throw UsageError("--out: '" + dir_.string() + "' is not a directory");
    }
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = dir_ / name;
    written_.push_back(p);
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << content;
    if (!os) throw std::runtime_error("write failed for " + p.string());
  }

  void rollback() noexcept {
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
    if (created_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

  std::vector<std::string> files() const {
    std::vector<std::string> out;
    for (const auto& p : written_) out.push_back(p.filename().string());
    return out;
  }

 private:
  fs::path dir_;
  bool created_ = false;
  std::vector<fs::path> written_;
};

std::vector<double> parse_doubles(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(flag + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw UsageError(flag + ": expected a comma-separated list");
  return out;
}

/// "lo:hi,lo:hi,..." -> box.
ParameterBox parse_box(const std::string& s, const std::string& flag) {
  ParameterBox box;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError(flag + ": interval '" + item + "' must look like lo:hi");
    const auto lo = parse_doubles(item.substr(0, colon), flag).front();
    const auto hi = parse_doubles(item.substr(colon + 1), flag).front();
    if (!(hi > lo)) throw UsageError(flag + ": interval '" + item + "' needs hi > lo");
    box.push_back({lo, hi});
  }
  if (box.empty()) throw UsageError(flag + ": empty box");
  return box;
}

std::vector<std::size_t> parse_counts(const std::string& s, std::size_t dim, const std::string& flag) {
  std::vector<std::size_t> out;
  for (double v : parse_doubles(s, flag)) {
    if (!(v >= 1.0) || v != std::floor(v)) throw UsageError(flag + ": grid counts must be positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.size() == 1) out.assign(dim, out.front());
  if (out.size() != dim) throw UsageError(flag + ": expected " + std::to_string(dim) + " grid counts");
  return out;
}

epi::Date parse_date(const std::string& s, const std::string& flag) {
  const auto d = epi::parse_iso_date(s);
  if (!d) throw UsageError(flag + ": '" + s + "' is not an ISO-8601 date (YYYY-MM-DD)");
  return *d;
}

std::string to_csv_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Shared flag groups
// ---------------------------------------------------------------------------

struct ModelFlags {
  std::string kind = "gem";
  std::map<std::string, double> values;

  void attach(CLI::App* app) {
    app->add_option("--model", kind, "Observation model")
        ->check(CLI::IsMember({"gem", "decay", "beta-wave"}))
        ->capture_default_str();
    const std::vector<std::pair<std::string, std::string>> keys{
        {"mu0", "--mu0"}, {"sigma0_sq", "--sigma0-sq"}, {"theta", "--theta"}, {"mu1", "--mu1"},
        {"sigma_sq", "--sigma-sq"}, {"a0", "--a0"}, {"b0", "--b0"}, {"theta0", "--theta0"},
        {"theta1", "--theta1"}, {"theta2", "--theta2"}};
    for (const auto& [key, flag] : keys)
      app->add_option_function<double>(flag, [this, key = key](double v) { values[key] = v; }, "Model parameter " + key);
  }

  ModelHandle build() const {
    try {
      return make_model(kind, values);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("model: ") + e.what());
    }
  }
};

struct RunFlags {
  std::string out = "nsqcd-out";
  std::optional<std::uint64_t> seed;
  std::int64_t trials = 2000;
  std::optional<std::int64_t> max_steps;
  unsigned workers = default_workers();

  void attach(CLI::App* app, bool stochastic) {
    app->add_option("--out", out, "Output directory")->capture_default_str();
    if (stochastic) {
      app->add_option("--seed", seed, "Master seed for all random streams")->required();
      app->add_option("--trials", trials, "Monte-Carlo trials")->check(CLI::PositiveNumber)->capture_default_str();
      app->add_option("--max-steps", max_steps, "Censoring cap per trial")->check(CLI::PositiveNumber);
      app->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    }
  }
};

struct DetectorFlags {
  std::string detector = "wl-cusum";
  std::optional<std::int64_t> window;
  double safety = 1.1;
  std::optional<std::string> theta_box;
  std::string grid_points = "50";

  void attach(CLI::App* app) {
    app->add_option("--detector", detector, "Detector")
        ->check(CLI::IsMember({"wl-cusum", "full-cusum", "wl-glr"}))
        ->capture_default_str();
    app->add_option("--window", window, "Window size m (default: calibrated from the growth function)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--safety", safety, "Window safety factor")->capture_default_str();
    app->add_option("--theta-box", theta_box, "Parameter box for the GLR family, lo:hi[,lo:hi...]");
    app->add_option("--grid-points", grid_points, "Grid points per dimension (one value or one per dimension)")
        ->capture_default_str();
  }

  std::optional<GlrGridSpec> grid(const ModelHandle& model) const {
    if (detector != "wl-glr") return std::nullopt;
    if (!theta_box) throw UsageError("--theta-box is required for --detector wl-glr");
    GlrGridSpec g;
    g.box = parse_box(*theta_box, "--theta-box");
    if (g.box.size() != model.parameter_dim())
      throw UsageError("--theta-box: model '" + std::string(model.kind()) + "' has " +
                       std::to_string(model.parameter_dim()) + " parameter(s)");
    g.counts = parse_counts(grid_points, g.box.size(), "--grid-points");
    return g;
  }
};

/// Threshold from --threshold or from --alpha.
struct ThresholdFlags {
  std::optional<double> alpha;
  std::optional<double> threshold;

  void attach(CLI::App* app) {
    auto* a = app->add_option("--alpha", alpha, "False-alarm rate; threshold |log alpha|");
    auto* t = app->add_option("--threshold", threshold, "Explicit threshold b");
    a->excludes(t);
  }

  double resolve() const {
    if (threshold) return *threshold;
    if (!alpha) throw UsageError("one of --alpha or --threshold is required");
    if (!(*alpha > 0.0 && *alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
    return cusum_threshold(*alpha);
  }
};

std::int64_t resolve_window(const DetectorFlags& d, const ModelHandle& model, double threshold) {
  if (d.window) return *d.window;
  const GrowthCurve curve = GrowthCurve::of(model);
  const double t = curve.inverse(std::max(threshold, 0.0));
  if (!std::isfinite(t)) throw CalibrationError("growth function never reaches the threshold; pass --window");
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(d.safety * t)));
}

TrialPlan make_plan(const ModelHandle& model, const DetectorFlags& d, const RunFlags& r) {
  return TrialPlan{.model = model,
                   .detector = detector_kind_from_string(d.detector),
                   .threshold = 0.0,
                   .window = 1,
                   .grid = d.grid(model),
                   .change_point = std::nullopt,
                   .num_trials = r.trials,
                   .max_steps = 1,
                   .seed = *r.seed,
                   .workers = r.workers};
}

std::string records_csv(const std::vector<StoppingRecord>& records) {
  std::ostringstream os;
  os << "trial,time,censored\n";
  for (std::size_t i = 0; i < records.size(); ++i) os << i << ',' << records[i].time << ',' << (records[i].censored ? 1 : 0) << '\n';
  return os.str();
}

json config_echo(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    const auto& name = opt->get_lnames().front();
    if (opt->count() > 0) {
      const auto& res = opt->results();
      j[name] = res.size() == 1 ? json(res.front()) : json(res);
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Window-limited CuSum and GLR-CuSum change detection for non-stationary post-change data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "Read flags from a TOML or INI file");

  ModelFlags model;
  RunFlags run;
  DetectorFlags det;
  ThresholdFlags thr;

  // calibrate
  double cal_alpha = 1e-3;
  std::optional<double> cal_epsilon;
  auto* calibrate = app.add_subcommand("calibrate", "Threshold, window and GLR threshold for a false-alarm rate");
  calibrate->add_option("--alpha", cal_alpha, "False-alarm rate")->capture_default_str();
  calibrate->add_option("--epsilon", cal_epsilon, "Smoothness exponent for the GLR threshold");

  // simulate-oc
  std::string oc_alphas = "1e-2,1e-3,1e-4";
  std::int64_t change_point = 1;
  std::string glr_rule = "matched";
  double oc_epsilon = 1.0;
  auto* simulate_oc = app.add_subcommand("simulate-oc", "Delay versus |log alpha| operating characteristic");
  simulate_oc->add_option("--alphas", oc_alphas, "Comma-separated false-alarm rates")->capture_default_str();
  simulate_oc->add_option("--change-point", change_point, "Change point nu")->check(CLI::PositiveNumber)->capture_default_str();
  simulate_oc->add_option("--glr-threshold", glr_rule, "GLR threshold rule")
      ->check(CLI::IsMember({"matched", "equation"}))
      ->capture_default_str();
  simulate_oc->add_option("--epsilon", oc_epsilon, "Smoothness exponent for --glr-threshold equation")->capture_default_str();

  // simulate-qq, estimate-mtfa, estimate-add
  auto* simulate_qq = app.add_subcommand("simulate-qq", "Geometric QQ diagnostics of false-alarm stopping times");
  auto* estimate_mtfa_cmd = app.add_subcommand("estimate-mtfa", "Mean time to false alarm");
  bool force = false;
  estimate_mtfa_cmd->add_flag("--force", force, "Allow alpha below 1e-4");
  auto* estimate_add_cmd = app.add_subcommand("estimate-add", "Average detection delay at a change point");
  estimate_add_cmd->add_option("--change-point", change_point, "Change point nu")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // diagnostics
  double x_max = 1000.0;
  std::int64_t n_max = 100;
  auto* diagnostics = app.add_subcommand("diagnostics", "Growth-condition and LLR concentration diagnostics");
  diagnostics->add_option("--x-max", x_max, "Largest x for the growth-condition grid")->capture_default_str();
  diagnostics->add_option("--n-max", n_max, "Largest n for the variance ratios")->capture_default_str();

  // epidemic subcommands
  std::string input;
  std::int64_t population = 0;
  std::optional<std::string> start_date;
  std::size_t prechange_days = 20;
  bool cumulative = false;
  std::size_t ma_window = 4;
  double epi_alpha = 1e-3;
  std::int64_t epi_window = 20;
  std::string epi_box = "0.1:5,1:20,0.1:5";
  double epi_epsilon = 1.0;
  std::string wave_start;
  std::size_t wave_days = 30;
  int restarts = 20;
  auto add_epi_input = [&](CLI::App* sub) {
    sub->add_option("--input", input, "Case CSV with header date,cases")->required()->check(CLI::ExistingFile);
    sub->add_option("--population", population, "Population of the region")->required()->check(CLI::PositiveNumber);
    sub->add_option("--start-date", start_date, "First day of the pre-change window (default: first usable day)");
    sub->add_option("--prechange-days", prechange_days, "Days used for the pre-change Beta fit")->capture_default_str();
    sub->add_flag("--cumulative", cumulative, "Input counts are cumulative");
    sub->add_option("--ma-window", ma_window, "Trailing moving-average window in days")->capture_default_str();
    sub->add_option("--theta-box", epi_box, "Wave-shape box lo:hi,lo:hi,lo:hi")->capture_default_str();
  };
  auto* monitor_epi = app.add_subcommand("monitor-epi", "WL-GLR monitoring of a case series");
  add_epi_input(monitor_epi);
  monitor_epi->add_option("--alpha", epi_alpha, "False-alarm rate")->capture_default_str();
  monitor_epi->add_option("--window", epi_window, "Window size")->check(CLI::PositiveNumber)->capture_default_str();
  monitor_epi->add_option("--grid-points", det.grid_points, "Grid points per dimension")->capture_default_str();
  monitor_epi->add_option("--epsilon", epi_epsilon, "Smoothness exponent for the threshold")->capture_default_str();
  auto* fit_epi = app.add_subcommand("fit-epi", "Fit the pre-change Beta law and a wave shape");
  add_epi_input(fit_epi);
  fit_epi->add_option("--wave-start", wave_start, "First day of the wave to fit")->required();
  fit_epi->add_option("--wave-days", wave_days, "Days of the wave to fit")->check(CLI::PositiveNumber)->capture_default_str();
  fit_epi->add_option("--restarts", restarts, "Optimizer restarts")->check(CLI::PositiveNumber)->capture_default_str();

  for (auto* sub : {calibrate, simulate_oc, simulate_qq, estimate_mtfa_cmd, estimate_add_cmd, diagnostics}) model.attach(sub);
  for (auto* sub : {calibrate, simulate_oc, simulate_qq, estimate_mtfa_cmd, estimate_add_cmd}) det.attach(sub);
  for (auto* sub : {simulate_qq, estimate_mtfa_cmd, estimate_add_cmd}) thr.attach(sub);
  for (auto* sub : {simulate_oc, simulate_qq, estimate_mtfa_cmd, estimate_add_cmd, fit_epi}) run.attach(sub, true);
  for (auto* sub : {calibrate, diagnostics, monitor_epi}) run.attach(sub, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const auto started = std::chrono::steady_clock::now();
  OutputDir out(run.out);
  json manifest{{"tool", "nsqcd"}, {"version", kVersion}, {"subcommand", sub->get_name()}, {"config", config_echo(sub)}};
  if (run.seed) manifest["seed"] = *run.seed;

  try {
    out.open();
    const std::string name = sub->get_name();

    if (name == "calibrate") {
      const ModelHandle m = model.build();
      if (!(cal_alpha > 0.0 && cal_alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
      json j{{"alpha", cal_alpha}, {"model", std::string(m.kind())}, {"b", cusum_threshold(cal_alpha)}};
      try {
        j["m"] = window_size(GrowthCurve::of(m), cal_alpha, det.safety);
      } catch (const CalibrationError& e) {
        j["m"] = nullptr;
        j["notes"].push_back(e.what());
      }
      j["safety"] = det.safety;
      j["epsilon"] = nullptr;
      j["residual"] = 0.0;
      if (det.theta_box) {
        const auto box = parse_box(*det.theta_box, "--theta-box");
        double eps = 0.0;
        if (cal_epsilon) {
          eps = *cal_epsilon;
        } else if (m.kind() == "gem" && box.size() == 1 && box[0].lo > 0.0) {
          eps = gem_epsilon(box[0].lo, box[0].hi);
        } else {
          throw UsageError("--epsilon is required for this model and box");
        }
        const auto sol = solve_glr_threshold({cal_alpha, box_volume(box), static_cast<int>(box.size()), eps});
        j["epsilon"] = eps;
        j["glr_threshold"] = sol.threshold;
        j["residual"] = sol.residual;
        j["theta_volume"] = box_volume(box);
      }
      std::cout << j.dump(2) << '\n';
      out.write("calibration.json", j.dump(2) + "\n");

    } else if (name == "simulate-oc") {
      const ModelHandle m = model.build();
      TrialPlan plan = make_plan(m, det, run);
      plan.change_point = change_point;
      OcOptions opt;
      opt.window = det.window;
      opt.safety = det.safety;
      opt.glr_rule = glr_rule == "equation" ? GlrThresholdRule::Equation : GlrThresholdRule::Matched;
      opt.epsilon = oc_epsilon;
      opt.max_steps = run.max_steps;
      const auto alphas = parse_doubles(oc_alphas, "--alphas");
      for (double a : alphas)
        if (!(a > 0.0 && a < 1.0)) throw UsageError("--alphas: every value must lie in (0, 1)");
      const auto rows = operating_characteristic(plan, alphas, opt);
      std::ostringstream csv;
      csv << "alpha,abs_log_alpha,threshold,window,delay,stderr,num_uncensored,censor_rate\n";
      json summary = json::array();
      for (const auto& r : rows) {
        csv << to_csv_number(r.alpha) << ',' << to_csv_number(-std::log(r.alpha)) << ',' << to_csv_number(r.threshold) << ','
            << r.window << ',' << to_csv_number(r.delay.mean) << ',' << to_csv_number(r.delay.std_error) << ','
            << r.delay.num_uncensored << ',' << to_csv_number(r.delay.censor_rate) << '\n';
        summary.push_back({{"alpha", r.alpha}, {"threshold", r.threshold}, {"window", r.window}, {"delay", r.delay}});
      }
      out.write("oc.csv", csv.str());
      out.write("oc.json", json{{"change_point", change_point}, {"rows", summary}}.dump(2) + "\n");

    } else if (name == "simulate-qq") {
      const ModelHandle m = model.build();
      TrialPlan plan = make_plan(m, det, run);
      plan.threshold = thr.resolve();
      plan.window = resolve_window(det, m, plan.threshold);
      plan.max_steps = run.max_steps ? *run.max_steps : default_mtfa_cap(plan.threshold);
      const auto records = run_trials(plan);
      std::vector<std::int64_t> times;
      for (const auto& r : records)
        if (!r.censored) times.push_back(r.time);
      const auto qq = geometric_qq(times);
      std::ostringstream csv;
      csv << "probability,geometric_quantile,empirical_quantile\n";
      for (std::size_t i = 0; i < qq.pairs.size(); ++i)
        csv << to_csv_number(qq.probabilities[i]) << ',' << to_csv_number(qq.pairs[i].first) << ','
            << to_csv_number(qq.pairs[i].second) << '\n';
      json j = qq;
      j["threshold"] = plan.threshold;
      j["window"] = plan.window;
      j["censored"] = records.size() - times.size();
      out.write("qq.csv", csv.str());
      out.write("qq.json", j.dump(2) + "\n");

    } else if (name == "estimate-mtfa" || name == "estimate-add") {
      const bool mtfa = name == "estimate-mtfa";
      const ModelHandle m = model.build();
      TrialPlan plan = make_plan(m, det, run);
      plan.threshold = thr.resolve();
      if (mtfa && !force && plan.threshold > cusum_threshold(1e-4) + 1e-12)
        throw UsageError("estimate-mtfa: alpha below 1e-4 needs about e^b steps per trial; pass --force to run anyway");
      plan.window = resolve_window(det, m, plan.threshold);
      if (mtfa) {
        plan.max_steps = run.max_steps ? *run.max_steps : default_mtfa_cap(plan.threshold);
      } else {
        plan.change_point = change_point;
        plan.max_steps = run.max_steps ? *run.max_steps
                                       : change_point - 1 + default_delay_cap(GrowthCurve::of(m), plan.threshold);
      }
      const auto records = run_trials(plan);
      const auto e = mtfa ? summarize_mtfa(records) : summarize_delay(records, change_point);
      json j{{"threshold", plan.threshold}, {"window", plan.window}, {"max_steps", plan.max_steps}, {"estimate", e}};
      if (!mtfa) j["change_point"] = change_point;
      out.write("stopping_times.csv", records_csv(records));
      out.write(mtfa ? "mtfa.json" : "add.json", j.dump(2) + "\n");
      for (const auto& w : e.warnings) std::cerr << "warning: " << w << '\n';

    } else if (name == "diagnostics") {
      const ModelHandle m = model.build();
      if (!(x_max > 1.0)) throw UsageError("--x-max must be > 1");
      if (n_max < 2) throw UsageError("--n-max must be >= 2");
      const GrowthCurve curve = GrowthCurve::of(m);
      const auto growth_report = check_growth_condition(curve, x_max);
      const auto lemma = lemma1_diagnostics(m, n_max);
      std::ostringstream csv;
      csv << "x,growth_inverse,log_inverse_over_x\n";
      for (std::size_t i = 0; i < growth_report.grid.size(); ++i)
        csv << to_csv_number(growth_report.grid[i]) << ',' << to_csv_number(growth_report.inverse[i]) << ','
            << to_csv_number(growth_report.ratio[i]) << '\n';
      std::ostringstream vcsv;
      vcsv << "n,growth,variance_ratio\n";
      for (std::size_t i = 0; i < lemma.n.size(); ++i)
        vcsv << lemma.n[i] << ',' << to_csv_number(curve.growth(lemma.n[i])) << ',' << to_csv_number(lemma.variance_ratio[i])
             << '\n';
      for (const auto& w : growth_report.warnings) std::cerr << "warning: " << w << '\n';
      out.write("growth.csv", csv.str());
      out.write("variance.csv", vcsv.str());
      out.write("diagnostics.json",
                json{{"growth_condition", growth_report}, {"concentration", lemma}}.dump(2) + "\n");

    } else if (name == "monitor-epi" || name == "fit-epi") {
      const auto box = parse_box(epi_box, "--theta-box");
      if (box.size() != 3) throw UsageError("--theta-box: expected three intervals");
      const auto cases = epi::load_case_csv(input, {population, cumulative, ""});
      auto series = epi::to_fraction_series(cases, ma_window);
      std::size_t start = 0;
      if (start_date) {
        start = series.index_of(parse_date(*start_date, "--start-date"));
        if (start >= series.size()) throw UsageError("--start-date: after the last usable day");
      }
      series = series.slice(start, series.size() - start);
      epi::clamp_zero_observations(series.values);
      if (series.size() < prechange_days) throw UsageError("--prechange-days: series too short");
      const auto beta = epi::fit_beta_prechange(series, prechange_days);

      if (name == "monitor-epi") {
        epi::MonitorOptions opt;
        opt.alpha = epi_alpha;
        opt.window = epi_window;
        opt.epsilon = epi_epsilon;
        opt.grid_counts = parse_counts(det.grid_points, 3, "--grid-points");
        const auto result = epi::monitor(series, beta, box, opt);
        std::ostringstream csv;
        epi::write_monitor_csv(csv, series, result);
        json j{{"beta", beta}, {"threshold", result.threshold}, {"window", epi_window}, {"alpha", epi_alpha}};
        j["first_crossing"] = result.first_crossing ? json(epi::format_iso_date(series.dates[*result.first_crossing])) : json();
        out.write("monitor.csv", csv.str());
        out.write("monitor.json", j.dump(2) + "\n");
      } else {
        const std::size_t ws = series.index_of(parse_date(wave_start, "--wave-start"));
        if (ws + wave_days > series.size()) throw UsageError("--wave-days: wave extends past the end of the series");
        const auto wave = series.slice(ws, wave_days);
        epi::WaveFitOptions opt;
        opt.restarts = restarts;
        opt.seed = *run.seed;
        epi::WaveFit fit;
        try {
          fit = epi::fit_wave_shape(wave.values, beta, box, opt);
        } catch (const epi::WaveFitError& e) {
          manifest["wave_fit_best"] = e.best();
          throw;
        }
        std::ostringstream csv;
        csv << "date,lag,observed,fitted_mean\n";
        for (std::size_t i = 0; i < wave.size(); ++i)
          csv << epi::format_iso_date(wave.dates[i]) << ',' << i << ',' << to_csv_number(wave.values[i]) << ','
              << to_csv_number(epi::wave_mean(beta, fit.theta, static_cast<double>(i))) << '\n';
        out.write("fit.csv", csv.str());
        out.write("fit.json", json{{"beta", beta}, {"wave", fit}, {"wave_start", epi::format_iso_date(wave.dates.front())}}
                                      .dump(2) + "\n");
      }
    }

    manifest["outputs"] = out.files();
    manifest["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out.write("manifest.json", manifest.dump(2) + "\n");
    return 0;
  } catch (const UsageError& e) {
    out.rollback();
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    out.rollback();
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
