#pragma once

#include "nlmix/errors.hpp"
#include "nlmix/initials.hpp"
#include "nlmix/saem.hpp"
#include "nlmix/simulate.hpp"
#include "nlmix/stats.hpp"
#include "nlmix/trajectory.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace nlmix {

/// Mean squared error of the marginal trajectory at each integer year.
struct MseCurve {
  std::vector<double> time;
  std::vector<double> mse;
  std::size_t n_fits = 0;

  double max() const { return mse.empty() ? 0.0 : *std::max_element(mse.begin(), mse.end()); }
};

inline std::vector<double> integer_years(int from = -24, int to = 0) {
  std::vector<double> t;
  for (int y = from; y <= to; ++y)
    t.push_back(y);
  return t;
}

inline std::vector<double> marginal_curve(ModelKind kind, const ParamPredictorSpec &pred,
                                          const CovariateMap &profile, double width,
                                          const std::vector<double> &time) {
  const SubjectParams psi = marginal_psi(pred, profile);
  std::vector<double> out;
  for (double t : time)
    out.push_back(structural_value(kind, t, psi, width));
  return out;
}

/// MSE(t) = mean over fits of (Y(t) - Yhat_r(t))^2 with Y the true marginal curve.
inline MseCurve mse_curve(ModelKind kind, const ParamPredictorSpec &truth,
                          const std::vector<const FittedModel *> &fits,
                          const CovariateMap &profile, double width) {
  if (fits.empty())
    throw NoConvergedFits();
  MseCurve c;
  c.time = integer_years();
  c.n_fits = fits.size();
  const auto y = marginal_curve(kind, truth, profile, width, c.time);
  c.mse.assign(c.time.size(), 0.0);
  for (const FittedModel *f : fits) {
    const auto yh = marginal_curve(kind, fitted_predictors(*f), profile, width, c.time);
    for (std::size_t i = 0; i < c.time.size(); ++i)
      c.mse[i] += (y[i] - yh[i]) * (y[i] - yh[i]);
  }
  for (double &v : c.mse)
    v /= static_cast<double>(fits.size());
  return c;
}

/// 100 |mean_r Yhat_r(t) - Y(t)| / |Y(t)|, averaged over years with |Y(t)| > 0.05.
inline double pct_bias(ModelKind kind, const ParamPredictorSpec &truth,
                       const std::vector<const FittedModel *> &fits, const CovariateMap &profile,
                       double width) {
  if (fits.empty())
    throw NoConvergedFits();
  const auto time = integer_years();
  const auto y = marginal_curve(kind, truth, profile, width, time);
  std::vector<double> avg(time.size(), 0.0);
  for (const FittedModel *f : fits) {
    const auto yh = marginal_curve(kind, fitted_predictors(*f), profile, width, time);
    for (std::size_t i = 0; i < time.size(); ++i)
      avg[i] += yh[i] / static_cast<double>(fits.size());
  }
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < time.size(); ++i)
    if (std::abs(y[i]) > 0.05) {
      sum += 100.0 * std::abs(avg[i] - y[i]) / std::abs(y[i]);
      ++n;
    }
  return n > 0 ? sum / n : NAN;
}

enum class InitialsMode { Auto, Naive };

inline std::string_view initials_mode_name(InitialsMode m) {
  return m == InitialsMode::Auto ? "auto" : "naive";
}

inline InitialsMode parse_initials_mode(std::string_view s) {
  if (s == "auto")
    return InitialsMode::Auto;
  if (s == "naive")
    return InitialsMode::Naive;
  throw UsageError("unknown initials mode '" + std::string(s) + "' (expected auto or naive)");
}

/// Benchmark covariate profile: every simulated covariate at 0 (its centre).
inline CovariateMap zero_profile(const SimScenario &sc) {
  CovariateMap p;
  for (const auto &n : sc.covariate_names())
    p[n] = 0.0;
  return p;
}

struct ReplicationResult {
  std::string scenario;
  InitialsMode mode = InitialsMode::Auto;
  int replication = 0;
  double runtime_s = 0.0;
  bool converged = false;
  double max_mse = NAN;
  double pct_bias = NAN;
  std::string error;
  std::optional<FittedModel> fit;
};

struct ScenarioSummary {
  std::string scenario;
  InitialsMode mode = InitialsMode::Auto;
  int n = 0, covariates = 0;
  std::size_t converged = 0, replications = 0;
  double mean_runtime_s = NAN;
  double mean_max_mse = NAN;
  double pct_bias = NAN;
  std::optional<MseCurve> curve;
};

struct BenchmarkResult {
  std::vector<ReplicationResult> replications;
  std::vector<ScenarioSummary> summaries;
};

struct BenchmarkOptions {
  std::vector<InitialsMode> modes{InitialsMode::Auto};
  SaemConfig config;
  int jobs = 1;
  bool keep_fits = false;
};

/// Simulates and fits one replication. Failures are recorded, not thrown.
inline ReplicationResult run_replication(const SimScenario &sc, InitialsMode mode, int r,
                                         const SaemConfig &config, bool keep_fit) {
  ReplicationResult out;
  out.scenario = sc.name;
  out.mode = mode;
  out.replication = r;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto data = simulate_dataset(sc, r);
    const auto start =
        mode == InitialsMode::Auto ? initial_values(data, sc.kind) : naive_start(sc.kind);
    FittedModel f = fit(data, sc.model_spec(), start, config);
    out.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // The fitted curve must be evaluable on the whole benchmark grid.
    const std::vector<const FittedModel *> one{&f};
    const auto profile = zero_profile(sc);
    out.max_mse = mse_curve(sc.kind, sc.truth(), one, profile, sc.transition_width).max();
    out.pct_bias = pct_bias(sc.kind, sc.truth(), one, profile, sc.transition_width);
    out.converged = true;
    if (keep_fit)
      out.fit = std::move(f);
  } catch (const Error &e) {
    if (out.runtime_s == 0.0)
      out.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.max_mse = out.pct_bias = NAN;
    out.error = e.what();
  }
  return out;
}

/// Runs every scenario x mode x replication, `jobs` at a time. Results are
/// ordered by (scenario, mode, replication) regardless of completion order.
inline BenchmarkResult run_benchmark(const std::vector<SimScenario> &scenarios,
                                     const BenchmarkOptions &options) {
  options.config.check();
  for (const auto &sc : scenarios)
    sc.check();
  struct Task {
    const SimScenario *sc;
    InitialsMode mode;
    int r;
  };
  std::vector<Task> tasks;
  for (const auto &sc : scenarios)
    for (InitialsMode m : options.modes)
      for (int r = 1; r <= sc.replications; ++r)
        tasks.push_back({&sc, m, r});

  BenchmarkResult result;
  result.replications.resize(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const auto &t = tasks[i];
      // Fits are kept until the summary curves are formed.
      result.replications[i] = run_replication(*t.sc, t.mode, t.r, options.config, true);
    }
  };
  const int jobs = std::max(1, options.jobs);
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j)
    pool.emplace_back(worker);
  worker();
  for (auto &th : pool)
    th.join();

  for (const auto &sc : scenarios)
    for (InitialsMode m : options.modes) {
      ScenarioSummary s;
      s.scenario = sc.name;
      s.mode = m;
      s.n = sc.n;
      s.covariates = sc.covariates;
      std::vector<const FittedModel *> fits;
      double rt = 0, mm = 0;
      for (const auto &rep : result.replications)
        if (rep.scenario == sc.name && rep.mode == m) {
          ++s.replications;
          rt += rep.runtime_s;
          if (rep.converged) {
            ++s.converged;
            mm += rep.max_mse;
            fits.push_back(&*rep.fit);
          }
        }
      if (s.replications > 0)
        s.mean_runtime_s = rt / static_cast<double>(s.replications);
      if (!fits.empty()) {
        const auto profile = zero_profile(sc);
        s.mean_max_mse = mm / static_cast<double>(fits.size());
        s.curve = mse_curve(sc.kind, sc.truth(), fits, profile, sc.transition_width);
        s.pct_bias = pct_bias(sc.kind, sc.truth(), fits, profile, sc.transition_width);
      }
      result.summaries.push_back(std::move(s));
    }
  if (!options.keep_fits)
    for (auto &rep : result.replications)
      rep.fit.reset();
  return result;
}

inline std::string csv_number(double x) { return std::isfinite(x) ? exact(x) : "NA"; }

/// One row per replication.
inline void write_benchmark_csv(const BenchmarkResult &res, std::ostream &out) {
  out << "scenario,mode,replication,runtime_s,converged,max_mse,pct_bias,error\n";
  for (const auto &r : res.replications)
    out << detail::csv_field(r.scenario) << ',' << initials_mode_name(r.mode) << ','
        << r.replication << ',' << fixed(r.runtime_s, 3) << ',' << (r.converged ? "true" : "false")
        << ',' << csv_number(r.max_mse) << ',' << csv_number(r.pct_bias) << ','
        << detail::csv_field(r.error) << '\n';
}

/// Mean runtime against sample size, one row per scenario x mode.
inline void write_runtime_csv(const BenchmarkResult &res, std::ostream &out) {
  out << "scenario,mode,n,covariates,replications,converged,mean_runtime_s,mean_max_mse,"
         "pct_bias\n";
  for (const auto &s : res.summaries)
    out << detail::csv_field(s.scenario) << ',' << initials_mode_name(s.mode) << ',' << s.n << ','
        << s.covariates << ',' << s.replications << ',' << s.converged << ','
        << csv_number(s.mean_runtime_s) << ',' << csv_number(s.mean_max_mse) << ','
        << csv_number(s.pct_bias) << '\n';
}

inline void write_mse_csv(const BenchmarkResult &res, std::ostream &out) {
  out << "scenario,mode,time,mse\n";
  for (const auto &s : res.summaries)
    if (s.curve)
      for (std::size_t i = 0; i < s.curve->time.size(); ++i)
        out << detail::csv_field(s.scenario) << ',' << initials_mode_name(s.mode) << ','
            << exact(s.curve->time[i]) << ',' << exact(s.curve->mse[i]) << '\n';
}

// ---- scenario configuration file ---------------------------------------------

/// Scenarios and shared settings read from a configuration file.
struct BenchmarkPlan {
  std::vector<SimScenario> scenarios;
  BenchmarkOptions options;
};

namespace detail {

inline std::vector<double> parse_list(const std::string &v, std::size_t line) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = parse_real(trim(item));
    if (!x)
      throw ConfigError("line " + std::to_string(line) + ": '" + std::string(trim(item)) +
                        "' is not a number");
    out.push_back(*x);
  }
  return out;
}

inline double parse_one(const std::string &v, std::size_t line) {
  const auto l = parse_list(v, line);
  if (l.size() != 1)
    throw ConfigError("line " + std::to_string(line) + ": expected one number");
  return l[0];
}

inline long parse_int(const std::string &v, std::size_t line) {
  const double x = parse_one(v, line);
  if (x != std::floor(x) || std::abs(x) > 9e15)
    throw ConfigError("line " + std::to_string(line) + ": expected an integer");
  return static_cast<long>(x);
}

inline std::array<double, 4> parse_four(const std::string &v, std::size_t line) {
  const auto l = parse_list(v, line);
  if (l.size() != 4)
    throw ConfigError("line " + std::to_string(line) + ": expected 4 comma-separated numbers");
  return {l[0], l[1], l[2], l[3]};
}

} // namespace detail

/// Parses the declarative scenario format:
///
///   # shared settings
///   modes = auto,naive
///   k1 = 300
///   scenario = smm_n200
///   model = smm
///   n = 200
///
/// Shared keys: modes, jobs, k1, k2, mcmc_steps, fit_seed, is_samples.
/// Scenario keys: model, n, covariates, replications, seed, sigma,
/// transition_width, min_obs, entry_min, entry_max, time_min, alpha, beta1,
/// beta2 (4 numbers each) and omega (q*q numbers, row-major). Unset truth
/// keys default to the model's standard truth.
inline BenchmarkPlan parse_benchmark_config(std::istream &in) {
  BenchmarkPlan plan;
  struct Block {
    std::string name;
    std::size_t line;
    std::vector<std::pair<std::string, std::pair<std::string, std::size_t>>> kv;
  };
  std::vector<Block> blocks;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos)
      raw.erase(hash);
    const std::string line(detail::trim(raw));
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key(detail::trim(std::string_view(line).substr(0, eq)));
    const std::string value(detail::trim(std::string_view(line).substr(eq + 1)));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    if (key == "scenario") {
      for (const auto &b : blocks)
        if (b.name == value)
          throw ConfigError("line " + std::to_string(lineno) + ": duplicate scenario '" + value +
                            "'");
      blocks.push_back({value, lineno, {}});
      continue;
    }
    if (!blocks.empty()) {
      blocks.back().kv.push_back({key, {value, lineno}});
      continue;
    }
    auto &o = plan.options;
    if (key == "modes") {
      o.modes.clear();
      std::stringstream ss(value);
      std::string m;
      while (std::getline(ss, m, ',')) {
        try {
          o.modes.push_back(parse_initials_mode(detail::trim(m)));
        } catch (const UsageError &e) {
          throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
      }
    } else if (key == "jobs") {
      o.jobs = static_cast<int>(detail::parse_int(value, lineno));
    } else if (key == "k1") {
      o.config.k1 = static_cast<int>(detail::parse_int(value, lineno));
    } else if (key == "k2") {
      o.config.k2 = static_cast<int>(detail::parse_int(value, lineno));
    } else if (key == "mcmc_steps") {
      o.config.mcmc_steps = static_cast<int>(detail::parse_int(value, lineno));
    } else if (key == "fit_seed") {
      o.config.seed = static_cast<std::uint64_t>(detail::parse_int(value, lineno));
    } else if (key == "is_samples") {
      o.config.is_samples = static_cast<int>(detail::parse_int(value, lineno));
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown setting '" + key + "'");
    }
  }

  for (const auto &b : blocks) {
    ModelKind kind = ModelKind::Smm;
    for (const auto &[k, v] : b.kv)
      if (k == "model") {
        try {
          kind = parse_model_kind(v.first);
        } catch (const UsageError &e) {
          throw ConfigError("line " + std::to_string(v.second) + ": " + e.what());
        }
      }
    SimScenario sc = SimScenario::standard(kind);
    sc.name = b.name;
    std::vector<double> omega;
    std::size_t omega_line = b.line;
    for (const auto &[k, vl] : b.kv) {
      const auto &[v, l] = vl;
      if (k == "model")
        continue;
      if (k == "n")
        sc.n = static_cast<int>(detail::parse_int(v, l));
      else if (k == "covariates")
        sc.covariates = static_cast<int>(detail::parse_int(v, l));
      else if (k == "replications")
        sc.replications = static_cast<int>(detail::parse_int(v, l));
      else if (k == "seed")
        sc.seed = static_cast<std::uint64_t>(detail::parse_int(v, l));
      else if (k == "sigma")
        sc.sigma = detail::parse_one(v, l);
      else if (k == "transition_width")
        sc.transition_width = detail::parse_one(v, l);
      else if (k == "min_obs")
        sc.min_obs = static_cast<int>(detail::parse_int(v, l));
      else if (k == "entry_min")
        sc.entry_min = detail::parse_one(v, l);
      else if (k == "entry_max")
        sc.entry_max = detail::parse_one(v, l);
      else if (k == "time_min")
        sc.time_min = detail::parse_one(v, l);
      else if (k == "alpha")
        sc.alpha = detail::parse_four(v, l);
      else if (k == "beta1")
        sc.beta1 = detail::parse_four(v, l);
      else if (k == "beta2")
        sc.beta2 = detail::parse_four(v, l);
      else if (k == "omega") {
        omega = detail::parse_list(v, l);
        omega_line = l;
      } else
        throw ConfigError("line " + std::to_string(l) + ": unknown scenario key '" + k + "'");
    }
    if (!omega.empty()) {
      const auto q = static_cast<Eigen::Index>(std::lround(std::sqrt(omega.size())));
      if (static_cast<std::size_t>(q * q) != omega.size())
        throw ConfigError("line " + std::to_string(omega_line) + ": omega needs q*q numbers");
      sc.omega = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                Eigen::RowMajor>>(omega.data(), q, q);
    }
    try {
      sc.check();
    } catch (const ConfigError &e) {
      throw ConfigError("scenario '" + sc.name + "' (line " + std::to_string(b.line) +
                        "): " + e.what());
    }
    plan.scenarios.push_back(std::move(sc));
  }
  if (plan.scenarios.empty())
    throw ConfigError("configuration defines no scenario");
  if (plan.options.modes.empty())
    throw ConfigError("modes must list at least one of auto, naive");
  plan.options.config.check();
  return plan;
}

inline BenchmarkPlan load_benchmark_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open configuration file '" + path + "'");
  return parse_benchmark_config(in);
}

} // namespace nlmix
