#pragma once

// Command-line front end. run_cli() is the whole program; main() only wires
// it to argv and the standard streams so tests can drive it in-process.

#include "nlmix/benchmark.hpp"
#include "nlmix/dataset.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/export.hpp"
#include "nlmix/initials.hpp"
#include "nlmix/inspect.hpp"
#include "nlmix/report.hpp"
#include "nlmix/saem.hpp"
#include "nlmix/simulate.hpp"
#include "nlmix/svg.hpp"
#include "nlmix/trajectory.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace nlmix::cli {

namespace fs = std::filesystem;

enum ExitCode { Ok = 0, Usage = 1, Data = 2, Estimation = 3 };

/// Collects output files, refuses to clobber existing ones unless forced and
/// announces every path it writes.
class Artifacts {
public:
  Artifacts(fs::path dir, bool force, std::ostream &out)
      : dir_(std::move(dir)), force_(force), out_(out) {}

  fs::path plan(const std::string &name) {
    fs::path p = dir_ / name;
    if (!force_ && fs::exists(p))
      throw UsageError("refusing to overwrite '" + p.string() + "' (pass --force)");
    return p;
  }

  void write(const fs::path &p, const std::string &content) {
    if (!dir_.empty())
      fs::create_directories(dir_);
    std::ofstream f(p, std::ios::binary);
    f << content;
    if (!f)
      throw DataError("cannot write '" + p.string() + "'");
    out_ << "wrote " << p.string() << '\n';
  }

  template <class Fn> void write_with(const fs::path &p, Fn &&fn) {
    std::ostringstream s;
    fn(s);
    write(p, s.str());
  }

private:
  fs::path dir_;
  bool force_;
  std::ostream &out_;
};

inline std::vector<double> parse_numbers(const std::string &text, const std::string &flag,
                                         std::size_t expected) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = detail::parse_real(detail::trim(item));
    if (!x)
      throw UsageError(flag + ": '" + std::string(detail::trim(item)) + "' is not a number");
    v.push_back(*x);
  }
  if (v.size() != expected)
    throw UsageError(flag + " expects " + std::to_string(expected) + " comma-separated numbers");
  return v;
}

// ---- fit --------------------------------------------------------------------

struct FitArgs {
  std::string model, data, id, outcome, time;
  std::vector<std::string> var_all;
  std::map<std::string, std::vector<std::string>> var; // keyed by flag name
  std::string start;
  bool traj_marg = false;
  std::string traj_marg_group;
  std::string traj_marg_group_val = "0.1,0.9";
  SaemConfig config;
  double v = 2.0;
  bool v_given = false;
  std::string out = ".";
  std::string prefix;
  std::string report_file;
  bool trace = false, psi = false;
  std::string xlabel = "Time", ylabel;
  bool force = false, no_elapsed = false;
};

inline const std::vector<std::string> &all_var_flags() {
  static const std::vector<std::string> flags{"last-level", "first-level", "midpoint", "hslope",
                                              "slope1",     "slope2",      "changepoint"};
  return flags;
}

inline int cmd_fit(FitArgs &a, std::ostream &out) {
  const ModelKind kind = parse_model_kind(a.model);
  const auto &names = parameter_flag_names(kind);

  ModelSpec spec = ModelSpec::standard(kind);
  for (const auto &[flag, covs] : a.var) {
    if (covs.empty())
      continue;
    const auto it = std::find(names.begin(), names.end(), flag);
    if (it == names.end())
      throw UsageError("--var-" + flag + " is not a parameter of model " + a.model);
  }
  for (int k = 0; k < 4; ++k) {
    auto add = [&](const std::string &c) {
      if (std::find(spec.covariates[k].begin(), spec.covariates[k].end(), c) ==
          spec.covariates[k].end())
        spec.covariates[k].push_back(c);
    };
    for (const auto &c : a.var_all)
      add(c);
    if (auto it = a.var.find(names[k]); it != a.var.end())
      for (const auto &c : it->second)
        add(c);
  }
  if (a.v_given && kind != ModelKind::PmmSmooth)
    throw UsageError("--v applies to the pmms model only");
  spec.transition_width = a.v;
  spec.check();

  double p_lo = 0.1, p_hi = 0.9;
  if (!a.traj_marg_group.empty()) {
    const auto p = parse_numbers(a.traj_marg_group_val, "--traj-marg-group-val", 2);
    p_lo = p[0];
    p_hi = p[1];
    if (!(p_lo > 0.0 && p_lo < p_hi && p_hi < 1.0))
      throw UsageError("--traj-marg-group-val must satisfy 0 < p1 < p2 < 1");
    const auto covs = spec.all_covariates();
    if (std::find(covs.begin(), covs.end(), a.traj_marg_group) == covs.end())
      throw UnknownGroupVariable(a.traj_marg_group);
  }
  std::optional<StartValues> user;
  if (!a.start.empty()) {
    const auto v = parse_numbers(a.start, "--start", 4);
    std::array<double, 4> values{};
    const auto order = display_order(kind);
    for (int j = 0; j < 4; ++j)
      values[order[j]] = v[j];
    user = user_start(kind, values);
  }

  Artifacts art(a.out, a.force, out);
  const std::string prefix = a.prefix.empty() ? a.model : a.prefix;
  fs::path marg_csv, marg_svg, group_csv, group_svg, trace_csv, trace_svg, psi_csv, report;
  if (a.traj_marg) {
    marg_csv = art.plan(prefix + "_traj_marg.csv");
    marg_svg = art.plan(prefix + "_traj_marg.svg");
  }
  if (!a.traj_marg_group.empty()) {
    group_csv = art.plan(prefix + "_traj_marg_" + a.traj_marg_group + ".csv");
    group_svg = art.plan(prefix + "_traj_marg_" + a.traj_marg_group + ".svg");
  }
  if (a.trace) {
    trace_csv = art.plan(prefix + "_trace.csv");
    trace_svg = art.plan(prefix + "_trace.svg");
  }
  if (a.psi)
    psi_csv = art.plan(prefix + "_psi.csv");
  if (!a.report_file.empty())
    report = art.plan(a.report_file);

  const auto data = load_dataset(a.data, a.id, a.outcome, a.time, spec.all_covariates());
  const StartValues start = user ? *user : initial_values(data, kind);
  const FittedModel f = fit(data, spec, start, a.config);
  const std::string text = render_report(f, {.elapsed = !a.no_elapsed});
  out << text;

  const std::string ylabel = a.ylabel.empty() ? a.outcome : a.ylabel;
  if (a.traj_marg) {
    const std::vector<MarginalTrajectory> trs{marginal_trajectory(f)};
    art.write_with(marg_csv, [&](std::ostream &o) { write_trajectory_csv(trs, o); });
    art.write(marg_svg, trajectory_svg(trs, "Marginal estimated trajectory", a.xlabel, ylabel));
  }
  if (!a.traj_marg_group.empty()) {
    const auto [lo, hi] = marginal_contrast(f, a.traj_marg_group, p_lo, p_hi);
    const std::vector<MarginalTrajectory> trs{lo, hi};
    art.write_with(group_csv, [&](std::ostream &o) { write_trajectory_csv(trs, o); });
    art.write(group_svg, trajectory_svg(trs, "Marginal estimated trajectories by " +
                                                 a.traj_marg_group,
                                        a.xlabel, ylabel));
  }
  if (a.trace) {
    art.write_with(trace_csv, [&](std::ostream &o) { write_trace_csv(f, o); });
    art.write(trace_svg, svg_trace(f.trace_names, f.trace));
  }
  if (a.psi)
    art.write_with(psi_csv, [&](std::ostream &o) { write_psi_csv(f, o); });
  if (!report.empty())
    art.write(report, text);
  return Ok;
}

// ---- inspect ----------------------------------------------------------------

struct InspectArgs {
  std::string data, id, variable, time;
  std::string xlabel = "Time", ylabel;
  std::uint64_t seed = 20220901;
  std::size_t bins = 30, sample = 70;
  std::string out = ".", prefix = "inspect";
  bool force = false;
};

inline int cmd_inspect(const InspectArgs &a, std::ostream &out) {
  Artifacts art(a.out, a.force, out);
  const auto hist_csv = art.plan(a.prefix + "_histogram.csv");
  const auto hist_svg = art.plan(a.prefix + "_histogram.svg");
  const auto spag_csv = art.plan(a.prefix + "_spaghetti.csv");
  const auto spag_svg = art.plan(a.prefix + "_spaghetti.svg");
  const auto box_csv = art.plan(a.prefix + "_yearly.csv");
  const auto box_svg = art.plan(a.prefix + "_yearly.svg");

  const auto data = load_dataset(a.data, a.id, a.variable, a.time, {});
  const auto s = inspect(data, a.seed, {a.bins, a.sample});
  const std::string ylabel = a.ylabel.empty() ? a.variable : a.ylabel;
  out << data.n_subjects() << " subjects, " << data.n_observations() << " observations, "
      << s.spaghetti.size() << " subjects sampled for the spaghetti plot\n";
  art.write_with(hist_csv, [&](std::ostream &o) { write_histogram_csv(s.histogram, o); });
  art.write(hist_svg, svg_histogram(s.histogram, "Distribution of " + a.variable, ylabel));
  art.write_with(spag_csv, [&](std::ostream &o) { write_spaghetti_csv(s.spaghetti, o); });
  art.write(spag_svg, spaghetti_svg(s.spaghetti, "Individual trajectories", a.xlabel, ylabel));
  art.write_with(box_csv, [&](std::ostream &o) { write_yearly_csv(s.yearly, o); });
  art.write(box_svg, svg_boxplot(s.yearly, "Outcome by year", a.xlabel, ylabel));
  return Ok;
}

// ---- simulate / benchmark / make-datacog ------------------------------------

struct SimulateArgs {
  std::string config, scenario, out = ".";
  bool force = false;
};

inline int cmd_simulate(const SimulateArgs &a, std::ostream &out) {
  const auto plan = load_benchmark_config(a.config);
  std::vector<const SimScenario *> chosen;
  for (const auto &sc : plan.scenarios)
    if (a.scenario.empty() || sc.name == a.scenario)
      chosen.push_back(&sc);
  if (chosen.empty())
    throw UsageError("no scenario named '" + a.scenario + "' in " + a.config);
  Artifacts art(a.out, a.force, out);
  std::vector<std::pair<const SimScenario *, int>> jobs;
  std::vector<fs::path> paths;
  for (const auto *sc : chosen)
    for (int r = 1; r <= sc->replications; ++r) {
      paths.push_back(art.plan(sc->name + "_r" + std::to_string(r) + ".csv"));
      jobs.push_back({sc, r});
    }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto data = simulate_dataset(*jobs[j].first, jobs[j].second);
    art.write_with(paths[j], [&](std::ostream &o) { write_dataset(data, o); });
  }
  return Ok;
}

struct BenchmarkArgs {
  std::string config, modes, out = ".";
  int jobs = 0;
  bool force = false;
};

inline int cmd_benchmark(const BenchmarkArgs &a, std::ostream &out) {
  auto plan = load_benchmark_config(a.config);
  if (!a.modes.empty()) {
    plan.options.modes.clear();
    std::stringstream ss(a.modes);
    std::string m;
    while (std::getline(ss, m, ','))
      plan.options.modes.push_back(parse_initials_mode(detail::trim(m)));
  }
  if (a.jobs > 0)
    plan.options.jobs = a.jobs;
  Artifacts art(a.out, a.force, out);
  const auto reps = art.plan("benchmark_replications.csv");
  const auto runtime = art.plan("benchmark_runtime.csv");
  const auto mse = art.plan("benchmark_mse.csv");

  const auto res = run_benchmark(plan.scenarios, plan.options);
  std::vector<std::vector<std::string>> rows{{"scenario", "mode", "n", "covariates", "converged",
                                              "mean runtime (s)", "mean max MSE", "pct bias"}};
  for (const auto &s : res.summaries)
    rows.push_back({s.scenario, std::string(initials_mode_name(s.mode)), std::to_string(s.n),
                    std::to_string(s.covariates),
                    std::to_string(s.converged) + "/" + std::to_string(s.replications),
                    csv_number(s.mean_runtime_s), csv_number(s.mean_max_mse),
                    csv_number(s.pct_bias)});
  detail::print_table(out, rows);
  out << "Runtimes are wall-clock seconds on this host; no hardware calibration applied.\n";
  art.write_with(reps, [&](std::ostream &o) { write_benchmark_csv(res, o); });
  art.write_with(runtime, [&](std::ostream &o) { write_runtime_csv(res, o); });
  art.write_with(mse, [&](std::ostream &o) { write_mse_csv(res, o); });
  return Ok;
}

struct DatacogArgs {
  std::uint64_t seed = 20220901;
  std::string out = "dataCog.csv";
  bool force = false;
};

inline int cmd_make_datacog(const DatacogArgs &a, std::ostream &out) {
  const fs::path p(a.out);
  Artifacts art(p.parent_path(), a.force, out);
  const auto path = art.plan(p.filename().string());
  const auto data = make_datacog(a.seed);
  art.write_with(path, [&](std::ostream &o) { write_dataset(data, o); });
  return Ok;
}

// ---- dispatch ---------------------------------------------------------------

inline int exit_code_for(const std::exception &e) {
  if (dynamic_cast<const UsageError *>(&e))
    return Usage;
  if (dynamic_cast<const DataError *>(&e))
    return Data;
  if (dynamic_cast<const fs::filesystem_error *>(&e))
    return Data;
  return Estimation;
}

inline int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Nonlinear mixed-effects models (sigmoidal and piecewise) fitted by SAEM",
               "nlmix"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", "nlmix 0.1.0");

  FitArgs fa;
  auto *fit_cmd = app.add_subcommand("fit", "Fit a model and print the annotated report");
  fit_cmd->add_option("--model", fa.model, "Model: smm, pmma or pmms")->required();
  fit_cmd->add_option("--data", fa.data, "CSV file in long format")->required();
  fit_cmd->add_option("--id", fa.id, "Subject id column")->required();
  fit_cmd->add_option("--outcome", fa.outcome, "Outcome column")->required();
  fit_cmd->add_option("--time", fa.time, "Time column")->required();
  fit_cmd->add_option("--var-all", fa.var_all, "Covariates for all four parameters")
      ->delimiter(',');
  for (const auto &flag : all_var_flags())
    fit_cmd->add_option("--var-" + flag, fa.var[flag], "Covariates for " + flag)
        ->delimiter(',');
  fit_cmd->add_option("--start", fa.start,
                      "Four start values in report order, e.g. \"-1,-0.02,-0.25,-4\"");
  fit_cmd->add_flag("--traj-marg", fa.traj_marg, "Write the marginal trajectory (CSV and SVG)");
  fit_cmd->add_option("--traj-marg-group", fa.traj_marg_group,
                      "Covariate whose groups are contrasted");
  fit_cmd->add_option("--traj-marg-group-val", fa.traj_marg_group_val,
                      "Percentiles p1,p2 for a continuous group variable");
  fit_cmd->add_option("--seed", fa.config.seed, "Random seed");
  fit_cmd->add_option("--v", fa.v, "Transition width (pmms)")
      ->each([&](const std::string &) { fa.v_given = true; });
  fit_cmd->add_option("--k1", fa.config.k1, "SAEM exploration iterations");
  fit_cmd->add_option("--k2", fa.config.k2, "SAEM smoothing iterations");
  fit_cmd->add_option("--mcmc-steps", fa.config.mcmc_steps, "MCMC transitions per iteration");
  fit_cmd->add_option("--is-samples", fa.config.is_samples,
                      "Importance-sampling draws per subject");
  fit_cmd->add_option("--out", fa.out, "Directory for artifacts");
  fit_cmd->add_option("--prefix", fa.prefix, "Artifact file prefix (default: model name)");
  fit_cmd->add_option("--report-file", fa.report_file, "Also write the report to this file");
  fit_cmd->add_flag("--trace", fa.trace, "Write the SAEM convergence trace (CSV and SVG)");
  fit_cmd->add_flag("--psi", fa.psi, "Write individual parameter estimates (CSV)");
  fit_cmd->add_option("--xlabel", fa.xlabel, "Trajectory plot x-axis label");
  fit_cmd->add_option("--ylabel", fa.ylabel, "Trajectory plot y-axis label (default: outcome)");
  fit_cmd->add_flag("--force", fa.force, "Overwrite existing artifacts");
  fit_cmd->add_flag("--no-elapsed", fa.no_elapsed, "Omit the elapsed-time line from the report");

  InspectArgs ia;
  auto *ins = app.add_subcommand("inspect", "Histogram, spaghetti and yearly box plots");
  ins->add_option("--data", ia.data, "CSV file in long format")->required();
  ins->add_option("--id", ia.id, "Subject id column")->required();
  ins->add_option("--variable", ia.variable, "Variable to display")->required();
  ins->add_option("--time", ia.time, "Time column")->required();
  ins->add_option("--xlabel", ia.xlabel, "x-axis label");
  ins->add_option("--ylabel", ia.ylabel, "y-axis label (default: variable)");
  ins->add_option("--seed", ia.seed, "Seed for the spaghetti subject sample");
  ins->add_option("--bins", ia.bins, "Histogram bins")->check(CLI::PositiveNumber);
  ins->add_option("--sample", ia.sample, "Subjects in the spaghetti plot")
      ->check(CLI::PositiveNumber);
  ins->add_option("--out", ia.out, "Directory for artifacts");
  ins->add_option("--prefix", ia.prefix, "Artifact file prefix");
  ins->add_flag("--force", ia.force, "Overwrite existing artifacts");

  SimulateArgs sa;
  auto *sim = app.add_subcommand("simulate", "Write simulated datasets from a scenario file");
  sim->add_option("--config", sa.config, "Scenario configuration file")->required();
  sim->add_option("--scenario", sa.scenario, "Only this scenario (default: all)");
  sim->add_option("--out", sa.out, "Directory for datasets");
  sim->add_flag("--force", sa.force, "Overwrite existing files");

  BenchmarkArgs ba;
  auto *bench = app.add_subcommand("benchmark", "Run simulation scenarios and summarise accuracy");
  bench->add_option("--config", ba.config, "Scenario configuration file")->required();
  bench->add_option("--modes", ba.modes, "Initials modes, e.g. auto,naive (default: from config)");
  bench->add_option("--jobs", ba.jobs, "Parallel replications (default: from config)");
  bench->add_option("--out", ba.out, "Directory for summary files");
  bench->add_flag("--force", ba.force, "Overwrite existing files");

  DatacogArgs da;
  auto *cog = app.add_subcommand("make-datacog", "Write the demonstration cognition dataset");
  cog->add_option("--seed", da.seed, "Random seed");
  cog->add_option("--out", da.out, "Output CSV path");
  cog->add_flag("--force", da.force, "Overwrite an existing file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? Ok : Usage;
  }

  try {
    if (*fit_cmd)
      return cmd_fit(fa, out);
    if (*ins)
      return cmd_inspect(ia, out);
    if (*sim)
      return cmd_simulate(sa, out);
    if (*bench)
      return cmd_benchmark(ba, out);
    if (*cog)
      return cmd_make_datacog(da, out);
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return Usage;
}

} // namespace nlmix::cli
