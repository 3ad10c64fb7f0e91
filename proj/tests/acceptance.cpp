// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include "cli.hpp"
#include "nlmix/nlmix.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

using namespace nlmix;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(int n, bool ok, const std::string &what, const std::string &detail) {
  if (!ok)
    ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << what << " | " << detail
            << std::endl;
}

std::string num(double x, int digits = 6) {
  std::ostringstream o;
  o << std::setprecision(digits) << x;
  return o.str();
}

SubjectParams random_pmm_psi(std::mt19937_64 &rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<>(lo, hi)(rng); };
  return {{u(-3, 3), u(-0.5, 0.5), u(-1.0, 0.5), u(-15, -1)}};
}

// ---- 1 ---------------------------------------------------------------------

void criterion_1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int d = 0; d < 100; ++d) {
    const auto psi = random_pmm_psi(rng);
    for (int i = 0; i <= 1000; ++i) {
      const double t = -24.0 + 24.0 * i / 1000.0;
      worst = std::max(worst, std::abs(pmms_value(t, psi, 0.0) - pmma_value(t, psi)));
    }
  }
  const double rt = seconds_since(t0);
  verdict(1, worst < 1e-12 && rt < 1.0, "smooth model with v=0 equals abrupt model",
          "max abs diff " + num(worst) + ", " + num(rt, 3) + " s");
}

// ---- 2 ---------------------------------------------------------------------

void criterion_2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  double worst_local = 0, worst_mono = 0;
  auto rel = [](double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
  };
  for (int d = 0; d < 1000; ++d) {
    const auto psi = random_pmm_psi(rng);
    const double v = std::uniform_real_distribution<>(0.25, 6.0)(rng);
    const double a = psi[3], b = psi[3] + v;
    const double lambda = lambda_constraint(psi, v);
    const double want[4] = {lambda + psi[1] * a, psi[0] + psi[2] * b, psi[1], psi[2]};
    const auto poly = solve_transition(psi, v);
    const double local[4] = {poly.value(a), poly.value(b), poly.slope(a), poly.slope(b)};
    const auto m = poly.monomial();
    auto g = [&](double t) { return m[0] + t * (m[1] + t * (m[2] + t * m[3])); };
    auto dg = [&](double t) { return m[1] + t * (2 * m[2] + 3 * t * m[3]); };
    const double mono[4] = {g(a), g(b), dg(a), dg(b)};
    for (int c = 0; c < 4; ++c) {
      worst_local = std::max(worst_local, rel(local[c], want[c]));
      worst_mono = std::max(worst_mono, rel(mono[c], want[c]));
    }
  }
  const double rt = seconds_since(t0);
  verdict(2, worst_local < 1e-9 && worst_mono < 1e-9 && rt < 1.0,
          "transition cubic meets value and slope conditions at both ends",
          "max rel err " + num(worst_local) + " (local form), " + num(worst_mono) +
              " (monomial form), " + num(rt, 3) + " s");
}

// ---- 3 ---------------------------------------------------------------------

// Exact Gaussian marginal -2LL when psi4 carries no random effect: y_i ~
// N(f(alpha), Z Omega Z' + s2 I) with Z the derivative of the broken stick in
// (level, slope before, slope after) at the fixed changepoint.
double lmm_oracle(const LongitudinalDataset &d, const FittedModel &f) {
  const double l = f.params.coef[0](0), b1 = f.params.coef[1](0), b2 = f.params.coef[2](0),
               cp = f.params.coef[3](0);
  const Eigen::MatrixXd omega = f.params.omega;
  double total = 0;
  for (const auto &s : d.subjects) {
    const auto n = static_cast<Eigen::Index>(s.observations.size());
    Eigen::MatrixXd z(n, 3);
    Eigen::VectorXd r(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double t = s.observations[static_cast<std::size_t>(j)].time;
      const bool before = t < cp;
      z(j, 0) = 1.0;
      z(j, 1) = before ? t - cp : 0.0;
      z(j, 2) = before ? cp : t;
      const double mean = before ? l + b2 * cp + b1 * (t - cp) : l + b2 * t;
      r(j) = s.observations[static_cast<std::size_t>(j)].outcome - mean;
    }
    Eigen::MatrixXd v = z * omega * z.transpose();
    v.diagonal().array() += f.params.sigma2;
    const Eigen::LLT<Eigen::MatrixXd> llt(v);
    const Eigen::MatrixXd lm = llt.matrixL();
    const double logdet = 2.0 * lm.diagonal().array().log().sum();
    total += static_cast<double>(n) * std::log(2 * std::numbers::pi) + logdet +
             r.dot(llt.solve(r));
  }
  return total;
}

void criterion_3() {
  const auto t0 = Clock::now();
  auto sc = SimScenario::standard(ModelKind::PmmAbrupt);
  sc.n = 100;
  sc.seed = 303;
  sc.alpha = {-1.1, -0.1, -0.1, -4.25};
  sc.omega = Eigen::MatrixXd::Zero(4, 4);
  sc.omega(0, 0) = 0.8;
  sc.sigma = 0.28;
  const auto data = simulate_dataset(sc, 1);

  auto model = ModelSpec::standard(ModelKind::PmmAbrupt);
  model.random = {true, true, true, false};
  const auto f = fit(data, model, initial_values(data, model.kind), SaemConfig{});
  const double oracle = lmm_oracle(data, f);
  const double is_gap = std::abs(f.minus2ll_is - oracle);
  const double lin_rel = std::abs(f.minus2ll_lin - oracle) / std::abs(oracle);
  const double rt = seconds_since(t0);
  verdict(3, is_gap <= 2.0 && lin_rel <= 1e-4 && rt < 120.0,
          "importance-sampled and linearized -2LL agree with the exact LMM likelihood",
          "oracle " + num(oracle, 10) + ", IS " + num(f.minus2ll_is, 10) + " (gap " +
              num(is_gap, 4) + ", MC SE " + num(f.is_mc_se, 3) + "), linearized " +
              num(f.minus2ll_lin, 10) + " (rel " + num(lin_rel, 3) + "), slopes " +
              num(f.params.coef[1](0), 4) + "/" + num(f.params.coef[2](0), 4) + ", " +
              num(rt, 3) + " s");
}

// ---- 4, 5, 7 ---------------------------------------------------------------

SimScenario recovery_scenario(int replications) {
  auto sc = SimScenario::standard(ModelKind::Smm);
  sc.name = "smm_n500_cov1";
  sc.n = 500;
  sc.covariates = 1;
  sc.replications = replications;
  sc.seed = 404;
  return sc;
}

double truth_of(const SimScenario &sc, const CoefEstimate &c) {
  if (c.index == 0)
    return sc.alpha[static_cast<std::size_t>(c.param)];
  return c.index == 1 ? sc.beta1[static_cast<std::size_t>(c.param)]
                      : sc.beta2[static_cast<std::size_t>(c.param)];
}

struct RecoveryRun {
  BenchmarkResult result;
  double seconds = 0;
};

RecoveryRun criteria_4_5() {
  const auto t0 = Clock::now();
  const auto sc = recovery_scenario(10);
  BenchmarkOptions opt;
  opt.modes = {InitialsMode::Auto};
  opt.keep_fits = true;
  const auto res = run_benchmark({sc}, opt);
  const double rt_auto = seconds_since(t0);

  std::size_t converged = 0, all_within = 0;
  std::map<std::string, int> within;
  std::vector<std::string> names;
  double worst_z = 0;
  for (const auto &rep : res.replications) {
    if (!rep.converged) {
      std::cout << "  replication " << rep.replication << " failed: " << rep.error << '\n';
      continue;
    }
    ++converged;
    bool all = true;
    for (const auto &c : rep.fit->coefficients) {
      const double z = std::abs(c.estimate - truth_of(sc, c)) / c.se;
      const bool ok = std::isfinite(z) && z <= 3.0;
      if (!within.count(c.name))
        names.push_back(c.name);
      within[c.name] += ok ? 1 : 0;
      all = all && ok;
      worst_z = std::max(worst_z, std::isfinite(z) ? z : INFINITY);
    }
    all_within += all ? 1 : 0;
  }
  int min_within = 10;
  std::string per_coef;
  for (const auto &n : names) {
    min_within = std::min(min_within, within[n]);
    per_coef += " " + n + "=" + std::to_string(within[n]);
  }
  if (names.empty())
    min_within = 0;
  verdict(4, converged == 10 && min_within >= 9 && rt_auto < 3600.0,
          "SMM recovery, n=500, 1 covariate, 10 replications",
          std::to_string(converged) + "/10 converged; each coefficient within 3 SE in at least " +
              std::to_string(min_within) + "/10 (" + std::to_string(all_within) +
              "/10 with all jointly; worst |z| " + num(worst_z, 3) + ");" + per_coef + "; " +
              num(rt_auto, 4) + " s");

  const auto &summary = res.summaries.front();
  const double max_mse = summary.curve ? summary.curve->max() : NAN;
  verdict(5, std::isfinite(max_mse) && max_mse <= 0.1, "maximum MSE over t in [-24, 0]",
          "max MSE " + num(max_mse, 4) + " over " + std::to_string(summary.converged) + " fits");
  return {res, rt_auto};
}

// Naive arm on the same datasets as the first five automatic replications.
void criterion_7(const RecoveryRun &run) {
  const auto &res = run.result;
  const auto t1 = Clock::now();
  auto sc5 = recovery_scenario(5);
  BenchmarkOptions naive_opt;
  naive_opt.modes = {InitialsMode::Naive};
  const auto naive = run_benchmark({sc5}, naive_opt);
  const double rt_naive = seconds_since(t1);
  double auto_mean = 0;
  int auto_n = 0;
  for (const auto &rep : res.replications)
    if (rep.replication <= 5 && rep.converged) {
      auto_mean += rep.max_mse;
      ++auto_n;
    }
  auto_mean /= std::max(auto_n, 1);
  const auto &ns = naive.summaries.front();
  std::string naive_detail;
  for (const auto &rep : naive.replications)
    naive_detail += " r" + std::to_string(rep.replication) + "=" +
                    (rep.converged ? num(rep.max_mse, 3) : "failed(" + rep.error + ")");
  const double auto_time_5 = run.seconds / 2.0;
  verdict(7, ns.converged > 0 && ns.mean_max_mse > auto_mean && auto_time_5 + rt_naive < 5400.0,
          "naive starts give larger mean max-MSE than automatic starts",
          "naive " + num(ns.mean_max_mse, 4) + " over " + std::to_string(ns.converged) +
              "/5 converged, auto " + num(auto_mean, 4) + " over " + std::to_string(auto_n) +
              "/5;" + naive_detail + "; " + num(rt_naive, 4) + " s");
}

// ---- 6 ---------------------------------------------------------------------

void criterion_6() {
  auto sc = SimScenario::standard(ModelKind::Smm);
  sc.n = 500;
  sc.covariates = 2;
  sc.seed = 606;
  const auto data = simulate_dataset(sc, 1);
  const auto t0 = Clock::now();
  const auto f = fit(data, sc.model_spec(), initial_values(data, sc.kind), SaemConfig{});
  const double rt = seconds_since(t0);
  verdict(6, rt < 360.0, "SMM fit, n=500, 2 covariates per parameter, under 360 s",
          num(rt, 4) + " s, " + std::to_string(f.coefficients.size()) +
              " fixed effects, no calibration factor applied");
}

// ---- 8 ---------------------------------------------------------------------

std::vector<std::string> report_section(const std::string &report, const std::string &title) {
  std::vector<std::string> lines, out;
  std::istringstream in(report);
  for (std::string l; std::getline(in, l);)
    lines.push_back(l);
  for (std::size_t i = 0; i < lines.size(); ++i)
    if (lines[i].find("  " + title + "  ") != std::string::npos) {
      for (std::size_t j = i + 2; j < lines.size() && lines[j].rfind("-----", 0) != 0; ++j)
        out.push_back(lines[j]);
      break;
    }
  return out;
}

std::string last_field(const std::string &line) {
  std::istringstream in(line);
  std::string w, last;
  while (in >> w)
    last = w;
  return last;
}

FittedModel hand_fit(ModelKind kind) {
  FittedModel f;
  f.model = ModelSpec::standard(kind);
  f.id_name = "ID";
  f.outcome_name = "cognition";
  f.time_name = "time";
  f.n_subjects = 1200;
  f.n_observations = 9000;
  const auto &names = parameter_names(kind);
  for (int k = 0; k < 4; ++k)
    f.coefficients.push_back({names[static_cast<std::size_t>(k)], k, 0, "", 1.0, 0.1});
  f.sigma = 0.28;
  f.sigma_se = 0.003;
  f.n_params = 8;
  f.start = naive_start(kind);
  return f;
}

void criterion_8() {
  auto smm = hand_fit(ModelKind::Smm);
  smm.params.omega.resize(2, 2);
  smm.params.omega << 0.146, 0.049, 0.049, 1.283;
  smm.variances = {{"omega2.first.level", 0, 0, 0.146, 0.0071},
                   {"omega2.last.level", 1, 1, 1.283, 0.0556},
                   {"cov.last.level.first.level", 0, 1, 0.049, 0.0143}};
  const auto corr = report_section(render_report(smm), "Correlation matrix of random effects");
  const std::string off = corr.size() == 3 ? last_field(corr[1]) : "?";

  auto pmm = hand_fit(ModelKind::PmmAbrupt);
  pmm.params.omega = Eigen::MatrixXd::Zero(4, 4);
  pmm.params.omega.diagonal() << 1.07196, 0.00062, 0.03830, 0.58980;
  pmm.params.omega(1, 2) = pmm.params.omega(2, 1) = 0.00378;
  pmm.variances = {{"omega2.last.level", 0, 0, 1.07196, 4.7e-02},
                   {"omega2.slope1", 1, 1, 0.00062, 7.4e-05},
                   {"omega2.slope2", 2, 2, 0.03830, 2.0e-03},
                   {"omega2.changepoint", 3, 3, 0.58980, 7.9e-02},
                   {"cov.slope1.slope2", 1, 2, 0.00378, 3.2e-04}};
  const auto var = report_section(render_report(pmm), "Variance of random effects");
  const std::vector<std::string> want{"4.4", "11.9", "5.2", "13.4", "8.4"};
  std::vector<std::string> got;
  for (std::size_t i = 1; i < var.size(); ++i)
    got.push_back(last_field(var[i]));
  std::string shown;
  for (const auto &g : got)
    shown += (shown.empty() ? "" : ", ") + g;
  verdict(8, off == "0.11" && got == want, "report correlation and CV% fields",
          "correlation " + off + "; CV% " + shown + " (expected 4.4, 11.9, 5.2, 13.4, 8.4)");
}

// ---- 9 ---------------------------------------------------------------------

void criterion_9() {
  const auto t0 = Clock::now();
  auto sc = SimScenario::standard(ModelKind::PmmAbrupt);
  sc.alpha = {-1.103, -0.017, -0.249, -4.0};
  sc.omega = Eigen::MatrixXd::Zero(4, 4);
  sc.sigma = 0.0;
  sc.n = 200;
  sc.seed = 909;
  const auto data = simulate_dataset(sc, 1);
  QuintileSplit q;
  const auto s = initials_pmm(data, &q);
  double width = NAN;
  for (int k = 0; k < 5; ++k)
    if (q.lower[k] <= -4.0 && -4.0 <= q.upper[k])
      width = q.upper[k] - q.lower[k];
  const double cp = s.values[3];
  const bool near = std::abs(cp + 4.0) <= width;
  const bool order = std::abs(s.values[2]) > std::abs(s.values[1]);
  const double rt = seconds_since(t0);
  verdict(9, near && order && !s.fallback && rt < 5.0, "automatic piecewise starts",
          "changepoint start " + num(cp, 5) + " (quintile width " + num(width, 4) +
              "), slope1 " + num(s.values[1], 4) + ", slope2 " + num(s.values[2], 4) + ", " +
              num(rt, 3) + " s");
}

// ---- 10 --------------------------------------------------------------------

std::map<std::string, std::string> pipeline(const fs::path &dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "det.conf") << "scenario = det\nmodel = smm\nn = 200\ncovariates = 1\n"
                                     "replications = 1\nseed = 1010\n";
  std::ostringstream out, err;
  const auto data = (dir / "det_r1.csv").string();
  if (int c = cli::run_cli({"simulate", "--config", (dir / "det.conf").string(), "--out",
                            dir.string()},
                           out, err);
      c != 0)
    throw std::runtime_error("simulate failed: " + err.str());
  if (int c = cli::run_cli({"fit", "--model", "smm", "--data", data, "--id", "ID", "--outcome",
                            "y", "--time", "time", "--var-all", "ageDeath90", "--traj-marg",
                            "--trace", "--psi", "--no-elapsed", "--report-file", "report.txt",
                            "--out", dir.string()},
                           out, err);
      c != 0)
    throw std::runtime_error("fit failed: " + err.str());
  std::map<std::string, std::string> files;
  for (const auto &e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    files[e.path().filename().string()] = buf.str();
  }
  files["<stdout>"] = out.str();
  return files;
}

void criterion_10() {
  const auto t0 = Clock::now();
  const auto root = fs::temp_directory_path() /
                    ("nlmix_acceptance_" + std::to_string(std::random_device{}()));
  std::string detail;
  bool ok = false;
  try {
    const auto a = pipeline(root / "a");
    const auto b = pipeline(root / "b");
    std::size_t differing = 0, bytes = 0;
    for (const auto &[name, content] : a) {
      bytes += content.size();
      auto it = b.find(name);
      std::string other = it == b.end() ? "" : it->second;
      if (name == "<stdout>") {
        // The CLI echoes the output directory, which differs between runs.
        const auto ra = (root / "a").string(), rb = (root / "b").string();
        for (std::size_t p; (p = other.find(rb)) != std::string::npos;)
          other.replace(p, rb.size(), ra);
      }
      if (it == b.end() || other != content)
        ++differing;
    }
    ok = differing == 0 && a.size() == b.size() && a.count("report.txt") == 1;
    detail = std::to_string(a.size()) + " outputs, " + std::to_string(bytes) + " bytes, " +
             std::to_string(differing) + " differing";
  } catch (const std::exception &e) {
    detail = e.what();
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  const double rt = seconds_since(t0);
  verdict(10, ok && rt < 600.0, "simulate, fit and report twice with fixed seeds",
          detail + ", " + num(rt, 4) + " s");
}

} // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  const auto recovery = criteria_4_5();
  criterion_6();
  criterion_7(recovery);
  criterion_8();
  criterion_9();
  criterion_10();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
