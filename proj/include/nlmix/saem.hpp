#pragma once

#include "nlmix/dataset.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/initials.hpp"
#include "nlmix/layout.hpp"
#include "nlmix/likelihood.hpp"
#include "nlmix/mcmc.hpp"
#include "nlmix/stats.hpp"
#include "nlmix/structural.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace nlmix {

struct SaemConfig {
  int k1 = 300;             // exploration iterations (step size 1)
  int k2 = 100;             // smoothing iterations (decreasing step size)
  int mcmc_steps = 3;       // Metropolis transitions per subject per iteration
  double step_exponent = 1.0;
  std::uint64_t seed = 20220901;
  int is_samples = 1000;    // importance-sampling draws per subject
  double proposal_scale = 1.0;
  int cond_burn = 50;       // final conditional pass at the estimate
  int cond_samples = 200;
  int gn_steps = 3;         // damped Gauss-Newton steps for parameters without random effects

  void check() const {
    if (k1 < 1 || k2 < 1)
      throw ConfigError("k1 and k2 must be at least 1");
    if (mcmc_steps < 1)
      throw ConfigError("mcmc_steps must be at least 1");
    if (!(step_exponent > 0.5 && step_exponent <= 1.0))
      throw ConfigError("step exponent must lie in (0.5, 1]");
    if (is_samples < 100)
      throw ConfigError("is_samples must be at least 100");
    if (!(proposal_scale > 0.0))
      throw ConfigError("proposal_scale must be positive");
    if (cond_samples < 2 || cond_burn < 0)
      throw ConfigError("conditional pass needs at least 2 samples");
  }
};

struct CoefEstimate {
  std::string name;      // "last.level" or "beta_x(last.level)"
  int param = 0;         // structural index 0..3
  int index = 0;         // 0 = intercept, j = j-th covariate
  std::string covariate; // empty for the intercept
  double estimate = 0.0;
  double se = NAN;
};

struct VarianceEstimate {
  std::string name; // "omega2.<param>" or "cov.<param>.<param>"
  int r = 0, s = 0; // eta positions
  double estimate = 0.0;
  double se = NAN;
};

struct SubjectEstimate {
  std::string id;
  SubjectParams psi;   // conditional mean of psi
  Eigen::VectorXd eta; // conditional mean of eta
};

struct FittedModel {
  ModelSpec model;
  std::string id_name, outcome_name, time_name;
  PopulationParams params;
  std::vector<CoefEstimate> coefficients;
  std::vector<VarianceEstimate> variances;
  double sigma = 0.0, sigma_se = NAN;
  Eigen::MatrixXd theta_cov; // covariance of (coefficients, free omega, sigma^2)
  std::string se_method;

  double minus2ll_lin = 0.0, aic_lin = 0.0, bic_lin = 0.0;
  double minus2ll_is = 0.0, aic_is = 0.0, bic_is = 0.0;
  double is_mc_se = 0.0;
  int n_params = 0;

  std::vector<std::string> trace_names;
  std::vector<std::vector<double>> trace; // row k: theta at the start of iteration k

  std::vector<SubjectEstimate> subjects;
  std::vector<ConditionalMoments> conditional;
  std::vector<CovariateMap> subject_covariates;
  std::pair<double, double> time_range{0.0, 0.0};
  std::size_t n_subjects = 0, n_observations = 0, dropped_rows = 0;

  StartValues start;
  SaemConfig config;
  std::vector<std::string> warnings;
  double elapsed_seconds = 0.0;
};

// ---- Wald tests ------------------------------------------------------------

/// Two-sided Wald p-value.
inline double wald_p(double estimate, double se) {
  if (!(se > 0.0) || !std::isfinite(se))
    throw InvalidSE("InvalidSE: standard error must be positive");
  return std::erfc(std::abs(estimate / se) / std::sqrt(2.0));
}

inline std::string format_pvalue(double p) {
  if (!std::isfinite(p))
    return "NA";
  if (p < 1e-4)
    return "P<.0001";
  return fixed(p, 3);
}

inline std::string wald_pvalue(double estimate, double se) {
  return format_pvalue(wald_p(estimate, se));
}

// ---- set-up helpers --------------------------------------------------------

namespace detail {

inline double sample_sd(const std::vector<double> &v) {
  if (v.size() < 2)
    return 0.0;
  const double m = mean(v);
  double s = 0;
  for (double x : v)
    s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline void check_design(const ModelLayout &layout, const std::vector<SubjectData> &subjects) {
  for (int k = 0; k < 4; ++k) {
    const int d = layout.coef_count[k];
    if (d == 1)
      continue;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(subjects.size()), d);
    for (std::size_t i = 0; i < subjects.size(); ++i)
      x.row(static_cast<Eigen::Index>(i)) = subjects[i].x[k].transpose();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < d)
      throw SingularDesign("SingularDesign: covariates of " + layout.param_name(k) +
                           " are collinear with each other or with the intercept");
  }
}

} // namespace detail

/// Population parameters at the start of SAEM: intercepts from the starts,
/// covariate effects zero, Omega diagonal with SD half the parameter's size
/// (or its data scale), sigma^2 the outcome variance.
inline PopulationParams initial_params(const ModelLayout &layout,
                                       const LongitudinalDataset &data,
                                       const StartValues &start) {
  PopulationParams p;
  const auto [tmin, tmax] = data.time_range();
  std::vector<double> ys, ts;
  for (const auto &s : data.subjects)
    for (const auto &o : s.observations) {
      ys.push_back(o.outcome);
      ts.push_back(o.time);
    }
  const double sdy = std::max(detail::sample_sd(ys), 1e-6);
  const double sdt = std::max(detail::sample_sd(ts), 1e-6);
  for (int k = 0; k < 4; ++k) {
    p.coef[k] = Eigen::VectorXd::Zero(layout.coef_count[k]);
    p.coef[k](0) = start.values[k];
  }
  if (is_piecewise(layout.spec.kind))
    p.coef[3](0) = std::clamp(p.coef[3](0), tmin, tmax);
  const int q = layout.q();
  p.omega = Eigen::MatrixXd::Zero(q, q);
  for (int r = 0; r < q; ++r) {
    const int k = layout.random_params[r];
    double scale = 1.0;
    switch (parameter_role(layout.spec.kind, k)) {
    case ParamRole::Level: scale = sdy; break;
    case ParamRole::Slope: scale = sdy / sdt; break;
    case ParamRole::Time: scale = sdt; break;
    case ParamRole::Shape: scale = 1.0; break;
    }
    const double sd = 0.5 * std::max(std::abs(start.values[k]), scale);
    p.omega(r, r) = sd * sd;
  }
  p.sigma2 = std::max(sdy * sdy, 1e-10);
  return p;
}

// ---- fixed-only parameters -------------------------------------------------

namespace detail {

/// Damped Gauss-Newton (Levenberg-Marquardt) on the coefficients of
/// parameters without random effects, holding the sampled random-effect
/// coordinates fixed. Returns the improved coefficients in layout order.
inline std::vector<Eigen::VectorXd>
fixed_only_update(const ModelLayout &layout, const std::vector<SubjectData> &subjects,
                  const PopulationParams &params, const std::vector<ChainState> &chains,
                  int iterations) {
  std::vector<Eigen::VectorXd> coef;
  int dim = 0;
  std::vector<int> offs;
  for (int k : layout.fixed_params) {
    coef.push_back(params.coef[k]);
    offs.push_back(dim);
    dim += layout.coef_count[k];
  }
  if (dim == 0)
    return coef;

  auto with = [&](const std::vector<Eigen::VectorXd> &c) {
    PopulationParams p = params;
    for (std::size_t f = 0; f < layout.fixed_params.size(); ++f)
      p.coef[layout.fixed_params[f]] = c[f];
    return p;
  };
  auto total_ss = [&](const PopulationParams &p) {
    double ss = 0;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      ss += subject_ss(layout, subjects[i],
                       full_psi(layout, mean_psi(subjects[i], p), chains[i].phi));
      if (!std::isfinite(ss))
        return static_cast<double>(INFINITY);
    }
    return ss;
  };

  double lambda = 1e-3;
  PopulationParams cur = with(coef);
  double ss_cur = total_ss(cur);
  if (!std::isfinite(ss_cur))
    return coef;
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd jtr = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd row(dim);
    try {
      for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto &s = subjects[i];
        const SubjectParams psi = full_psi(layout, mean_psi(s, cur), chains[i].phi);
        for (std::size_t j = 0; j < s.n(); ++j) {
          const double r = s.y[j] - structural_value(layout.spec.kind, s.t[j], psi,
                                                     layout.spec.transition_width);
          const auto g = structural_gradient(layout.spec.kind, s.t[j], psi,
                                             layout.spec.transition_width);
          for (std::size_t f = 0; f < layout.fixed_params.size(); ++f) {
            const int k = layout.fixed_params[f];
            row.segment(offs[f], layout.coef_count[k]) = g[k] * s.x[k];
          }
          jtj.selfadjointView<Eigen::Lower>().rankUpdate(row);
          jtr += r * row;
        }
      }
    } catch (const DomainError &) {
      break;
    }
    jtj = jtj.selfadjointView<Eigen::Lower>();
    if (!jtj.allFinite() || !jtr.allFinite())
      break;
    const double ridge = 1e-12 * (1.0 + jtj.diagonal().maxCoeff());
    bool improved = false;
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal() + Eigen::VectorXd::Constant(dim, ridge);
      const Eigen::VectorXd delta = a.ldlt().solve(jtr);
      if (!delta.allFinite()) {
        lambda *= 10;
        continue;
      }
      std::vector<Eigen::VectorXd> trial = coef;
      for (std::size_t f = 0; f < trial.size(); ++f)
        trial[f] += delta.segment(offs[f], trial[f].size());
      const PopulationParams tp = with(trial);
      const double ss = total_ss(tp);
      if (ss < ss_cur) {
        coef = trial;
        cur = tp;
        ss_cur = ss;
        lambda = std::max(lambda / 10.0, 1e-9);
        improved = true;
        break;
      }
      lambda *= 10;
    }
    if (!improved)
      break;
  }
  return coef;
}

// ---- Fisher information ----------------------------------------------------

/// Symmetric unit matrix of a free covariance entry.
inline Eigen::MatrixXd unit_entry(int q, std::pair<int, int> e) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(q, q);
  m(e.first, e.second) = 1.0;
  m(e.second, e.first) = 1.0;
  return m;
}

/// Stochastic approximation of the observed information (Louis identity):
///   I = -E[H + g g'] + sum_i E[g_i] E[g_i]'
/// with complete-data score g and Hessian H, averaged over phase 2.
struct LouisAccumulator {
  int p = 0;
  std::vector<Eigen::VectorXd> d; // per-subject mean score
  Eigen::MatrixXd g;              // mean of sum_i (H_i + g_i g_i')

  LouisAccumulator(int n_params, std::size_t n_subjects)
      : p(n_params), d(n_subjects, Eigen::VectorXd::Zero(n_params)),
        g(Eigen::MatrixXd::Zero(n_params, n_params)) {}

  void update(const ModelLayout &layout, const std::vector<SubjectData> &subjects,
              const PopulationParams &params, const std::vector<ChainState> &chains,
              double gamma) {
    const int q = layout.q();
    const int nc = layout.n_coef, ne = layout.n_free_omega(), is2 = p - 1;
    const double s2 = params.sigma2;
    Eigen::MatrixXd prec;
    std::vector<Eigen::MatrixXd> e(ne);
    Eigen::MatrixXd trace_term = Eigen::MatrixXd::Zero(ne, ne);
    if (q > 0) {
      prec = params.omega.ldlt().solve(Eigen::MatrixXd::Identity(q, q));
      for (int a = 0; a < ne; ++a)
        e[a] = unit_entry(q, layout.free_omega[a]);
      for (int a = 0; a < ne; ++a)
        for (int b = 0; b < ne; ++b)
          trace_term(a, b) = 0.5 * (prec * e[a] * prec * e[b]).trace();
    }
    Eigen::MatrixXd sum_h = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd score(p);
    Eigen::MatrixXd h(p, p);
    Eigen::VectorXd f;
    Eigen::MatrixXd grad;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      const auto &s = subjects[i];
      const SubjectParams mean = mean_psi(s, params);
      const SubjectParams psi = full_psi(layout, mean, chains[i].phi);
      score.setZero();
      h.setZero();
      if (q > 0) {
        const Eigen::VectorXd eta = chains[i].phi - random_part(layout, mean);
        const Eigen::VectorXd w = prec * eta;
        std::vector<Eigen::VectorXd> pew(ne);
        for (int a = 0; a < ne; ++a)
          pew[a] = prec * (e[a] * w);
        for (int r = 0; r < q; ++r) {
          const int k = layout.random_params[r];
          const int o = layout.coef_offset[k], dk = layout.coef_count[k];
          score.segment(o, dk) = w(r) * s.x[k];
          for (int r2 = 0; r2 < q; ++r2) {
            const int k2 = layout.random_params[r2];
            h.block(o, layout.coef_offset[k2], dk, layout.coef_count[k2]) =
                -prec(r, r2) * s.x[k] * s.x[k2].transpose();
          }
          for (int a = 0; a < ne; ++a) {
            h.block(o, nc + a, dk, 1) = -pew[a](r) * s.x[k];
            h.block(nc + a, o, 1, dk) = -pew[a](r) * s.x[k].transpose();
          }
        }
        for (int a = 0; a < ne; ++a) {
          score(nc + a) = 0.5 * w.dot(e[a] * w) - 0.5 * (prec * e[a]).trace();
          for (int b = 0; b < ne; ++b)
            h(nc + a, nc + b) = trace_term(a, b) - w.dot(e[a] * prec * e[b] * w);
        }
      }
      predict_with_gradient(layout, s, psi, f, grad);
      double ss = 0;
      const auto n = static_cast<double>(s.n());
      for (std::size_t j = 0; j < s.n(); ++j) {
        const double r = s.y[j] - f(static_cast<Eigen::Index>(j));
        ss += r * r;
        for (std::size_t fa = 0; fa < layout.fixed_params.size(); ++fa) {
          const int ka = layout.fixed_params[fa];
          const int oa = layout.coef_offset[ka], da = layout.coef_count[ka];
          const Eigen::VectorXd ga = grad(static_cast<Eigen::Index>(j), ka) * s.x[ka];
          score.segment(oa, da) += r / s2 * ga;
          h.block(is2, oa, 1, da) -= r / (s2 * s2) * ga.transpose();
          h.block(oa, is2, da, 1) -= r / (s2 * s2) * ga;
          for (std::size_t fb = 0; fb < layout.fixed_params.size(); ++fb) {
            const int kb = layout.fixed_params[fb];
            const Eigen::VectorXd gb = grad(static_cast<Eigen::Index>(j), kb) * s.x[kb];
            h.block(oa, layout.coef_offset[kb], da, layout.coef_count[kb]) -=
                ga * gb.transpose() / s2;
          }
        }
      }
      score(is2) = -n / (2 * s2) + ss / (2 * s2 * s2);
      h(is2, is2) = n / (2 * s2 * s2) - ss / (s2 * s2 * s2);

      d[i] += gamma * (score - d[i]);
      sum_h += h + score * score.transpose();
    }
    g += gamma * (sum_h - g);
  }

  Eigen::MatrixXd information() const {
    Eigen::MatrixXd info = -g;
    for (const auto &di : d)
      info += di * di.transpose();
    return 0.5 * (info + info.transpose());
  }
};

/// Expected information of the model linearized around eta_hat.
inline Eigen::MatrixXd linearized_information(const ModelLayout &layout,
                                              const std::vector<SubjectData> &subjects,
                                              const PopulationParams &params,
                                              const std::vector<Eigen::VectorXd> &eta_hat) {
  const int q = layout.q(), nc = layout.n_coef, ne = layout.n_free_omega();
  const int p = layout.n_params();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd f;
  Eigen::MatrixXd grad;
  std::vector<Eigen::MatrixXd> e(ne);
  for (int a = 0; a < ne; ++a)
    e[a] = unit_entry(q, layout.free_omega[a]);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto &s = subjects[i];
    const SubjectParams mean = mean_psi(s, params);
    const Eigen::VectorXd eta = q > 0 ? eta_hat[i] : Eigen::VectorXd();
    const SubjectParams psi = full_psi(layout, mean, random_part(layout, mean) + eta);
    predict_with_gradient(layout, s, psi, f, grad);
    const auto n = static_cast<Eigen::Index>(s.n());
    Eigen::MatrixXd dm(n, nc); // d mean / d coefficients
    for (int k = 0; k < 4; ++k)
      dm.middleCols(layout.coef_offset[k], layout.coef_count[k]) = grad.col(k) * s.x[k].transpose();
    Eigen::MatrixXd dz(n, q);
    for (int r = 0; r < q; ++r)
      dz.col(r) = grad.col(layout.random_params[r]);
    Eigen::MatrixXd v = params.sigma2 * Eigen::MatrixXd::Identity(n, n);
    if (q > 0)
      v += dz * params.omega * dz.transpose();
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
    const Eigen::MatrixXd vinv = ldlt.solve(Eigen::MatrixXd::Identity(n, n));
    info.topLeftCorner(nc, nc) += dm.transpose() * vinv * dm;
    std::vector<Eigen::MatrixXd> dv(ne + 1);
    for (int a = 0; a < ne; ++a)
      dv[a] = vinv * (dz * e[a] * dz.transpose());
    dv[ne] = vinv;
    for (int a = 0; a <= ne; ++a)
      for (int b = 0; b <= ne; ++b)
        info(nc + a, nc + b) += 0.5 * (dv[a] * dv[b]).trace();
  }
  return info;
}

/// Inverse of an information matrix, or an empty matrix when it is not
/// positive definite.
inline Eigen::MatrixXd invert_information(const Eigen::MatrixXd &info) {
  if (!info.allFinite())
    return {};
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success)
    return {};
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
  if (!cov.allFinite() || (cov.diagonal().array() <= 0.0).any())
    return {};
  return cov;
}

inline std::vector<double> theta_row(const ModelLayout &layout, const PopulationParams &p) {
  std::vector<double> row;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < layout.coef_count[k]; ++j)
      row.push_back(p.coef[k](j));
  for (const auto &[r, s] : layout.free_omega)
    row.push_back(p.omega(r, s));
  row.push_back(p.sigma());
  return row;
}

} // namespace detail

// ---- the fit ---------------------------------------------------------------

/// Maximum-likelihood fit by SAEM.
inline FittedModel fit(const LongitudinalDataset &data, const ModelSpec &model,
                       const StartValues &start, const SaemConfig &config = {}) {
  const auto clock_start = std::chrono::steady_clock::now();
  config.check();
  const ModelLayout layout(model);
  const bool same_family = is_piecewise(start.kind) == is_piecewise(model.kind);
  if (!same_family)
    throw UsageError("start values were built for a different model family");
  check_start(start);
  for (const auto &name : model.all_covariates())
    if (!data.has_covariate(name))
      throw MissingCovariate(name);

  const auto subjects = subject_data(data, layout);
  detail::check_design(layout, subjects);
  const auto [tmin, tmax] = data.time_range();
  const int q = layout.q();
  const auto n_subj = subjects.size();
  double n_obs = 0;
  for (const auto &s : subjects)
    n_obs += static_cast<double>(s.n());

  PopulationParams params = initial_params(layout, data, start);
  for (const auto &s : subjects)
    if (!std::isfinite(subject_ss(layout, s, mean_psi(s, params))))
      throw DomainError("DomainError: the SMM curve is undefined at the start values "
                        "(t/midpoint < 0 with a non-integer Hill slope); give the midpoint "
                        "start the sign of the observation times");

  // Chains start at the population mean.
  std::vector<ChainState> chains(n_subj);
  std::vector<Rng> rngs;
  rngs.reserve(n_subj);
  for (std::size_t i = 0; i < n_subj; ++i) {
    chains[i].phi = random_part(layout, mean_psi(subjects[i], params));
    if (is_piecewise(model.kind) && layout.rand_pos[3] >= 0)
      chains[i].phi(layout.rand_pos[3]) = std::clamp(chains[i].phi(layout.rand_pos[3]), tmin, tmax);
    rngs.push_back(make_rng(config.seed, 1, i));
  }
  KernelScales scales{config.proposal_scale, std::vector<double>(q, config.proposal_scale)};

  Eigen::MatrixXd s1(static_cast<Eigen::Index>(n_subj), q);
  for (std::size_t i = 0; i < n_subj; ++i)
    s1.row(static_cast<Eigen::Index>(i)) = chains[i].phi.transpose();
  Eigen::MatrixXd s2 = s1.transpose() * s1;
  double sres = 0;
  const Eigen::VectorXd omega_floor =
      q > 0 ? Eigen::VectorXd(params.omega.diagonal() * 1e-10 + Eigen::VectorXd::Constant(q, 1e-12))
            : Eigen::VectorXd();

  FittedModel out;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < layout.coef_count[k]; ++j)
      out.trace_names.push_back(layout.coef_name(k, j));
  for (int e = 0; e < layout.n_free_omega(); ++e)
    out.trace_names.push_back(layout.omega_name(e));
  out.trace_names.push_back("sigma");

  detail::LouisAccumulator louis(layout.n_params(), n_subj);
  const int total = config.k1 + config.k2;
  for (int iter = 1; iter <= total; ++iter) {
    auto row = detail::theta_row(layout, params);
    for (double v : row)
      if (!std::isfinite(v) || std::abs(v) > 1e8)
        throw NonConvergence("NonConvergence: parameter trace diverged at iteration " +
                             std::to_string(iter));
    out.trace.push_back(std::move(row));

    // Simulation step.
    const SamplerContext ctx(layout, params, tmin, tmax);
    AcceptCounts counts(q);
    std::vector<SubjectParams> means(n_subj);
    for (std::size_t i = 0; i < n_subj; ++i) {
      means[i] = mean_psi(subjects[i], params);
      refresh(ctx, subjects[i], means[i], chains[i]);
      mcmc_transitions(ctx, subjects[i], means[i], chains[i], scales, config.mcmc_steps, rngs[i],
                       counts);
    }
    if (iter <= config.k1)
      adapt_scales(scales, counts);
    const double gamma =
        iter <= config.k1 ? 1.0 : std::pow(static_cast<double>(iter - config.k1), -config.step_exponent);
    if (iter > config.k1)
      louis.update(layout, subjects, params, chains, gamma);

    // Parameters without random effects: Gauss-Newton on the current sample,
    // then stochastic-approximation averaging.
    const auto fixed_new = detail::fixed_only_update(layout, subjects, params, chains, config.gn_steps);
    for (std::size_t f = 0; f < layout.fixed_params.size(); ++f) {
      auto &c = params.coef[layout.fixed_params[f]];
      c += gamma * (fixed_new[f] - c);
    }

    // Stochastic approximation of the sufficient statistics.
    double ss_sum = 0;
    Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(q, q);
    for (std::size_t i = 0; i < n_subj; ++i) {
      const auto &phi = chains[i].phi;
      ss_sum += subject_ss(layout, subjects[i], full_psi(layout, mean_psi(subjects[i], params), phi));
      outer += phi * phi.transpose();
      s1.row(static_cast<Eigen::Index>(i)) += gamma * (phi.transpose() - s1.row(static_cast<Eigen::Index>(i)));
    }
    s2 += gamma * (outer - s2);
    sres = iter == 1 ? ss_sum : sres + gamma * (ss_sum - sres);

    // Maximisation step.
    if (q > 0) {
      const Eigen::MatrixXd prec = ctx.precision;
      int dr = 0;
      std::vector<int> roff(q);
      for (int r = 0; r < q; ++r) {
        roff[r] = dr;
        dr += layout.coef_count[layout.random_params[r]];
      }
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dr, dr);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(dr);
      Eigen::MatrixXd x(q, dr);
      for (std::size_t i = 0; i < n_subj; ++i) {
        x.setZero();
        for (int r = 0; r < q; ++r) {
          const int k = layout.random_params[r];
          x.block(r, roff[r], 1, layout.coef_count[k]) = subjects[i].x[k].transpose();
        }
        a += x.transpose() * prec * x;
        b += x.transpose() * (prec * s1.row(static_cast<Eigen::Index>(i)).transpose());
      }
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      if (ldlt.info() != Eigen::Success)
        throw SingularDesign("SingularDesign: fixed-effects system is singular");
      const Eigen::VectorXd theta_r = ldlt.solve(b);
      if (!theta_r.allFinite())
        throw NonConvergence("NonConvergence: fixed-effects update is not finite at iteration " +
                             std::to_string(iter));
      for (int r = 0; r < q; ++r) {
        const int k = layout.random_params[r];
        params.coef[k] = theta_r.segment(roff[r], layout.coef_count[k]);
      }

      Eigen::MatrixXd om = s2;
      for (std::size_t i = 0; i < n_subj; ++i) {
        const Eigen::VectorXd m = random_part(layout, mean_psi(subjects[i], params));
        const Eigen::VectorXd si = s1.row(static_cast<Eigen::Index>(i)).transpose();
        om -= si * m.transpose() + m * si.transpose() - m * m.transpose();
      }
      om /= static_cast<double>(n_subj);
      apply_mask(layout, om);
      for (int r = 0; r < q; ++r) {
        double v = std::max(om(r, r), omega_floor(r));
        if (iter <= config.k1 / 2)
          v = std::max(v, 0.95 * params.omega(r, r));
        om(r, r) = v;
      }
      if (layout.has_covariance()) {
        const auto [ra, rb] = layout.cov_pair();
        const double lim = 0.999 * std::sqrt(om(ra, ra) * om(rb, rb));
        om(ra, rb) = om(rb, ra) = std::clamp(om(ra, rb), -lim, lim);
      }
      params.omega = om;
    }
    double s2new = std::max(sres / n_obs, 1e-10);
    if (iter <= config.k1 / 2)
      s2new = std::max(s2new, 0.95 * params.sigma2);
    params.sigma2 = s2new;
  }
  {
    const auto row = detail::theta_row(layout, params);
    for (double v : row)
      if (!std::isfinite(v) || std::abs(v) > 1e8)
        throw NonConvergence("NonConvergence: final estimate is not finite");
  }

  // Conditional distribution of eta at the estimate.
  out.conditional = conditional_pass(layout, subjects, params, tmin, tmax, chains, scales,
                                     config.mcmc_steps, config.cond_burn, config.cond_samples,
                                     config.seed);
  std::vector<Eigen::VectorXd> eta_hat(n_subj);
  for (std::size_t i = 0; i < n_subj; ++i) {
    eta_hat[i] = out.conditional[i].mean;
    const SubjectParams mean = mean_psi(subjects[i], params);
    out.subjects.push_back(
        {subjects[i].id, full_psi(layout, mean, random_part(layout, mean) + eta_hat[i]), eta_hat[i]});
    out.subject_covariates.push_back(subjects[i].covariates);
  }

  // Standard errors.
  out.theta_cov = detail::invert_information(louis.information());
  out.se_method = "stochastic approximation (Louis)";
  if (out.theta_cov.size() == 0) {
    out.theta_cov =
        detail::invert_information(detail::linearized_information(layout, subjects, params, eta_hat));
    out.se_method = "linearization (fallback)";
    out.warnings.push_back("stochastic-approximation information matrix not positive definite; "
                           "standard errors from the linearized model");
    if (out.theta_cov.size() == 0) {
      out.se_method = "unavailable";
      out.warnings.push_back("information matrix singular; standard errors unavailable");
    }
  }
  auto se_at = [&](int idx) {
    return out.theta_cov.size() == 0 ? NAN : std::sqrt(out.theta_cov(idx, idx));
  };

  out.model = layout.spec;
  out.id_name = data.id_name;
  out.outcome_name = data.outcome_name;
  out.time_name = data.time_name;
  out.params = params;
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < layout.coef_count[k]; ++j) {
      CoefEstimate c;
      c.name = layout.coef_name(k, j);
      c.param = k;
      c.index = j;
      if (j > 0)
        c.covariate = layout.spec.covariates[k][j - 1];
      c.estimate = params.coef[k](j);
      c.se = se_at(layout.coef_offset[k] + j);
      out.coefficients.push_back(c);
    }
  for (int e = 0; e < layout.n_free_omega(); ++e) {
    const auto [r, s] = layout.free_omega[e];
    out.variances.push_back({layout.omega_name(e), r, s, params.omega(r, s), se_at(layout.n_coef + e)});
  }
  out.sigma = params.sigma();
  out.sigma_se = se_at(layout.n_params() - 1) / (2.0 * out.sigma);

  // Likelihoods and information criteria.
  out.n_params = layout.n_params();
  const double pen_bic = out.n_params * std::log(static_cast<double>(n_subj));
  out.minus2ll_lin = minus2ll_linearization(layout, subjects, params, eta_hat);
  out.aic_lin = out.minus2ll_lin + 2.0 * out.n_params;
  out.bic_lin = out.minus2ll_lin + pen_bic;
  const auto is = minus2ll_importance(layout, subjects, params, out.conditional, config.is_samples,
                                      config.seed);
  out.minus2ll_is = is.minus2ll;
  out.is_mc_se = is.mc_se;
  out.aic_is = out.minus2ll_is + 2.0 * out.n_params;
  out.bic_is = out.minus2ll_is + pen_bic;
  if (is.widened > 0)
    out.warnings.push_back("importance sampling widened the proposal for " +
                           std::to_string(is.widened) + " subject(s)");

  out.time_range = {tmin, tmax};
  out.n_subjects = n_subj;
  out.n_observations = static_cast<std::size_t>(n_obs);
  out.dropped_rows = data.dropped_rows;
  out.start = start;
  out.config = config;
  if (n_subj < 50)
    out.warnings.push_back("small sample: " + std::to_string(n_subj) + " subjects (< 50)");
  for (int k = 0; k < 4; ++k)
    if (layout.spec.covariates[k].size() > 2)
      out.warnings.push_back("more than 2 covariates on " + layout.param_name(k));
  if (data.dropped_rows > 0)
    out.warnings.push_back(std::to_string(data.dropped_rows) +
                           " row(s) dropped for missing or non-numeric time/outcome");
  if (start.fallback)
    out.warnings.push_back("automatic starting values used a fallback: " + start.note);
  out.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  return out;
}

/// -2LL by importance sampling at arbitrary population parameters; the
/// conditional moments come from a fresh MCMC pass at those parameters.
inline ImportanceResult importance_at(const LongitudinalDataset &data, const ModelSpec &model,
                                      const PopulationParams &params, const SaemConfig &config) {
  const ModelLayout layout(model);
  const auto subjects = subject_data(data, layout);
  const auto [tmin, tmax] = data.time_range();
  std::vector<ChainState> chains(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    chains[i].phi = random_part(layout, mean_psi(subjects[i], params));
    if (is_piecewise(model.kind) && layout.rand_pos[3] >= 0)
      chains[i].phi(layout.rand_pos[3]) = std::clamp(chains[i].phi(layout.rand_pos[3]), tmin, tmax);
  }
  const KernelScales scales{config.proposal_scale,
                            std::vector<double>(layout.q(), config.proposal_scale)};
  const auto cond = conditional_pass(layout, subjects, params, tmin, tmax, chains, scales,
                                     config.mcmc_steps, 4 * config.cond_burn, config.cond_samples,
                                     config.seed);
  return minus2ll_importance(layout, subjects, params, cond, config.is_samples, config.seed);
}

/// Linearized -2LL recomputed from a finished fit.
inline double loglik_linearization(const LongitudinalDataset &data, const FittedModel &fit) {
  const ModelLayout layout(fit.model);
  std::vector<Eigen::VectorXd> eta;
  for (const auto &s : fit.subjects)
    eta.push_back(s.eta);
  return minus2ll_linearization(layout, subject_data(data, layout), fit.params, eta);
}

/// Importance-sampled -2LL recomputed from a finished fit with its
/// conditional moments and a chosen draw count.
inline ImportanceResult loglik_importance(const LongitudinalDataset &data, const FittedModel &fit,
                                          int samples, std::uint64_t seed) {
  const ModelLayout layout(fit.model);
  return minus2ll_importance(layout, subject_data(data, layout), fit.params, fit.conditional,
                             samples, seed);
}

inline const std::vector<SubjectEstimate> &extract_psi(const FittedModel &fit) {
  return fit.subjects;
}

struct TraceTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
};

inline TraceTable convergence_trace(const FittedModel &fit) {
  return {fit.trace_names, fit.trace};
}

} // namespace nlmix
