#pragma once

#include "nlmix/layout.hpp"
#include "nlmix/mcmc.hpp"
#include "nlmix/stats.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace nlmix {

/// Model prediction and dpsi-gradient for every observation of one subject.
inline void predict_with_gradient(const ModelLayout &layout, const SubjectData &s,
                                  const SubjectParams &psi, Eigen::VectorXd &f,
                                  Eigen::MatrixXd &grad) {
  const auto n = static_cast<Eigen::Index>(s.n());
  f.resize(n);
  grad.resize(n, 4);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double t = s.t[static_cast<std::size_t>(j)];
    f(j) = structural_value(layout.spec.kind, t, psi, layout.spec.transition_width);
    const auto g = structural_gradient(layout.spec.kind, t, psi, layout.spec.transition_width);
    for (int k = 0; k < 4; ++k)
      grad(j, k) = g[k];
  }
}

/// -2 log-likelihood of the model linearized in eta around eta_hat:
/// y_i ~ N(f(psi_hat) - D eta_hat, D Omega D' + sigma^2 I).
inline double minus2ll_linearization(const ModelLayout &layout,
                                     const std::vector<SubjectData> &subjects,
                                     const PopulationParams &params,
                                     const std::vector<Eigen::VectorXd> &eta_hat) {
  const int q = layout.q();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double total = 0;
  Eigen::VectorXd f;
  Eigen::MatrixXd grad;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto &s = subjects[i];
    const SubjectParams mean = mean_psi(s, params);
    const Eigen::VectorXd eta = q > 0 ? eta_hat[i] : Eigen::VectorXd();
    const SubjectParams psi = full_psi(layout, mean, random_part(layout, mean) + eta);
    predict_with_gradient(layout, s, psi, f, grad);
    const auto n = static_cast<Eigen::Index>(s.n());
    Eigen::MatrixXd d(n, q);
    for (int r = 0; r < q; ++r)
      d.col(r) = grad.col(layout.random_params[r]);
    Eigen::VectorXd res(n);
    for (Eigen::Index j = 0; j < n; ++j)
      res(j) = s.y[static_cast<std::size_t>(j)] - f(j);
    Eigen::MatrixXd v = params.sigma2 * Eigen::MatrixXd::Identity(n, n);
    if (q > 0) {
      res += d * eta;
      v += d * params.omega * d.transpose();
    }
    Eigen::LLT<Eigen::MatrixXd> llt(v);
    if (llt.info() != Eigen::Success)
      throw SingularCovariance("SingularCovariance: marginal covariance of subject '" + s.id +
                               "' is not positive definite");
    const Eigen::MatrixXd l = llt.matrixL();
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    const Eigen::VectorXd w = l.triangularView<Eigen::Lower>().solve(res);
    total += static_cast<double>(n) * log2pi + logdet + w.squaredNorm();
  }
  return total;
}

struct ImportanceResult {
  double minus2ll = 0.0;
  double mc_se = 0.0;      // Monte-Carlo standard error of minus2ll
  int widened = 0;         // subjects whose proposal had to be widened
  double min_ess = 1.0;    // smallest effective-sample fraction over subjects
};

/// -2 log-likelihood by importance sampling over each subject's random
/// effects; proposals are built from the conditional MCMC draws.
inline ImportanceResult minus2ll_importance(const ModelLayout &layout,
                                            const std::vector<SubjectData> &subjects,
                                            const PopulationParams &params,
                                            const std::vector<ConditionalMoments> &cond,
                                            int samples, std::uint64_t seed) {
  const int q = layout.q();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  ImportanceResult out;
  double var_sum = 0;

  Eigen::MatrixXd prior_prec;
  double prior_logdet = 0;
  if (q > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(params.omega);
    if (llt.info() != Eigen::Success)
      throw SingularCovariance("SingularCovariance: random-effects covariance is not positive definite");
    prior_prec = llt.solve(Eigen::MatrixXd::Identity(q, q));
    const Eigen::MatrixXd l = llt.matrixL();
    prior_logdet = 2.0 * l.diagonal().array().log().sum();
  }

  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto &s = subjects[i];
    const SubjectParams mean = mean_psi(s, params);
    const double nlog = static_cast<double>(s.n()) * std::log(2.0 * std::numbers::pi * params.sigma2);
    if (q == 0) {
      const double ss = subject_ss(layout, s, mean);
      out.minus2ll += nlog + ss / params.sigma2;
      continue;
    }
    const Eigen::VectorXd m = random_part(layout, mean);
    Eigen::MatrixXd base = cond[i].cov;
    for (int r = 0; r < q; ++r)
      base(r, r) += 1e-6 * params.omega(r, r) + 1e-14;

    // Defensive kernel mixture: Student-t kernels at the retained conditional
    // draws with a shrunken conditional covariance, plus a share of the prior
    // that keeps every weight below likelihood / kPriorShare.
    constexpr double kDf = 5.0, kPriorShare = 0.1;
    std::vector<Eigen::VectorXd> centres = cond[i].draws;
    if (centres.empty())
      centres.push_back(cond[i].mean);
    const auto n_centres = static_cast<double>(centres.size());
    const double bandwidth =
        centres.size() == 1
            ? 1.0
            : std::pow(4.0 / (q + 2.0), 1.0 / (q + 4.0)) * std::pow(n_centres, -1.0 / (q + 4.0));
    const Eigen::MatrixXd prior_l = Eigen::LLT<Eigen::MatrixXd>(params.omega).matrixL();
    const double t_const = std::lgamma((kDf + q) / 2.0) - std::lgamma(kDf / 2.0) -
                           0.5 * q * std::log(kDf * std::numbers::pi);
    bool done = false;
    std::vector<double> log_kernel(centres.size());
    for (int attempt = 0; attempt <= 3 && !done; ++attempt) {
      const double widen = std::pow(4.0, attempt);
      const Eigen::MatrixXd prop_cov = base * (widen * bandwidth * bandwidth);
      Eigen::LLT<Eigen::MatrixXd> pl(prop_cov);
      if (pl.info() != Eigen::Success)
        throw SingularCovariance("SingularCovariance: importance proposal for subject '" + s.id +
                                 "' is not positive definite");
      const Eigen::MatrixXd l = pl.matrixL();
      const double prop_logdet = 2.0 * l.diagonal().array().log().sum();

      Rng rng = make_rng(seed, 2 + 100 * static_cast<std::uint64_t>(attempt), i);
      std::normal_distribution<double> normal;
      std::chi_squared_distribution<double> chi2(kDf);
      std::uniform_real_distribution<double> unif;
      std::uniform_int_distribution<std::size_t> pick(0, centres.size() - 1);
      std::vector<double> logw(static_cast<std::size_t>(samples));
      Eigen::VectorXd z(q);
      for (int b = 0; b < samples; ++b) {
        for (int r = 0; r < q; ++r)
          z(r) = normal(rng);
        Eigen::VectorXd eta;
        if (unif(rng) < kPriorShare)
          eta = prior_l * z;
        else
          eta = centres[pick(rng)] + l * z / std::sqrt(chi2(rng) / kDf);
        const double ss = subject_ss(layout, s, full_psi(layout, mean, m + eta));
        const double log_lik = -0.5 * (nlog + ss / params.sigma2);
        const double log_prior = -0.5 * (q * log2pi + prior_logdet + eta.dot(prior_prec * eta));
        for (std::size_t k = 0; k < centres.size(); ++k) {
          const Eigen::VectorXd u = l.triangularView<Eigen::Lower>().solve(eta - centres[k]);
          log_kernel[k] = -0.5 * (kDf + q) * std::log1p(u.squaredNorm() / kDf);
        }
        const double log_t =
            log_mean_exp(log_kernel) + t_const - 0.5 * prop_logdet;
        const double a = std::log1p(-kPriorShare) + log_t, c = std::log(kPriorShare) + log_prior;
        const double log_prop = std::max(a, c) + std::log1p(std::exp(-std::abs(a - c)));
        logw[static_cast<std::size_t>(b)] = log_lik + log_prior - log_prop;
      }
      const double lme = log_mean_exp(logw);
      if (!std::isfinite(lme))
        continue;
      double s1 = 0, s2 = 0;
      for (double lw : logw) {
        const double w = std::exp(lw - lme); // weights relative to their mean
        s1 += w;
        s2 += w * w;
      }
      const double ess = s1 * s1 / s2 / samples;
      out.min_ess = std::min(out.min_ess, ess);
      if (ess < 0.02 && attempt < 3)
        continue;
      if (ess < 0.02)
        break;
      if (attempt > 0)
        out.widened++;
      const double mean_w = s1 / samples;
      const double var_w = std::max(s2 / samples - mean_w * mean_w, 0.0);
      var_sum += var_w / samples; // delta method on log(mean weight)
      out.minus2ll += -2.0 * lme;
      done = true;
    }
    if (!done)
      throw DegenerateWeights("DegenerateWeights: effective sample size below 2% for subject '" +
                              s.id + "' after 3 widened retries");
  }
  out.mc_se = 2.0 * std::sqrt(var_sum);
  return out;
}

} // namespace nlmix
