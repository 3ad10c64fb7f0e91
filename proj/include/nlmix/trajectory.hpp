#pragma once

#include "nlmix/errors.hpp"
#include "nlmix/saem.hpp"
#include "nlmix/stats.hpp"
#include "nlmix/structural.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace nlmix {

/// Model-implied mean curve at one covariate profile with random effects at zero.
struct MarginalTrajectory {
  std::string label;
  std::vector<double> time;
  std::vector<double> value;
  CovariateMap profile;
};

/// Fitted fixed effects as a predictor specification.
inline ParamPredictorSpec fitted_predictors(const FittedModel &fit) {
  ParamPredictorSpec p;
  for (int k = 0; k < 4; ++k) {
    p[k].alpha = fit.params.coef[k](0);
    p[k].random = fit.model.random[k];
    for (std::size_t j = 0; j < fit.model.covariates[k].size(); ++j)
      p[k].beta.push_back({fit.model.covariates[k][j], fit.params.coef[k](static_cast<Eigen::Index>(j + 1))});
  }
  return p;
}

inline SubjectParams marginal_psi(const ParamPredictorSpec &pred, const CovariateMap &profile) {
  SubjectParams psi;
  for (int k = 0; k < 4; ++k)
    psi[k] = fixed_predictor(pred[k], profile);
  return psi;
}

inline std::vector<double> uniform_grid(double lo, double hi, int n) {
  std::vector<double> g(static_cast<std::size_t>(std::max(n, 2)));
  const double step = (hi - lo) / static_cast<double>(g.size() - 1);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = i + 1 == g.size() ? hi : lo + step * static_cast<double>(i);
  return g;
}

/// Typical value of one covariate: the mode when it takes at most 10
/// distinct values (smallest value on ties), the median otherwise.
inline double typical_value(const std::vector<double> &values) {
  std::map<double, std::size_t> counts;
  for (double v : values)
    counts[v]++;
  if (counts.size() <= 10) {
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second)
        best = it;
    return best->first;
  }
  return median(values);
}

inline std::vector<double> subject_values(const FittedModel &fit, const std::string &name) {
  std::vector<double> v;
  v.reserve(fit.subject_covariates.size());
  for (const auto &c : fit.subject_covariates)
    v.push_back(c.at(name));
  return v;
}

/// Most common covariate profile over the fitted subjects.
inline CovariateMap typical_profile(const FittedModel &fit) {
  CovariateMap profile;
  for (const auto &name : fit.model.all_covariates())
    profile[name] = typical_value(subject_values(fit, name));
  return profile;
}

inline MarginalTrajectory trajectory_at(const FittedModel &fit, const CovariateMap &profile,
                                        std::string label, int grid_size) {
  MarginalTrajectory tr;
  tr.label = std::move(label);
  tr.profile = profile;
  tr.time = uniform_grid(fit.time_range.first, fit.time_range.second, grid_size);
  const SubjectParams psi = marginal_psi(fitted_predictors(fit), profile);
  for (double t : tr.time)
    tr.value.push_back(structural_value(fit.model.kind, t, psi, fit.model.transition_width));
  return tr;
}

inline MarginalTrajectory marginal_trajectory(const FittedModel &fit, int grid_size = 101) {
  return trajectory_at(fit, typical_profile(fit), "marginal", grid_size);
}

/// Two marginal trajectories contrasting groups of one covariate: its two
/// levels if binary, otherwise its empirical percentiles p_lo and p_hi.
/// Other covariates stay at the typical profile.
inline std::pair<MarginalTrajectory, MarginalTrajectory>
marginal_contrast(const FittedModel &fit, const std::string &group, double p_lo = 0.10,
                  double p_hi = 0.90, int grid_size = 101) {
  const auto names = fit.model.all_covariates();
  if (std::find(names.begin(), names.end(), group) == names.end())
    throw UnknownGroupVariable(group);
  if (!(p_lo > 0.0 && p_lo < p_hi && p_hi < 1.0))
    throw UsageError("group percentiles must satisfy 0 < p1 < p2 < 1");
  auto values = subject_values(fit, group);
  std::sort(values.begin(), values.end());
  std::vector<double> levels = values;
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  if (levels.size() < 2)
    throw ConstantGroupVariable(group);
  double lo, hi;
  if (levels.size() == 2) {
    lo = levels[0];
    hi = levels[1];
  } else {
    lo = percentile_sorted(values, p_lo);
    hi = percentile_sorted(values, p_hi);
  }
  CovariateMap profile = typical_profile(fit);
  profile[group] = lo;
  auto a = trajectory_at(fit, profile, group + "=" + exact(lo), grid_size);
  profile[group] = hi;
  auto b = trajectory_at(fit, profile, group + "=" + exact(hi), grid_size);
  return {std::move(a), std::move(b)};
}

} // namespace nlmix
