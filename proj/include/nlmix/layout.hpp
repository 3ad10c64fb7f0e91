#pragma once

#include "nlmix/dataset.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/structural.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace nlmix {

/// Index bookkeeping for one ModelSpec: which parameters carry random
/// effects, where each parameter's coefficients sit in the stacked
/// coefficient vector, and which covariance entries are free.
struct ModelLayout {
  ModelSpec spec;
  std::array<int, 4> rand_pos{-1, -1, -1, -1}; // position in eta, or -1
  std::vector<int> random_params;              // parameter index for each eta position
  std::vector<int> fixed_params;               // parameters without a random effect
  std::array<int, 4> coef_offset{};
  std::array<int, 4> coef_count{};
  int n_coef = 0;
  std::vector<std::pair<int, int>> free_omega; // (r, s), diagonal first

  explicit ModelLayout(ModelSpec m) : spec(std::move(m)) {
    spec.check();
    for (int k = 0; k < 4; ++k) {
      if (spec.random[k]) {
        rand_pos[k] = static_cast<int>(random_params.size());
        random_params.push_back(k);
      } else {
        fixed_params.push_back(k);
      }
      coef_offset[k] = n_coef;
      coef_count[k] = 1 + static_cast<int>(spec.covariates[k].size());
      n_coef += coef_count[k];
    }
    for (int r = 0; r < q(); ++r)
      free_omega.emplace_back(r, r);
    if (has_covariance())
      free_omega.emplace_back(cov_pair().first, cov_pair().second);
  }

  int q() const { return static_cast<int>(random_params.size()); }

  bool has_covariance() const {
    const auto [a, b] = correlated_pair(spec.kind);
    return spec.correlated && rand_pos[a] >= 0 && rand_pos[b] >= 0;
  }

  /// eta positions of the correlated pair (valid only when has_covariance()).
  std::pair<int, int> cov_pair() const {
    const auto [a, b] = correlated_pair(spec.kind);
    return {rand_pos[a], rand_pos[b]};
  }

  int n_free_omega() const { return static_cast<int>(free_omega.size()); }

  /// Coefficients + free covariance entries + residual variance.
  int n_params() const { return n_coef + n_free_omega() + 1; }

  bool omega_free(int r, int s) const {
    if (r == s)
      return true;
    if (!has_covariance())
      return false;
    const auto [a, b] = cov_pair();
    return (r == a && s == b) || (r == b && s == a);
  }

  const std::string &param_name(int k) const { return parameter_names(spec.kind)[k]; }

  std::string coef_name(int k, int j) const {
    if (j == 0)
      return param_name(k);
    return "beta_" + spec.covariates[k][j - 1] + "(" + param_name(k) + ")";
  }

  std::string omega_name(int e) const {
    const auto [r, s] = free_omega[e];
    if (r == s)
      return "omega2." + param_name(random_params[r]);
    int a = random_params[r], b = random_params[s];
    const auto order = display_order(spec.kind);
    if (std::find(order.begin(), order.end(), b) < std::find(order.begin(), order.end(), a))
      std::swap(a, b);
    return "cov." + param_name(a) + "." + param_name(b);
  }
};

/// Population parameters theta = (coefficients, Omega, sigma^2).
struct PopulationParams {
  std::array<Eigen::VectorXd, 4> coef; // (alpha_k, beta_k...)
  Eigen::MatrixXd omega;               // q x q over random-effect-bearing parameters
  double sigma2 = 1.0;

  double sigma() const { return std::sqrt(sigma2); }
};

/// Per-subject data in the shape the engine consumes.
struct SubjectData {
  std::string id;
  std::vector<double> t, y;
  std::array<Eigen::VectorXd, 4> x; // design row per parameter: (1, covariates...)
  CovariateMap covariates;

  std::size_t n() const { return t.size(); }
};

inline std::vector<SubjectData> subject_data(const LongitudinalDataset &data,
                                             const ModelLayout &layout) {
  std::vector<SubjectData> out;
  out.reserve(data.n_subjects());
  for (const auto &s : data.subjects) {
    SubjectData d;
    d.id = s.id;
    d.covariates = s.covariates;
    for (const auto &o : s.observations) {
      d.t.push_back(o.time);
      d.y.push_back(o.outcome);
    }
    for (int k = 0; k < 4; ++k) {
      d.x[k].resize(layout.coef_count[k]);
      d.x[k](0) = 1.0;
      for (std::size_t j = 0; j < layout.spec.covariates[k].size(); ++j) {
        const auto &name = layout.spec.covariates[k][j];
        auto it = s.covariates.find(name);
        if (it == s.covariates.end())
          throw MissingCovariate(name, s.id);
        d.x[k](static_cast<Eigen::Index>(j + 1)) = it->second;
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

/// Fixed part of psi for one subject (eta = 0).
inline SubjectParams mean_psi(const SubjectData &s, const PopulationParams &p) {
  SubjectParams m;
  for (int k = 0; k < 4; ++k)
    m[k] = s.x[k].dot(p.coef[k]);
  return m;
}

/// psi from the fixed part with the random-effect coordinates replaced by phi_r.
inline SubjectParams full_psi(const ModelLayout &layout, const SubjectParams &mean,
                              const Eigen::VectorXd &phi_r) {
  SubjectParams psi = mean;
  for (int r = 0; r < layout.q(); ++r)
    psi[layout.random_params[r]] = phi_r(r);
  return psi;
}

inline Eigen::VectorXd random_part(const ModelLayout &layout, const SubjectParams &psi) {
  Eigen::VectorXd v(layout.q());
  for (int r = 0; r < layout.q(); ++r)
    v(r) = psi[layout.random_params[r]];
  return v;
}

/// Residual sum of squares of one subject, +inf when psi leaves the model domain.
inline double subject_ss(const ModelLayout &layout, const SubjectData &s,
                         const SubjectParams &psi) {
  double ss = 0;
  try {
    for (std::size_t j = 0; j < s.n(); ++j) {
      const double r =
          s.y[j] - structural_value(layout.spec.kind, s.t[j], psi, layout.spec.transition_width);
      ss += r * r;
    }
  } catch (const DomainError &) {
    return INFINITY;
  }
  return std::isfinite(ss) ? ss : INFINITY;
}

/// Stacked coefficient vector in layout order.
inline Eigen::VectorXd stack_coef(const ModelLayout &layout, const PopulationParams &p) {
  Eigen::VectorXd v(layout.n_coef);
  for (int k = 0; k < 4; ++k)
    v.segment(layout.coef_offset[k], layout.coef_count[k]) = p.coef[k];
  return v;
}

/// Omega with every entry outside the structure mask set to exactly zero.
inline void apply_mask(const ModelLayout &layout, Eigen::MatrixXd &omega) {
  for (int r = 0; r < omega.rows(); ++r)
    for (int s = 0; s < omega.cols(); ++s)
      if (!layout.omega_free(r, s))
        omega(r, s) = 0.0;
}

} // namespace nlmix
