#pragma once

#include "nlmix/dataset.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/layout.hpp"
#include "nlmix/stats.hpp"
#include "nlmix/structural.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace nlmix {

/// Data-generating truth and replication plan for one simulation scenario.
struct SimScenario {
  std::string name = "scenario";
  ModelKind kind = ModelKind::Smm;
  std::array<double, 4> alpha{};
  std::array<double, 4> beta1{}; // effect of covariate 1 ("ageDeath90") per parameter
  std::array<double, 4> beta2{}; // effect of covariate 2 ("x2") per parameter
  Eigen::MatrixXd omega;         // over the model's default random-effect parameters
  double sigma = 0.0;
  double transition_width = 2.0;
  int n = 200;
  int covariates = 0; // covariates per parameter: 0, 1 or 2
  int replications = 1;
  std::uint64_t seed = 1;
  int min_obs = 4;
  double entry_min = -18.0; // entry time ~ U[entry_min, entry_max]
  double entry_max = -3.0;
  double time_min = -24.0;  // visits outside [time_min, 0] are dropped

  /// Truth taken from the published fits of each model.
  static SimScenario standard(ModelKind kind) {
    SimScenario s;
    s.kind = kind;
    s.name = std::string(model_name(kind));
    switch (kind) {
    case ModelKind::Smm:
      s.alpha = {0.24, -1.088, -2.567, 1.789};
      s.beta1 = {-0.044, -0.061, 0.031, 0.007};
      s.omega.resize(2, 2);
      s.omega << 0.146, 0.049, 0.049, 1.283;
      s.sigma = 0.279;
      break;
    case ModelKind::PmmAbrupt:
      s.alpha = {-1.103, -0.017, -0.249, -4.25};
      s.beta1 = {-0.062, -0.0003, -0.001, -0.059};
      s.omega = Eigen::MatrixXd::Zero(4, 4);
      s.omega.diagonal() << 1.07196, 0.00062, 0.03830, 0.58980;
      s.omega(1, 2) = s.omega(2, 1) = 0.00378;
      s.sigma = 0.281;
      break;
    case ModelKind::PmmSmooth:
      s.alpha = {-1.099, -0.017, -0.246, -5.3};
      s.beta1 = {-0.062, -0.0003, -0.001, -0.058};
      s.omega = Eigen::MatrixXd::Zero(4, 4);
      s.omega.diagonal() << 1.0699, 0.0006, 0.0377, 0.6037;
      s.omega(1, 2) = s.omega(2, 1) = 0.0038;
      s.sigma = 0.281;
      break;
    }
    s.beta2 = s.beta1;
    return s;
  }

  std::vector<std::string> covariate_names() const {
    std::vector<std::string> names{"ageDeath90", "x2"};
    names.resize(static_cast<std::size_t>(covariates));
    return names;
  }

  /// Model specification matching the generating process.
  ModelSpec model_spec() const {
    ModelSpec m = ModelSpec::standard(kind);
    m.transition_width = transition_width;
    for (auto &c : m.covariates)
      c = covariate_names();
    return m;
  }

  /// Truth as a predictor specification.
  ParamPredictorSpec truth() const {
    ParamPredictorSpec p;
    const auto names = covariate_names();
    const auto mask = default_random_mask(kind);
    for (int k = 0; k < 4; ++k) {
      p[k].alpha = alpha[k];
      p[k].random = mask[k];
      for (std::size_t j = 0; j < names.size(); ++j)
        p[k].beta.push_back({names[j], j == 0 ? beta1[k] : beta2[k]});
    }
    return p;
  }

  void check() const {
    if (replications < 1)
      throw ConfigError("replications must be at least 1");
    if (n < 1)
      throw ConfigError("n must be at least 1");
    if (covariates < 0 || covariates > 2)
      throw ConfigError("covariates per parameter must be 0, 1 or 2");
    if (!(sigma >= 0.0))
      throw ConfigError("sigma must be nonnegative");
    if (!(entry_min <= entry_max) || entry_max > 0.0 || entry_min < time_min)
      throw ConfigError("entry window must satisfy time_min <= entry_min <= entry_max <= 0");
    const Eigen::Index q = static_cast<Eigen::Index>(ModelLayout(model_spec()).q());
    if (omega.rows() != q || omega.cols() != q)
      throw ConfigError("omega must be " + std::to_string(q) + " x " + std::to_string(q) +
                        " for model " + std::string(model_name(kind)));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega);
    if (q > 0 && es.eigenvalues().minCoeff() < -1e-12)
      throw ConfigError("omega must be positive semidefinite");
  }
};

/// Simulated dataset together with the subject-level truth that produced it.
struct SimulatedData {
  LongitudinalDataset data;
  std::vector<SubjectParams> psi;
  std::vector<Eigen::VectorXd> eta;
};

namespace detail {

/// Annual visits from `entry` toward 0, each jittered by U[-2, 2] months,
/// kept inside [time_min, 0].
inline std::vector<double> visit_times(double entry, double time_min, Rng &rng) {
  std::uniform_real_distribution<double> jitter(-2.0 / 12.0, 2.0 / 12.0);
  std::vector<double> t;
  for (int j = 0; entry + j <= 0.0; ++j) {
    const double v = entry + j + jitter(rng);
    if (v >= time_min && v <= 0.0)
      t.push_back(v);
  }
  return t;
}

inline Eigen::MatrixXd psd_root(const Eigen::MatrixXd &m) {
  if (m.size() == 0)
    return m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

} // namespace detail

inline SimulatedData simulate_with_truth(const SimScenario &sc, int replication) {
  sc.check();
  const ModelLayout layout(sc.model_spec());
  const auto truth = sc.truth();
  const auto names = sc.covariate_names();
  const Eigen::MatrixXd root = detail::psd_root(sc.omega);
  Rng rng = make_rng(sc.seed, 0x5151, static_cast<std::uint64_t>(replication));
  std::uniform_real_distribution<double> entry(sc.entry_min, sc.entry_max);
  std::uniform_int_distribution<int> age(-11, 10);
  std::normal_distribution<double> normal;

  SimulatedData out;
  out.data.id_name = "ID";
  out.data.time_name = "time";
  out.data.outcome_name = "y";
  out.data.covariate_names = names;
  const int q = layout.q();
  for (int i = 0; i < sc.n; ++i) {
    std::vector<double> times;
    int attempts = 0;
    while (static_cast<int>(times.size()) < sc.min_obs) {
      if (++attempts > 10000)
        throw InfeasibleInclusion("InfeasibleInclusion: entry window [" + exact(sc.entry_min) +
                                  ", " + exact(sc.entry_max) + "] cannot yield " +
                                  std::to_string(sc.min_obs) + " visits");
      times = detail::visit_times(entry(rng), sc.time_min, rng);
    }
    CovariateMap cov;
    if (!names.empty())
      cov[names[0]] = age(rng);
    if (names.size() > 1)
      cov[names[1]] = normal(rng);
    Eigen::VectorXd z(q);
    for (int r = 0; r < q; ++r)
      z(r) = normal(rng);
    const Eigen::VectorXd eta = q > 0 ? Eigen::VectorXd(root * z) : Eigen::VectorXd();
    const SubjectParams psi =
        predict_params(truth, cov, std::span<const double>(eta.data(), static_cast<std::size_t>(q)));
    SubjectRecord rec{std::to_string(i + 1), {}, cov};
    for (double t : times) {
      const double f = structural_value(sc.kind, t, psi, sc.transition_width);
      rec.observations.push_back({t, f + sc.sigma * normal(rng)});
    }
    out.data.subjects.push_back(std::move(rec));
    out.psi.push_back(psi);
    out.eta.push_back(eta);
  }
  out.data = make_dataset(std::move(out.data));
  return out;
}

inline LongitudinalDataset simulate_dataset(const SimScenario &sc, int replication) {
  return simulate_with_truth(sc, replication).data;
}

/// Demonstration cohort of 1200 subjects with an SMM cognitive trajectory,
/// age at death peaked at 90 and follow-up around 7 years.
inline LongitudinalDataset make_datacog(std::uint64_t seed) {
  SimScenario sc = SimScenario::standard(ModelKind::Smm);
  sc.covariates = 1;
  const auto truth = sc.truth();
  const Eigen::MatrixXd root = detail::psd_root(sc.omega);
  Rng rng = make_rng(seed, 0xDA7A);
  std::normal_distribution<double> normal;
  std::exponential_distribution<double> extra(1.0 / 4.0);
  std::uniform_real_distribution<double> unif;

  LongitudinalDataset data;
  data.id_name = "ID";
  data.time_name = "time";
  data.outcome_name = "cognition";
  data.covariate_names = {"ageDeath", "ageDeath90"};
  for (int i = 0; i < 1200; ++i) {
    std::vector<double> times;
    while (times.size() < 4) {
      const double follow = std::min(3.0 + extra(rng), 21.0);
      times = detail::visit_times(-follow, -24.0, rng);
    }
    double a = 90.0;
    if (unif(rng) >= 0.06)
      a = std::clamp(90.0 + std::round(8.3 * normal(rng)), 70.0, 105.0);
    const CovariateMap cov{{"ageDeath", a}, {"ageDeath90", a - 90.0}};
    const Eigen::Vector2d eta = root * Eigen::Vector2d(normal(rng), normal(rng));
    const SubjectParams psi = predict_params(truth, cov, std::span<const double>(eta.data(), 2));
    SubjectRecord rec{std::to_string(1000 + i), {}, cov};
    for (double t : times)
      rec.observations.push_back({t, smm_value(t, psi) + sc.sigma * normal(rng)});
    data.subjects.push_back(std::move(rec));
  }
  return make_dataset(std::move(data));
}

} // namespace nlmix
