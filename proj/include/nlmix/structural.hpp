#pragma once

#include "nlmix/dataset.hpp"
#include "nlmix/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nlmix {

enum class ModelKind { Smm, PmmAbrupt, PmmSmooth };

inline std::string_view model_name(ModelKind kind) {
  switch (kind) {
  case ModelKind::Smm: return "smm";
  case ModelKind::PmmAbrupt: return "pmma";
  case ModelKind::PmmSmooth: return "pmms";
  }
  return "?";
}

inline std::string_view model_title(ModelKind kind) {
  switch (kind) {
  case ModelKind::Smm: return "Sigmoidal mixed model";
  case ModelKind::PmmAbrupt: return "Piecewise mixed model, abrupt change";
  case ModelKind::PmmSmooth: return "Piecewise mixed model, smooth polynomial transition";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "smm") return ModelKind::Smm;
  if (s == "pmma") return ModelKind::PmmAbrupt;
  if (s == "pmms") return ModelKind::PmmSmooth;
  throw UsageError("unknown model '" + std::string(s) + "' (expected smm, pmma or pmms)");
}

inline bool is_piecewise(ModelKind kind) { return kind != ModelKind::Smm; }

/// Parameter labels in structural order psi1..psi4.
///   SMM: first level, last level (value at t = 0), midpoint, Hill slope.
///   PMM: last level (value at t = 0), slope1 (phase before the changepoint),
///        slope2 (phase from the changepoint to t = 0), changepoint.
inline const std::array<std::string, 4> &parameter_names(ModelKind kind) {
  static const std::array<std::string, 4> smm{"first.level", "last.level", "midpoint",
                                               "hill.slope"};
  static const std::array<std::string, 4> pmm{"last.level", "slope1", "slope2",
                                               "changepoint"};
  return kind == ModelKind::Smm ? smm : pmm;
}

/// Flag-style names used on the command line (--var-<name>).
inline const std::array<std::string, 4> &parameter_flag_names(ModelKind kind) {
  static const std::array<std::string, 4> smm{"first-level", "last-level", "midpoint",
                                               "hslope"};
  static const std::array<std::string, 4> pmm{"last-level", "slope1", "slope2",
                                               "changepoint"};
  return kind == ModelKind::Smm ? smm : pmm;
}

/// Order in which parameters are listed in reports (last level first).
inline std::array<int, 4> display_order(ModelKind kind) {
  if (kind == ModelKind::Smm)
    return {1, 0, 2, 3};
  return {0, 1, 2, 3};
}

enum class ParamRole { Level, Slope, Time, Shape };

inline ParamRole parameter_role(ModelKind kind, int k) {
  if (kind == ModelKind::Smm) {
    static constexpr std::array roles{ParamRole::Level, ParamRole::Level, ParamRole::Time,
                                      ParamRole::Shape};
    return roles[k];
  }
  static constexpr std::array roles{ParamRole::Level, ParamRole::Slope, ParamRole::Slope,
                                    ParamRole::Time};
  return roles[k];
}

/// SMM keeps the midpoint and Hill slope marginal.
inline std::array<bool, 4> default_random_mask(ModelKind kind) {
  if (kind == ModelKind::Smm)
    return {true, true, false, false};
  return {true, true, true, true};
}

/// The single pair of random effects whose covariance is estimated.
inline std::pair<int, int> correlated_pair(ModelKind kind) {
  return kind == ModelKind::Smm ? std::pair{0, 1} : std::pair{1, 2};
}

struct SubjectParams {
  std::array<double, 4> psi{};

  double operator[](std::size_t k) const { return psi[k]; }
  double &operator[](std::size_t k) { return psi[k]; }
};

struct CovariateEffect {
  std::string name;
  double value = 0.0;
};

/// psi_k = alpha + sum_j beta_j * x_j + eta_k (eta_k = 0 unless random).
struct ParamPredictor {
  double alpha = 0.0;
  std::vector<CovariateEffect> beta;
  bool random = false;
};

using ParamPredictorSpec = std::array<ParamPredictor, 4>;

inline std::size_t random_count(const ParamPredictorSpec &spec) {
  std::size_t q = 0;
  for (const auto &p : spec)
    q += p.random ? 1 : 0;
  return q;
}

/// Fixed part of psi_k for a covariate profile.
inline double fixed_predictor(const ParamPredictor &p, const CovariateMap &covariates) {
  double v = p.alpha;
  for (const auto &b : p.beta) {
    auto it = covariates.find(b.name);
    if (it == covariates.end())
      throw MissingCovariate(b.name);
    v += b.value * it->second;
  }
  return v;
}

/// eta holds one entry per random-effect-bearing parameter, in parameter order.
inline SubjectParams predict_params(const ParamPredictorSpec &spec,
                                    const CovariateMap &covariates,
                                    std::span<const double> eta) {
  if (eta.size() != random_count(spec))
    throw std::invalid_argument("predict_params: eta has " + std::to_string(eta.size()) +
                                " entries, model has " + std::to_string(random_count(spec)) +
                                " random effects");
  SubjectParams out;
  std::size_t r = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    out[k] = fixed_predictor(spec[k], covariates);
    if (spec[k].random)
      out[k] += eta[r++];
  }
  return out;
}

// ---- sigmoidal --------------------------------------------------------------

namespace detail {

/// (t/psi3)^psi4 with the domain rules of the four-parameter logistic.
inline double smm_power(double t, double midpoint, double hill) {
  if (midpoint == 0.0)
    throw DomainError("DomainError: SMM midpoint is zero");
  const double ratio = t / midpoint;
  if (ratio > 0.0)
    return std::exp(hill * std::log(ratio));
  if (ratio == 0.0) {
    if (hill > 0.0)
      return 0.0;
    throw DomainError("DomainError: (t/midpoint)^hill undefined at t = 0 for hill <= 0");
  }
  if (hill != std::floor(hill))
    throw DomainError("DomainError: t/midpoint = " + std::to_string(ratio) +
                      " < 0 with non-integer Hill slope " + std::to_string(hill) +
                      "; time and midpoint must share a sign");
  return std::pow(ratio, hill);
}

} // namespace detail

inline double smm_value(double t, const SubjectParams &psi) {
  const double p = detail::smm_power(t, psi[2], psi[3]);
  const double denom = 1.0 + p;
  if (denom == 0.0)
    throw DomainError("DomainError: SMM denominator vanishes");
  return psi[0] + (psi[1] - psi[0]) / denom;
}

inline std::array<double, 4> smm_gradient(double t, const SubjectParams &psi) {
  const double p = detail::smm_power(t, psi[2], psi[3]);
  const double d = 1.0 + p;
  const double range = psi[1] - psi[0];
  std::array<double, 4> g{p / d, 1.0 / d, 0.0, 0.0};
  if (p > 0.0) {
    const double ratio = t / psi[2];
    g[2] = range * psi[3] * p / (psi[2] * d * d);
    g[3] = ratio > 0.0 ? -range * p * std::log(ratio) / (d * d) : 0.0;
  }
  return g;
}

// ---- piecewise --------------------------------------------------------------

/// Broken stick: slope psi2 before the changepoint psi4, slope psi3 from the
/// changepoint to t = 0, level psi1 at t = 0.
inline double pmma_value(double t, const SubjectParams &psi) {
  if (t < psi[3])
    return psi[0] + psi[2] * psi[3] + psi[1] * (t - psi[3]);
  return psi[0] + psi[2] * t;
}

/// At t == psi4 the left-branch limit is used.
inline std::array<double, 4> pmma_gradient(double t, const SubjectParams &psi) {
  if (t <= psi[3])
    return {1.0, t - psi[3], psi[3], psi[2] - psi[1]};
  return {1.0, 0.0, t, 0.0};
}

/// Intercept of the early line so that both lines meet at psi4 + v/2.
inline double lambda_constraint(const SubjectParams &psi, double v) {
  return psi[0] + (psi[2] - psi[1]) * (psi[3] + v / 2.0);
}

/// Cubic bridging the two lines on [psi4, psi4 + v]. Coefficients are held
/// in the local variable s = (t - origin)/width, which keeps the 4x4 system
/// well conditioned for any window position; monomial() expands them to
/// g(t) = a0 + a1 t + a2 t^2 + a3 t^3.
struct TransitionPoly {
  std::array<double, 4> local{}; // g = c0 + c1 s + c2 s^2 + c3 s^3
  double origin = 0.0;
  double width = 1.0;

  double value(double t) const {
    const double s = (t - origin) / width;
    return local[0] + s * (local[1] + s * (local[2] + s * local[3]));
  }

  double slope(double t) const {
    const double s = (t - origin) / width;
    return (local[1] + s * (2.0 * local[2] + 3.0 * s * local[3])) / width;
  }

  std::array<double, 4> monomial() const {
    // s = (t - o)/w; expand c_k ((t - o)/w)^k.
    const double o = origin, w = width;
    const double c0 = local[0], c1 = local[1] / w, c2 = local[2] / (w * w),
                 c3 = local[3] / (w * w * w);
    return {c0 - c1 * o + c2 * o * o - c3 * o * o * o, c1 - 2.0 * c2 * o + 3.0 * c3 * o * o,
            c2 - 3.0 * c3 * o, c3};
  }
};

namespace detail {

/// Dense Gaussian elimination with partial pivoting, in place.
template <std::size_t N>
std::array<double, N> solve_small(std::array<std::array<double, N>, N> a, std::array<double, N> b) {
  for (std::size_t col = 0; col < N; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < N; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col]))
        piv = r;
    if (std::abs(a[piv][col]) < 1e-300)
      throw SingularSystem("SingularSystem: transition system is singular");
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = col + 1; r < N; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < N; ++c)
        a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::array<double, N> x{};
  for (std::size_t i = N; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < N; ++c)
      s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

} // namespace detail

/// Solves value and slope matching at both ends of the window:
///   g(psi4) = lambda + psi2 psi4,  g(psi4 + v) = psi1 + psi3 (psi4 + v),
///   g'(psi4) = psi2,               g'(psi4 + v) = psi3.
inline TransitionPoly solve_transition(const SubjectParams &psi, double v) {
  if (!(v > 0.0))
    throw SingularSystem("SingularSystem: transition width must be positive");
  const double a = psi[3], b = psi[3] + v;
  const double lambda = lambda_constraint(psi, v);
  // Unknowns c0..c3 in s = (t - a)/v; derivative conditions scaled by v.
  const std::array<std::array<double, 4>, 4> m{{{1.0, 0.0, 0.0, 0.0},
                                                {1.0, 1.0, 1.0, 1.0},
                                                {0.0, 1.0, 0.0, 0.0},
                                                {0.0, 1.0, 2.0, 3.0}}};
  const std::array<double, 4> rhs{lambda + psi[1] * a, psi[0] + psi[2] * b, psi[1] * v,
                                  psi[2] * v};
  TransitionPoly poly;
  poly.local = detail::solve_small<4>(m, rhs);
  poly.origin = a;
  poly.width = v;
  return poly;
}

/// Smooth-transition broken stick; v = 0 is the abrupt model.
inline double pmms_value(double t, const SubjectParams &psi, double v) {
  if (v == 0.0)
    return pmma_value(t, psi);
  if (t < psi[3])
    return psi[0] + psi[2] * t + (psi[1] - psi[2]) * (t - psi[3] - v / 2.0);
  if (t <= psi[3] + v)
    return solve_transition(psi, v).value(t);
  return psi[0] + psi[2] * t;
}

/// Analytic gradient via the cubic Hermite form of the same polynomial.
inline std::array<double, 4> pmms_gradient(double t, const SubjectParams &psi, double v) {
  if (v == 0.0)
    return pmma_gradient(t, psi);
  const double a = psi[3], mid = a + v / 2.0;
  if (t < a)
    return {1.0, t - mid, mid, psi[2] - psi[1]};
  if (t > a + v)
    return {1.0, 0.0, t, 0.0};
  const double s = (t - a) / v, s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2,
               h11 = s3 - s2;
  // g'(t) in Hermite form
  const double lambda = lambda_constraint(psi, v);
  const double p0 = lambda + psi[1] * a, p1 = psi[0] + psi[2] * (a + v);
  const double dh00 = 6 * s2 - 6 * s, dh10 = 3 * s2 - 4 * s + 1, dh01 = -6 * s2 + 6 * s,
               dh11 = 3 * s2 - 2 * s;
  const double gprime = (dh00 * p0 + dh01 * p1) / v + dh10 * psi[1] + dh11 * psi[2];
  return {h00 + h01, -h00 * v / 2.0 + h10 * v, h00 * mid + h01 * (a + v) + h11 * v,
          psi[2] - gprime};
}

inline double structural_value(ModelKind kind, double t, const SubjectParams &psi, double v) {
  switch (kind) {
  case ModelKind::Smm: return smm_value(t, psi);
  case ModelKind::PmmAbrupt: return pmma_value(t, psi);
  case ModelKind::PmmSmooth: return pmms_value(t, psi, v);
  }
  return 0.0;
}

inline std::array<double, 4> structural_gradient(ModelKind kind, double t,
                                                 const SubjectParams &psi, double v) {
  switch (kind) {
  case ModelKind::Smm: return smm_gradient(t, psi);
  case ModelKind::PmmAbrupt: return pmma_gradient(t, psi);
  case ModelKind::PmmSmooth: return pmms_gradient(t, psi, v);
  }
  return {};
}

/// Model-level structure: which covariates enter each parameter and which
/// parameters carry a random effect.
struct ModelSpec {
  ModelKind kind = ModelKind::Smm;
  std::array<std::vector<std::string>, 4> covariates;
  std::array<bool, 4> random = {true, true, false, false};
  bool correlated = true;             // estimate the covariance of correlated_pair(kind)
  double transition_width = 2.0;      // v, time units; PMM-smooth only

  static ModelSpec standard(ModelKind kind) {
    ModelSpec m;
    m.kind = kind;
    m.random = default_random_mask(kind);
    return m;
  }

  std::vector<std::string> all_covariates() const {
    std::vector<std::string> out;
    for (const auto &c : covariates)
      for (const auto &name : c)
        if (std::find(out.begin(), out.end(), name) == out.end())
          out.push_back(name);
    return out;
  }

  void check() const {
    if (kind == ModelKind::Smm && (random[2] || random[3]))
      throw UsageError("SMM midpoint and Hill slope cannot carry random effects");
    if (transition_width < 0.0 || !std::isfinite(transition_width))
      throw UsageError("transition width must be a nonnegative finite number");
    for (const auto &c : covariates)
      for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = i + 1; j < c.size(); ++j)
          if (c[i] == c[j])
            throw UsageError("covariate '" + c[i] + "' listed twice for one parameter");
  }
};

} // namespace nlmix
