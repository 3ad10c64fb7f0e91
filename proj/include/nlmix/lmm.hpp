#pragma once

#include "nlmix/dataset.hpp"
#include "nlmix/errors.hpp"

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <numbers>
#include <vector>

namespace nlmix {

/// y_ij = intercept + slope * t_ij + b_i + e_ij, b_i ~ N(0, tau2), e_ij ~ N(0, sigma2).
struct SimpleLmmFit {
  double intercept = 0.0;
  double slope = 0.0;
  double tau2 = 0.0;   // random-intercept variance
  double sigma2 = 0.0; // residual variance
  bool converged = false;
  double minus2ll = 0.0;
};

namespace detail {

struct LmmSubjectSums {
  double n = 0, st = 0, sy = 0, stt = 0, sty = 0, syy = 0;
};

struct LmmProfile {
  double b0 = 0, b1 = 0, sigma2 = 0, minus2ll = 0;
};

/// GLS at variance ratio rho = tau2/sigma2, using (I + rho J)^-1 = I - rho/(1 + n rho) J.
inline LmmProfile lmm_profile(const std::vector<LmmSubjectSums> &sums, double total_n,
                              double rho) {
  double a00 = 0, a01 = 0, a11 = 0, r0 = 0, r1 = 0, logdet = 0;
  for (const auto &s : sums) {
    const double c = rho / (1.0 + s.n * rho);
    a00 += s.n - c * s.n * s.n;
    a01 += s.st - c * s.n * s.st;
    a11 += s.stt - c * s.st * s.st;
    r0 += s.sy - c * s.n * s.sy;
    r1 += s.sty - c * s.st * s.sy;
    logdet += std::log1p(s.n * rho);
  }
  const double det = a00 * a11 - a01 * a01;
  if (!(std::abs(det) > 1e-300))
    throw SingularDesign("SingularDesign: time has no spread within the window");
  LmmProfile p;
  p.b0 = (a11 * r0 - a01 * r1) / det;
  p.b1 = (a00 * r1 - a01 * r0) / det;
  double q = 0;
  for (const auto &s : sums) {
    const double c = rho / (1.0 + s.n * rho);
    const double rr = s.syy - 2 * p.b0 * s.sy - 2 * p.b1 * s.sty + p.b0 * p.b0 * s.n +
                      2 * p.b0 * p.b1 * s.st + p.b1 * p.b1 * s.stt;
    const double r = s.sy - p.b0 * s.n - p.b1 * s.st;
    q += rr - c * r * r;
  }
  p.sigma2 = std::max(q / total_n, 0.0);
  p.minus2ll = total_n * std::log(p.sigma2) + logdet +
               total_n * (1.0 + std::log(2.0 * std::numbers::pi));
  return p;
}

} // namespace detail

/// Maximum-likelihood random-intercept LMM. The likelihood is profiled over
/// the intercept, slope and residual variance, leaving a 1-D search in
/// log(tau2/sigma2).
inline SimpleLmmFit fit_simple_lmm(const LongitudinalDataset &data) {
  if (data.n_subjects() < 2)
    throw TooFewSubjects("TooFewSubjects: a linear mixed model needs at least 2 subjects");
  double tmin = INFINITY, tmax = -INFINITY, tsum = 0;
  std::size_t n = 0;
  bool repeated = false;
  for (const auto &s : data.subjects) {
    repeated = repeated || s.observations.size() > 1;
    for (const auto &o : s.observations) {
      tmin = std::min(tmin, o.time);
      tmax = std::max(tmax, o.time);
      tsum += o.time;
      ++n;
    }
  }
  if (!(tmax > tmin))
    throw DegenerateWindow("DegenerateWindow: all observation times are equal");

  // Centre time for conditioning; the intercept is shifted back at the end.
  const double tc = tsum / static_cast<double>(n);
  std::vector<detail::LmmSubjectSums> sums;
  sums.reserve(data.n_subjects());
  for (const auto &s : data.subjects) {
    detail::LmmSubjectSums a;
    for (const auto &o : s.observations) {
      const double t = o.time - tc;
      a.n += 1;
      a.st += t;
      a.sy += o.outcome;
      a.stt += t * t;
      a.sty += t * o.outcome;
      a.syy += o.outcome * o.outcome;
    }
    sums.push_back(a);
  }
  const double total_n = static_cast<double>(n);

  auto finish = [&](const detail::LmmProfile &p, double rho, bool converged) {
    SimpleLmmFit fit;
    fit.slope = p.b1;
    fit.intercept = p.b0 - p.b1 * tc;
    fit.sigma2 = std::max(p.sigma2, 1e-12);
    fit.tau2 = rho * fit.sigma2;
    fit.converged = converged;
    fit.minus2ll = std::isfinite(p.minus2ll) ? p.minus2ll : -INFINITY;
    return fit;
  };

  const auto ols = detail::lmm_profile(sums, total_n, 0.0);
  if (!repeated)
    return finish(ols, 0.0, false); // variances are not separately identifiable

  double yy = 0;
  for (const auto &s : sums)
    yy += s.syy;
  if (ols.sigma2 <= 1e-24 * (1.0 + yy / total_n))
    return finish(ols, 0.0, true); // data lie exactly on a line

  auto objective = [&](double log_rho) {
    return detail::lmm_profile(sums, total_n, std::exp(log_rho)).minus2ll;
  };
  // Coarse scan, then Brent refinement in the bracketing cell.
  constexpr double lo = -15.0, hi = 8.0;
  constexpr int cells = 46;
  const double h = (hi - lo) / cells;
  int best = 0;
  double best_val = INFINITY;
  for (int c = 0; c <= cells; ++c) {
    const double v = objective(lo + c * h);
    if (v < best_val) {
      best_val = v;
      best = c;
    }
  }
  const double a = lo + std::max(best - 1, 0) * h, b = lo + std::min(best + 1, cells) * h;
  const auto [log_rho, val] = boost::math::tools::brent_find_minima(objective, a, b, 40);
  if (!(val < ols.minus2ll))
    return finish(ols, 0.0, true);
  const double rho = std::exp(log_rho);
  return finish(detail::lmm_profile(sums, total_n, rho), rho, true);
}

} // namespace nlmix
