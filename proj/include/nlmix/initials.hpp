#pragma once

#include "nlmix/dataset.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/lmm.hpp"
#include "nlmix/stats.hpp"
#include "nlmix/structural.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace nlmix {

enum class StartProvenance { Auto, User, Naive };

inline std::string_view provenance_name(StartProvenance p) {
  switch (p) {
  case StartProvenance::Auto: return "auto";
  case StartProvenance::User: return "user";
  case StartProvenance::Naive: return "naive";
  }
  return "?";
}

/// Starting values for the four structural parameters, in structural order.
struct StartValues {
  ModelKind kind = ModelKind::Smm;
  std::array<double, 4> values{};
  StartProvenance provenance = StartProvenance::Auto;
  bool fallback = false; // the automatic rule could not be applied as designed
  std::string note;

  double operator[](std::size_t k) const { return values[k]; }
};

inline void check_start(const StartValues &s) {
  for (double v : s.values)
    if (!std::isfinite(v))
      throw UsageError("start values must be finite");
  if (s.kind == ModelKind::Smm && s.values[2] == 0.0)
    throw UsageError("SMM midpoint start must be nonzero");
  if (s.kind == ModelKind::Smm && s.provenance != StartProvenance::Naive && !(s.values[3] > 0.0))
    throw UsageError("SMM Hill slope start must be positive");
}

inline StartValues user_start(ModelKind kind, const std::array<double, 4> &values) {
  StartValues s{kind, values, StartProvenance::User, false, {}};
  check_start(s);
  return s;
}

/// All-zero starts; the SMM midpoint cannot be zero and takes -0.1 instead.
inline StartValues naive_start(ModelKind kind) {
  StartValues s{kind, {0.0, 0.0, 0.0, 0.0}, StartProvenance::Naive, false, {}};
  if (kind == ModelKind::Smm)
    s.values[2] = -0.1;
  return s;
}

namespace detail {

struct PooledObs {
  std::vector<double> t, y; // pooled over subjects, dataset order
};

inline PooledObs pooled(const LongitudinalDataset &data) {
  PooledObs p;
  for (const auto &s : data.subjects)
    for (const auto &o : s.observations) {
      p.t.push_back(o.time);
      p.y.push_back(o.outcome);
    }
  return p;
}

inline std::size_t distinct_count(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

/// Mean outcome over observations whose time passes `in_window`.
template <class Pred>
double window_mean(const PooledObs &p, Pred in_window) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.t.size(); ++i)
    if (in_window(p.t[i])) {
      sum += p.y[i];
      ++n;
    }
  if (n == 0)
    throw DegenerateWindow("DegenerateWindow: percentile window holds no observation");
  return sum / static_cast<double>(n);
}

/// Curvature test: the quadratic term of a centred OLS fit y ~ 1 + t + t^2
/// moves the curve by |c2| (span/2)^2 across the observed span; the data
/// count as nearly linear when that is under 5% of the outcome range.
inline bool nearly_linear(const PooledObs &p) {
  const auto [tlo, thi] = std::minmax_element(p.t.begin(), p.t.end());
  const auto [ylo, yhi] = std::minmax_element(p.y.begin(), p.y.end());
  const double range = *yhi - *ylo;
  if (range == 0.0 || distinct_count(p.t) < 3)
    return true;
  const double tc = mean(p.t);
  Eigen::MatrixXd x(p.t.size(), 3);
  Eigen::VectorXd y(p.t.size());
  for (std::size_t i = 0; i < p.t.size(); ++i) {
    const double u = p.t[i] - tc;
    x.row(static_cast<Eigen::Index>(i)) << 1.0, u, u * u;
    y(static_cast<Eigen::Index>(i)) = p.y[i];
  }
  const Eigen::VectorXd c = x.colPivHouseholderQr().solve(y);
  const double half = (*thi - *tlo) / 2.0;
  return std::abs(c(2)) * half * half < 0.05 * range;
}

} // namespace detail

/// Automatic SMM starts from the pooled observations.
inline StartValues initials_smm(const LongitudinalDataset &data) {
  const auto p = detail::pooled(data);
  if (detail::distinct_count(p.t) < 2)
    throw DegenerateWindow("DegenerateWindow: SMM starts need at least 2 distinct times");
  std::vector<double> sorted = p.t;
  std::sort(sorted.begin(), sorted.end());
  const double p5 = percentile_sorted(sorted, 0.05), p95 = percentile_sorted(sorted, 0.95);

  StartValues s;
  s.kind = ModelKind::Smm;
  s.values[0] = detail::window_mean(p, [&](double t) { return t <= p5; });
  s.values[1] = detail::window_mean(p, [&](double t) { return t >= p95; });

  const double med = percentile_sorted(sorted, 0.5);
  double sign = med < 0 ? -1.0 : med > 0 ? 1.0 : 0.0;
  if (sign == 0.0)
    sign = mean(p.t) < 0 ? -1.0 : 1.0;
  const bool linear = detail::nearly_linear(p);
  s.values[2] = sign * (linear ? 300.0 : 2.0);

  // Per-year pooled means, evaluated at the bucket's mean time.
  std::map<long, std::pair<double, double>> acc; // sum t, sum y
  std::map<long, std::size_t> cnt;
  for (std::size_t i = 0; i < p.t.size(); ++i) {
    const long b = static_cast<long>(std::floor(p.t[i]));
    acc[b].first += p.t[i];
    acc[b].second += p.y[i];
    cnt[b]++;
  }
  double best_sse = INFINITY;
  for (double hill : {0.5, 1.05}) {
    SubjectParams psi{{s.values[0], s.values[1], s.values[2], hill}};
    double sse = 0;
    for (const auto &[b, sums] : acc) {
      const double n = static_cast<double>(cnt[b]);
      const double t = sums.first / n;
      if (t / psi[2] < 0.0)
        continue;
      const double d = smm_value(t, psi) - sums.second / n;
      sse += d * d;
    }
    if (sse < best_sse) {
      best_sse = sse;
      s.values[3] = hill;
    }
  }
  s.note = linear ? "outcome nearly linear in time; midpoint start 300 in magnitude"
                  : "outcome curved in time; midpoint start 2 in magnitude";
  return s;
}

/// Quintile intervals of pooled observation times: [min, q1], (q1, q2], ...,
/// (q4, max]. Returned as lower bounds plus the upper bounds.
struct QuintileSplit {
  std::array<double, 5> lower{};
  std::array<double, 5> upper{};
  std::array<double, 5> slope{};
  int steepest = -1;
};

/// Automatic PMM starts: level from the final percentile window, changepoint
/// at the lower bound of the quintile with the steepest LMM slope.
inline StartValues initials_pmm(const LongitudinalDataset &data,
                                QuintileSplit *diagnostics = nullptr) {
  const auto p = detail::pooled(data);
  std::vector<double> sorted = p.t;
  std::sort(sorted.begin(), sorted.end());
  if (detail::distinct_count(p.t) < 2)
    throw DegenerateWindow("DegenerateWindow: PMM starts need at least 2 distinct times");
  const double p95 = percentile_sorted(sorted, 0.95);

  StartValues s;
  s.kind = ModelKind::PmmAbrupt;
  s.values[0] = detail::window_mean(p, [&](double t) { return t >= p95; });

  auto fallback = [&](const std::string &why) {
    const auto whole = fit_simple_lmm(data);
    s.values[1] = s.values[2] = whole.slope;
    s.values[3] = (sorted.front() + sorted.back()) / 2.0;
    s.fallback = true;
    s.note = "QuintileDegenerate: " + why;
    return s;
  };

  if (detail::distinct_count(p.t) < 5)
    return fallback("fewer than 5 distinct observation times");

  QuintileSplit q;
  const std::array<double, 4> cuts{percentile_sorted(sorted, 0.2), percentile_sorted(sorted, 0.4),
                                   percentile_sorted(sorted, 0.6), percentile_sorted(sorted, 0.8)};
  for (int k = 0; k < 5; ++k) {
    q.lower[k] = k == 0 ? sorted.front() : cuts[k - 1];
    q.upper[k] = k == 4 ? sorted.back() : cuts[k];
  }
  try {
    for (int k = 0; k < 5; ++k) {
      const double lo = q.lower[k], hi = q.upper[k];
      const auto part = filter_time(
          data, [&](double t) { return (k == 0 ? t >= lo : t > lo) && t <= hi; });
      q.slope[k] = fit_simple_lmm(part).slope;
    }
  } catch (const DataError &e) {
    return fallback(e.what());
  } catch (const SingularDesign &e) {
    return fallback(e.what());
  }

  // Largest |slope|; near-ties resolve to the later quintile.
  int best = 0;
  for (int k = 1; k < 5; ++k) {
    const double a = std::abs(q.slope[k]), b = std::abs(q.slope[best]);
    if (a >= b - 1e-9 * std::max(a, b))
      best = k;
  }
  q.steepest = best;
  if (diagnostics)
    *diagnostics = q;
  const double cp = q.lower[best];
  s.values[3] = cp;

  auto segment_slope = [&](bool before, double fallback_slope) {
    try {
      const auto part = filter_time(data, [&](double t) { return before ? t < cp : t >= cp; });
      if (part.subjects.empty())
        return fallback_slope;
      return fit_simple_lmm(part).slope;
    } catch (const DataError &) {
      return fallback_slope;
    } catch (const SingularDesign &) {
      return fallback_slope;
    }
  };
  s.values[1] = segment_slope(true, q.slope[std::max(best - 1, 0)]);
  s.values[2] = segment_slope(false, q.slope[best]);
  return s;
}

inline StartValues initial_values(const LongitudinalDataset &data, ModelKind kind) {
  auto s = kind == ModelKind::Smm ? initials_smm(data) : initials_pmm(data);
  s.kind = kind;
  return s;
}

} // namespace nlmix
