#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlmix {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream, index). Streams are derived with
/// seed_seq so that per-subject chains do not depend on scheduling order.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0,
                    std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

/// Empirical percentile with linear interpolation between order statistics
/// (position p*(n-1) on the sorted sample). p in [0, 1].
inline double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty())
    throw std::invalid_argument("percentile of empty sample");
  if (sorted.size() == 1)
    return sorted.front();
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, p);
}

inline double mean(std::span<const double> v) {
  if (v.empty())
    throw std::invalid_argument("mean of empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Log of the mean of exp(values), computed stably.
inline double log_mean_exp(std::span<const double> values) {
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m))
    return m;
  double s = 0.0;
  for (double v : values)
    s += std::exp(v - m);
  return m + std::log(s / static_cast<double>(values.size()));
}

/// Fixed-precision decimal rendering ("%.Nf"), used by reports and CSV output.
inline std::string fixed(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  return buf;
}

/// Shortest round-trip representation, used for machine-readable CSV.
inline std::string exact(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

} // namespace nlmix
