#pragma once

#include "nlmix/dataset.hpp"
#include "nlmix/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace nlmix {

struct HistogramBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
};

struct SpaghettiSeries {
  std::string subject_id;
  std::vector<Observation> observations;
};

/// Five-number summary of the outcome within one floor(time) bucket.
struct BucketStats {
  long bucket = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  std::size_t n = 0;
};

struct InspectionSummary {
  std::vector<HistogramBin> histogram;
  std::vector<SpaghettiSeries> spaghetti;
  std::vector<BucketStats> yearly;
};

struct InspectOptions {
  std::size_t histogram_bins = 30;
  std::size_t spaghetti_size = 70;
};

inline std::vector<HistogramBin> outcome_histogram(const LongitudinalDataset &data,
                                                   std::size_t bins) {
  bins = std::max<std::size_t>(bins, 1);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto &s : data.subjects)
    for (const auto &o : s.observations) {
      lo = std::min(lo, o.outcome);
      hi = std::max(hi, o.outcome);
    }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = lo + width * static_cast<double>(b);
    out[b].upper = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (const auto &s : data.subjects)
    for (const auto &o : s.observations) {
      auto b = static_cast<std::size_t>((o.outcome - lo) / width);
      out[std::min(b, bins - 1)].count++;
    }
  return out;
}

/// Uniform sample of min(size, N) subjects without replacement, returned in
/// dataset order.
inline std::vector<std::size_t> sample_subjects(std::size_t n_subjects, std::size_t size,
                                                std::uint64_t seed) {
  std::vector<std::size_t> idx(n_subjects);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t k = std::min(size, n_subjects);
  auto rng = make_rng(seed, 0x1a5e);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_subjects - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<BucketStats> yearly_buckets(const LongitudinalDataset &data) {
  std::map<long, std::vector<double>> groups;
  for (const auto &s : data.subjects)
    for (const auto &o : s.observations)
      groups[static_cast<long>(std::floor(o.time))].push_back(o.outcome);
  std::vector<BucketStats> out;
  for (auto &[bucket, values] : groups) {
    std::sort(values.begin(), values.end());
    out.push_back({bucket, values.front(), percentile_sorted(values, 0.25),
                   percentile_sorted(values, 0.5), percentile_sorted(values, 0.75),
                   values.back(), values.size()});
  }
  return out;
}

inline InspectionSummary inspect(const LongitudinalDataset &data, std::uint64_t rng_seed,
                                 InspectOptions options = {}) {
  InspectionSummary summary;
  summary.histogram = outcome_histogram(data, options.histogram_bins);
  for (auto i : sample_subjects(data.n_subjects(), options.spaghetti_size, rng_seed))
    summary.spaghetti.push_back({data.subjects[i].id, data.subjects[i].observations});
  summary.yearly = yearly_buckets(data);
  return summary;
}

} // namespace nlmix
