#pragma once

#include "nlmix/dataset.hpp"
#include "nlmix/inspect.hpp"
#include "nlmix/saem.hpp"
#include "nlmix/stats.hpp"
#include "nlmix/svg.hpp"
#include "nlmix/trajectory.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace nlmix {

inline void write_trajectory_csv(const std::vector<MarginalTrajectory> &trs, std::ostream &out) {
  out << "label,time,value\n";
  for (const auto &tr : trs)
    for (std::size_t i = 0; i < tr.time.size(); ++i)
      out << detail::csv_field(tr.label) << ',' << exact(tr.time[i]) << ',' << exact(tr.value[i])
          << '\n';
}

inline std::string trajectory_svg(const std::vector<MarginalTrajectory> &trs,
                                  const std::string &title, const std::string &xlabel,
                                  const std::string &ylabel) {
  std::vector<SvgSeries> series;
  for (const auto &tr : trs)
    series.push_back({tr.label, tr.time, tr.value});
  return svg_lines(series, title, xlabel, ylabel);
}

inline void write_trace_csv(const FittedModel &fit, std::ostream &out) {
  out << "iteration";
  for (const auto &n : fit.trace_names)
    out << ',' << detail::csv_field(n);
  out << '\n';
  for (std::size_t k = 0; k < fit.trace.size(); ++k) {
    out << k;
    for (double v : fit.trace[k])
      out << ',' << exact(v);
    out << '\n';
  }
}

/// Individual parameter estimates, one row per subject.
inline void write_psi_csv(const FittedModel &fit, std::ostream &out) {
  const auto &names = parameter_names(fit.model.kind);
  out << "id";
  for (const auto &n : names)
    out << ',' << n;
  out << '\n';
  for (const auto &s : fit.subjects) {
    out << detail::csv_field(s.id);
    for (double v : s.psi.psi)
      out << ',' << exact(v);
    out << '\n';
  }
}

inline void write_histogram_csv(const std::vector<HistogramBin> &bins, std::ostream &out) {
  out << "lower,upper,count\n";
  for (const auto &b : bins)
    out << exact(b.lower) << ',' << exact(b.upper) << ',' << b.count << '\n';
}

inline void write_spaghetti_csv(const std::vector<SpaghettiSeries> &series, std::ostream &out) {
  out << "id,time,value\n";
  for (const auto &s : series)
    for (const auto &o : s.observations)
      out << detail::csv_field(s.subject_id) << ',' << exact(o.time) << ',' << exact(o.outcome)
          << '\n';
}

inline std::string spaghetti_svg(const std::vector<SpaghettiSeries> &series,
                                 const std::string &title, const std::string &xlabel,
                                 const std::string &ylabel) {
  std::vector<SvgSeries> lines;
  for (const auto &s : series) {
    SvgSeries l{s.subject_id, {}, {}};
    for (const auto &o : s.observations) {
      l.x.push_back(o.time);
      l.y.push_back(o.outcome);
    }
    lines.push_back(std::move(l));
  }
  return svg_lines(lines, title, xlabel, ylabel, 0.6, false);
}

inline void write_yearly_csv(const std::vector<BucketStats> &buckets, std::ostream &out) {
  out << "year,n,min,q1,median,q3,max\n";
  for (const auto &b : buckets)
    out << b.bucket << ',' << b.n << ',' << exact(b.min) << ',' << exact(b.q1) << ','
        << exact(b.median) << ',' << exact(b.q3) << ',' << exact(b.max) << '\n';
}

} // namespace nlmix
