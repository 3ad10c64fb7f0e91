#pragma once

#include "nlmix/inspect.hpp"
#include "nlmix/stats.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace nlmix {

struct SvgSeries {
  std::string label;
  std::vector<double> x, y;
};

namespace svg {

inline std::string escape(const std::string &s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

inline const char *colour(std::size_t i) {
  static const char *palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  return palette[i % 8];
}

/// Maps data coordinates onto one plotting panel and draws its frame.
struct Panel {
  double x0, y0, w, h; // pixel box
  double xmin, xmax, ymin, ymax;

  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }

  void frame(std::ostream &o, const std::string &title, const std::string &xlabel,
             const std::string &ylabel) const {
    o << "<rect x='" << x0 << "' y='" << y0 << "' width='" << w << "' height='" << h
      << "' fill='none' stroke='#444'/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = xmin + (xmax - xmin) * i / 4.0, yv = ymin + (ymax - ymin) * i / 4.0;
      o << "<text x='" << px(xv) << "' y='" << y0 + h + 14
        << "' font-size='10' text-anchor='middle'>" << fixed(xv, 2) << "</text>\n";
      o << "<text x='" << x0 - 4 << "' y='" << py(yv) + 3
        << "' font-size='10' text-anchor='end'>" << fixed(yv, 2) << "</text>\n";
    }
    o << "<text x='" << x0 + w / 2 << "' y='" << y0 - 8
      << "' font-size='13' text-anchor='middle'>" << escape(title) << "</text>\n";
    o << "<text x='" << x0 + w / 2 << "' y='" << y0 + h + 30
      << "' font-size='11' text-anchor='middle'>" << escape(xlabel) << "</text>\n";
    o << "<text x='" << x0 - 44 << "' y='" << y0 + h / 2 << "' font-size='11' "
      << "text-anchor='middle' transform='rotate(-90 " << x0 - 44 << ' ' << y0 + h / 2 << ")'>"
      << escape(ylabel) << "</text>\n";
  }
};

inline void widen(double &lo, double &hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

inline std::string open(double width, double height) {
  std::ostringstream o;
  o << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
    << "' viewBox='0 0 " << width << ' ' << height << "'>\n"
    << "<rect width='100%' height='100%' fill='white'/>\n";
  return o.str();
}

} // namespace svg

/// Line chart of one or more series with a legend.
inline std::string svg_lines(const std::vector<SvgSeries> &series, const std::string &title,
                             const std::string &xlabel, const std::string &ylabel,
                             double opacity = 1.0, bool legend = true) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto &s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) {
    xmin = ymin = 0;
    xmax = ymax = 1;
  }
  svg::widen(xmin, xmax);
  svg::widen(ymin, ymax);
  const svg::Panel p{70, 40, 520, 320, xmin, xmax, ymin, ymax};
  std::ostringstream o;
  o << svg::open(legend ? 760 : 620, 410);
  p.frame(o, title, xlabel, ylabel);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto &s = series[k];
    o << "<polyline fill='none' stroke='" << svg::colour(k) << "' stroke-width='1.5' "
      << "stroke-opacity='" << opacity << "' points='";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      o << p.px(s.x[i]) << ',' << p.py(s.y[i]) << ' ';
    o << "'/>\n";
    if (legend) {
      const double ly = 50 + 16.0 * static_cast<double>(k);
      o << "<line x1='600' y1='" << ly << "' x2='620' y2='" << ly << "' stroke='"
        << svg::colour(k) << "' stroke-width='2'/>\n"
        << "<text x='625' y='" << ly + 4 << "' font-size='11'>" << svg::escape(s.label)
        << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

inline std::string svg_histogram(const std::vector<HistogramBin> &bins, const std::string &title,
                                 const std::string &xlabel) {
  double ymax = 1;
  for (const auto &b : bins)
    ymax = std::max(ymax, static_cast<double>(b.count));
  const double xmin = bins.empty() ? 0 : bins.front().lower;
  const double xmax = bins.empty() ? 1 : bins.back().upper;
  const svg::Panel p{70, 40, 520, 320, xmin, xmax, 0.0, ymax};
  std::ostringstream o;
  o << svg::open(620, 410);
  p.frame(o, title, xlabel, "Count");
  for (const auto &b : bins)
    o << "<rect x='" << p.px(b.lower) << "' y='" << p.py(static_cast<double>(b.count))
      << "' width='" << p.px(b.upper) - p.px(b.lower) << "' height='"
      << p.py(0) - p.py(static_cast<double>(b.count))
      << "' fill='#9ecae1' stroke='#3182bd'/>\n";
  o << "</svg>\n";
  return o.str();
}

/// Box per integer time bucket (whiskers at min and max).
inline std::string svg_boxplot(const std::vector<BucketStats> &buckets, const std::string &title,
                               const std::string &xlabel, const std::string &ylabel) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto &b : buckets) {
    xmin = std::min(xmin, static_cast<double>(b.bucket));
    xmax = std::max(xmax, static_cast<double>(b.bucket) + 1.0);
    ymin = std::min(ymin, b.min);
    ymax = std::max(ymax, b.max);
  }
  if (!std::isfinite(xmin)) {
    xmin = ymin = 0;
    xmax = ymax = 1;
  }
  svg::widen(ymin, ymax);
  const svg::Panel p{70, 40, 520, 320, xmin, xmax, ymin, ymax};
  std::ostringstream o;
  o << svg::open(620, 410);
  p.frame(o, title, xlabel, ylabel);
  for (const auto &b : buckets) {
    const double l = p.px(b.bucket + 0.2), r = p.px(b.bucket + 0.8), c = p.px(b.bucket + 0.5);
    o << "<line x1='" << c << "' y1='" << p.py(b.min) << "' x2='" << c << "' y2='"
      << p.py(b.max) << "' stroke='#444'/>\n"
      << "<rect x='" << l << "' y='" << p.py(b.q3) << "' width='" << r - l << "' height='"
      << p.py(b.q1) - p.py(b.q3) << "' fill='#fdd0a2' stroke='#444'/>\n"
      << "<line x1='" << l << "' y1='" << p.py(b.median) << "' x2='" << r << "' y2='"
      << p.py(b.median) << "' stroke='#d94801' stroke-width='2'/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// One small panel per column of a trace table, stacked vertically.
inline std::string svg_trace(const std::vector<std::string> &names,
                             const std::vector<std::vector<double>> &rows) {
  const double ph = 120, gap = 60;
  std::ostringstream o;
  o << svg::open(620, 40 + (ph + gap) * static_cast<double>(names.size()));
  for (std::size_t c = 0; c < names.size(); ++c) {
    double ymin = INFINITY, ymax = -INFINITY;
    for (const auto &r : rows) {
      ymin = std::min(ymin, r[c]);
      ymax = std::max(ymax, r[c]);
    }
    if (!std::isfinite(ymin))
      ymin = ymax = 0;
    svg::widen(ymin, ymax);
    const svg::Panel p{70, 40 + (ph + gap) * static_cast<double>(c), 520, ph, 0.0,
                       std::max<double>(1.0, static_cast<double>(rows.size()) - 1.0), ymin, ymax};
    p.frame(o, names[c], "Iteration", "");
    o << "<polyline fill='none' stroke='#1f77b4' points='";
    for (std::size_t i = 0; i < rows.size(); ++i)
      o << p.px(static_cast<double>(i)) << ',' << p.py(rows[i][c]) << ' ';
    o << "'/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

} // namespace nlmix
