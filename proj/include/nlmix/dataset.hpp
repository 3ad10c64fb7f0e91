#pragma once

#include "nlmix/errors.hpp"
#include "nlmix/stats.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nlmix {

struct Observation {
  double time = 0.0;
  double outcome = 0.0;
};

using CovariateMap = std::map<std::string, double>;

struct SubjectRecord {
  std::string id;
  std::vector<Observation> observations; // ascending, strictly increasing time
  CovariateMap covariates;               // time-invariant
};

/// Long-format longitudinal data. Immutable once built by make_dataset or
/// load_dataset; every instance satisfies the invariants checked in validate().
struct LongitudinalDataset {
  std::vector<SubjectRecord> subjects;
  std::string id_name = "ID";
  std::string time_name = "time";
  std::string outcome_name = "outcome";
  std::vector<std::string> covariate_names;
  std::size_t dropped_rows = 0; // rows removed for missing/non-numeric outcome or time

  std::size_t n_subjects() const { return subjects.size(); }

  std::size_t n_observations() const {
    std::size_t n = 0;
    for (const auto &s : subjects)
      n += s.observations.size();
    return n;
  }

  bool has_covariate(const std::string &name) const {
    return std::find(covariate_names.begin(), covariate_names.end(), name) !=
           covariate_names.end();
  }

  std::pair<double, double> time_range() const {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto &s : subjects)
      for (const auto &o : s.observations) {
        lo = std::min(lo, o.time);
        hi = std::max(hi, o.time);
      }
    return {lo, hi};
  }

  std::vector<double> all_times() const {
    std::vector<double> t;
    t.reserve(n_observations());
    for (const auto &s : subjects)
      for (const auto &o : s.observations)
        t.push_back(o.time);
    return t;
  }

  /// Per-subject values of one covariate, in subject order.
  std::vector<double> covariate_values(const std::string &name) const {
    std::vector<double> v;
    v.reserve(subjects.size());
    for (const auto &s : subjects) {
      auto it = s.covariates.find(name);
      if (it == s.covariates.end())
        throw MissingCovariate(name, s.id);
      v.push_back(it->second);
    }
    return v;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

/// Splits one CSV record. Double quotes delimit fields containing commas;
/// "" inside a quoted field is a literal quote.
inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA"; }

inline std::optional<double> parse_real(std::string_view s) {
  s = trim(s);
  if (s.empty())
    return std::nullopt;
  if (s.front() == '+')
    s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

/// Numeric ids compare numerically, everything else lexicographically.
inline bool id_less(const std::string &a, const std::string &b) {
  const auto na = parse_real(a), nb = parse_real(b);
  if (na && nb && *na != *nb)
    return *na < *nb;
  if (na && !nb)
    return true;
  if (!na && nb)
    return false;
  return a < b;
}

inline std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"") == std::string::npos)
    return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"')
      q += '"';
    q += c;
  }
  return q + "\"";
}

} // namespace detail

/// Checks dataset invariants; throws the matching DataError.
inline void validate(const LongitudinalDataset &data) {
  if (data.subjects.empty())
    throw EmptyDataset();
  std::set<std::string> ids;
  for (const auto &s : data.subjects) {
    if (!ids.insert(s.id).second)
      throw DataError("duplicate subject id '" + s.id + "'");
    if (s.observations.empty())
      throw EmptyDataset();
    for (std::size_t j = 0; j < s.observations.size(); ++j) {
      const auto &o = s.observations[j];
      if (!std::isfinite(o.time) || !std::isfinite(o.outcome))
        throw DataError("non-finite observation for subject '" + s.id + "'");
      if (j > 0 && !(o.time > s.observations[j - 1].time)) {
        if (o.time == s.observations[j - 1].time)
          throw DuplicateTimePoint(s.id, o.time);
        throw DataError("observations of subject '" + s.id + "' not sorted by time");
      }
    }
    for (const auto &name : data.covariate_names)
      if (!s.covariates.contains(name))
        throw MissingCovariate(name, s.id);
  }
}

/// Sorts subjects by id and observations by time, then validates.
inline LongitudinalDataset make_dataset(LongitudinalDataset data) {
  for (auto &s : data.subjects)
    std::sort(s.observations.begin(), s.observations.end(),
              [](const Observation &a, const Observation &b) { return a.time < b.time; });
  std::sort(data.subjects.begin(), data.subjects.end(),
            [](const SubjectRecord &a, const SubjectRecord &b) { return detail::id_less(a.id, b.id); });
  validate(data);
  return data;
}

struct LoadOptions {
  /// When true a non-numeric outcome or time cell is an error; otherwise the
  /// row is dropped and counted like a missing value.
  bool strict = false;
};

inline LongitudinalDataset load_dataset(std::istream &in, const std::string &id_name,
                                        const std::string &outcome_name,
                                        const std::string &time_name,
                                        const std::vector<std::string> &covariate_names,
                                        LoadOptions options = {}) {
  std::string line;
  if (!std::getline(in, line))
    throw EmptyDataset();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
    line.erase(0, 3);
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  const auto header = detail::split_csv(line);
  auto column = [&](const std::string &name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw MissingColumn(name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column(id_name), y_col = column(outcome_name),
                    t_col = column(time_name);
  std::vector<std::size_t> cov_cols;
  for (const auto &c : covariate_names)
    cov_cols.push_back(column(c));

  LongitudinalDataset data;
  data.id_name = id_name;
  data.outcome_name = outcome_name;
  data.time_name = time_name;
  data.covariate_names = covariate_names;

  std::unordered_map<std::string, std::size_t> index;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (detail::trim(line).empty())
      continue;
    ++row;
    const auto fields = detail::split_csv(line);
    auto field = [&](std::size_t c) -> std::string_view {
      return c < fields.size() ? std::string_view(fields[c]) : std::string_view{};
    };
    const std::string id(field(id_col));
    if (detail::is_missing(id))
      throw DataError("row " + std::to_string(row) + ": missing subject id");

    std::optional<double> t, y;
    bool drop = false;
    for (auto [col, slot] : {std::pair{t_col, &t}, std::pair{y_col, &y}}) {
      const auto text = field(col);
      if (detail::is_missing(text)) {
        drop = true;
        continue;
      }
      *slot = detail::parse_real(text);
      if (!*slot) {
        if (options.strict)
          throw NonNumericValue(row, header[col], std::string(text));
        drop = true;
      }
    }

    CovariateMap covs;
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      const auto text = field(cov_cols[k]);
      if (detail::is_missing(text))
        throw MissingCovariate(covariate_names[k], id);
      const auto v = detail::parse_real(text);
      if (!v)
        throw NonNumericValue(row, covariate_names[k], std::string(text));
      covs[covariate_names[k]] = *v;
    }

    auto [it, inserted] = index.try_emplace(id, data.subjects.size());
    if (inserted)
      data.subjects.push_back(SubjectRecord{id, {}, covs});
    auto &subject = data.subjects[it->second];
    for (const auto &[name, value] : covs)
      if (subject.covariates.at(name) != value)
        throw TimeVaryingCovariate(name, id);
    if (drop) {
      ++data.dropped_rows;
      continue;
    }
    subject.observations.push_back({*t, *y});
  }

  std::erase_if(data.subjects, [](const SubjectRecord &s) { return s.observations.empty(); });
  if (data.subjects.empty())
    throw EmptyDataset();
  return make_dataset(std::move(data));
}

inline LongitudinalDataset load_dataset(const std::string &path, const std::string &id_name,
                                        const std::string &outcome_name,
                                        const std::string &time_name,
                                        const std::vector<std::string> &covariate_names,
                                        LoadOptions options = {}) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open data file '" + path + "'");
  return load_dataset(in, id_name, outcome_name, time_name, covariate_names, options);
}

inline void write_dataset(const LongitudinalDataset &data, std::ostream &out) {
  out << detail::csv_field(data.id_name) << ',' << detail::csv_field(data.time_name) << ','
      << detail::csv_field(data.outcome_name);
  for (const auto &c : data.covariate_names)
    out << ',' << detail::csv_field(c);
  out << '\n';
  for (const auto &s : data.subjects)
    for (const auto &o : s.observations) {
      out << detail::csv_field(s.id) << ',' << exact(o.time) << ',' << exact(o.outcome);
      for (const auto &c : data.covariate_names)
        out << ',' << exact(s.covariates.at(c));
      out << '\n';
    }
}

inline void write_dataset(const LongitudinalDataset &data, const std::string &path) {
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write '" + path + "'");
  write_dataset(data, out);
}

/// Subset keeping observations whose time satisfies `keep`; subjects left
/// without observations are removed.
template <class Pred>
LongitudinalDataset filter_time(const LongitudinalDataset &data, Pred keep) {
  LongitudinalDataset out;
  out.id_name = data.id_name;
  out.time_name = data.time_name;
  out.outcome_name = data.outcome_name;
  out.covariate_names = data.covariate_names;
  for (const auto &s : data.subjects) {
    SubjectRecord r{s.id, {}, s.covariates};
    for (const auto &o : s.observations)
      if (keep(o.time))
        r.observations.push_back(o);
    if (!r.observations.empty())
      out.subjects.push_back(std::move(r));
  }
  return out;
}

} // namespace nlmix
