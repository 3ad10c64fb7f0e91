#pragma once

#include "nlmix/saem.hpp"
#include "nlmix/stats.hpp"
#include "nlmix/structural.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace nlmix {

/// Estimates of magnitude at least 0.001 get 3 decimals, smaller ones 4.
inline std::string format_estimate(double x) {
  if (!std::isfinite(x))
    return "NA";
  return fixed(x, std::abs(x) >= 0.001 || x == 0.0 ? 3 : 4);
}

/// Coefficient of variation in percent, one decimal.
inline std::string format_cv(double estimate, double se) {
  if (!std::isfinite(se) || estimate == 0.0)
    return "NA";
  return fixed(100.0 * se / std::abs(estimate), 1);
}

namespace detail {

/// Left-aligned first column, right-aligned others, two spaces between.
inline void print_table(std::ostream &out, const std::vector<std::vector<std::string>> &rows,
                        bool left_all = false) {
  std::vector<std::size_t> width;
  for (const auto &r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (width.size() <= c)
        width.push_back(0);
      width[c] = std::max(width[c], r[c].size());
    }
  for (const auto &r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      const std::string pad(width[c] - r[c].size(), ' ');
      if (c > 0)
        line += "  ";
      line += (c == 0 || left_all) ? r[c] + pad : pad + r[c];
    }
    while (!line.empty() && line.back() == ' ')
      line.pop_back();
    out << line << '\n';
  }
}

inline void banner(std::ostream &out, const std::string &title) {
  const std::string rule(52, '-');
  const std::size_t inner = title.size() + 4;
  const std::size_t left = inner < rule.size() ? (rule.size() - inner) / 2 : 0;
  const std::size_t right = inner < rule.size() ? rule.size() - inner - left : 0;
  out << rule << '\n'
      << std::string(left, '-') << "  " << title << "  " << std::string(right, '-') << '\n'
      << rule << '\n';
}

} // namespace detail

struct ReportOptions {
  bool elapsed = true; // closing wall-clock line
};

inline std::string render_report(const FittedModel &fit, ReportOptions options = {}) {
  const ModelLayout layout(fit.model);
  const auto order = display_order(fit.model.kind);
  std::ostringstream out;

  out << model_title(fit.model.kind) << " fitted by SAEM\n";
  out << "Data: " << fit.n_subjects << " subjects, " << fit.n_observations
      << " observations; outcome '" << fit.outcome_name << "', time '" << fit.time_name
      << "', id '" << fit.id_name << "'\n";
  if (fit.model.kind == ModelKind::PmmSmooth)
    out << "Transition width: " << exact(fit.model.transition_width) << '\n';
  out << "SAEM: k1=" << fit.config.k1 << ", k2=" << fit.config.k2
      << ", mcmc steps=" << fit.config.mcmc_steps << ", seed=" << fit.config.seed
      << ", importance draws=" << fit.config.is_samples << "\n\n";

  // Random-effect positions in display order.
  std::vector<int> shown;
  for (int k : order)
    if (layout.rand_pos[k] >= 0)
      shown.push_back(layout.rand_pos[k]);

  detail::banner(out, "Variance of random effects");
  {
    std::vector<std::vector<std::string>> rows{{"", "Parameter", "Estimate", "SE", "CV%"}};
    auto add = [&](const VarianceEstimate &v, const std::string &group) {
      rows.push_back({group, v.name, format_estimate(v.estimate), format_estimate(v.se),
                      format_cv(v.estimate, v.se)});
    };
    for (int r : shown)
      for (const auto &v : fit.variances)
        if (v.r == r && v.s == r)
          add(v, layout.param_name(layout.random_params[r]));
    for (const auto &v : fit.variances)
      if (v.r != v.s)
        add(v, "covar");
    if (shown.empty())
      rows.push_back({"(none)"});
    detail::print_table(out, rows);
  }

  detail::banner(out, "Correlation matrix of random effects");
  if (!shown.empty()) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{""};
    for (int c : shown)
      header.push_back("omega2." + layout.param_name(layout.random_params[c]));
    rows.push_back(header);
    for (int r : shown) {
      std::vector<std::string> row{"omega2." + layout.param_name(layout.random_params[r])};
      for (int c : shown) {
        bool decimal = false;
        for (int o : shown)
          decimal = decimal || (o != c && layout.omega_free(o, c));
        const double corr =
            fit.params.omega(r, c) / std::sqrt(fit.params.omega(r, r) * fit.params.omega(c, c));
        const double v = r == c ? 1.0 : layout.omega_free(r, c) ? corr : 0.0;
        row.push_back(decimal ? fixed(v, 2) : fixed(v, 0));
      }
      rows.push_back(row);
    }
    detail::print_table(out, rows, true);
  }

  detail::banner(out, "Statistical criteria");
  out << "Likelihood computed by linearisation\n"
      << "      -2LL= " << fixed(fit.minus2ll_lin, 3) << '\n'
      << "      AIC = " << fixed(fit.aic_lin, 3) << '\n'
      << "      BIC = " << fixed(fit.bic_lin, 3) << "\n\n"
      << "Likelihood computed by importance sampling\n"
      << "      -2LL= " << fixed(fit.minus2ll_is, 3) << '\n'
      << "      AIC = " << fixed(fit.aic_is, 3) << '\n'
      << "      BIC = " << fixed(fit.bic_is, 3) << '\n'
      << "      Monte-Carlo SE of -2LL = " << fixed(fit.is_mc_se, 3) << '\n'
      << "Parameters: " << fit.n_params << "; BIC uses the number of subjects\n";

  detail::banner(out, "Fixed effects");
  {
    std::vector<std::vector<std::string>> rows{{"", "Parameter", "Estimate", "SE", "p-value"}};
    int n = 0;
    for (int k : order)
      for (const auto &c : fit.coefficients)
        if (c.param == k) {
          std::string p = "NA";
          if (std::isfinite(c.se) && c.se > 0)
            p = wald_pvalue(c.estimate, c.se);
          rows.push_back({std::to_string(++n), c.name, format_estimate(c.estimate),
                          format_estimate(c.se), p});
        }
    std::string p = "NA";
    if (std::isfinite(fit.sigma_se) && fit.sigma_se > 0)
      p = wald_pvalue(fit.sigma, fit.sigma_se);
    rows.push_back({std::to_string(++n), "error", format_estimate(fit.sigma),
                    format_estimate(fit.sigma_se), p});
    detail::print_table(out, rows);
    out << "Standard errors: " << fit.se_method << "; p-values two-sided Wald\n";
  }

  detail::banner(out, "Starting values");
  {
    out << "Provenance: " << provenance_name(fit.start.provenance) << '\n';
    std::vector<std::vector<std::string>> rows;
    for (int k : order)
      rows.push_back({parameter_names(fit.model.kind)[k], exact(fit.start.values[k])});
    detail::print_table(out, rows, true);
    if (!fit.start.note.empty())
      out << "Note: " << fit.start.note << '\n';
  }

  detail::banner(out, "Warnings");
  if (fit.warnings.empty())
    out << "none\n";
  for (const auto &w : fit.warnings)
    out << "- " << w << '\n';

  if (options.elapsed) {
    out << std::string(52, '-') << '\n';
    out << " The program took " << fixed(fit.elapsed_seconds, 2) << " seconds\n";
  }
  return out.str();
}

} // namespace nlmix
