#pragma once

#include "nlmix/layout.hpp"
#include "nlmix/stats.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <random>
#include <vector>

namespace nlmix {

/// Random-walk scales shared by all subjects: one for the joint kernel, one
/// per coordinate for the component-wise kernel.
struct KernelScales {
  double joint = 1.0;
  std::vector<double> comp;
};

struct AcceptCounts {
  long joint_try = 0, joint_acc = 0;
  std::vector<long> comp_try, comp_acc;

  explicit AcceptCounts(int q = 0) : comp_try(q, 0), comp_acc(q, 0) {}
};

/// Quantities derived from theta that every subject's chain needs.
struct SamplerContext {
  const ModelLayout *layout = nullptr;
  Eigen::MatrixXd precision; // Omega^-1
  Eigen::MatrixXd chol;      // lower Cholesky factor of Omega
  Eigen::VectorXd sd;        // sqrt(diag Omega)
  double sigma2 = 1.0;
  double tmin = -INFINITY, tmax = INFINITY;
  bool bound_changepoint = false;

  SamplerContext(const ModelLayout &l, const PopulationParams &p, double lo, double hi)
      : layout(&l), sigma2(p.sigma2), tmin(lo), tmax(hi) {
    const int q = l.q();
    bound_changepoint = is_piecewise(l.spec.kind) && l.rand_pos[3] >= 0;
    if (q == 0)
      return;
    Eigen::MatrixXd om = p.omega;
    Eigen::LLT<Eigen::MatrixXd> llt(om);
    double jitter = 1e-12 * std::max(1.0, om.diagonal().maxCoeff());
    while (llt.info() != Eigen::Success) {
      om.diagonal().array() += jitter;
      jitter *= 10;
      llt.compute(om);
      if (jitter > 1e6)
        throw SingularCovariance("SingularCovariance: random-effects covariance is not positive definite");
    }
    chol = llt.matrixL();
    precision = llt.solve(Eigen::MatrixXd::Identity(q, q));
    sd = om.diagonal().cwiseSqrt();
  }

  bool admissible(const Eigen::VectorXd &phi) const {
    if (!bound_changepoint)
      return true;
    const double cp = phi(layout->rand_pos[3]);
    return cp >= tmin && cp <= tmax;
  }
};

/// Chain state of one subject: the random-effect-bearing coordinates of psi.
struct ChainState {
  Eigen::VectorXd phi;
  double ss = 0.0; // residual sum of squares at phi
  double lp = 0.0; // log conditional density up to a constant
};

inline double log_target(const SamplerContext &ctx, const SubjectData &s,
                         const SubjectParams &mean, const Eigen::VectorXd &phi, double &ss) {
  if (!ctx.admissible(phi)) {
    ss = INFINITY;
    return -INFINITY;
  }
  const auto &layout = *ctx.layout;
  const Eigen::VectorXd eta = phi - random_part(layout, mean);
  ss = subject_ss(layout, s, full_psi(layout, mean, phi));
  if (!std::isfinite(ss))
    return -INFINITY;
  return -0.5 * eta.dot(ctx.precision * eta) - ss / (2.0 * ctx.sigma2);
}

inline void refresh(const SamplerContext &ctx, const SubjectData &s, const SubjectParams &mean,
                    ChainState &c) {
  c.lp = log_target(ctx, s, mean, c.phi, c.ss);
}

/// `steps` Metropolis transitions cycling joint, component-wise, joint.
inline void mcmc_transitions(const SamplerContext &ctx, const SubjectData &s,
                             const SubjectParams &mean, ChainState &c, const KernelScales &sc,
                             int steps, Rng &rng, AcceptCounts &counts) {
  const int q = ctx.layout->q();
  if (q == 0)
    return;
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  auto accept = [&](const Eigen::VectorXd &prop) {
    double ss = 0;
    const double lp = log_target(ctx, s, mean, prop, ss);
    if (lp == -INFINITY)
      return false;
    if (std::log(unif(rng)) < lp - c.lp) {
      c.phi = prop;
      c.lp = lp;
      c.ss = ss;
      return true;
    }
    return false;
  };
  for (int step = 0; step < steps; ++step) {
    if (step % 3 == 1) {
      for (int r = 0; r < q; ++r) {
        Eigen::VectorXd prop = c.phi;
        prop(r) += sc.comp[r] * ctx.sd(r) * normal(rng);
        counts.comp_try[r]++;
        counts.comp_acc[r] += accept(prop) ? 1 : 0;
      }
    } else {
      Eigen::VectorXd z(q);
      for (int r = 0; r < q; ++r)
        z(r) = normal(rng);
      const Eigen::VectorXd prop = c.phi + sc.joint * (ctx.chol * z);
      counts.joint_try++;
      counts.joint_acc += accept(prop) ? 1 : 0;
    }
  }
}

/// Moves each scale toward a 40% acceptance rate.
inline void adapt_scales(KernelScales &sc, const AcceptCounts &counts) {
  auto step = [](double &s, long acc, long tries) {
    if (tries == 0)
      return;
    const double rate = static_cast<double>(acc) / static_cast<double>(tries);
    s = std::clamp(s * (1.0 + 0.4 * (rate - 0.4)), 1e-4, 1e2);
  };
  step(sc.joint, counts.joint_acc, counts.joint_try);
  for (std::size_t r = 0; r < sc.comp.size(); ++r)
    step(sc.comp[r], counts.comp_acc[r], counts.comp_try[r]);
}

/// Conditional moments of eta for one subject.
struct ConditionalMoments {
  Eigen::VectorXd mean; // E[eta | y]
  Eigen::MatrixXd cov;  // Cov[eta | y]
  std::vector<Eigen::VectorXd> draws; // thinned eta draws, at most kKeptDraws
};

inline constexpr int kKeptDraws = 40;

/// Long MCMC run per subject at fixed theta: `burn` discarded sweeps, then
/// `samples` retained sweeps, each of `steps` transitions.
inline std::vector<ConditionalMoments>
conditional_pass(const ModelLayout &layout, const std::vector<SubjectData> &subjects,
                 const PopulationParams &params, double tmin, double tmax,
                 std::vector<ChainState> chains, const KernelScales &scales, int steps, int burn,
                 int samples, std::uint64_t seed) {
  const SamplerContext ctx(layout, params, tmin, tmax);
  const int q = layout.q();
  std::vector<ConditionalMoments> out(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto &s = subjects[i];
    const SubjectParams mean = mean_psi(s, params);
    const Eigen::VectorXd m = random_part(layout, mean);
    auto &c = chains[i];
    out[i].mean = Eigen::VectorXd::Zero(q);
    out[i].cov = Eigen::MatrixXd::Zero(q, q);
    if (q == 0)
      continue;
    refresh(ctx, s, mean, c);
    if (c.lp == -INFINITY) {
      c.phi = m;
      if (bool ok = ctx.admissible(c.phi); !ok)
        c.phi(layout.rand_pos[3]) = std::clamp(c.phi(layout.rand_pos[3]), tmin, tmax);
      refresh(ctx, s, mean, c);
    }
    Rng rng = make_rng(seed, 3, i);
    AcceptCounts counts(q);
    for (int b = 0; b < burn; ++b)
      mcmc_transitions(ctx, s, mean, c, scales, steps, rng, counts);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(q, q);
    const int thin = std::max(1, samples / kKeptDraws);
    for (int b = 0; b < samples; ++b) {
      mcmc_transitions(ctx, s, mean, c, scales, steps, rng, counts);
      const Eigen::VectorXd eta = c.phi - m;
      sum += eta;
      sq += eta * eta.transpose();
      if ((b + 1) % thin == 0 && static_cast<int>(out[i].draws.size()) < kKeptDraws)
        out[i].draws.push_back(eta);
    }
    const double n = static_cast<double>(samples);
    out[i].mean = sum / n;
    out[i].cov = (sq - sum * sum.transpose() / n) / std::max(n - 1.0, 1.0);
  }
  return out;
}

} // namespace nlmix
