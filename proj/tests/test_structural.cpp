#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace nlmix;
using nlmix::testing::Gen;

namespace {

const SubjectParams kSmm{{0.24, -1.088, -2.567, 1.789}};

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

} // namespace

// Reference values from tests/oracles/smm_mpmath.py (50-digit arithmetic).
TEST(Sigmoid, MatchesHighPrecisionValues) {
  EXPECT_NEAR(smm_value(-5.0, kSmm), -0.069120804914563350716, 1e-15);
  EXPECT_NEAR(smm_value(-1.0, kSmm), -0.8805278626685384122, 1e-15);
  EXPECT_NEAR(smm_value(-0.25, kSmm), -1.0677246616478453024, 1e-15);
  EXPECT_NEAR(smm_value(-12.0, kSmm), 0.1608727933557323548, 1e-15);
  EXPECT_DOUBLE_EQ(smm_value(0.0, kSmm), -1.088);
}

TEST(Sigmoid, GradientMatchesHighPrecisionDerivatives) {
  const auto g = smm_gradient(-5.0, kSmm);
  const double want[] = {0.7672283095522866335, 0.2327716904477133665, 0.16528647842814734831,
                         0.15811872977672274533};
  for (int k = 0; k < 4; ++k)
    EXPECT_NEAR(g[k], want[k], 1e-13) << "k=" << k;
  const auto g1 = smm_gradient(-1.0, kSmm);
  const double want1[] = {0.15622901907489577395, 0.84377098092510422605, 0.12200253028371357833,
                          -0.1650347249823963772};
  for (int k = 0; k < 4; ++k)
    EXPECT_NEAR(g1[k], want1[k], 1e-13) << "k=" << k;
}

TEST(Sigmoid, HalfwayAtMidpoint) {
  EXPECT_NEAR(smm_value(kSmm[2], kSmm), (kSmm[0] + kSmm[1]) / 2, 1e-15);
}

TEST(Sigmoid, DomainErrors) {
  EXPECT_THROW(smm_value(1.0, kSmm), DomainError); // t/midpoint < 0, non-integer Hill
  SubjectParams zero_mid = kSmm;
  zero_mid[2] = 0.0;
  EXPECT_THROW(smm_value(-1.0, zero_mid), DomainError);
  SubjectParams integer_hill = kSmm;
  integer_hill[3] = 2.0;
  EXPECT_NO_THROW(smm_value(1.0, integer_hill));
}

TEST(Sigmoid, ValuesStayBetweenLevels) {
  Gen g(1);
  for (int rep = 0; rep < 200; ++rep) {
    SubjectParams p = g.smm_psi();
    if (p[0] <= p[1])
      std::swap(p[0], p[1]);
    for (double t = -30; t <= 0; t += 0.37) {
      const double v = smm_value(t, p);
      EXPECT_GE(v, p[1] - 1e-12);
      EXPECT_LE(v, p[0] + 1e-12);
    }
  }
}

TEST(Predictors, LinearPredictorAndRandomEffects) {
  ParamPredictorSpec spec;
  const double alpha[] = {0.24, -1.088, -2.567, 1.789};
  const double beta[] = {-0.044, -0.061, 0.031, 0.007};
  for (int k = 0; k < 4; ++k) {
    spec[k].alpha = alpha[k];
    spec[k].beta = {{"ageDeath90", beta[k]}};
    spec[k].random = k < 2;
  }
  const double zero[] = {0.0, 0.0};
  auto psi = predict_params(spec, {{"ageDeath90", 0.0}}, zero);
  for (int k = 0; k < 4; ++k)
    EXPECT_DOUBLE_EQ(psi[k], alpha[k]);
  psi = predict_params(spec, {{"ageDeath90", 10.0}}, zero);
  EXPECT_NEAR(psi[1], -1.698, 1e-12);

  const double eta[] = {0.3, -0.7};
  const auto shifted = predict_params(spec, {{"ageDeath90", 10.0}}, eta);
  EXPECT_NEAR(shifted[0] - psi[0], 0.3, 1e-15);
  EXPECT_NEAR(shifted[1] - psi[1], -0.7, 1e-15);
  EXPECT_EQ(shifted[2], psi[2]);
  EXPECT_THROW(predict_params(spec, {}, zero), MissingCovariate);
  const double one[] = {0.1};
  EXPECT_THROW(predict_params(spec, {{"ageDeath90", 0.0}}, one), std::invalid_argument);
}

// Exact rationals from tests/oracles/piecewise_fractions.py.
TEST(Piecewise, AbruptReferenceValues) {
  const SubjectParams p{{-1.103, -0.017, -0.249, -4.25}};
  EXPECT_NEAR(pmma_value(-10.0, p), 0.053, 1e-14);
  EXPECT_NEAR(pmma_value(-2.0, p), -0.605, 1e-14);
}

TEST(Piecewise, AbruptContinuityAndEqualSlopes) {
  Gen g(2);
  for (int rep = 0; rep < 100; ++rep) {
    SubjectParams p = g.pmm_psi();
    const double left = p[0] + p[2] * p[3] + p[1] * (p[3] - p[3]);
    EXPECT_NEAR(pmma_value(p[3], p), left, 1e-12);
    EXPECT_NEAR(pmma_value(std::nextafter(p[3], -INFINITY), p), pmma_value(p[3], p), 1e-12);
    p[2] = p[1];
    for (double t = -20; t <= 0; t += 0.5)
      EXPECT_NEAR(pmma_value(t, p), p[0] + p[1] * t, 1e-12);
  }
}

TEST(Piecewise, LambdaReferenceValues) {
  EXPECT_NEAR(lambda_constraint({{-1.099, -0.017, -0.246, -5.3}}, 2.0), -0.1143, 1e-14);
  const SubjectParams p{{0.5, -0.1, -0.4, -6.0}};
  EXPECT_NEAR(lambda_constraint(p, 0.0), 0.5 + (-0.4 + 0.1) * -6.0, 1e-14);
  EXPECT_DOUBLE_EQ(lambda_constraint({{0.5, -0.2, -0.2, -6.0}}, 3.0), 0.5);
}

TEST(Piecewise, TransitionCubicExactRationals) {
  const auto c = solve_transition({{0.0, 0.0, -1.0, -5.0}}, 2.0).monomial();
  EXPECT_NEAR(c[0], -9.0 / 4.0, 1e-12);
  EXPECT_NEAR(c[1], -5.0 / 2.0, 1e-12);
  EXPECT_NEAR(c[2], -1.0 / 4.0, 1e-12);
  EXPECT_NEAR(c[3], 0.0, 1e-12);
  EXPECT_NEAR(pmms_value(-4.0, {{0.0, 0.0, -1.0, -5.0}}, 2.0), 15.0 / 4.0, 1e-13);
  EXPECT_NEAR(pmms_value(-4.3, {{-1.099, -0.017, -0.246, -5.3}}, 2.0), -1969.0 / 20000.0, 1e-13);
}

TEST(Piecewise, TransitionEqualSlopesIsTheLine) {
  const auto c = solve_transition({{0.7, -0.3, -0.3, -4.0}}, 1.5).monomial();
  EXPECT_NEAR(c[0], 0.7, 1e-12);
  EXPECT_NEAR(c[1], -0.3, 1e-12);
  EXPECT_NEAR(c[2], 0.0, 1e-12);
  EXPECT_NEAR(c[3], 0.0, 1e-12);
}

TEST(Piecewise, TransitionRejectsNonPositiveWidth) {
  EXPECT_THROW(solve_transition({{0, 0, -1, -5}}, 0.0), SingularSystem);
  EXPECT_THROW(solve_transition({{0, 0, -1, -5}}, -1.0), SingularSystem);
}

TEST(Piecewise, TransitionBoundaryConditions) {
  Gen g(3);
  for (int rep = 0; rep < 300; ++rep) {
    const SubjectParams p = g.pmm_psi();
    const double v = g.uniform(0.05, 5.0);
    const auto poly = solve_transition(p, v);
    const double lam = lambda_constraint(p, v);
    EXPECT_LT(rel(poly.value(p[3]), lam + p[1] * p[3]), 1e-9);
    EXPECT_LT(rel(poly.value(p[3] + v), p[0] + p[2] * (p[3] + v)), 1e-9);
    EXPECT_LT(rel(poly.slope(p[3]), p[1]), 1e-9);
    EXPECT_LT(rel(poly.slope(p[3] + v), p[2]), 1e-9);
  }
}

TEST(Piecewise, SmoothIsC1) {
  Gen g(4);
  const double h = 1e-5;
  for (int rep = 0; rep < 200; ++rep) {
    const SubjectParams p = g.pmm_psi();
    const double v = g.uniform(0.1, 5.0);
    for (double knot : {p[3], p[3] + v}) {
      EXPECT_NEAR(pmms_value(knot - 1e-12, p, v), pmms_value(knot + 1e-12, p, v), 1e-9);
      const double left = (pmms_value(knot, p, v) - pmms_value(knot - h, p, v)) / h;
      const double right = (pmms_value(knot + h, p, v) - pmms_value(knot, p, v)) / h;
      EXPECT_NEAR(left, right, 1e-4 + 1e-6);
      const double lc = (pmms_value(knot - h / 2, p, v) - pmms_value(knot - 3 * h / 2, p, v)) / h;
      const double rc = (pmms_value(knot + 3 * h / 2, p, v) - pmms_value(knot + h / 2, p, v)) / h;
      EXPECT_NEAR(lc, rc, 1e-4);
    }
  }
}

TEST(Piecewise, SmoothMatchesCubicInsideWindow) {
  Gen g(5);
  for (int rep = 0; rep < 50; ++rep) {
    const SubjectParams p = g.pmm_psi();
    const double v = g.uniform(0.1, 5.0);
    const auto poly = solve_transition(p, v);
    for (int i = 0; i < 50; ++i) {
      const double t = p[3] + v * (i + 0.5) / 50.0;
      EXPECT_NEAR(poly.value(t), pmms_value(t, p, v), 1e-10);
    }
  }
}

TEST(Piecewise, ZeroWidthIsAbrupt) {
  Gen g(6);
  for (int rep = 0; rep < 100; ++rep) {
    const SubjectParams p = g.pmm_psi();
    for (int i = 0; i <= 100; ++i) {
      const double t = -24.0 + 0.24 * i;
      EXPECT_EQ(pmms_value(t, p, 0.0), pmma_value(t, p));
      EXPECT_NEAR(pmms_value(t, p, 1e-8), pmma_value(t, p), 1e-5);
    }
  }
}

namespace {

void check_gradient(ModelKind kind, const SubjectParams &p, double t, double v) {
  const auto g = structural_gradient(kind, t, p, v);
  for (int k = 0; k < 4; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(p[k]));
    SubjectParams up = p, dn = p;
    up[k] += h;
    dn[k] -= h;
    const double fd =
        (structural_value(kind, t, up, v) - structural_value(kind, t, dn, v)) / (2 * h);
    EXPECT_NEAR(g[k], fd, 1e-5 * std::max(1.0, std::abs(fd)))
        << model_name(kind) << " k=" << k << " t=" << t;
  }
}

} // namespace

TEST(Gradients, MatchFiniteDifferencesAwayFromKnots) {
  Gen g(7);
  for (int rep = 0; rep < 60; ++rep) {
    const SubjectParams s = g.smm_psi();
    check_gradient(ModelKind::Smm, s, g.uniform(-20, -0.1), 0.0);

    const SubjectParams p = g.pmm_psi();
    const double v = g.uniform(0.5, 4.0);
    for (double t : {p[3] - 1.3, p[3] + 0.37 * v, p[3] + 0.81 * v, p[3] + v + 0.9}) {
      check_gradient(ModelKind::PmmSmooth, p, t, v);
      if (std::abs(t - p[3]) > 1e-3)
        check_gradient(ModelKind::PmmAbrupt, p, t, 0.0);
    }
  }
}

TEST(ModelNames, ParseAndFlags) {
  EXPECT_EQ(parse_model_kind("smm"), ModelKind::Smm);
  EXPECT_EQ(parse_model_kind("pmma"), ModelKind::PmmAbrupt);
  EXPECT_EQ(parse_model_kind("pmms"), ModelKind::PmmSmooth);
  EXPECT_THROW(parse_model_kind("pmm"), UsageError);
  EXPECT_EQ(parameter_names(ModelKind::Smm)[2], "midpoint");
  EXPECT_EQ(parameter_flag_names(ModelKind::PmmAbrupt)[3], "changepoint");
  EXPECT_EQ(display_order(ModelKind::Smm)[0], 1);
}

TEST(ModelSpec, Checks) {
  ModelSpec m = ModelSpec::standard(ModelKind::Smm);
  EXPECT_NO_THROW(m.check());
  m.random[2] = true;
  EXPECT_THROW(m.check(), UsageError);
  m = ModelSpec::standard(ModelKind::PmmSmooth);
  m.covariates[0] = {"x", "x"};
  EXPECT_THROW(m.check(), UsageError);
  m.covariates[0] = {"x"};
  m.transition_width = -1;
  EXPECT_THROW(m.check(), UsageError);
}
