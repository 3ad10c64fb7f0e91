#include "support.hpp"

#include <gtest/gtest.h>

using namespace nlmix;
using nlmix::testing::Gen;

namespace {

template <class F>
LongitudinalDataset curve_data(F f, int subjects, double t0, double t1, int per) {
  LongitudinalDataset d;
  d.outcome_name = "y";
  for (int i = 0; i < subjects; ++i) {
    SubjectRecord s{std::to_string(i), {}, {}};
    for (int j = 0; j < per; ++j) {
      const double t = t0 + (t1 - t0) * (j + 0.37 * (i % 5) / 5.0) / per;
      s.observations.push_back({t, f(t)});
    }
    d.subjects.push_back(s);
  }
  return make_dataset(d);
}

LongitudinalDataset broken_stick(double cp, double level, double s1, double s2) {
  const SubjectParams psi{{level, s1, s2, cp}};
  return curve_data([&](double t) { return pmma_value(t, psi); }, 40, -12, 0, 12);
}

} // namespace

TEST(SmmInitials, PerfectLineTakesLargeMidpoint) {
  const auto d = curve_data([](double t) { return 1.0 + 0.2 * t; }, 20, -10, 0, 10);
  const auto s = initials_smm(d);
  EXPECT_EQ(s.values[2], -300.0);
  EXPECT_EQ(s.provenance, StartProvenance::Auto);
  EXPECT_GT(s.values[3], 0.0);
}

TEST(SmmInitials, CurvedDataTakesSmallMidpointWithSignOfMedianTime) {
  const SubjectParams psi{{0.2, -1.0, -3.0, 2.0}};
  auto f = [&](double t) { return smm_value(t, psi); };
  EXPECT_EQ(initials_smm(curve_data(f, 20, -12, 0, 12)).values[2], -2.0);
  const SubjectParams pos{{0.2, -1.0, 3.0, 2.0}};
  auto g = [&](double t) { return smm_value(t, pos); };
  EXPECT_EQ(initials_smm(curve_data(g, 20, 0.1, 12, 12)).values[2], 2.0);
}

TEST(SmmInitials, LevelsAreMeansOfTheOuterPercentileWindows) {
  Gen g(31);
  for (int rep = 0; rep < 20; ++rep) {
    LongitudinalDataset d;
    for (int i = 0; i < 15; ++i) {
      SubjectRecord s{std::to_string(i), {}, {}};
      double t = g.uniform(-20, -10);
      for (int j = 0; j < 6; ++j, t += g.uniform(0.5, 2))
        s.observations.push_back({t, g.normal()});
      d.subjects.push_back(s);
    }
    d = make_dataset(d);
    std::vector<double> ts, ys;
    for (const auto &s : d.subjects)
      for (const auto &o : s.observations) {
        ts.push_back(o.time);
        ys.push_back(o.outcome);
      }
    const double p5 = percentile(ts, 0.05), p95 = percentile(ts, 0.95);
    double lo = 0, hi = 0;
    int nlo = 0, nhi = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i] <= p5) {
        lo += ys[i];
        ++nlo;
      }
      if (ts[i] >= p95) {
        hi += ys[i];
        ++nhi;
      }
    }
    const auto s = initials_smm(d);
    EXPECT_NEAR(s.values[0], lo / nlo, 1e-12);
    EXPECT_NEAR(s.values[1], hi / nhi, 1e-12);
    EXPECT_TRUE(s.values[3] == 0.5 || s.values[3] == 1.05);
  }
}

TEST(SmmInitials, DegenerateTimes) {
  LongitudinalDataset d;
  d.subjects = {{"a", {{-1, 0}}, {}}, {"b", {{-1, 1}}, {}}};
  EXPECT_THROW(initials_smm(make_dataset(d)), DegenerateWindow);
}

TEST(PmmInitials, NoiselessBrokenStickLocatesChangepoint) {
  const auto d = broken_stick(-4.0, -1.0, -0.02, -0.3);
  QuintileSplit q;
  const auto s = initials_pmm(d, &q);
  EXPECT_FALSE(s.fallback);
  EXPECT_NEAR(s.values[3], -4.0, 2.4);
  EXPECT_EQ(s.values[3], q.lower[q.steepest]);
  EXPECT_LT(s.values[2], s.values[1]);
}

TEST(PmmInitials, PureLineTieGoesToLatestQuintile) {
  const auto d = curve_data([](double t) { return 0.5 - 0.1 * t; }, 20, -10, 0, 10);
  QuintileSplit q;
  const auto s = initials_pmm(d, &q);
  EXPECT_EQ(q.steepest, 4);
  EXPECT_EQ(s.values[3], q.lower[4]);
}

TEST(PmmInitials, ChangepointIsEquivariantUnderTimeShiftAndScale) {
  Gen g(32);
  for (int rep = 0; rep < 10; ++rep) {
    const double cp = g.uniform(-9, -3);
    const auto d = broken_stick(cp, g.uniform(-1, 1), g.uniform(-0.05, 0.05), g.uniform(-0.6, -0.2));
    const double shift = g.uniform(-5, 5), scale = g.uniform(0.5, 3);
    auto moved = d;
    for (auto &s : moved.subjects)
      for (auto &o : s.observations)
        o.time = scale * o.time + shift;
    const auto a = initials_pmm(d), b = initials_pmm(moved);
    EXPECT_NEAR(b.values[3], scale * a.values[3] + shift, 1e-9 * (1 + std::abs(b.values[3])));
    EXPECT_NEAR(b.values[0], a.values[0], 1e-12);
  }
}

TEST(PmmInitials, LevelStartLiesWithinOutcomeRange) {
  Gen g(33);
  for (int rep = 0; rep < 20; ++rep) {
    LongitudinalDataset d;
    double ylo = INFINITY, yhi = -INFINITY;
    for (int i = 0; i < 25; ++i) {
      SubjectRecord s{std::to_string(i), {}, {}};
      double t = g.uniform(-18, -8);
      for (int j = 0; j < 7; ++j, t += g.uniform(0.7, 1.3)) {
        const double y = g.normal(0, 2);
        ylo = std::min(ylo, y);
        yhi = std::max(yhi, y);
        s.observations.push_back({t, y});
      }
      d.subjects.push_back(s);
    }
    const auto s = initials_pmm(make_dataset(d));
    EXPECT_GE(s.values[0], ylo);
    EXPECT_LE(s.values[0], yhi);
    EXPECT_TRUE(std::isfinite(s.values[1]) && std::isfinite(s.values[2]));
  }
}

TEST(PmmInitials, FewDistinctTimesFallBack) {
  LongitudinalDataset d;
  for (int i = 0; i < 6; ++i)
    d.subjects.push_back({std::to_string(i), {{-3, 0.1 * i}, {-2, 0.2 * i}, {-1, 0.0}}, {}});
  const auto s = initials_pmm(make_dataset(d));
  EXPECT_TRUE(s.fallback);
  EXPECT_NE(s.note.find("QuintileDegenerate"), std::string::npos);
  EXPECT_EQ(s.values[3], -2.0);
}

TEST(Starts, UserAndNaive) {
  EXPECT_THROW(user_start(ModelKind::Smm, {0, 0, 0, 1}), UsageError);
  EXPECT_THROW(user_start(ModelKind::Smm, {0, 0, -1, 0}), UsageError);
  EXPECT_THROW(user_start(ModelKind::PmmAbrupt, {0, NAN, 0, 0}), UsageError);
  EXPECT_EQ(user_start(ModelKind::Smm, {1, 2, -3, 4}).provenance, StartProvenance::User);
  const auto n = naive_start(ModelKind::Smm);
  EXPECT_EQ(n.values[2], -0.1);
  EXPECT_NO_THROW(check_start(n));
  EXPECT_EQ(naive_start(ModelKind::PmmSmooth).values, (std::array<double, 4>{0, 0, 0, 0}));
}
