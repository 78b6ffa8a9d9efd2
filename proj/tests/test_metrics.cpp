#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prepsurv/dataset.hpp"
#include "prepsurv/metrics.hpp"
#include "test_support.hpp"

using namespace prepsurv;

namespace {

using Vec = std::vector<double>;

// Curve with knots at the grid points holding f(t_j).
SurvivalCurve curve_on(const std::function<double(double)>& f, const Vec& points) {
  SurvivalCurve c;
  c.knots = points;
  for (double t : points) c.probs.push_back(f(t));
  return c;
}

void random_instance(Rng& rng, std::size_t n, Vec& risk, Vec& time, Vec& event) {
  risk.resize(n);
  time.resize(n);
  event.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    risk[i] = static_cast<double>(rng.index(8));  // forces ties
    time[i] = static_cast<double>(1 + rng.index(12));
    event[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
  }
}

}  // namespace

TEST(KaplanMeier, TwoEvents) {
  auto km = kaplan_meier(Vec{1, 2}, Vec{1, 1});
  EXPECT_DOUBLE_EQ(km(1.0), 0.5);
  EXPECT_DOUBLE_EQ(km(2.0), 0.0);
  EXPECT_DOUBLE_EQ(km(0.5), 1.0);
}

TEST(KaplanMeier, WithCensoring) {
  auto km = kaplan_meier(Vec{1, 2, 3}, Vec{1, 0, 1});
  EXPECT_NEAR(km(1.0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(km(2.5), 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(km(3.0), 0.0);
}

TEST(KaplanMeier, TiesGroupEventsBeforeCensoring) {
  auto km = kaplan_meier(Vec{2, 2, 3, 4, 4, 5}, Vec{1, 0, 1, 1, 1, 0});
  EXPECT_EQ(km.knots, (Vec{2, 3, 4}));
  EXPECT_NEAR(km.probs[0], 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(km.probs[1], 5.0 / 8.0, 1e-15);
  EXPECT_NEAR(km.probs[2], 5.0 / 24.0, 1e-15);
}

TEST(KaplanMeier, NoEventsIsAnError) {
  EXPECT_THROW(kaplan_meier(Vec{1, 2}, Vec{0, 0}), Error);
}

TEST(KaplanMeier, NoCensoringClosedForm) {
  const std::size_t n = 7;
  Vec t, e(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) t.push_back(static_cast<double>(10 - i));
  auto km = kaplan_meier(t, e);
  for (std::size_t i = 1; i <= n; ++i)
    EXPECT_NEAR(km(static_cast<double>(3 + i)), static_cast<double>(n - i) / static_cast<double>(n), 1e-15);
}

TEST(KaplanMeier, NoCensoringEqualsEmpiricalSurvivalProperty) {
  Rng rng(42);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.index(40);
    Vec t(n), e(n, 1.0);
    for (auto& x : t) x = static_cast<double>(rng.index(15));
    auto km = kaplan_meier(t, e);
    for (double q = -0.5; q < 16.0; q += 0.5) {
      const double empirical = static_cast<double>(std::count_if(t.begin(), t.end(), [&](double x) { return x > q; })) /
                               static_cast<double>(n);
      ASSERT_NEAR(km(q), empirical, 1e-12);
    }
  }
}

TEST(KaplanMeier, CurveInvariantsProperty) {
  Rng rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    Vec risk, t, e;
    random_instance(rng, 5 + rng.index(30), risk, t, e);
    e[0] = 1.0;
    auto km = kaplan_meier(t, e);
    auto g = censoring_distribution(t, e);
    for (const auto* c : {&km, &g}) {
      EXPECT_EQ(c->raw(-1.0), 1.0);
      for (std::size_t k = 0; k < c->probs.size(); ++k) {
        EXPECT_GE(c->probs[k], 0.0);
        EXPECT_LE(c->probs[k], 1.0);
        if (k) {
          EXPECT_LE(c->probs[k], c->probs[k - 1]);
          EXPECT_LT(c->knots[k - 1], c->knots[k]);
        }
      }
    }
  }
}

TEST(CensoringDistribution, NoCensoringIsOne) {
  auto g = censoring_distribution(Vec{1, 2, 3}, Vec{1, 1, 1});
  EXPECT_TRUE(g.knots.empty());
  EXPECT_DOUBLE_EQ(g(10.0), 1.0);
  EXPECT_EQ(g.role, CurveRole::Censoring);
}

TEST(CensoringDistribution, FlippedIndicator) {
  auto g = censoring_distribution(Vec{1, 2}, Vec{0, 1});
  EXPECT_DOUBLE_EQ(g(1.0), 0.5);
  Vec t{3, 1, 4, 1, 5, 9, 2, 6}, e{1, 0, 1, 1, 0, 1, 0, 0};
  Vec flipped(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) flipped[i] = 1.0 - e[i];
  auto a = censoring_distribution(t, flipped);
  auto b = kaplan_meier(t, e);
  EXPECT_EQ(a.knots, b.knots);
  EXPECT_EQ(a.probs, b.probs);
}

TEST(CensoringDistribution, ClampedAtFloor) {
  auto g = censoring_distribution(Vec{1, 2}, Vec{1, 0});
  EXPECT_DOUBLE_EQ(g.raw(2.0), 0.0);
  EXPECT_DOUBLE_EQ(g(2.0), kProbabilityFloor);
}

TEST(CumulativeHazard, Values) {
  auto km = kaplan_meier(Vec{1, 2}, Vec{1, 1});
  EXPECT_EQ(cumulative_hazard(km, 0.5), 0.0);
  EXPECT_NEAR(cumulative_hazard(km, 1.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(cumulative_hazard(km, 2.0), -std::log(kProbabilityFloor), 1e-15);
  EXPECT_THROW(cumulative_hazard(censoring_distribution(Vec{1}, Vec{0}), 1.0), Error);
}

TEST(MartingaleResiduals, HandDataset) {
  // KM: S(1)=4/5, S(2)=3/5, S(4)=3/10.
  auto r = martingale_residuals(Vec{1, 2, 3, 4, 5}, Vec{1, 1, 0, 1, 0});
  const Vec expected{1 + std::log(0.8), 1 + std::log(0.6), std::log(0.6), 1 + std::log(0.3), std::log(0.3)};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(r[i], expected[i], 1e-12);
  for (double v : r) EXPECT_LE(v, 1.0);
  EXPECT_LE(r[2], 0.0);
}

TEST(MartingaleResiduals, EarliestEventNearOne) {
  Vec t, e;
  for (int i = 1; i <= 100; ++i) {
    t.push_back(i);
    e.push_back(1.0);
  }
  auto r = martingale_residuals(t, e);
  EXPECT_NEAR(r[0], 1.0 + std::log(0.99), 1e-12);
  EXPECT_GT(r[0], 0.98);
}

TEST(Concordance, PerfectAndAnti) {
  EXPECT_DOUBLE_EQ(concordance_index(Vec{3, 2, 1}, Vec{1, 2, 3}, Vec{1, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(concordance_index(Vec{1, 2, 3}, Vec{1, 2, 3}, Vec{1, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(concordance_index(Vec{5, 5, 5}, Vec{1, 2, 3}, Vec{1, 1, 1}), 0.5);
}

TEST(Concordance, NoComparablePairs) {
  try {
    concordance_index(Vec{1, 2}, Vec{1, 2}, Vec{0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoComparablePairs);
  }
}

TEST(Concordance, MatchesNaiveOracleExactly) {
  Rng rng(2024);
  int checked = 0;
  for (int rep = 0; rep < 500; ++rep) {
    Vec risk, t, e;
    random_instance(rng, 2 + rng.index(49), risk, t, e);
    bool comparable = false;
    const double expected = oracle::concordance_naive(risk, t, e, &comparable);
    if (!comparable) continue;
    ASSERT_EQ(concordance_index(risk, t, e), expected) << "rep " << rep;
    ++checked;
  }
  EXPECT_GT(checked, 400);
}

TEST(Concordance, NegationComplementsWithoutTies) {
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 5 + rng.index(30);
    Vec risk(n), t(n), e(n), neg(n);
    for (std::size_t i = 0; i < n; ++i) {
      risk[i] = rng.normal();
      neg[i] = -risk[i];
      t[i] = static_cast<double>(rng.index(10));
      e[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    }
    bool ok = false;
    oracle::concordance_naive(risk, t, e, &ok);
    if (!ok) continue;
    EXPECT_NEAR(concordance_index(risk, t, e) + concordance_index(neg, t, e), 1.0, 1e-15);
  }
}

TEST(Concordance, InvariantUnderMonotoneTransform) {
  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    Vec risk, t, e;
    random_instance(rng, 5 + rng.index(30), risk, t, e);
    e[0] = 1.0;
    t[0] = 0.0;
    Vec transformed(risk.size());
    std::transform(risk.begin(), risk.end(), transformed.begin(), [](double r) { return std::exp(r) + r * r * r; });
    EXPECT_EQ(concordance_index(risk, t, e), concordance_index(transformed, t, e));
  }
}

TEST(Brier, PerfectPredictionsScoreZero) {
  Vec t{1, 2, 3, 4}, e{1, 1, 1, 1};
  auto g = censoring_distribution(t, e);
  const double at = 2.5;
  std::vector<SurvivalCurve> pred;
  for (double ti : t) pred.push_back(curve_on([&](double) { return ti > at ? 1.0 : 0.0; }, {at}));
  EXPECT_DOUBLE_EQ(brier_score(pred, t, e, at, g), 0.0);
}

TEST(Brier, ConstantHalfScoresQuarter) {
  Vec t{1, 2, 3, 4}, e{1, 1, 1, 1};
  auto g = censoring_distribution(t, e);
  std::vector<SurvivalCurve> pred(4, curve_on([](double) { return 0.5; }, {2.5}));
  EXPECT_DOUBLE_EQ(brier_score(pred, t, e, 2.5, g), 0.25);
  EXPECT_DOUBLE_EQ(brier_score(pred, t, e, 2.5, g, IpcwWeighting::UniformAtT), 0.25);
}

TEST(Brier, CensoredFixtureMatchesIndependentScript) {
  // Frozen from an independent Python evaluation of the weighted sum.
  Vec t{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, e{1, 0, 1, 1, 0, 1, 0, 1, 1, 0};
  auto g = censoring_distribution(t, e);
  const double at = 5.5;
  std::vector<SurvivalCurve> pred;
  for (std::size_t i = 0; i < t.size(); ++i)
    pred.push_back(curve_on([i](double u) { return std::exp(-0.1 * u * (1 + 0.1 * static_cast<double>(i))); }, {at}));
  EXPECT_NEAR(brier_score(pred, t, e, at, g), 0.3389631669695682, 1e-13);
  EXPECT_NEAR(brier_score(pred, t, e, at, g, IpcwWeighting::UniformAtT), 0.4312067313593939, 1e-13);
}

TEST(Brier, UnderflowIsReported) {
  Vec t{1, 2, 3}, e{1, 0, 0};
  auto g = censoring_distribution(t, e);
  std::vector<SurvivalCurve> pred(3, curve_on([](double) { return 0.5; }, {3.5}));
  try {
    brier_score(pred, t, e, 3.5, g, IpcwWeighting::UniformAtT);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::CensoringWeightUnderflow);
  }
}

TEST(IntegratedGrafScore, ZeroErrorIsZero) {
  Vec t{1, 2, 3, 4}, e{1, 1, 1, 1};
  auto grid = TimeGrid::from_points({1.5, 2.5, 3.5});
  auto g = censoring_distribution(t, e);
  std::vector<SurvivalCurve> pred;
  for (double ti : t) pred.push_back(curve_on([&](double u) { return ti > u ? 1.0 : 0.0; }, grid.points));
  EXPECT_DOUBLE_EQ(integrated_graf_score(pred, t, e, grid, g), 0.0);
}

TEST(IntegratedGrafScore, SinglePointEqualsBrier) {
  Vec t{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, e{1, 0, 1, 1, 0, 1, 0, 1, 1, 0};
  auto g = censoring_distribution(t, e);
  auto grid = TimeGrid::from_points({5.5}, 4.5);
  std::vector<SurvivalCurve> pred;
  for (std::size_t i = 0; i < t.size(); ++i)
    pred.push_back(curve_on([i](double u) { return std::exp(-0.1 * u * (1 + 0.1 * static_cast<double>(i))); }, grid.points));
  EXPECT_DOUBLE_EQ(integrated_graf_score(pred, t, e, grid, g),
                   brier_score(pred, t, e, 5.5, g, IpcwWeighting::UniformAtT));
}

TEST(IntegratedGrafScore, TwoPointsDirectSum) {
  Vec t{1, 2, 3, 4, 5, 6}, e{1, 0, 1, 0, 1, 1};
  auto g = censoring_distribution(t, e);
  auto grid = TimeGrid::from_points({2.5, 4.5}, 1.0);
  auto surv = [](std::size_t i, double u) { return std::exp(-u / (3.0 + static_cast<double>(i))); };
  std::vector<SurvivalCurve> pred;
  for (std::size_t i = 0; i < t.size(); ++i)
    pred.push_back(curve_on([&](double u) { return surv(i, u); }, grid.points));
  // G(2.5) = 4/5 and G(4.5) = 4/5 * 2/3 from the flipped product limit.
  double term1 = 0.0, term2 = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    term1 += std::pow(surv(i, 2.5) - (t[i] > 2.5 ? 1.0 : 0.0), 2) / (4.0 / 5.0);
    term2 += std::pow(surv(i, 4.5) - (t[i] > 4.5 ? 1.0 : 0.0), 2) / (8.0 / 15.0);
  }
  const double expected = (1.5 * term1 + 2.0 * term2) / 6.0;
  EXPECT_NEAR(integrated_graf_score(pred, t, e, grid, g), expected, 1e-12);
}

TEST(IntegratedGrafScore, MatchesDoubleSumOracle) {
  Rng rng(99);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 3 + rng.index(20);
    Vec t(n), e(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<double>(1 + rng.index(10));
      e[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    }
    std::vector<double> points;
    double u = 0.3 + rng.uniform();
    for (std::size_t k = 0; k < 1 + rng.index(5); ++k) {
      points.push_back(u);
      u += 0.2 + 2.0 * rng.uniform();
    }
    auto grid = TimeGrid::from_points(points, 0.0);
    Vec rates(n);
    for (auto& r : rates) r = 0.05 + 0.3 * rng.uniform();
    auto surv = [&](std::size_t i, double x) { return std::exp(-rates[i] * x); };
    std::vector<SurvivalCurve> pred;
    for (std::size_t i = 0; i < n; ++i) pred.push_back(curve_on([&](double x) { return surv(i, x); }, points));
    auto g = censoring_distribution(t, e);
    double got = 0.0;
    try {
      got = integrated_graf_score(pred, t, e, grid, g);
    } catch (const Error& err) {
      ASSERT_EQ(err.code(), ErrorCode::CensoringWeightUnderflow);
      continue;
    }
    EXPECT_NEAR(got, oracle::igs_double_sum(surv, t, e, grid.points, grid.deltas), 1e-10);
  }
}

TEST(TimeGridTest, SinglePointIsMedian) {
  auto grid = time_grid(Vec{1, 2, 3, 4, 5}, Vec{1, 1, 0, 1, 1}, 1);
  ASSERT_EQ(grid.size(), 1u);
  EXPECT_DOUBLE_EQ(grid.points[0], 3.0);  // median of {1, 2, 4, 5}
  EXPECT_DOUBLE_EQ(grid.deltas[0], 3.0);
}

TEST(TimeGridTest, AllEqualEventTimes) {
  auto grid = time_grid(Vec{4, 4, 4, 9}, Vec{1, 1, 1, 0}, 50);
  EXPECT_EQ(grid.points, (Vec{4.0}));
}

TEST(TimeGridTest, RotterdamFiftyPoints) {
  auto ds = load_csv(prepsurv::testing::data_path("rotterdam.csv"), prepsurv::testing::rotterdam_schema());
  auto grid = time_grid(ds.time, ds.event, 50);
  EXPECT_LE(grid.size(), 50u);
  EXPECT_GT(grid.size(), 40u);
  for (std::size_t j = 1; j < grid.size(); ++j) EXPECT_LT(grid.points[j - 1], grid.points[j]);
  for (double d : grid.deltas) EXPECT_GT(d, 0.0);
}

TEST(TimeGridTest, NoEvents) { EXPECT_THROW(time_grid(Vec{1, 2}, Vec{0, 0}, 3), Error); }
