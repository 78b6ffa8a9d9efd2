#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "prepsurv/preprocessing.hpp"
#include "test_support.hpp"

using namespace prepsurv;

namespace {

SurvivalDataset gaussian_cloud(std::uint64_t seed, std::size_t n, std::size_t p) {
  Rng rng(seed);
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Eigen::VectorXd t(static_cast<Eigen::Index>(n)), e = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    t[i] = 1.0 + static_cast<double>(i);
  }
  return make_dataset(x, t, e);
}

// Trimmed reweighting written out with dense inverses.
std::vector<double> trimmed_distances(const Eigen::MatrixXd& x, double contamination) {
  const auto n = x.rows();
  const auto h = static_cast<Eigen::Index>(std::ceil((1.0 - contamination) * static_cast<double>(n)));
  std::vector<Eigen::Index> subset(static_cast<std::size_t>(n));
  std::iota(subset.begin(), subset.end(), 0);
  std::vector<double> d(static_cast<std::size_t>(n));
  for (int iter = 0; iter <= 10; ++iter) {
    Eigen::MatrixXd s(static_cast<Eigen::Index>(subset.size()), x.cols());
    for (std::size_t q = 0; q < subset.size(); ++q) s.row(static_cast<Eigen::Index>(q)) = x.row(subset[q]);
    const Eigen::RowVectorXd mu = s.colwise().mean();
    const Eigen::MatrixXd c = s.rowwise() - mu;
    const Eigen::MatrixXd inv = ((c.transpose() * c) / static_cast<double>(s.rows() - 1)).inverse();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::RowVectorXd diff = x.row(i) - mu;
      d[static_cast<std::size_t>(i)] = std::sqrt((diff * inv * diff.transpose())(0, 0));
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return d[static_cast<std::size_t>(a)] < d[static_cast<std::size_t>(b)]; });
    subset.assign(order.begin(), order.begin() + h);
    std::sort(subset.begin(), subset.end());
  }
  return d;
}

}  // namespace

TEST(EllipticEnvelope, RemovesDistantPoint) {
  auto cloud = gaussian_cloud(1, 200, 3);
  RowMatrix x(201, 3);
  x.topRows(200) = cloud.values;
  x.row(200) << 100.0, 0.0, 0.0;
  Eigen::VectorXd t(201), e = Eigen::VectorXd::Ones(201);
  t.head(200) = cloud.time;
  t[200] = 500.0;
  auto ds = make_dataset(x, t, e);
  auto out = detect_outliers_elliptic(ds, 0.05);
  EXPECT_EQ(out.data.time.maxCoeff(), 200.0);  // the far row is gone
  EXPECT_LE(ds.n_rows() - out.data.n_rows(), 201u - 191u);

  const auto& rule = std::get<EllipticRule>(out.transform.state);
  const auto d = trimmed_distances(Eigen::MatrixXd(x), 0.05);
  const auto ours = rule.distances(ds);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(ours[i], d[i], 1e-8 * std::max(1.0, d[i]));
  std::vector<double> sorted = d;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_NEAR(rule.threshold, sorted[190], 1e-8);
}

TEST(EllipticEnvelope, ZeroContaminationKeepsEverything) {
  auto ds = gaussian_cloud(2, 50, 2);
  EXPECT_EQ(detect_outliers_elliptic(ds, 0.0).data.n_rows(), 50u);
}

TEST(EllipticEnvelope, DuplicatedRowsShareDecisions) {
  auto ds = gaussian_cloud(3, 80, 3);
  std::vector<std::size_t> twice(160);
  for (std::size_t i = 0; i < 160; ++i) twice[i] = i % 80;
  auto doubled = take_rows(ds, twice);
  auto out = detect_outliers_elliptic(doubled, 0.1);
  const auto& rule = std::get<EllipticRule>(out.transform.state);
  const auto d = rule.distances(doubled);
  for (std::size_t i = 0; i < 80; ++i) EXPECT_EQ(d[i] > rule.threshold, d[i + 80] > rule.threshold);
  EXPECT_EQ((ds.n_rows() * 2 - out.data.n_rows()) % 2, 0u);
}

TEST(EllipticEnvelope, ReplayMatchesFit) {
  auto ds = gaussian_cloud(4, 120, 4);
  auto out = detect_outliers_elliptic(ds, 0.05);
  EXPECT_TRUE(prepsurv::testing::same_data(out.transform.apply(ds), out.data));
}

TEST(EllipticEnvelope, ConstantColumnUsesRidge) {
  auto ds = gaussian_cloud(5, 60, 2);
  ds.values.col(1).setConstant(3.0);
  EXPECT_NO_THROW(detect_outliers_elliptic(ds, 0.05));
}

TEST(EllipticEnvelope, Preconditions) {
  auto small = gaussian_cloud(6, 4, 3);
  EXPECT_THROW(detect_outliers_elliptic(small, 0.05), Error);
  auto holes = prepsurv::testing::random_dataset(1, 40, 2, 0.2);
  try {
    detect_outliers_elliptic(holes, 0.05);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::MissingCells);
  }
}

TEST(MartingaleOutliers, LongCensoredSubjectRemoved) {
  // Events at 1..10, one subject censored at 100. The product-limit factors
  // (Y-1)/Y telescope from Y = 11 down to 2, so S = 1/11 after t = 10 and
  // Lambda = ln 11 there; at t = 9 S = 2/11.
  std::vector<std::vector<double>> rows;
  std::vector<double> time, event;
  for (int i = 1; i <= 10; ++i) {
    rows.push_back({double(i)});
    time.push_back(i);
    event.push_back(1.0);
  }
  rows.push_back({0.0});
  time.push_back(100.0);
  event.push_back(0.0);
  auto ds = prepsurv::testing::from_rows(rows, time, event);
  const auto r = martingale_residuals(ds.time, ds.event);
  EXPECT_NEAR(r[10], -std::log(11.0), 1e-12);
  EXPECT_NEAR(r[9], 1.0 - std::log(11.0), 1e-12);
  EXPECT_NEAR(r[8], 1.0 - std::log(11.0 / 2.0), 1e-12);
  auto out = detect_outliers_martingale(ds, 2.0);
  ASSERT_EQ(out.data.n_rows(), 10u);
  EXPECT_EQ(out.data.time.maxCoeff(), 10.0);
}

TEST(MartingaleOutliers, IdentityCases) {
  auto ds = prepsurv::testing::simulate_cox(50, {0.5}, 7);
  auto inf = detect_outliers_martingale(ds, std::numeric_limits<double>::infinity());
  EXPECT_TRUE(prepsurv::testing::same_data(inf.data, ds));
  auto few = prepsurv::testing::from_rows({{1.0}, {2.0}, {3.0}}, {1.0, 2.0, 3.0}, {1.0, 1.0, 0.0});  // residuals 1-ln1.5, 1-ln3, -ln3
  EXPECT_TRUE(prepsurv::testing::same_data(detect_outliers_martingale(few, 2.0).data, few));
}

TEST(MartingaleOutliers, NoEvents) {
  auto ds = prepsurv::testing::from_rows({{1.0}, {2.0}}, {1.0, 2.0}, {0.0, 0.0});
  EXPECT_THROW(detect_outliers_martingale(ds), Error);
}
