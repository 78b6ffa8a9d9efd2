#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"
#include "prepsurv/imputation.hpp"
#include "prepsurv/metrics.hpp"

namespace prepsurv {

/// Mahalanobis distance rule: rows farther than `threshold` from `center`
/// under `precision` are dropped.
struct EllipticRule {
  std::vector<double> center;
  std::vector<double> precision;  // p x p, row-major
  double threshold = std::numeric_limits<double>::infinity();

  std::vector<double> distances(const SurvivalDataset& ds) const {
    const auto p = static_cast<Eigen::Index>(center.size());
    detail::require_width(ds, center.size(), "elliptic envelope");
    require(ds.is_complete(), ErrorCode::MissingCells, "elliptic envelope requires a fully observed dataset");
    Eigen::Map<const Eigen::VectorXd> mu(center.data(), p);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> prec(precision.data(), p, p);
    std::vector<double> out(ds.n_rows());
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
      const Eigen::VectorXd diff = ds.values.row(static_cast<Eigen::Index>(i)).transpose() - mu;
      out[i] = std::sqrt(std::max(0.0, diff.dot(prec * diff)));
    }
    return out;
  }

  SurvivalDataset apply(const SurvivalDataset& ds) const {
    const auto d = distances(ds);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(d[i] > threshold)) keep.push_back(i);
    require(!keep.empty(), ErrorCode::AllRowsDropped, "outlier removal dropped every row");
    return take_rows(ds, keep);
  }
  bool operator==(const EllipticRule&) const = default;
};

namespace detail {

inline Eigen::MatrixXd invert_covariance(const Eigen::MatrixXd& cov) {
  const auto p = cov.rows();
  auto usable = [&](const Eigen::LDLT<Eigen::MatrixXd>& f) {
    return f.info() == Eigen::Success && (f.vectorD().array() > 1e-12 * std::max(1.0, cov.diagonal().maxCoeff())).all();
  };
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  if (!usable(ldlt)) {
    ldlt.compute(cov + 1e-6 * Eigen::MatrixXd::Identity(p, p));
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
      fail(ErrorCode::SingularCovariance, "covariance is singular even after ridge");
  }
  Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  if (!inv.allFinite()) fail(ErrorCode::SingularCovariance, "covariance inverse is not finite");
  return inv;
}

}  // namespace detail

/// Trimmed reweighting: ten rounds of refitting mean and covariance on the
/// h = ceil((1 - contamination) n) rows closest to the current centre.
inline EllipticRule fit_elliptic(const SurvivalDataset& ds, double contamination) {
  require(contamination >= 0.0 && contamination < 0.5, ErrorCode::InvalidArgument,
          "contamination must lie in [0, 0.5)");
  require(ds.is_complete(), ErrorCode::MissingCells, "elliptic envelope requires a fully observed dataset");
  const std::size_t n = ds.n_rows(), p = ds.n_features();
  require(n > p + 1, ErrorCode::TooFewRows, "elliptic envelope needs more rows than features + 1");
  const Eigen::MatrixXd x(ds.values);
  const auto h = static_cast<std::size_t>(std::ceil((1.0 - contamination) * static_cast<double>(n) - 1e-9));

  EllipticRule rule;
  std::vector<std::size_t> subset(n);
  std::iota(subset.begin(), subset.end(), std::size_t{0});
  std::vector<double> dist;
  for (int iter = 0; iter <= 10; ++iter) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    for (auto i : subset) mu += x.row(static_cast<Eigen::Index>(i)).transpose();
    mu /= static_cast<double>(subset.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (auto i : subset) {
      const Eigen::VectorXd diff = x.row(static_cast<Eigen::Index>(i)).transpose() - mu;
      cov.selfadjointView<Eigen::Lower>().rankUpdate(diff);
    }
    cov = Eigen::MatrixXd(cov.selfadjointView<Eigen::Lower>()) / static_cast<double>(subset.size() - 1);
    const Eigen::MatrixXd prec = detail::invert_covariance(cov);
    rule.center.assign(mu.data(), mu.data() + mu.size());
    rule.precision.resize(p * p);
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b)
        rule.precision[a * p + b] = prec(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    dist = rule.distances(ds);
    if (iter == 10) break;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    subset.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(h));
    std::sort(subset.begin(), subset.end());
  }
  std::vector<double> sorted = dist;
  std::sort(sorted.begin(), sorted.end());
  rule.threshold = sorted[h - 1];
  return rule;
}

/// Drops rows whose null-model martingale residual exceeds the cutoff in
/// absolute value.
struct MartingaleRule {
  double cutoff = 2.0;

  SurvivalDataset apply(const SurvivalDataset& ds) const {
    require(ds.n_events() >= 1, ErrorCode::NoEvents, "martingale residuals need at least one event");
    const auto r = martingale_residuals(ds.time, ds.event);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < r.size(); ++i)
      if (!(std::abs(r[i]) > cutoff)) keep.push_back(i);
    require(!keep.empty(), ErrorCode::AllRowsDropped, "outlier removal dropped every row");
    return take_rows(ds, keep);
  }
  bool operator==(const MartingaleRule&) const = default;
};

inline MartingaleRule fit_martingale(const SurvivalDataset& ds, double cutoff) {
  require(cutoff >= 0.0, ErrorCode::InvalidArgument, "martingale cutoff must be non-negative");
  require(ds.n_events() >= 1, ErrorCode::NoEvents, "martingale residuals need at least one event");
  return {cutoff};
}

}  // namespace prepsurv
