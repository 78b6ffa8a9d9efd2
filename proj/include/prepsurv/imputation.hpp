#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"

namespace prepsurv {

namespace detail {

inline std::vector<double> observed_column(const SurvivalDataset& ds, Eigen::Index j) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < ds.values.rows(); ++i)
    if (ds.mask(i, j)) out.push_back(ds.values(i, j));
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline void require_width(const SurvivalDataset& ds, std::size_t width, const char* what) {
  require(ds.n_features() == width, ErrorCode::WidthMismatch,
          std::string(what) + ": dataset has " + std::to_string(ds.n_features()) + " features, expected " +
              std::to_string(width));
}

}  // namespace detail

/// Row filter keeping only fully observed rows.
struct CompleteCaseRule {
  SurvivalDataset apply(const SurvivalDataset& ds) const {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ds.n_rows(); ++i)
      if (ds.mask.row(static_cast<Eigen::Index>(i)).all()) keep.push_back(i);
    require(!keep.empty(), ErrorCode::AllRowsDropped, "complete-case analysis removed every row");
    return take_rows(ds, keep);
  }
  bool operator==(const CompleteCaseRule&) const = default;
};

enum class MomentKind { Mean, Median };

/// Per-column fill values learned from the observed cells.
struct MomentStatistics {
  MomentKind kind = MomentKind::Mean;
  std::vector<double> fill;  // NaN where the fit column had no observed cell

  SurvivalDataset apply(const SurvivalDataset& ds) const {
    detail::require_width(ds, fill.size(), "moment imputation");
    SurvivalDataset out = ds;
    for (Eigen::Index j = 0; j < out.values.cols(); ++j)
      for (Eigen::Index i = 0; i < out.values.rows(); ++i)
        if (!out.mask(i, j)) {
          require(!std::isnan(fill[static_cast<std::size_t>(j)]), ErrorCode::AllMissingColumn,
                  "no fill value for column '" + ds.feature(static_cast<std::size_t>(j)).name + "'");
          out.values(i, j) = fill[static_cast<std::size_t>(j)];
          out.mask(i, j) = true;
        }
    return out;
  }
  bool operator==(const MomentStatistics&) const = default;
};

inline MomentStatistics fit_moment(const SurvivalDataset& ds, MomentKind kind) {
  MomentStatistics stats;
  stats.kind = kind;
  for (Eigen::Index j = 0; j < ds.values.cols(); ++j) {
    auto obs = detail::observed_column(ds, j);
    if (obs.empty()) {
      require(ds.values.rows() == 0, ErrorCode::AllMissingColumn,
              "column '" + ds.feature(static_cast<std::size_t>(j)).name + "' has no observed cells");
      stats.fill.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    stats.fill.push_back(kind == MomentKind::Mean ? detail::mean_of(obs) : detail::median_of(std::move(obs)));
  }
  return stats;
}

/// Donor pool for nearest-neighbour imputation. Distances are Euclidean over
/// the z-scored columns observed in both rows, rescaled by
/// n_features / n_shared; rows with no shared column are infinitely far.
struct KnnDonorPool {
  std::size_t k = 5;
  std::vector<double> center, scale;
  std::size_t n_donors = 0;
  std::vector<double> values;   // n_donors x n_features, row-major, raw scale
  std::vector<char> observed;   // same layout

  SurvivalDataset apply(const SurvivalDataset& ds) const {
    const std::size_t p = center.size();
    detail::require_width(ds, p, "knn imputation");
    std::vector<std::vector<std::size_t>> donors_for(p);
    for (std::size_t d = 0; d < n_donors; ++d)
      for (std::size_t j = 0; j < p; ++j)
        if (observed[d * p + j]) donors_for[j].push_back(d);

    std::vector<double> z_donor(values.size());
    for (std::size_t d = 0; d < n_donors; ++d)
      for (std::size_t j = 0; j < p; ++j) z_donor[d * p + j] = (values[d * p + j] - center[j]) / scale[j];

    SurvivalDataset out = ds;
    std::vector<double> dist(n_donors), z(p);
    std::vector<std::pair<double, std::size_t>> ranked;
    for (Eigen::Index i = 0; i < ds.values.rows(); ++i) {
      if (ds.mask.row(i).all()) continue;
      for (std::size_t j = 0; j < p; ++j)
        z[j] = (ds.values(i, static_cast<Eigen::Index>(j)) - center[j]) / scale[j];
      for (std::size_t d = 0; d < n_donors; ++d) {
        double ss = 0.0;
        std::size_t shared = 0;
        for (std::size_t j = 0; j < p; ++j) {
          if (!ds.mask(i, static_cast<Eigen::Index>(j)) || !observed[d * p + j]) continue;
          const double diff = z[j] - z_donor[d * p + j];
          ss += diff * diff;
          ++shared;
        }
        dist[d] = shared ? std::sqrt(ss * static_cast<double>(p) / static_cast<double>(shared))
                         : std::numeric_limits<double>::infinity();
      }
      for (std::size_t j = 0; j < p; ++j) {
        if (ds.mask(i, static_cast<Eigen::Index>(j))) continue;
        const auto& pool = donors_for[j];
        require(pool.size() >= k, ErrorCode::NoDonors,
                "fewer than k donors observe column '" + ds.feature(j).name + "'");
        ranked.clear();
        for (auto d : pool) ranked.emplace_back(dist[d], d);
        std::nth_element(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k - 1), ranked.end());
        double sum = 0.0;
        for (std::size_t q = 0; q < k; ++q) sum += values[ranked[q].second * p + j];
        out.values(i, static_cast<Eigen::Index>(j)) = sum / static_cast<double>(k);
      }
      out.mask.row(i).setConstant(true);
    }
    return out;
  }
  bool operator==(const KnnDonorPool&) const = default;
};

inline KnnDonorPool fit_knn(const SurvivalDataset& ds, std::size_t k) {
  require(k >= 1, ErrorCode::InvalidArgument, "knn imputation needs k >= 1");
  const std::size_t p = ds.n_features(), n = ds.n_rows();
  KnnDonorPool pool;
  pool.k = k;
  pool.n_donors = n;
  pool.values.resize(n * p);
  pool.observed.resize(n * p);
  for (std::size_t j = 0; j < p; ++j) {
    auto obs = detail::observed_column(ds, static_cast<Eigen::Index>(j));
    const bool incomplete = obs.size() < n;
    require(!incomplete || obs.size() >= k, ErrorCode::NoDonors,
            "fewer than k donors observe column '" + ds.feature(j).name + "'");
    pool.center.push_back(obs.empty() ? 0.0 : detail::mean_of(obs));
    const double sd = detail::sample_sd(obs);
    pool.scale.push_back(sd > 0.0 ? sd : 1.0);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const bool seen = ds.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      pool.observed[i * p + j] = seen ? 1 : 0;
      pool.values[i * p + j] = seen ? ds.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) : 0.0;
    }
  return pool;
}

namespace detail {

template <class Matrix>
double chained_predict(const std::vector<double>& coef, const Matrix& x, Eigen::Index i, Eigen::Index target) {
  double v = coef[0];
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    if (c != target) v += coef[static_cast<std::size_t>(c) + 1] * x(i, c);
  return v;
}

}  // namespace detail

/// Chained-equation imputation replayed from the recorded per-round
/// regressions, so applying to the fit data reproduces the fit output.
struct ChainedRegressions {
  std::vector<double> initial;       // column means of the fit data
  std::vector<std::size_t> order;    // incomplete columns, most missing first
  // rounds[r][q]: intercept followed by one coefficient per feature (the
  // target column's own slot is zero) for column order[q].
  std::vector<std::vector<std::vector<double>>> rounds;

  SurvivalDataset apply(const SurvivalDataset& ds) const {
    const std::size_t p = initial.size();
    detail::require_width(ds, p, "chained imputation");
    SurvivalDataset out = ds;
    for (Eigen::Index j = 0; j < out.values.cols(); ++j)
      for (Eigen::Index i = 0; i < out.values.rows(); ++i)
        if (!out.mask(i, j)) out.values(i, j) = initial[static_cast<std::size_t>(j)];
    for (const auto& round : rounds)
      for (std::size_t q = 0; q < order.size(); ++q) {
        const auto j = static_cast<Eigen::Index>(order[q]);
        const auto& coef = round[q];
        for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
          if (!ds.mask(i, j)) out.values(i, j) = detail::chained_predict(coef, out.values, i, j);
        }
      }
    out.mask.setConstant(true);
    return out;
  }
  std::size_t n_rounds() const { return rounds.size(); }
  bool operator==(const ChainedRegressions&) const = default;
};

/// `seed` is unused: the procedure is deterministic.
inline ChainedRegressions fit_chained(const SurvivalDataset& ds, std::size_t max_rounds, double tol,
                                      [[maybe_unused]] std::uint64_t seed = 0) {
  const std::size_t p = ds.n_features();
  const auto n = ds.values.rows();
  ChainedRegressions model;
  std::vector<std::size_t> missing_count(p, 0);
  std::vector<double> sd(p, 1.0);
  for (std::size_t j = 0; j < p; ++j) {
    auto obs = detail::observed_column(ds, static_cast<Eigen::Index>(j));
    missing_count[j] = static_cast<std::size_t>(n) - obs.size();
    if (missing_count[j] > 0)
      require(obs.size() >= 2, ErrorCode::UnderdeterminedColumn,
              "column '" + ds.feature(j).name + "' has fewer than two observed cells");
    model.initial.push_back(obs.empty() ? 0.0 : detail::mean_of(obs));
    const double s = detail::sample_sd(obs);
    sd[j] = s > 0.0 ? s : 1.0;
    if (missing_count[j] > 0) model.order.push_back(j);
  }
  std::stable_sort(model.order.begin(), model.order.end(),
                   [&](std::size_t a, std::size_t b) { return missing_count[a] > missing_count[b]; });
  if (model.order.empty()) return model;

  RowMatrix x = ds.values;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (!ds.mask(i, j)) x(i, j) = model.initial[static_cast<std::size_t>(j)];

  const auto pp = static_cast<Eigen::Index>(p);
  for (std::size_t r = 0; r < max_rounds; ++r) {
    std::vector<std::vector<double>> round;
    double worst = 0.0;
    for (auto target : model.order) {
      const auto j = static_cast<Eigen::Index>(target);
      // Normal equations over rows where the target was observed; design is
      // [1, other columns], the target's own slot left at zero.
      Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(pp + 1, pp + 1);
      Eigen::VectorXd xty = Eigen::VectorXd::Zero(pp + 1);
      Eigen::VectorXd row(pp + 1);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!ds.mask(i, j)) continue;
        row[0] = 1.0;
        for (Eigen::Index c = 0; c < pp; ++c) row[c + 1] = c == j ? 0.0 : x(i, c);
        xtx.selfadjointView<Eigen::Lower>().rankUpdate(row);
        xty += row * x(i, j);
      }
      xtx = xtx.selfadjointView<Eigen::Lower>();
      xtx.diagonal().array() += 1e-6;
      xtx(j + 1, j + 1) = 1.0;
      Eigen::VectorXd solved = xtx.ldlt().solve(xty);
      solved[j + 1] = 0.0;
      require(solved.allFinite(), ErrorCode::UnderdeterminedColumn,
              "regression for column '" + ds.feature(target).name + "' failed");
      std::vector<double> coef(solved.data(), solved.data() + solved.size());
      double change = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (ds.mask(i, j)) continue;
        const double v = detail::chained_predict(coef, x, i, j);
        change = std::max(change, std::abs(v - x(i, j)));
        x(i, j) = v;
      }
      worst = std::max(worst, change / sd[target]);
      round.push_back(std::move(coef));
    }
    model.rounds.push_back(std::move(round));
    if (worst < tol) break;
  }
  return model;
}

}  // namespace prepsurv
