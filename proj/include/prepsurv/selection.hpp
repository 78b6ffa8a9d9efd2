#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prepsurv/cox.hpp"
#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"
#include "prepsurv/imputation.hpp"
#include "prepsurv/metrics.hpp"
#include "prepsurv/random.hpp"

namespace prepsurv {

/// Kept feature names; applying selects them (Time and Event always stay).
struct FeatureSubset {
  std::vector<std::string> kept;

  SurvivalDataset apply(const SurvivalDataset& ds) const {
    for (const auto& name : kept)
      require(ds.feature_index(name) != SurvivalDataset::npos, ErrorCode::SchemaMismatch,
              "selected feature '" + name + "' is not present");
    return select_features(ds, kept);
  }
  bool operator==(const FeatureSubset&) const = default;
};

namespace detail {

/// Fold label per row: a seeded shuffle dealt round-robin.
inline std::vector<std::size_t> cv_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> order(n), fold(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = stream(seed, Stream::Folds);
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t q = 0; q < n; ++q) fold[order[q]] = q % k;
  return fold;
}

inline std::vector<std::string> names_in_order(const SurvivalDataset& ds, const std::vector<bool>& keep) {
  std::vector<std::string> out;
  const auto names = ds.feature_names();
  for (std::size_t j = 0; j < names.size(); ++j)
    if (keep[j]) out.push_back(names[j]);
  return out;
}

}  // namespace detail

// ---- univariate Cox ---------------------------------------------------------

/// Wald p-value of each feature in its own single-covariate Cox model; NaN
/// where that fit fails.
inline std::vector<double> univariate_cox_p_values(const SurvivalDataset& ds) {
  const Eigen::MatrixXd x = detail::to_dense(ds);
  std::vector<double> p(ds.n_features(), std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    try {
      auto model = fit_cox(Eigen::MatrixXd(x.col(j)), ds.time, ds.event);
      const double pv = model.wald_p_value(0);
      if (std::isfinite(pv)) p[static_cast<std::size_t>(j)] = pv;
    } catch (const Error&) {
    }
  }
  return p;
}

inline FeatureSubset fit_univariate_cox(const SurvivalDataset& ds, double alpha) {
  require(ds.n_features() >= 1, ErrorCode::InvalidArgument, "no features to select from");
  const auto p = univariate_cox_p_values(ds);
  std::vector<bool> keep(p.size(), false);
  bool any = false;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (p[j] < alpha) keep[j] = any = true;
  if (!any) {
    std::size_t best = 0;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (p[j] < p[best] || std::isnan(p[best])) best = j;
    keep[best] = true;
  }
  return {detail::names_in_order(ds, keep)};
}

// ---- L1-penalized Cox ---------------------------------------------------------

namespace detail {

/// Standardized design with rows ordered by ascending time.
struct CoxDesign {
  Eigen::MatrixXd x;  // z-scored columns, constant columns zeroed
  Eigen::VectorXd time, event;
  std::vector<std::size_t> by_time;

  explicit CoxDesign(const SurvivalDataset& ds) : x(to_dense(ds)), time(ds.time), event(ds.event) {
    const double n = static_cast<double>(x.rows());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double mu = x.col(j).mean();
      x.col(j).array() -= mu;
      const double sd = std::sqrt(x.col(j).squaredNorm() / n);
      if (sd > 1e-12) x.col(j) /= sd;
      else x.col(j).setZero();
    }
    by_time.resize(static_cast<std::size_t>(x.rows()));
    std::iota(by_time.begin(), by_time.end(), std::size_t{0});
    std::stable_sort(by_time.begin(), by_time.end(), [&](std::size_t a, std::size_t b) {
      return time[static_cast<Eigen::Index>(a)] < time[static_cast<Eigen::Index>(b)];
    });
  }

  /// Rows of `by_time` whose fold differs from `held_out` (all rows when
  /// held_out is npos).
  std::vector<std::size_t> rows_excluding(const std::vector<std::size_t>& fold, std::size_t held_out) const {
    std::vector<std::size_t> out;
    for (auto r : by_time)
      if (fold.empty() || fold[r] != held_out) out.push_back(r);
    return out;
  }
};

// Breslow log-likelihood over `rows` (ascending time) at eta; optionally the
// per-row score and diagonal Hessian weight.
inline double cox_working(const CoxDesign& d, const std::vector<std::size_t>& rows, const Eigen::VectorXd& eta,
                          Eigen::VectorXd* score, Eigen::VectorXd* weight) {
  const std::size_t n = rows.size();
  std::vector<double> risk(n + 1, 0.0);
  for (std::size_t q = n; q-- > 0;) risk[q] = risk[q + 1] + std::exp(eta[static_cast<Eigen::Index>(q)]);
  double loglik = 0.0, a = 0.0, b = 0.0;
  for (std::size_t q = 0; q < n;) {
    const double t = d.time[static_cast<Eigen::Index>(rows[q])];
    std::size_t end = q;
    double deaths = 0.0;
    while (end < n && d.time[static_cast<Eigen::Index>(rows[end])] == t) {
      if (d.event[static_cast<Eigen::Index>(rows[end])] > 0.5) {
        deaths += 1.0;
        loglik += eta[static_cast<Eigen::Index>(end)];
      }
      ++end;
    }
    if (deaths > 0.0) {
      const double s = risk[q];
      loglik -= deaths * std::log(s);
      a += deaths / s;
      b += deaths / (s * s);
    }
    if (score)
      for (std::size_t r = q; r < end; ++r) {
        const auto k = static_cast<Eigen::Index>(r);
        const double e = std::exp(eta[k]);
        (*score)[k] = (d.event[static_cast<Eigen::Index>(rows[r])] > 0.5 ? 1.0 : 0.0) - e * a;
        (*weight)[k] = e * a - e * e * b;
      }
    q = end;
  }
  return loglik;
}

inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t q = 0; q < rows.size(); ++q) out.row(static_cast<Eigen::Index>(q)) = x.row(static_cast<Eigen::Index>(rows[q]));
  return out;
}

inline double soft_threshold(double v, double lambda) {
  return v > lambda ? v - lambda : (v < -lambda ? v + lambda : 0.0);
}

// Minimizes -loglik/n + lambda |beta|_1 over `rows` by coordinate descent on
// successive quadratic approximations, warm-started from beta.
inline void lasso_solve(const CoxDesign& d, const std::vector<std::size_t>& rows, const Eigen::MatrixXd& xs,
                        double lambda, Eigen::VectorXd& beta) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = xs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::VectorXd score(n), weight(n), resid(n);
  auto objective = [&](const Eigen::VectorXd& b) {
    return -cox_working(d, rows, xs * b, nullptr, nullptr) * inv_n + lambda * b.lpNorm<1>();
  };
  double current = objective(beta);
  for (int outer = 0; outer < 50; ++outer) {
    const Eigen::VectorXd eta = xs * beta;
    cox_working(d, rows, eta, &score, &weight);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (weight[i] > 1e-12) {
        resid[i] = score[i] / weight[i];
      } else {
        weight[i] = 0.0;
        resid[i] = 0.0;
      }
    }
    Eigen::VectorXd v(p);
    for (Eigen::Index j = 0; j < p; ++j) v[j] = xs.col(j).cwiseAbs2().dot(weight) * inv_n;
    Eigen::VectorXd next = beta;
    for (int sweep = 0; sweep < 1000; ++sweep) {
      double moved = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (!(v[j] > 0.0)) {
          next[j] = 0.0;
          continue;
        }
        const double grad = xs.col(j).cwiseProduct(weight).dot(resid) * inv_n;
        const double updated = soft_threshold(grad + v[j] * next[j], lambda) / v[j];
        const double delta = updated - next[j];
        if (delta != 0.0) {
          resid -= delta * xs.col(j);
          next[j] = updated;
          moved = std::max(moved, v[j] * delta * delta);
        }
      }
      if (moved < 1e-14) break;
    }
    double value = objective(next);
    for (int halving = 0; halving < 30 && value > current + 1e-15; ++halving) {
      next = 0.5 * (beta + next);
      value = objective(next);
    }
    const double change = (next - beta).cwiseAbs().maxCoeff();
    if (value <= current + 1e-15) {
      beta = next;
      current = value;
    }
    if (change < 1e-7) break;
  }
}

}  // namespace detail

struct LassoFit {
  std::vector<double> lambdas;              // descending, lambdas[0] = lambda_max
  std::vector<Eigen::VectorXd> path;        // standardized-scale coefficients per lambda
  std::vector<double> cv_partial_loglik;    // summed over folds
  std::size_t chosen = 0;
  std::vector<std::string> kept;
};

/// L1-penalized Cox with the penalty chosen by cross-validated partial
/// likelihood (full-data minus training-fold log-likelihood per fold).
inline LassoFit lasso_cox(const SurvivalDataset& ds, std::size_t n_lambdas, std::size_t cv_folds, std::uint64_t seed) {
  require(ds.is_complete(), ErrorCode::MissingCells, "lasso selection requires a fully observed dataset");
  require(n_lambdas >= 1 && cv_folds >= 2, ErrorCode::InvalidArgument, "lasso needs n_lambdas >= 1, cv_folds >= 2");
  require(ds.n_events() >= cv_folds, ErrorCode::TooFewEvents, "lasso cross-validation needs at least cv_folds events");
  require(ds.n_features() >= 1, ErrorCode::InvalidArgument, "no features to select from");
  const detail::CoxDesign design(ds);
  const auto p = design.x.cols();
  const std::vector<std::size_t> no_folds;
  const auto all_rows = design.rows_excluding(no_folds, 0);
  const Eigen::MatrixXd x_all = detail::rows_of(design.x, all_rows);

  LassoFit fit;
  {
    const auto n = static_cast<Eigen::Index>(all_rows.size());
    Eigen::VectorXd score(n), weight(n);
    detail::cox_working(design, all_rows, Eigen::VectorXd::Zero(n), &score, &weight);
    const double lambda_max = (x_all.transpose() * score).cwiseAbs().maxCoeff() / static_cast<double>(n);
    for (std::size_t k = 0; k < n_lambdas; ++k) {
      const double frac = n_lambdas == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n_lambdas - 1);
      fit.lambdas.push_back(lambda_max * std::pow(0.01, frac));
    }
  }
  auto run_path = [&](const std::vector<std::size_t>& rows, const Eigen::MatrixXd& xs) {
    std::vector<Eigen::VectorXd> path;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    for (double lambda : fit.lambdas) {
      detail::lasso_solve(design, rows, xs, lambda, beta);
      path.push_back(beta);
    }
    return path;
  };
  fit.path = run_path(all_rows, x_all);

  const auto fold = detail::cv_folds(ds.n_rows(), cv_folds, seed);
  fit.cv_partial_loglik.assign(n_lambdas, 0.0);
  for (std::size_t k = 0; k < cv_folds; ++k) {
    const auto rows = design.rows_excluding(fold, k);
    const Eigen::MatrixXd xs = detail::rows_of(design.x, rows);
    const auto path = run_path(rows, xs);
    for (std::size_t l = 0; l < n_lambdas; ++l)
      fit.cv_partial_loglik[l] += detail::cox_working(design, all_rows, x_all * path[l], nullptr, nullptr) -
                                  detail::cox_working(design, rows, xs * path[l], nullptr, nullptr);
  }
  fit.chosen = static_cast<std::size_t>(
      std::max_element(fit.cv_partial_loglik.begin(), fit.cv_partial_loglik.end()) - fit.cv_partial_loglik.begin());

  std::vector<bool> keep(static_cast<std::size_t>(p), false);
  bool any = false;
  for (Eigen::Index j = 0; j < p; ++j)
    if (fit.path[fit.chosen][j] != 0.0) keep[static_cast<std::size_t>(j)] = any = true;
  if (!any) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (const auto& b : fit.path)
      for (Eigen::Index j = 0; j < p; ++j)
        if (std::abs(b[j]) > best_abs) {
          best_abs = std::abs(b[j]);
          best = j;
        }
    keep[static_cast<std::size_t>(best)] = true;
  }
  fit.kept = detail::names_in_order(ds, keep);
  return fit;
}

inline FeatureSubset fit_lasso(const SurvivalDataset& ds, std::size_t n_lambdas, std::size_t cv_folds, std::uint64_t seed) {
  return {lasso_cox(ds, n_lambdas, cv_folds, seed).kept};
}

// ---- recursive feature elimination --------------------------------------------

struct RfeTrace {
  std::vector<std::vector<std::string>> sets;  // visited sets, largest first
  std::vector<double> cv_c_index;
  std::size_t chosen = 0;
};

inline RfeTrace rfe_cox(const SurvivalDataset& ds, std::size_t target_k, std::size_t cv_folds, std::uint64_t seed) {
  require(target_k >= 1 && target_k <= ds.n_features(), ErrorCode::InvalidArgument,
          "rfe target_k must lie in [1, n_features]");
  require(cv_folds >= 2, ErrorCode::InvalidArgument, "rfe needs cv_folds >= 2");
  require(ds.is_complete(), ErrorCode::MissingCells, "rfe requires a fully observed dataset");
  const auto fold = detail::cv_folds(ds.n_rows(), cv_folds, seed);
  std::vector<std::vector<std::size_t>> train_rows(cv_folds), test_rows(cv_folds);
  for (std::size_t i = 0; i < ds.n_rows(); ++i)
    for (std::size_t k = 0; k < cv_folds; ++k) (fold[i] == k ? test_rows : train_rows)[k].push_back(i);

  RfeTrace trace;
  auto remaining = ds.feature_names();
  try {
    while (true) {
      const auto sub = select_features(ds, remaining);
      double total = 0.0;
      for (std::size_t k = 0; k < cv_folds; ++k) {
        const auto tr = take_rows(sub, train_rows[k]);
        const auto te = take_rows(sub, test_rows[k]);
        const auto model = fit_cox(tr);
        std::vector<double> risk(te.n_rows());
        for (std::size_t i = 0; i < te.n_rows(); ++i) risk[i] = cox_predict_risk(model, te.row(i));
        total += concordance_index(risk, std::span<const double>(te.time.data(), te.n_rows()),
                                   std::span<const double>(te.event.data(), te.n_rows()));
      }
      trace.sets.push_back(remaining);
      trace.cv_c_index.push_back(total / static_cast<double>(cv_folds));
      if (remaining.size() <= target_k) break;
      const auto full = fit_cox(sub);
      Eigen::Index weakest = 0;
      double weakest_abs = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < full.beta.size(); ++j) {
        const double standardized = std::abs(full.beta[j] * full.scales[j]);
        if (standardized < weakest_abs) {
          weakest_abs = standardized;
          weakest = j;
        }
      }
      remaining.erase(remaining.begin() + weakest);
    }
  } catch (const Error& err) {
    fail(ErrorCode::RfeFitFailure, std::string("rfe fit failed: ") + err.what());
  }
  trace.chosen = static_cast<std::size_t>(std::max_element(trace.cv_c_index.begin(), trace.cv_c_index.end()) -
                                          trace.cv_c_index.begin());
  return trace;
}

inline FeatureSubset fit_rfe(const SurvivalDataset& ds, std::size_t target_k, std::size_t cv_folds, std::uint64_t seed) {
  auto trace = rfe_cox(ds, target_k, cv_folds, seed);
  return {trace.sets[trace.chosen]};
}

// ---- information gain ---------------------------------------------------------

namespace detail {

/// Equal-frequency bin per value: tied values share the bin of their first
/// sorted position.
inline std::vector<std::size_t> equal_frequency_bins(const std::vector<double>& v, std::size_t bins) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto rank = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v[i]) - sorted.begin());
    out[i] = rank * bins / v.size();
  }
  return out;
}

inline double mutual_information(const std::vector<std::size_t>& a, const std::vector<int>& label) {
  std::map<std::pair<std::size_t, int>, double> joint;
  std::map<std::size_t, double> ca;
  std::map<int, double> cl;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], label[i]}] += 1.0;
    ca[a[i]] += 1.0;
    cl[label[i]] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (const auto& [key, c] : joint) mi += c / n * std::log(c * n / (ca[key.first] * cl[key.second]));
  return std::max(mi, 0.0);
}

}  // namespace detail

/// Event-by-median-time label: 1 for events at or before the median event
/// time, 0 for anyone known to survive past it; rows censored at or before
/// the median are unlabelled (-1).
inline std::vector<int> median_event_label(const SurvivalDataset& ds) {
  std::vector<double> event_times;
  for (std::size_t i = 0; i < ds.n_rows(); ++i)
    if (ds.event[static_cast<Eigen::Index>(i)] > 0.5) event_times.push_back(ds.time[static_cast<Eigen::Index>(i)]);
  require(!event_times.empty(), ErrorCode::DegenerateLabel, "no events to define the label");
  const double median = detail::median_of(event_times);
  std::vector<int> label(ds.n_rows(), -1);
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    const double t = ds.time[static_cast<Eigen::Index>(i)];
    if (t > median) label[i] = 0;
    else if (ds.event[static_cast<Eigen::Index>(i)] > 0.5) label[i] = 1;
  }
  return label;
}

/// Mutual information (nats) between each binned feature and the label.
inline std::vector<double> infogain_scores(const SurvivalDataset& ds, std::size_t bins) {
  require(bins >= 2, ErrorCode::InvalidArgument, "information gain needs at least two bins");
  require(ds.is_complete(), ErrorCode::MissingCells, "information gain requires a fully observed dataset");
  const auto label_all = median_event_label(ds);
  std::vector<std::size_t> rows;
  std::vector<int> label;
  for (std::size_t i = 0; i < label_all.size(); ++i)
    if (label_all[i] >= 0) {
      rows.push_back(i);
      label.push_back(label_all[i]);
    }
  const bool both = std::count(label.begin(), label.end(), 1) > 0 && std::count(label.begin(), label.end(), 0) > 0;
  require(both, ErrorCode::DegenerateLabel, "information-gain label has a single class");
  std::vector<double> scores;
  for (Eigen::Index j = 0; j < ds.values.cols(); ++j) {
    std::vector<double> v;
    for (auto r : rows) v.push_back(ds.values(static_cast<Eigen::Index>(r), j));
    scores.push_back(detail::mutual_information(detail::equal_frequency_bins(v, bins), label));
  }
  return scores;
}

inline FeatureSubset fit_infogain(const SurvivalDataset& ds, std::size_t target_k, std::size_t bins) {
  require(target_k >= 1 && target_k <= ds.n_features(), ErrorCode::InvalidArgument,
          "information-gain target_k must lie in [1, n_features]");
  const auto scores = infogain_scores(ds, bins);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> keep(scores.size(), false);
  for (std::size_t q = 0; q < target_k; ++q) keep[order[q]] = true;
  return {detail::names_in_order(ds, keep)};
}

}  // namespace prepsurv
