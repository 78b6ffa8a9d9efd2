#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "prepsurv/error.hpp"

namespace prepsurv {

/// Lower clamp applied to probabilities before division (IPCW weights) or log
/// (cumulative hazard).
inline constexpr double kProbabilityFloor = 1e-4;

enum class CurveRole { Survival, Censoring };

/// Right-continuous step function: 1 before the first knot, probs[k] on
/// [knots[k], knots[k+1]).
struct SurvivalCurve {
  std::vector<double> knots;
  std::vector<double> probs;
  CurveRole role = CurveRole::Survival;

  /// Value at t without any floor.
  double raw(double t) const {
    auto it = std::upper_bound(knots.begin(), knots.end(), t);
    if (it == knots.begin()) return 1.0;
    return probs[static_cast<std::size_t>(it - knots.begin()) - 1];
  }

  /// Left limit at t, i.e. the value just before t.
  double raw_left(double t) const {
    auto it = std::lower_bound(knots.begin(), knots.end(), t);
    if (it == knots.begin()) return 1.0;
    return probs[static_cast<std::size_t>(it - knots.begin()) - 1];
  }

  /// Censoring curves are clamped below at kProbabilityFloor.
  double operator()(double t) const {
    const double v = raw(t);
    return role == CurveRole::Censoring ? std::max(v, kProbabilityFloor) : v;
  }

  double left(double t) const {
    const double v = raw_left(t);
    return role == CurveRole::Censoring ? std::max(v, kProbabilityFloor) : v;
  }

  bool operator==(const SurvivalCurve&) const = default;
};

/// Evaluation time points t_1 < ... < t_k with widths dt_j = t_j - t_{j-1}
/// (dt_1 = t_1 - start).
struct TimeGrid {
  std::vector<double> points;
  std::vector<double> deltas;
  double start = 0.0;

  static TimeGrid from_points(std::vector<double> points, double start = 0.0) {
    require(!points.empty(), ErrorCode::InvalidArgument, "time grid must be non-empty");
    TimeGrid g;
    g.start = start;
    double prev = start;
    for (double p : points) {
      require(p > prev, ErrorCode::InvalidArgument, "time grid must be strictly increasing and after its start");
      g.deltas.push_back(p - prev);
      prev = p;
    }
    g.points = std::move(points);
    return g;
  }

  std::size_t size() const { return points.size(); }
  bool operator==(const TimeGrid&) const = default;
};

namespace detail {

inline void check_lengths(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::WidthMismatch, "time and event lengths differ");
}

// Product-limit estimator; `indicator` marks the terminating event of the
// curve being estimated. At a shared timestamp every subject is still at risk.
inline SurvivalCurve product_limit(std::span<const double> time, std::span<const double> indicator, CurveRole role) {
  std::vector<std::size_t> order(time.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });
  SurvivalCurve curve;
  curve.role = role;
  double at_risk = static_cast<double>(time.size());
  double s = 1.0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = time[order[k]];
    double d = 0.0, leaving = 0.0;
    while (k < order.size() && time[order[k]] == t) {
      d += indicator[order[k]] > 0.5 ? 1.0 : 0.0;
      leaving += 1.0;
      ++k;
    }
    if (d > 0.0) {
      s *= 1.0 - d / at_risk;
      curve.knots.push_back(t);
      curve.probs.push_back(s);
    }
    at_risk -= leaving;
  }
  return curve;
}

}  // namespace detail

inline SurvivalCurve kaplan_meier(std::span<const double> time, std::span<const double> event) {
  detail::check_lengths(time, event);
  require(std::any_of(event.begin(), event.end(), [](double e) { return e > 0.5; }), ErrorCode::NoEvents,
          "Kaplan-Meier needs at least one event");
  return detail::product_limit(time, event, CurveRole::Survival);
}

inline SurvivalCurve kaplan_meier(const Eigen::VectorXd& time, const Eigen::VectorXd& event) {
  return kaplan_meier(std::span<const double>(time.data(), time.size()),
                      std::span<const double>(event.data(), event.size()));
}

/// G(t): Kaplan-Meier of remaining uncensored (indicator 1 - event).
inline SurvivalCurve censoring_distribution(std::span<const double> time, std::span<const double> event) {
  detail::check_lengths(time, event);
  std::vector<double> flipped(event.size());
  std::transform(event.begin(), event.end(), flipped.begin(), [](double e) { return e > 0.5 ? 0.0 : 1.0; });
  return detail::product_limit(time, flipped, CurveRole::Censoring);
}

inline SurvivalCurve censoring_distribution(const Eigen::VectorXd& time, const Eigen::VectorXd& event) {
  return censoring_distribution(std::span<const double>(time.data(), time.size()),
                                std::span<const double>(event.data(), event.size()));
}

/// Lambda(t) = -ln S(t), with S floored at kProbabilityFloor.
inline double cumulative_hazard(const SurvivalCurve& curve, double t) {
  require(curve.role == CurveRole::Survival, ErrorCode::InvalidArgument, "cumulative hazard needs a survival curve");
  return -std::log(std::max(curve.raw(t), kProbabilityFloor));
}

/// event_i - Lambda(time_i) using the pooled Kaplan-Meier curve.
inline std::vector<double> martingale_residuals(std::span<const double> time, std::span<const double> event) {
  auto km = kaplan_meier(time, event);
  std::vector<double> r(time.size());
  for (std::size_t i = 0; i < time.size(); ++i) r[i] = (event[i] > 0.5 ? 1.0 : 0.0) - cumulative_hazard(km, time[i]);
  return r;
}

inline std::vector<double> martingale_residuals(const Eigen::VectorXd& time, const Eigen::VectorXd& event) {
  return martingale_residuals(std::span<const double>(time.data(), time.size()),
                              std::span<const double>(event.data(), event.size()));
}

/// Harrell's C. A pair (i, j) is comparable when time_i < time_j and i had
/// the event; it is concordant when risk_i > risk_j and half-counted on risk
/// ties. O(n log n) sweep over descending time with a Fenwick tree of risk
/// ranks.
inline double concordance_index(std::span<const double> risk, std::span<const double> time,
                                std::span<const double> event) {
  require(risk.size() == time.size() && time.size() == event.size(), ErrorCode::WidthMismatch,
          "risk, time and event lengths differ");
  const std::size_t n = risk.size();
  std::vector<double> sorted_risk(risk.begin(), risk.end());
  std::sort(sorted_risk.begin(), sorted_risk.end());
  sorted_risk.erase(std::unique(sorted_risk.begin(), sorted_risk.end()), sorted_risk.end());
  const std::size_t m = sorted_risk.size();
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(sorted_risk.begin(), sorted_risk.end(), r) - sorted_risk.begin());
  };

  std::vector<std::uint64_t> tree(m + 1, 0);
  auto add = [&](std::size_t rank) {
    for (std::size_t i = rank + 1; i <= m; i += i & (~i + 1)) ++tree[i];
  };
  auto count_below = [&](std::size_t rank) {  // ranks strictly below `rank`
    std::uint64_t s = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });

  std::uint64_t concordant = 0, tied = 0, comparable = 0, inserted = 0;
  std::size_t k = 0;
  while (k < n) {
    std::size_t end = k;
    while (end < n && time[order[end]] == time[order[k]]) ++end;
    for (std::size_t q = k; q < end; ++q) {
      const std::size_t i = order[q];
      if (event[i] <= 0.5) continue;
      const std::size_t r = rank_of(risk[i]);
      const std::uint64_t below = count_below(r);
      const std::uint64_t at_or_below = count_below(r + 1);
      concordant += below;
      tied += at_or_below - below;
      comparable += inserted;
    }
    for (std::size_t q = k; q < end; ++q) {
      add(rank_of(risk[order[q]]));
      ++inserted;
    }
    k = end;
  }
  require(comparable > 0, ErrorCode::NoComparablePairs, "no comparable pairs");
  return static_cast<double>(2 * concordant + tied) / static_cast<double>(2 * comparable);
}

inline double concordance_index(const Eigen::VectorXd& risk, const Eigen::VectorXd& time,
                                const Eigen::VectorXd& event) {
  return concordance_index(std::span<const double>(risk.data(), risk.size()),
                           std::span<const double>(time.data(), time.size()),
                           std::span<const double>(event.data(), event.size()));
}

/// How IPCW weights are assigned in a Brier term.
enum class IpcwWeighting {
  /// Events before t weighted by 1/G(T_i-), survivors past t by 1/G(t),
  /// subjects censored before t contribute zero.
  Classical,
  /// Every subject weighted by 1/G(t), with Observed(t, i) = [T_i > t]. This
  /// is the convention used by integrated_graf_score.
  UniformAtT,
};

namespace detail {

inline double checked_weight(double value) {
  require(value >= kProbabilityFloor, ErrorCode::CensoringWeightUnderflow,
          "censoring survival " + std::to_string(value) + " below floor");
  return value;
}

}  // namespace detail

/// IPCW Brier score at time t.
inline double brier_score(std::span<const SurvivalCurve> pred, std::span<const double> time,
                          std::span<const double> event, double t, const SurvivalCurve& censoring,
                          IpcwWeighting weighting = IpcwWeighting::Classical) {
  require(censoring.role == CurveRole::Censoring, ErrorCode::InvalidArgument, "brier score needs a censoring curve");
  require(pred.size() == time.size() && time.size() == event.size(), ErrorCode::WidthMismatch,
          "prediction, time and event lengths differ");
  require(!time.empty(), ErrorCode::InvalidArgument, "brier score of an empty sample");
  const std::size_t n = time.size();
  double total = 0.0;
  if (weighting == IpcwWeighting::UniformAtT) {
    const double g = detail::checked_weight(censoring.raw(t));
    for (std::size_t i = 0; i < n; ++i) {
      const double observed = time[i] > t ? 1.0 : 0.0;
      const double err = pred[i](t) - observed;
      total += err * err / g;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double s = pred[i](t);
      if (time[i] <= t && event[i] > 0.5) {
        total += s * s / detail::checked_weight(censoring.raw_left(time[i]));
      } else if (time[i] > t) {
        total += (1.0 - s) * (1.0 - s) / detail::checked_weight(censoring.raw(t));
      }
    }
  }
  return total / static_cast<double>(n);
}

/// (1/n) sum_i sum_j dt_j (S_i(t_j) - [T_i > t_j])^2 / G(t_j).
inline double integrated_graf_score(std::span<const SurvivalCurve> pred, std::span<const double> time,
                                    std::span<const double> event, const TimeGrid& grid,
                                    const SurvivalCurve& censoring) {
  require(grid.size() > 0, ErrorCode::InvalidArgument, "empty time grid");
  double total = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j)
    total += grid.deltas[j] * brier_score(pred, time, event, grid.points[j], censoring, IpcwWeighting::UniformAtT);
  return total;
}

/// Linear-interpolation (type 7) sample quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double level) {
  require(!sorted.empty(), ErrorCode::InvalidArgument, "quantile of empty sample");
  const double h = level * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// k points equally spaced in quantile level between the 0.05 and 0.95
/// quantiles of observed event times (k = 1 gives the median). Duplicates
/// and non-positive times are dropped; the grid starts at time 0.
inline TimeGrid time_grid(std::span<const double> time, std::span<const double> event, std::size_t k) {
  detail::check_lengths(time, event);
  require(k >= 1, ErrorCode::InvalidArgument, "time grid needs k >= 1");
  std::vector<double> event_times;
  for (std::size_t i = 0; i < time.size(); ++i)
    if (event[i] > 0.5) event_times.push_back(time[i]);
  require(!event_times.empty(), ErrorCode::NoEvents, "time grid needs at least one event");
  std::sort(event_times.begin(), event_times.end());
  std::vector<double> points;
  for (std::size_t j = 0; j < k; ++j) {
    const double level = k == 1 ? 0.5 : 0.05 + 0.9 * static_cast<double>(j) / static_cast<double>(k - 1);
    const double q = quantile_sorted(event_times, level);
    if (q > 0.0 && (points.empty() || q > points.back())) points.push_back(q);
  }
  require(!points.empty(), ErrorCode::InvalidArgument, "all event times are at the time origin");
  return TimeGrid::from_points(std::move(points), 0.0);
}

inline TimeGrid time_grid(const Eigen::VectorXd& time, const Eigen::VectorXd& event, std::size_t k) {
  return time_grid(std::span<const double>(time.data(), time.size()),
                   std::span<const double>(event.data(), event.size()), k);
}

}  // namespace prepsurv
