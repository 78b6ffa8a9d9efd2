#pragma once

// Brute-force reference implementations. These deliberately share no code
// with the library paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace prepsurv::oracle {

/// O(n^2) Harrell's C over all ordered pairs.
inline double concordance_naive(const std::vector<double>& risk, const std::vector<double>& time,
                                const std::vector<double>& event, bool* any_comparable = nullptr) {
  double concordant = 0.0, comparable = 0.0;
  for (std::size_t i = 0; i < risk.size(); ++i) {
    if (event[i] != 1.0) continue;
    for (std::size_t j = 0; j < risk.size(); ++j) {
      if (!(time[i] < time[j])) continue;
      comparable += 1.0;
      if (risk[i] > risk[j]) concordant += 1.0;
      else if (risk[i] == risk[j]) concordant += 0.5;
    }
  }
  if (any_comparable) *any_comparable = comparable > 0.0;
  return concordant / comparable;
}

/// Product-limit value at t computed by scanning every distinct time <= t.
inline double km_at(const std::vector<double>& time, const std::vector<double>& indicator, double t,
                    bool strictly_before = false) {
  double s = 1.0;
  std::vector<double> distinct;
  for (double x : time)
    if ((strictly_before ? x < t : x <= t) && std::find(distinct.begin(), distinct.end(), x) == distinct.end())
      distinct.push_back(x);
  std::sort(distinct.begin(), distinct.end());
  for (double u : distinct) {
    double at_risk = 0.0, d = 0.0;
    for (std::size_t i = 0; i < time.size(); ++i) {
      if (time[i] >= u) at_risk += 1.0;
      if (time[i] == u && indicator[i] == 1.0) d += 1.0;
    }
    s *= 1.0 - d / at_risk;
  }
  return s;
}

/// (1/n) sum_i sum_j dt_j (S_i(t_j) - [T_i > t_j])^2 / G(t_j), with G the
/// censoring KM clamped at 1e-4.
inline double igs_double_sum(const std::function<double(std::size_t, double)>& surv, const std::vector<double>& time,
                             const std::vector<double>& event, const std::vector<double>& points,
                             const std::vector<double>& deltas) {
  std::vector<double> flipped(event.size());
  for (std::size_t i = 0; i < event.size(); ++i) flipped[i] = 1.0 - event[i];
  double total = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i)
    for (std::size_t j = 0; j < points.size(); ++j) {
      const double g = std::max(km_at(time, flipped, points[j]), 1e-4);
      const double observed = time[i] > points[j] ? 1.0 : 0.0;
      const double err = surv(i, points[j]) - observed;
      total += deltas[j] * err * err / g;
    }
  return total / static_cast<double>(time.size());
}

/// Breslow partial log-likelihood by direct risk-set enumeration, O(n^2).
inline double cox_loglik_naive(const std::vector<std::vector<double>>& x, const std::vector<double>& time,
                               const std::vector<double>& event, const std::vector<double>& beta) {
  auto eta = [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) s += x[i][j] * beta[j];
    return s;
  };
  double ll = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (event[i] != 1.0) continue;
    double denom = 0.0;
    for (std::size_t k = 0; k < time.size(); ++k)
      if (time[k] >= time[i]) denom += std::exp(eta(k));
    ll += eta(i) - std::log(denom);
  }
  return ll;
}

}  // namespace prepsurv::oracle

namespace prepsurv::oracle {

/// Two-sample log-rank chi-square for a boolean group split, summed over
/// the distinct event times of the pooled sample.
inline double logrank_statistic(const std::vector<double>& time, const std::vector<double>& event,
                                const std::vector<bool>& in_left) {
  std::vector<double> times;
  for (std::size_t i = 0; i < time.size(); ++i)
    if (event[i] == 1.0) times.push_back(time[i]);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double observed_minus_expected = 0.0, variance = 0.0;
  for (double u : times) {
    double y = 0, yl = 0, d = 0, dl = 0;
    for (std::size_t i = 0; i < time.size(); ++i) {
      if (time[i] < u) continue;
      y += 1;
      if (in_left[i]) yl += 1;
      if (time[i] == u && event[i] == 1.0) {
        d += 1;
        if (in_left[i]) dl += 1;
      }
    }
    observed_minus_expected += dl - d * yl / y;
    if (y > 1) variance += d * (yl / y) * (1 - yl / y) * (y - d) / (y - 1);
  }
  return variance > 0 ? observed_minus_expected * observed_minus_expected / variance : 0.0;
}

/// Nearest-donor fill by an exhaustive distance table. `x[i][j]` is only
/// read where `seen[i][j]`.
inline std::vector<std::vector<double>> knn_fill_naive(const std::vector<std::vector<double>>& x,
                                                       const std::vector<std::vector<bool>>& seen, std::size_t k) {
  const std::size_t n = x.size(), p = x[0].size();
  std::vector<double> mu(p, 0.0), sd(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (seen[i][j]) { mu[j] += x[i][j]; c += 1.0; }
    mu[j] /= c;
    for (std::size_t i = 0; i < n; ++i)
      if (seen[i][j]) sd[j] += (x[i][j] - mu[j]) * (x[i][j] - mu[j]);
    sd[j] = c > 1.0 ? std::sqrt(sd[j] / (c - 1.0)) : 0.0;
    if (sd[j] == 0.0) sd[j] = 1.0;
  }
  auto out = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      if (seen[i][j]) continue;
      std::vector<std::pair<double, std::size_t>> table;
      for (std::size_t d = 0; d < n; ++d) {
        if (!seen[d][j]) continue;
        double ss = 0.0, shared = 0.0;
        for (std::size_t c = 0; c < p; ++c)
          if (seen[i][c] && seen[d][c]) {
            const double diff = (x[i][c] - x[d][c]) / sd[c];
            ss += diff * diff;
            shared += 1.0;
          }
        table.emplace_back(shared > 0 ? std::sqrt(ss * static_cast<double>(p) / shared) : INFINITY, d);
      }
      std::sort(table.begin(), table.end());
      double sum = 0.0;
      for (std::size_t q = 0; q < k; ++q) sum += x[table[q].second][j];
      out[i][j] = sum / static_cast<double>(k);
    }
  return out;
}

}  // namespace prepsurv::oracle
