#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"
#include "prepsurv/random.hpp"

namespace prepsurv {

enum class Mechanism { MCAR, MAR, MNAR };

inline const char* to_string(Mechanism m) {
  switch (m) {
    case Mechanism::MCAR: return "mcar";
    case Mechanism::MAR: return "mar";
    case Mechanism::MNAR: return "mnar";
  }
  return "?";
}

inline Mechanism parse_mechanism(const std::string& s) {
  if (s == "mcar") return Mechanism::MCAR;
  if (s == "mar") return Mechanism::MAR;
  if (s == "mnar") return Mechanism::MNAR;
  fail(ErrorCode::ConfigError, "unknown missingness mechanism '" + s + "' (expected mcar|mar|mnar)");
}

struct MissingnessSpec {
  Mechanism mechanism = Mechanism::MCAR;
  double fraction = 0.5;
  std::vector<std::string> target_columns;
  std::string driver_column;  // MAR only
  std::uint64_t seed = 0;
};

/// Every numeric (non-categorical) feature column, in file order.
inline std::vector<std::string> default_targets(const SurvivalDataset& ds) {
  std::vector<std::string> out;
  for (const auto& c : ds.columns)
    if (c.kind == ColumnKind::Numeric) out.push_back(c.name);
  return out;
}

inline std::size_t injection_quota(double fraction, std::size_t n_rows) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_rows)));
}

namespace detail {

// Row order by value, largest first; ties go to the lower row index.
inline std::vector<std::size_t> rows_by_value_desc(const SurvivalDataset& ds, std::size_t j) {
  std::vector<std::size_t> order(ds.n_rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto col = static_cast<Eigen::Index>(j);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ds.values(static_cast<Eigen::Index>(a), col) > ds.values(static_cast<Eigen::Index>(b), col);
  });
  return order;
}

inline std::size_t resolve_feature(const SurvivalDataset& ds, const std::string& name) {
  for (const auto& c : ds.columns)
    if (c.name == name && !c.is_feature())
      fail(ErrorCode::OutcomeColumnTargeted, "column '" + name + "' is the survival outcome and cannot be masked");
  const auto j = ds.feature_index(name);
  require(j != SurvivalDataset::npos, ErrorCode::SchemaMismatch, "no feature column named '" + name + "'");
  return j;
}

}  // namespace detail

/// Masks round(fraction * n) cells in every target column.
inline SurvivalDataset inject(const SurvivalDataset& ds, const MissingnessSpec& spec) {
  require(spec.fraction > 0.0 && spec.fraction < 1.0, ErrorCode::InvalidArgument, "fraction must lie in (0,1)");
  require(!spec.target_columns.empty(), ErrorCode::InvalidArgument, "no target columns for injection");
  const std::size_t n = ds.n_rows();

  std::vector<std::size_t> targets;
  for (const auto& name : spec.target_columns) {
    const auto j = detail::resolve_feature(ds, name);
    require(std::find(targets.begin(), targets.end(), j) == targets.end(), ErrorCode::InvalidArgument,
            "target column '" + name + "' listed twice");
    require(ds.mask.col(static_cast<Eigen::Index>(j)).all(), ErrorCode::AlreadyMissing,
            "target column '" + name + "' already has missing cells");
    targets.push_back(j);
  }

  std::vector<double> weight;
  if (spec.mechanism == Mechanism::MAR) {
    require(!spec.driver_column.empty(), ErrorCode::InvalidArgument, "mar injection needs a driver column");
    const auto d = detail::resolve_feature(ds, spec.driver_column);
    require(std::find(targets.begin(), targets.end(), d) == targets.end(), ErrorCode::InvalidArgument,
            "driver column '" + spec.driver_column + "' is also a target");
    require(ds.mask.col(static_cast<Eigen::Index>(d)).all(), ErrorCode::DriverMissing,
            "driver column '" + spec.driver_column + "' has missing cells");
    // upper half by driver value gets nine times the weight
    const auto order = detail::rows_by_value_desc(ds, d);
    weight.assign(n, 1.0);
    for (std::size_t r = 0; r < n / 2; ++r) weight[order[r]] = 9.0;
  }

  SurvivalDataset out = ds;
  const std::size_t quota = injection_quota(spec.fraction, n);
  if (quota == 0) return out;

  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto j = targets[t];
    Rng rng = stream(spec.seed, Stream::Injection, t);
    std::vector<std::size_t> chosen;
    switch (spec.mechanism) {
      case Mechanism::MCAR: {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(perm));
        chosen.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(quota));
        break;
      }
      case Mechanism::MAR: {
        // weighted sampling without replacement: keep the quota largest u^(1/w)
        std::vector<double> key(n);
        for (std::size_t i = 0; i < n; ++i) key[i] = std::log(std::max(rng.uniform(), 1e-300)) / weight[i];
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
        chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(quota));
        break;
      }
      case Mechanism::MNAR: {
        const auto order = detail::rows_by_value_desc(ds, j);
        chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(quota));
        break;
      }
    }
    for (auto i : chosen) {
      out.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = false;
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

struct ColumnDiagnostics {
  std::string column;
  std::size_t masked = 0;
  double fraction = 0.0;
  double chi_square = 0.0;     // mask vs driver tertiles, 2 degrees of freedom
  double chi_square_p = 1.0;
  double value_shift = 0.0;    // mean(masked true values) - mean(unmasked)
  double driver_shift = 0.0;   // same, on the driver column
};

struct MechanismReport {
  Mechanism mechanism = Mechanism::MCAR;
  std::string driver;  // column the tertiles come from
  std::vector<ColumnDiagnostics> columns;
};

namespace detail {

inline double shift(const Eigen::VectorXd& values, const std::vector<bool>& masked) {
  double s1 = 0, s0 = 0;
  std::size_t n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i]) s1 += values[static_cast<Eigen::Index>(i)], ++n1;
    else s0 += values[static_cast<Eigen::Index>(i)], ++n0;
  }
  if (!n1 || !n0) return 0.0;
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

// Pearson statistic of the 2 x 3 table mask x rank tertile.
inline double tertile_chi_square(const Eigen::VectorXd& driver, const std::vector<bool>& masked) {
  const std::size_t n = masked.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return driver[static_cast<Eigen::Index>(a)] < driver[static_cast<Eigen::Index>(b)];
  });
  double table[2][3] = {{0, 0, 0}, {0, 0, 0}};
  for (std::size_t r = 0; r < n; ++r) table[masked[order[r]] ? 1 : 0][std::min<std::size_t>(2, 3 * r / n)] += 1;
  double stat = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 3; ++b) {
      const double row = table[a][0] + table[a][1] + table[a][2];
      const double col = table[0][b] + table[1][b];
      const double expected = row * col / static_cast<double>(n);
      if (expected > 0) stat += (table[a][b] - expected) * (table[a][b] - expected) / expected;
    }
  return stat;
}

}  // namespace detail

/// Per-column diagnostics of an injection. Without a driver column the
/// tertiles come from each target's own original values.
inline MechanismReport verify_mechanism(const SurvivalDataset& original, const SurvivalDataset& injected,
                                        const MissingnessSpec& spec) {
  require(original.n_rows() == injected.n_rows() && original.n_features() == injected.n_features(),
          ErrorCode::WidthMismatch, "original and injected datasets differ in shape");
  MechanismReport rep;
  rep.mechanism = spec.mechanism;
  rep.driver = spec.driver_column;
  const std::size_t n = original.n_rows();
  const auto driver_j = spec.driver_column.empty() ? SurvivalDataset::npos : original.feature_index(spec.driver_column);
  for (const auto& name : spec.target_columns) {
    const auto j = original.feature_index(name);
    if (j == SurvivalDataset::npos) continue;
    ColumnDiagnostics d;
    d.column = name;
    std::vector<bool> masked(n);
    for (std::size_t i = 0; i < n; ++i) {
      masked[i] = !injected.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      d.masked += masked[i];
    }
    d.fraction = n ? static_cast<double>(d.masked) / static_cast<double>(n) : 0.0;
    const Eigen::VectorXd own = original.values.col(static_cast<Eigen::Index>(j));
    const Eigen::VectorXd drv = driver_j == SurvivalDataset::npos
                                    ? own
                                    : Eigen::VectorXd(original.values.col(static_cast<Eigen::Index>(driver_j)));
    d.chi_square = detail::tertile_chi_square(drv, masked);
    d.chi_square_p = std::exp(-0.5 * d.chi_square);
    d.value_shift = detail::shift(own, masked);
    d.driver_shift = detail::shift(drv, masked);
    rep.columns.push_back(std::move(d));
  }
  return rep;
}

}  // namespace prepsurv
