#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"
#include "prepsurv/imputation.hpp"
#include "prepsurv/outliers.hpp"
#include "prepsurv/selection.hpp"

namespace prepsurv {

enum class Stage { Imputation, OutlierHandling, FeatureSelection };

inline const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::Imputation: return "impute";
    case Stage::OutlierHandling: return "outlier";
    case Stage::FeatureSelection: return "select";
  }
  return "?";
}

/// Searchable method identifiers per stage, in canonical order.
inline const std::vector<std::string>& stage_methods(Stage stage) {
  static const std::vector<std::string> imputation{"cca", "mean", "median", "knn", "mice"};
  static const std::vector<std::string> outliers{"none", "elliptic", "martingale"};
  static const std::vector<std::string> selection{"none", "uc", "lasso", "rfe", "ig"};
  switch (stage) {
    case Stage::Imputation: return imputation;
    case Stage::OutlierHandling: return outliers;
    case Stage::FeatureSelection: return selection;
  }
  return imputation;
}

/// "none" is also accepted for imputation, but only on fully observed data.
inline bool is_known_method(Stage stage, const std::string& method) {
  const auto& m = stage_methods(stage);
  return std::find(m.begin(), m.end(), method) != m.end() || method == "none";
}

struct StageAction {
  Stage stage = Stage::Imputation;
  std::string method = "none";
  std::map<std::string, double> params;

  double param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
  bool operator==(const StageAction&) const = default;
};

using TransformState = std::variant<std::monostate, CompleteCaseRule, MomentStatistics, KnnDonorPool, ChainedRegressions,
                                    EllipticRule, MartingaleRule, FeatureSubset>;

/// A stage action together with the state it learned on the training split.
struct FittedTransform {
  StageAction action;
  TransformState state;

  SurvivalDataset apply(const SurvivalDataset& ds) const {
    return std::visit(
        [&](const auto& s) -> SurvivalDataset {
          if constexpr (std::is_same_v<std::decay_t<decltype(s)>, std::monostate>) return ds;
          else return s.apply(ds);
        },
        state);
  }
  bool operator==(const FittedTransform&) const = default;
};

struct Transformed {
  SurvivalDataset data;
  FittedTransform transform;
};

namespace detail {

inline Transformed finish(const SurvivalDataset& ds, StageAction action, TransformState state) {
  FittedTransform t{std::move(action), std::move(state)};
  auto out = t.apply(ds);
  return {std::move(out), std::move(t)};
}

inline std::size_t count_param(const StageAction& a, const std::string& key, double fallback) {
  const double v = a.param(key, fallback);
  require(v >= 0.0 && std::floor(v) == v, ErrorCode::InvalidArgument,
          "parameter '" + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

// ---- stage operations ----------------------------------------------------------

inline SurvivalDataset impute_cca(const SurvivalDataset& ds) { return CompleteCaseRule{}.apply(ds); }

inline Transformed impute_moment(const SurvivalDataset& ds, MomentKind kind) {
  return detail::finish(ds, {Stage::Imputation, kind == MomentKind::Mean ? "mean" : "median", {}}, fit_moment(ds, kind));
}

inline Transformed impute_knn(const SurvivalDataset& ds, std::size_t k = 5) {
  return detail::finish(ds, {Stage::Imputation, "knn", {{"k", static_cast<double>(k)}}}, fit_knn(ds, k));
}

inline Transformed impute_chained(const SurvivalDataset& ds, std::size_t max_rounds = 10, double tol = 1e-3,
                                  std::uint64_t seed = 0) {
  return detail::finish(ds,
                        {Stage::Imputation,
                         "mice",
                         {{"max_rounds", static_cast<double>(max_rounds)}, {"tol", tol}, {"seed", static_cast<double>(seed)}}},
                        fit_chained(ds, max_rounds, tol, seed));
}

inline Transformed detect_outliers_elliptic(const SurvivalDataset& ds, double contamination = 0.05) {
  return detail::finish(ds, {Stage::OutlierHandling, "elliptic", {{"contamination", contamination}}},
                        fit_elliptic(ds, contamination));
}

inline Transformed detect_outliers_martingale(const SurvivalDataset& ds, double cutoff = 2.0) {
  return detail::finish(ds, {Stage::OutlierHandling, "martingale", {{"cutoff", cutoff}}}, fit_martingale(ds, cutoff));
}

inline Transformed select_univariate_cox(const SurvivalDataset& ds, double alpha = 0.05) {
  return detail::finish(ds, {Stage::FeatureSelection, "uc", {{"alpha", alpha}}}, fit_univariate_cox(ds, alpha));
}

inline Transformed select_lasso(const SurvivalDataset& ds, std::size_t n_lambdas = 20, std::size_t cv_folds = 3,
                                std::uint64_t seed = 0) {
  return detail::finish(ds,
                        {Stage::FeatureSelection,
                         "lasso",
                         {{"n_lambdas", static_cast<double>(n_lambdas)},
                          {"cv_folds", static_cast<double>(cv_folds)},
                          {"seed", static_cast<double>(seed)}}},
                        fit_lasso(ds, n_lambdas, cv_folds, seed));
}

/// target_k = 0 searches every subset size down to one.
inline Transformed select_rfe(const SurvivalDataset& ds, std::size_t target_k = 0, std::size_t cv_folds = 3,
                              std::uint64_t seed = 0) {
  const std::size_t k = target_k ? target_k : 1;
  return detail::finish(ds,
                        {Stage::FeatureSelection,
                         "rfe",
                         {{"target_k", static_cast<double>(k)},
                          {"cv_folds", static_cast<double>(cv_folds)},
                          {"seed", static_cast<double>(seed)}}},
                        fit_rfe(ds, k, cv_folds, seed));
}

/// target_k = 0 keeps ceil(p / 2) features.
inline Transformed select_infogain(const SurvivalDataset& ds, std::size_t target_k = 0, std::size_t bins = 10) {
  const std::size_t k = target_k ? target_k : (ds.n_features() + 1) / 2;
  return detail::finish(ds,
                        {Stage::FeatureSelection, "ig", {{"target_k", static_cast<double>(k)}, {"bins", static_cast<double>(bins)}}},
                        fit_infogain(ds, k, bins));
}

/// Fits `action` on `train`.
inline FittedTransform fit_action(const StageAction& action, const SurvivalDataset& train) {
  require(is_known_method(action.stage, action.method), ErrorCode::ConfigError,
          std::string("unknown ") + to_string(action.stage) + " method '" + action.method + "'");
  const auto seed = static_cast<std::uint64_t>(action.param("seed", 0.0));
  const auto& m = action.method;
  if (m == "none") return {action, std::monostate{}};
  switch (action.stage) {
    case Stage::Imputation:
      if (m == "cca") return {action, CompleteCaseRule{}};
      if (m == "mean") return {action, fit_moment(train, MomentKind::Mean)};
      if (m == "median") return {action, fit_moment(train, MomentKind::Median)};
      if (m == "knn") return {action, fit_knn(train, detail::count_param(action, "k", 5))};
      return {action, fit_chained(train, detail::count_param(action, "max_rounds", 10), action.param("tol", 1e-3), seed)};
    case Stage::OutlierHandling:
      if (m == "elliptic") return {action, fit_elliptic(train, action.param("contamination", 0.05))};
      return {action, fit_martingale(train, action.param("cutoff", 2.0))};
    case Stage::FeatureSelection:
      if (m == "uc") return {action, fit_univariate_cox(train, action.param("alpha", 0.05))};
      if (m == "lasso")
        return {action, fit_lasso(train, detail::count_param(action, "n_lambdas", 20),
                                  detail::count_param(action, "cv_folds", 3), seed)};
      if (m == "rfe") {
        const std::size_t k = detail::count_param(action, "target_k", 0);
        return {action, fit_rfe(train, k ? k : 1, detail::count_param(action, "cv_folds", 3), seed)};
      }
      {
        const std::size_t k = detail::count_param(action, "target_k", 0);
        return {action, fit_infogain(train, k ? k : (train.n_features() + 1) / 2, detail::count_param(action, "bins", 10))};
      }
  }
  fail(ErrorCode::ConfigError, "unreachable stage");
}

struct StageResult {
  SurvivalDataset train;
  SurvivalDataset test;
  FittedTransform transform;
};

/// Fits on train and applies to both splits. Outlier removal never touches
/// the test split; complete-case analysis applies to both.
inline StageResult apply_action(const StageAction& action, const SurvivalDataset& train, const SurvivalDataset& test) {
  const bool complete = train.is_complete() && test.is_complete();
  if (action.stage != Stage::Imputation || action.method == "none")
    require(complete, ErrorCode::InvalidStageOrder,
            std::string(to_string(action.stage)) + " '" + action.method + "' needs fully observed data; impute first");
  StageResult out;
  out.transform = fit_action(action, train);
  out.train = out.transform.apply(train);
  out.test = action.stage == Stage::OutlierHandling ? test : out.transform.apply(test);
  return out;
}

}  // namespace prepsurv
