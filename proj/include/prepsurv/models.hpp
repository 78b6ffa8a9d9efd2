#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prepsurv/cox.hpp"
#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"
#include "prepsurv/metrics.hpp"
#include "prepsurv/rsf.hpp"

namespace prepsurv {

struct ModelKind {
  enum class Tag { Cox, RandomSurvivalForest, UserSupplied };
  Tag tag = Tag::Cox;
  std::string handle;  // UserSupplied only

  std::string name() const {
    switch (tag) {
      case Tag::Cox: return "cox";
      case Tag::RandomSurvivalForest: return "rsf";
      case Tag::UserSupplied: return handle;
    }
    return "unknown";
  }
  bool operator==(const ModelKind&) const = default;
};

/// A trained model behind the common prediction contract. Higher risk means
/// an earlier expected event.
struct FittedModel {
  ModelKind kind;
  std::function<double(std::span<const double>)> predict_risk;
  std::function<SurvivalCurve(std::span<const double>, const TimeGrid&)> predict_survival;
};

using FitFunction = std::function<FittedModel(const SurvivalDataset&)>;

/// A model kind together with its fit function.
struct ModelSpec {
  ModelKind kind;
  FitFunction fit;
};

inline ModelSpec cox_model(CoxOptions options = {}) {
  ModelSpec spec;
  spec.kind = {ModelKind::Tag::Cox, {}};
  spec.fit = [options](const SurvivalDataset& train) {
    auto model = std::make_shared<const CoxModel>(fit_cox(train, options));
    FittedModel fitted;
    fitted.kind = {ModelKind::Tag::Cox, {}};
    fitted.predict_risk = [model](std::span<const double> row) { return cox_predict_risk(*model, row); };
    fitted.predict_survival = [model](std::span<const double> row, const TimeGrid& grid) {
      return cox_predict_survival(*model, row, grid);
    };
    return fitted;
  };
  return spec;
}

inline ModelSpec rsf_model(RsfConfig config = {}) {
  ModelSpec spec;
  spec.kind = {ModelKind::Tag::RandomSurvivalForest, {}};
  spec.fit = [config](const SurvivalDataset& train) {
    auto model = std::make_shared<const RSFModel>(fit_rsf(train, config));
    FittedModel fitted;
    fitted.kind = {ModelKind::Tag::RandomSurvivalForest, {}};
    fitted.predict_risk = [model](std::span<const double> row) { return rsf_predict_risk(*model, row); };
    fitted.predict_survival = [model](std::span<const double> row, const TimeGrid& grid) {
      return rsf_predict(*model, row, grid).curve;
    };
    return fitted;
  };
  return spec;
}

/// Maps model handles to fit functions. Built-ins are registered as "cox"
/// and "rsf"; anything else is a user-supplied model.
class ModelRegistry {
 public:
  static ModelRegistry with_builtins() {
    ModelRegistry registry;
    registry.entries_["cox"] = cox_model();
    registry.entries_["rsf"] = rsf_model();
    return registry;
  }

  void add(const std::string& handle, FitFunction fit) {
    require(static_cast<bool>(fit), ErrorCode::InvalidArgument, "empty fit function for model '" + handle + "'");
    ModelSpec spec;
    spec.kind = {ModelKind::Tag::UserSupplied, handle};
    spec.fit = [handle, fit = std::move(fit)](const SurvivalDataset& train) {
      auto fitted = fit(train);
      fitted.kind = {ModelKind::Tag::UserSupplied, handle};
      return fitted;
    };
    entries_[handle] = std::move(spec);
  }

  void set(const std::string& handle, ModelSpec spec) { entries_[handle] = std::move(spec); }

  const ModelSpec& resolve(const std::string& handle) const {
    auto it = entries_.find(handle);
    if (it == entries_.end()) fail(ErrorCode::ConfigError, "unknown model '" + handle + "'");
    return it->second;
  }

  bool contains(const std::string& handle) const { return entries_.count(handle) > 0; }

 private:
  std::map<std::string, ModelSpec> entries_;
};

/// Evaluation grid and censoring distribution, both estimated on the training split.
struct EvaluationContext {
  TimeGrid grid;
  SurvivalCurve censoring;

  static EvaluationContext from_train(const SurvivalDataset& train, std::size_t grid_points = 50) {
    return {time_grid(train.time, train.event, grid_points), censoring_distribution(train.time, train.event)};
  }
};

struct EvaluationReport {
  double c_index = 0.0;
  double igs = 0.0;
  std::vector<double> grid;
  std::vector<double> brier;  // classical IPCW Brier score per grid point
};

inline EvaluationReport evaluate_model(const FittedModel& model, const SurvivalDataset& test,
                                       const EvaluationContext& context) {
  require(test.is_complete(), ErrorCode::MissingCells, "evaluation requires a fully observed test set");
  const std::size_t n = test.n_rows();
  std::vector<double> risk(n);
  std::vector<SurvivalCurve> curves;
  curves.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    risk[i] = model.predict_risk(test.row(i));
    curves.push_back(model.predict_survival(test.row(i), context.grid));
  }
  std::span<const double> time(test.time.data(), n), event(test.event.data(), n);
  EvaluationReport report;
  report.c_index = concordance_index(risk, time, event);
  report.igs = integrated_graf_score(curves, time, event, context.grid, context.censoring);
  report.grid = context.grid.points;
  for (double t : context.grid.points) report.brier.push_back(brier_score(curves, time, event, t, context.censoring));
  return report;
}

}  // namespace prepsurv
