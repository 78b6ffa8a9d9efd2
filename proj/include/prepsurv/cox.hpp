#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"
#include "prepsurv/metrics.hpp"

namespace prepsurv {

struct CoxDerivatives {
  double loglik = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;  // negative Hessian
};

/// Breslow-ties partial likelihood of a fixed design. Rows are sorted once by
/// descending time so repeated evaluations are linear in n.
class CoxPartialLikelihood {
 public:
  CoxPartialLikelihood(Eigen::MatrixXd x, Eigen::VectorXd time, Eigen::VectorXd event)
      : x_(std::move(x)), time_(std::move(time)), event_(std::move(event)) {
    require(x_.rows() == time_.size() && time_.size() == event_.size(), ErrorCode::WidthMismatch,
            "design, time and event lengths differ");
    order_.resize(static_cast<std::size_t>(time_.size()));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    std::stable_sort(order_.begin(), order_.end(), [&](Eigen::Index a, Eigen::Index b) { return time_[a] > time_[b]; });
    sorted_.resize(x_.rows(), x_.cols());
    for (std::size_t q = 0; q < order_.size(); ++q) {
      sorted_.row(static_cast<Eigen::Index>(q)) = x_.row(order_[q]);
      sorted_time_.push_back(time_[order_[q]]);
      sorted_event_.push_back(event_[order_[q]]);
    }
  }

  Eigen::Index n_features() const { return x_.cols(); }
  const Eigen::MatrixXd& design() const { return x_; }

  double loglik(const Eigen::VectorXd& beta) const { return evaluate(beta, false).loglik; }

  CoxDerivatives derivatives(const Eigen::VectorXd& beta) const { return evaluate(beta, true); }

  /// Breslow cumulative hazard increments at each distinct event time, for
  /// linear predictor `eta`.
  void breslow(const Eigen::VectorXd& eta, std::vector<double>& knots, std::vector<double>& cumhaz) const {
    knots.clear();
    cumhaz.clear();
    const double shift = eta.size() ? eta.maxCoeff() : 0.0;
    std::vector<double> times, increments;
    double s0 = 0.0;
    std::size_t k = 0;
    const std::size_t n = order_.size();
    while (k < n) {
      std::size_t end = k;
      double d = 0.0;
      while (end < n && time_[order_[end]] == time_[order_[k]]) {
        s0 += std::exp(eta[order_[end]] - shift);
        d += event_[order_[end]] > 0.5 ? 1.0 : 0.0;
        ++end;
      }
      if (d > 0.0) {
        times.push_back(time_[order_[k]]);
        increments.push_back(d / s0 * std::exp(-shift));
      }
      k = end;
    }
    double acc = 0.0;
    for (std::size_t q = times.size(); q-- > 0;) {
      acc += increments[q];
      knots.push_back(times[q]);
      cumhaz.push_back(acc);
    }
  }

 private:
  CoxDerivatives evaluate(const Eigen::VectorXd& beta, bool with_derivatives) const {
    const auto p = static_cast<std::size_t>(x_.cols());
    const std::size_t n = order_.size();
    const Eigen::VectorXd eta = sorted_ * beta;
    const double shift = n ? eta.maxCoeff() : 0.0;

    CoxDerivatives out;
    std::vector<double> s1, s2, grad, info, mean;
    if (with_derivatives) {
      s1.assign(p, 0.0);
      s2.assign(p * p, 0.0);  // lower triangle used
      grad.assign(p, 0.0);
      info.assign(p * p, 0.0);
      mean.assign(p, 0.0);
    }
    double s0 = 0.0;
    std::size_t k = 0;
    while (k < n) {
      std::size_t end = k;
      while (end < n && sorted_time_[end] == sorted_time_[k]) {
        const double w = std::exp(eta[static_cast<Eigen::Index>(end)] - shift);
        s0 += w;
        if (with_derivatives) {
          const double* x = sorted_.data() + end * p;
          for (std::size_t a = 0; a < p; ++a) {
            const double wa = w * x[a];
            s1[a] += wa;
            for (std::size_t b = 0; b <= a; ++b) s2[a * p + b] += wa * x[b];
          }
        }
        ++end;
      }
      double d = 0.0;
      for (std::size_t q = k; q < end; ++q) {
        if (sorted_event_[q] <= 0.5) continue;
        d += 1.0;
        out.loglik += eta[static_cast<Eigen::Index>(q)];
        if (with_derivatives) {
          const double* x = sorted_.data() + q * p;
          for (std::size_t a = 0; a < p; ++a) grad[a] += x[a];
        }
      }
      if (d > 0.0) {
        out.loglik -= d * (std::log(s0) + shift);
        if (with_derivatives) {
          for (std::size_t a = 0; a < p; ++a) {
            mean[a] = s1[a] / s0;
            grad[a] -= d * mean[a];
          }
          for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b <= a; ++b) info[a * p + b] += d * (s2[a * p + b] / s0 - mean[a] * mean[b]);
        }
      }
      k = end;
    }
    if (with_derivatives) {
      const auto pp = static_cast<Eigen::Index>(p);
      out.gradient = Eigen::Map<const Eigen::VectorXd>(grad.data(), pp);
      out.information.resize(pp, pp);
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b <= a; ++b) {
          out.information(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = info[a * p + b];
          out.information(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = info[a * p + b];
        }
    }
    return out;
  }

  Eigen::MatrixXd x_;
  Eigen::VectorXd time_;
  Eigen::VectorXd event_;
  std::vector<Eigen::Index> order_;
  // Rows in descending time order, row-major for contiguous access.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sorted_;
  std::vector<double> sorted_time_, sorted_event_;
};

struct CoxOptions {
  int max_iter = 50;
  double tol = 1e-5;  // on the standardized-scale score
};

/// Fitted proportional-hazards model. Coefficients and standard errors are on
/// the caller's feature scale; the baseline cumulative hazard is stored at
/// the training feature means.
struct CoxModel {
  std::vector<std::string> feature_names;
  Eigen::VectorXd beta;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd means;
  Eigen::VectorXd scales;
  std::vector<double> baseline_knots;
  std::vector<double> baseline_cumhaz;  // at the feature means
  bool converged = false;
  int iterations = 0;
  std::vector<double> loglik_trace;  // partial log-likelihood after each accepted step, starting at beta = 0
  double max_abs_score = 0.0;        // standardized-scale score at the returned beta

  double linear_predictor(std::span<const double> row) const {
    require(static_cast<Eigen::Index>(row.size()) == beta.size(), ErrorCode::WidthMismatch,
            "row has " + std::to_string(row.size()) + " features, model expects " + std::to_string(beta.size()));
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += row[j] * beta[static_cast<Eigen::Index>(j)];
    return s;
  }

  /// Baseline cumulative hazard at covariate vector zero.
  double baseline_hazard(double t) const {
    return centered_hazard(t) * std::exp(-means.dot(beta));
  }

  double centered_hazard(double t) const {
    auto it = std::upper_bound(baseline_knots.begin(), baseline_knots.end(), t);
    if (it == baseline_knots.begin()) return 0.0;
    return baseline_cumhaz[static_cast<std::size_t>(it - baseline_knots.begin()) - 1];
  }

  /// Two-sided Wald p-value of coefficient j.
  double wald_p_value(Eigen::Index j) const {
    const double z = std::abs(beta[j] / std_errors[j]);
    return std::erfc(z / std::sqrt(2.0));
  }
};

namespace detail {

inline Eigen::MatrixXd to_dense(const SurvivalDataset& ds) {
  require(ds.is_complete(), ErrorCode::MissingCells, "model fitting requires a fully observed dataset");
  return Eigen::MatrixXd(ds.values);
}

// Solves information * step = gradient, adding a 1e-8 ridge if the
// information matrix is not positive definite.
inline Eigen::VectorXd newton_step(const Eigen::MatrixXd& information, const Eigen::VectorXd& gradient) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(information);
  auto usable = [&](const Eigen::LDLT<Eigen::MatrixXd>& f) {
    return f.info() == Eigen::Success && f.isPositive() && (f.vectorD().array() > 1e-12 * std::max(1.0, information.diagonal().cwiseAbs().maxCoeff())).all();
  };
  if (!usable(ldlt)) {
    Eigen::MatrixXd ridged = information + 1e-8 * Eigen::MatrixXd::Identity(information.rows(), information.cols());
    ldlt.compute(ridged);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any())
      fail(ErrorCode::Singular, "information matrix is singular");
  }
  Eigen::VectorXd step = ldlt.solve(gradient);
  if (!step.allFinite()) fail(ErrorCode::Singular, "Newton step is not finite");
  return step;
}

}  // namespace detail

/// Newton-Raphson with step-halving on the Breslow partial likelihood, after
/// internal z-scoring of the design.
inline CoxModel fit_cox(const Eigen::MatrixXd& x, const Eigen::VectorXd& time, const Eigen::VectorXd& event,
                        const CoxOptions& options = {}) {
  const Eigen::Index n = x.rows(), p = x.cols();
  require(p >= 1, ErrorCode::InvalidArgument, "Cox model needs at least one feature");
  require(time.size() == n && event.size() == n, ErrorCode::WidthMismatch, "design, time and event lengths differ");
  require(event.sum() >= 2.0, ErrorCode::TooFewEvents, "Cox model needs at least two events");
  require(x.allFinite(), ErrorCode::MissingCells, "design contains non-finite values");

  CoxModel model;
  model.means = x.colwise().mean().transpose();
  model.scales.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = (x.col(j).array() - model.means[j]).square().sum() / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(model.means[j]))))
      fail(ErrorCode::Singular, "feature " + std::to_string(j) + " is constant");
    model.scales[j] = sd;
  }
  Eigen::MatrixXd z = (x.rowwise() - model.means.transpose()).array().rowwise() / model.scales.transpose().array();
  CoxPartialLikelihood likelihood(std::move(z), time, event);

  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  CoxDerivatives d = likelihood.derivatives(b);
  model.loglik_trace.push_back(d.loglik);
  for (int it = 0; it < options.max_iter; ++it) {
    if (d.gradient.cwiseAbs().maxCoeff() < options.tol) {
      model.converged = true;
      break;
    }
    const Eigen::VectorXd step = detail::newton_step(d.information, d.gradient);
    double scale = 1.0;
    Eigen::VectorXd candidate = b + step;
    double ll = likelihood.loglik(candidate);
    for (int halving = 0; halving < 60 && !(ll >= d.loglik); ++halving) {
      scale *= 0.5;
      candidate = b + scale * step;
      ll = likelihood.loglik(candidate);
    }
    if (!(ll >= d.loglik)) break;  // no ascent direction left at machine precision
    const double previous = d.loglik;
    b = candidate;
    d = likelihood.derivatives(b);
    model.loglik_trace.push_back(d.loglik);
    ++model.iterations;
    if (d.loglik - previous <= 1e-15 * std::abs(previous)) break;  // stalled at rounding level
  }
  if (!model.converged && options.max_iter > 0) model.converged = d.gradient.cwiseAbs().maxCoeff() < options.tol;
  model.max_abs_score = d.gradient.cwiseAbs().maxCoeff();

  model.beta = b.array() / model.scales.array();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(d.information);
  Eigen::VectorXd var_std = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::infinity());
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    var_std = inv.diagonal();
  }
  model.std_errors = var_std.cwiseMax(0.0).cwiseSqrt().array() / model.scales.array();

  Eigen::VectorXd eta = likelihood.design() * b;
  likelihood.breslow(eta, model.baseline_knots, model.baseline_cumhaz);
  return model;
}

inline CoxModel fit_cox(const SurvivalDataset& train, const CoxOptions& options = {}) {
  auto model = fit_cox(detail::to_dense(train), train.time, train.event, options);
  model.feature_names = train.feature_names();
  return model;
}

/// Linear predictor x . beta.
inline double cox_predict_risk(const CoxModel& model, std::span<const double> row) {
  return model.linear_predictor(row);
}

/// S(t | x) = exp(-Lambda0(t) exp(x . beta)) on the grid points.
inline SurvivalCurve cox_predict_survival(const CoxModel& model, std::span<const double> row, const TimeGrid& grid) {
  const double centered_eta = model.linear_predictor(row) - model.means.dot(model.beta);
  const double factor = std::exp(centered_eta);
  SurvivalCurve curve;
  curve.role = CurveRole::Survival;
  curve.knots = grid.points;
  curve.probs.reserve(grid.size());
  for (double t : grid.points) curve.probs.push_back(std::exp(-model.centered_hazard(t) * factor));
  return curve;
}

}  // namespace prepsurv
