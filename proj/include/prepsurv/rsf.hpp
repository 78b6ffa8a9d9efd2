#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"
#include "prepsurv/metrics.hpp"
#include "prepsurv/random.hpp"

namespace prepsurv {

struct RsfConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 8;
  std::size_t min_leaf = 10;
  std::size_t mtry = 0;  // 0 means ceil(sqrt(p))
  std::uint64_t seed = 0;

  bool operator==(const RsfConfig&) const = default;
};

struct SurvivalTreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf = -1;  // index into SurvivalTree::leaves
  std::size_t n_rows = 0;

  bool operator==(const SurvivalTreeNode&) const = default;
};

struct SurvivalTree {
  std::vector<SurvivalTreeNode> nodes;  // nodes[0] is the root
  std::vector<SurvivalCurve> leaves;

  /// Leaf reached by a fully observed row; rows go left when x <= threshold.
  const SurvivalCurve& leaf_for(std::span<const double> row) const {
    std::size_t k = 0;
    while (nodes[k].feature >= 0) {
      const auto& node = nodes[k];
      k = static_cast<std::size_t>(row[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right);
    }
    return leaves[static_cast<std::size_t>(nodes[k].leaf)];
  }

  bool operator==(const SurvivalTree&) const = default;
};

struct RSFModel {
  RsfConfig config;
  std::size_t n_features = 0;
  std::vector<SurvivalTree> trees;
  TimeGrid risk_grid;  // grid for ensemble mortality in predict_risk
};

struct RsfPrediction {
  double risk = 0.0;
  SurvivalCurve curve;
};

namespace detail {

struct LogRankSplit {
  int feature = -1;
  double threshold = 0.0;
  double statistic = 0.0;
};

class FenwickTree {
 public:
  explicit FenwickTree(std::size_t n) : tree_(n + 1, 0.0) {}
  void add(std::size_t pos, double v) {
    for (std::size_t i = pos + 1; i < tree_.size(); i += i & (~i + 1)) tree_[i] += v;
  }
  double prefix(std::size_t pos) const {  // sum over [0, pos]
    double s = 0.0;
    for (std::size_t i = pos + 1; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<double> tree_;
};

// Best two-sample log-rank split of `rows` over the candidate features. The
// left group is grown one row at a time in feature order; the numerator U is
// the running sum of Nelson-Aalen martingale residuals and the variance term
// is maintained with Fenwick trees over event-time positions, so each
// feature costs O(n log n).
inline LogRankSplit best_logrank_split(const RowMatrix& x, const Eigen::VectorXd& time, const Eigen::VectorXd& event,
                                       std::span<const std::size_t> rows, std::span<const std::size_t> features,
                                       std::size_t min_leaf) {
  LogRankSplit best;
  const std::size_t n = rows.size();

  std::vector<double> event_times;
  for (auto r : rows)
    if (event[static_cast<Eigen::Index>(r)] > 0.5) event_times.push_back(time[static_cast<Eigen::Index>(r)]);
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());
  const std::size_t n_times = event_times.size();
  if (n_times == 0) return best;

  std::vector<double> deaths(n_times, 0.0), at_risk(n_times, 0.0);
  std::vector<std::size_t> position(n);  // number of event times <= row time
  for (std::size_t q = 0; q < n; ++q) {
    const auto r = static_cast<Eigen::Index>(rows[q]);
    position[q] = static_cast<std::size_t>(std::upper_bound(event_times.begin(), event_times.end(), time[r]) -
                                           event_times.begin());
    if (position[q] > 0) {
      at_risk[position[q] - 1] += 1.0;
      if (event[r] > 0.5 && event_times[position[q] - 1] == time[r]) deaths[position[q] - 1] += 1.0;
    }
  }
  for (std::size_t k = n_times - 1; k-- > 0;) at_risk[k] += at_risk[k + 1];

  // Prefix sums indexed by position (0 = no event times at risk).
  std::vector<double> hazard(n_times + 1, 0.0), a_prefix(n_times + 1, 0.0), b_prefix(n_times + 1, 0.0);
  for (std::size_t k = 0; k < n_times; ++k) {
    const double y = at_risk[k], d = deaths[k];
    const double c = y > 1.0 ? d * (y - d) / (y - 1.0) : 0.0;
    hazard[k + 1] = hazard[k] + d / y;
    a_prefix[k + 1] = a_prefix[k] + c / y;
    b_prefix[k + 1] = b_prefix[k] + c / (y * y);
  }

  std::vector<std::size_t> order(n);
  for (auto feature : features) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto f = static_cast<Eigen::Index>(feature);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return x(static_cast<Eigen::Index>(rows[a]), f) < x(static_cast<Eigen::Index>(rows[b]), f);
    });
    FenwickTree weighted(n_times + 1), counts(n_times + 1);
    double u = 0.0, linear = 0.0, quadratic = 0.0;
    for (std::size_t q = 0; q + 1 < n; ++q) {
      const std::size_t idx = order[q];
      const auto r = static_cast<Eigen::Index>(rows[idx]);
      const std::size_t pos = position[idx];
      const double left_size = static_cast<double>(q);
      const double sum_b_yl = weighted.prefix(pos) + b_prefix[pos] * (left_size - counts.prefix(pos));
      u += (event[r] > 0.5 ? 1.0 : 0.0) - hazard[pos];
      linear += a_prefix[pos];
      quadratic += 2.0 * sum_b_yl + b_prefix[pos];
      weighted.add(pos, b_prefix[pos]);
      counts.add(pos, 1.0);

      const std::size_t n_left = q + 1;
      if (n_left < min_leaf || n - n_left < min_leaf) continue;
      const double here = x(r, f);
      const double next = x(static_cast<Eigen::Index>(rows[order[q + 1]]), f);
      if (!(here < next)) continue;
      const double variance = linear - quadratic;
      if (variance <= 1e-12) continue;
      const double stat = u * u / variance;
      if (stat > best.statistic) {
        best.statistic = stat;
        best.feature = static_cast<int>(feature);
        best.threshold = 0.5 * (here + next);
      }
    }
  }
  return best;
}

inline SurvivalCurve leaf_curve(const Eigen::VectorXd& time, const Eigen::VectorXd& event,
                                std::span<const std::size_t> rows) {
  std::vector<double> t(rows.size()), e(rows.size());
  for (std::size_t q = 0; q < rows.size(); ++q) {
    t[q] = time[static_cast<Eigen::Index>(rows[q])];
    e[q] = event[static_cast<Eigen::Index>(rows[q])];
  }
  return product_limit(t, e, CurveRole::Survival);
}

inline void grow_node(SurvivalTree& tree, std::size_t node, const RowMatrix& x, const Eigen::VectorXd& time,
                      const Eigen::VectorXd& event, std::vector<std::size_t> rows, std::size_t depth,
                      const RsfConfig& config, std::size_t mtry, Rng& rng) {
  tree.nodes[node].n_rows = rows.size();
  auto make_leaf = [&] {
    tree.nodes[node].leaf = static_cast<int>(tree.leaves.size());
    tree.leaves.push_back(leaf_curve(time, event, rows));
  };
  if (depth >= config.max_depth || rows.size() < 2 * config.min_leaf) return make_leaf();

  std::vector<std::size_t> features(static_cast<std::size_t>(x.cols()));
  std::iota(features.begin(), features.end(), std::size_t{0});
  for (std::size_t k = 0; k < mtry; ++k) std::swap(features[k], features[k + rng.index(features.size() - k)]);
  features.resize(mtry);

  const auto split = best_logrank_split(x, time, event, rows, features, config.min_leaf);
  if (split.feature < 0 || !(split.statistic > 0.0)) return make_leaf();

  std::vector<std::size_t> left, right;
  for (auto r : rows)
    (x(static_cast<Eigen::Index>(r), split.feature) <= split.threshold ? left : right).push_back(r);
  rows.clear();
  rows.shrink_to_fit();

  tree.nodes[node].feature = split.feature;
  tree.nodes[node].threshold = split.threshold;
  const auto left_id = tree.nodes.size();
  tree.nodes.emplace_back();
  tree.nodes[node].left = static_cast<int>(left_id);
  grow_node(tree, left_id, x, time, event, std::move(left), depth + 1, config, mtry, rng);
  const auto right_id = tree.nodes.size();
  tree.nodes.emplace_back();
  tree.nodes[node].right = static_cast<int>(right_id);
  grow_node(tree, right_id, x, time, event, std::move(right), depth + 1, config, mtry, rng);
}

}  // namespace detail

/// Random survival forest: bootstrap trees grown by maximal log-rank splits
/// with Kaplan-Meier leaves.
inline RSFModel fit_rsf(const SurvivalDataset& train, const RsfConfig& config = {}) {
  require(train.is_complete(), ErrorCode::MissingCells, "random survival forest requires a fully observed dataset");
  require(train.n_events() >= 1, ErrorCode::NoEvents, "random survival forest needs events");
  require(train.n_features() >= 1, ErrorCode::InvalidArgument, "random survival forest needs features");
  require(config.n_trees >= 1 && config.min_leaf >= 1, ErrorCode::InvalidArgument, "bad forest configuration");

  RSFModel model;
  model.config = config;
  model.n_features = train.n_features();
  const std::size_t p = model.n_features;
  std::size_t mtry = config.mtry ? config.mtry : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))));
  mtry = std::min(mtry, p);
  model.risk_grid = time_grid(train.time, train.event, 50);

  const std::size_t n = train.n_rows();
  for (std::size_t b = 0; b < config.n_trees; ++b) {
    Rng rng = stream(config.seed, Stream::Bootstrap, b);
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) s = rng.index(n);
    SurvivalTree tree;
    tree.nodes.emplace_back();
    detail::grow_node(tree, 0, train.values, train.time, train.event, std::move(sample), 0, config, mtry, rng);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

namespace detail {

inline std::vector<double> ensemble_curve(const RSFModel& model, std::span<const double> row,
                                          const std::vector<double>& points) {
  std::vector<double> probs(points.size(), 0.0);
  for (const auto& tree : model.trees) {
    const auto& leaf = tree.leaf_for(row);
    for (std::size_t j = 0; j < points.size(); ++j) probs[j] += leaf.raw(points[j]);
  }
  const double scale = 1.0 / static_cast<double>(model.trees.size());
  for (auto& v : probs) v *= scale;
  for (std::size_t j = 1; j < probs.size(); ++j)  // guard against rounding in the average
    probs[j] = std::min(probs[j], probs[j - 1]);
  return probs;
}

}  // namespace detail

/// Ensemble curve on `grid` (pointwise mean of leaf curves) and ensemble
/// mortality, the sum of -ln S over the model's own risk grid.
inline RsfPrediction rsf_predict(const RSFModel& model, std::span<const double> row, const TimeGrid& grid) {
  require(row.size() == model.n_features, ErrorCode::WidthMismatch,
          "row has " + std::to_string(row.size()) + " features, forest expects " + std::to_string(model.n_features));
  RsfPrediction out;
  out.curve.role = CurveRole::Survival;
  out.curve.knots = grid.points;
  out.curve.probs = detail::ensemble_curve(model, row, grid.points);
  const auto mortality = grid.points == model.risk_grid.points ? out.curve.probs
                                                               : detail::ensemble_curve(model, row, model.risk_grid.points);
  for (auto v : mortality) out.risk += -std::log(std::max(v, kProbabilityFloor));
  return out;
}

inline double rsf_predict_risk(const RSFModel& model, std::span<const double> row) {
  return rsf_predict(model, row, model.risk_grid).risk;
}

}  // namespace prepsurv
