#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "prepsurv/dataset.hpp"
#include "prepsurv/error.hpp"
#include "prepsurv/models.hpp"
#include "prepsurv/preprocessing.hpp"
#include "prepsurv/random.hpp"

namespace prepsurv {

inline constexpr std::array<Stage, 3> kStageOrder{Stage::Imputation, Stage::OutlierHandling, Stage::FeatureSelection};

/// method id -> parameter overrides, applied to every pipeline of a run.
using StageParams = std::map<std::string, std::map<std::string, double>>;

struct PipelineSpec {
  std::string imputation = "cca";
  std::string outlier = "none";
  std::string selection = "none";
  std::map<Stage, std::map<std::string, double>> params;

  const std::string& method(Stage stage) const {
    switch (stage) {
      case Stage::Imputation: return imputation;
      case Stage::OutlierHandling: return outlier;
      case Stage::FeatureSelection: return selection;
    }
    return imputation;
  }

  std::string canonical() const { return "impute=" + imputation + ",outlier=" + outlier + ",select=" + selection; }

  // canonical text plus any per-pipeline overrides
  std::string key() const {
    std::string out = canonical();
    for (const auto& [stage, kv] : params)
      for (const auto& [k, v] : kv) out += ";" + std::string(to_string(stage)) + "." + k + "=" + detail::format_double(v);
    return out;
  }

  /// Stage action with run-level params, then pipeline overrides. Seeded
  /// methods receive `seed` unless it is overridden.
  StageAction action(Stage stage, const StageParams& run_params = {}, std::uint64_t seed = 0) const {
    StageAction a{stage, method(stage), {}};
    if (a.method == "mice" || a.method == "lasso" || a.method == "rfe") a.params["seed"] = static_cast<double>(seed);
    if (auto it = run_params.find(a.method); it != run_params.end())
      for (const auto& [k, v] : it->second) a.params[k] = v;
    if (auto it = params.find(stage); it != params.end())
      for (const auto& [k, v] : it->second) a.params[k] = v;
    return a;
  }

  bool operator==(const PipelineSpec&) const = default;
};

inline PipelineSpec noprep_pipeline() { return {"none", "none", "none", {}}; }

/// Parses "impute=<id>,outlier=<id>,select=<id>". Keys may come in any
/// order but each exactly once.
inline PipelineSpec parse_pipeline(std::string_view text, std::size_t line = 1) {
  auto bad = [&](const std::string& why) -> void {
    fail(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + why);
  };
  PipelineSpec p;
  bool seen[3] = {false, false, false};
  const auto fields = detail::split_fields(text, ',');
  if (fields.size() != 3) bad("expected three comma-separated stages, got " + std::to_string(fields.size()));
  for (const auto& f : fields) {
    const auto eq = f.find('=');
    if (eq == std::string::npos) bad("missing '=' in '" + f + "'");
    const std::string key(detail::trim(std::string_view(f).substr(0, eq)));
    const std::string value(detail::trim(std::string_view(f).substr(eq + 1)));
    int k = key == "impute" ? 0 : key == "outlier" ? 1 : key == "select" ? 2 : -1;
    if (k < 0) bad("unknown stage key '" + key + "'");
    if (seen[k]) bad("stage '" + key + "' given twice");
    seen[k] = true;
    const auto stage = kStageOrder[static_cast<std::size_t>(k)];
    if (!is_known_method(stage, value)) bad("unknown " + key + " method '" + value + "'");
    (k == 0 ? p.imputation : k == 1 ? p.outlier : p.selection) = value;
  }
  return p;
}

/// One pipeline per line; '#' starts a comment, blank lines are skipped.
inline std::vector<PipelineSpec> parse_pipelines(std::string_view text) {
  std::vector<PipelineSpec> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (!line.empty()) out.push_back(parse_pipeline(line, line_no));
    if (end == text.size()) break;
    pos = end + 1;
  }
  return out;
}

inline std::vector<PipelineSpec> load_pipelines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open pipelines file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_pipelines(buf.str());
}

// ---- search space and Q-table ----------------------------------------------------

struct SearchSpace {
  std::array<std::vector<std::string>, 3> methods;

  static SearchSpace defaults() {
    return {{stage_methods(Stage::Imputation), stage_methods(Stage::OutlierHandling),
             stage_methods(Stage::FeatureSelection)}};
  }

  std::size_t size() const { return methods[0].size() * methods[1].size() * methods[2].size(); }

  PipelineSpec pipeline(const std::vector<std::size_t>& choice) const {
    return {methods[0].at(choice.at(0)), methods[1].at(choice.at(1)), methods[2].at(choice.at(2)), {}};
  }

  /// Every pipeline, ordered by canonical text.
  std::vector<PipelineSpec> all() const {
    std::vector<PipelineSpec> out;
    for (std::size_t a = 0; a < methods[0].size(); ++a)
      for (std::size_t b = 0; b < methods[1].size(); ++b)
        for (std::size_t c = 0; c < methods[2].size(); ++c) out.push_back(pipeline({a, b, c}));
    std::sort(out.begin(), out.end(),
              [](const PipelineSpec& x, const PipelineSpec& y) { return x.canonical() < y.canonical(); });
    return out;
  }
};

/// Position in the stage DAG: the action index chosen at each decided stage.
struct SearchState {
  std::vector<std::size_t> decided;

  std::size_t level() const { return decided.size(); }
  bool terminal() const { return decided.size() >= 3; }
  SearchState after(std::size_t action) const {
    SearchState s = *this;
    s.decided.push_back(action);
    return s;
  }
  auto operator<=>(const SearchState&) const = default;
};

class QTable {
 public:
  explicit QTable(SearchSpace space = SearchSpace::defaults(), double alpha = 0.5, double gamma = 0.9,
                  double epsilon = 0.1)
      : alpha(alpha), gamma(gamma), epsilon(epsilon), space_(std::move(space)) {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "alpha must lie in [0,1]");
    require(gamma >= 0.0 && gamma <= 1.0, ErrorCode::InvalidArgument, "gamma must lie in [0,1]");
    require(epsilon >= 0.0 && epsilon <= 1.0, ErrorCode::InvalidArgument, "epsilon must lie in [0,1]");
  }

  double alpha, gamma, epsilon;

  const SearchSpace& space() const { return space_; }

  bool valid(const SearchState& s) const {
    if (s.decided.size() > 3) return false;
    for (std::size_t k = 0; k < s.decided.size(); ++k)
      if (s.decided[k] >= space_.methods[k].size()) return false;
    return true;
  }

  std::size_t n_actions(const SearchState& s) const { return s.terminal() ? 0 : space_.methods[s.level()].size(); }

  bool legal(const SearchState& s, std::size_t a) const { return valid(s) && a < n_actions(s); }

  double get(const SearchState& s, std::size_t a) const {
    require(legal(s, a), ErrorCode::IllegalTransition, "illegal state/action pair");
    auto it = values_.find(s);
    return it == values_.end() ? 0.0 : it->second[a];
  }

  /// max over legal actions; 0 at terminal states.
  double max_value(const SearchState& s) const {
    if (s.terminal()) return 0.0;
    auto it = values_.find(s);
    if (it == values_.end()) return 0.0;
    return *std::max_element(it->second.begin(), it->second.end());
  }

  void set(const SearchState& s, std::size_t a, double v) {
    require(legal(s, a), ErrorCode::IllegalTransition, "illegal state/action pair");
    auto& row = values_[s];
    if (row.empty()) row.assign(n_actions(s), 0.0);
    row[a] = v;
  }

  const std::map<SearchState, std::vector<double>>& entries() const { return values_; }

 private:
  SearchSpace space_;
  std::map<SearchState, std::vector<double>> values_;
};

/// Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a)).
inline void bellman_update(QTable& q, const SearchState& s, std::size_t a, double r, const SearchState& s_next) {
  require(q.legal(s, a) && s_next == s.after(a), ErrorCode::IllegalTransition, "illegal transition");
  const double old = q.get(s, a);
  const double target = r + q.gamma * q.max_value(s_next);
  q.set(s, a, old + q.alpha * (target - old));
}

/// argmax over legal actions; ties go to the first registered action.
inline std::size_t greedy_policy(const QTable& q, const SearchState& s) {
  require(q.valid(s), ErrorCode::IllegalTransition, "invalid state");
  require(!s.terminal(), ErrorCode::TerminalState, "no action from a terminal state");
  std::size_t best = 0;
  double best_v = q.get(s, 0);
  for (std::size_t a = 1; a < q.n_actions(s); ++a) {
    const double v = q.get(s, a);
    if (v > best_v) best = a, best_v = v;
  }
  return best;
}

inline std::size_t epsilon_greedy(const QTable& q, const SearchState& s, Rng& rng) {
  require(q.valid(s), ErrorCode::IllegalTransition, "invalid state");
  require(!s.terminal(), ErrorCode::TerminalState, "no action from a terminal state");
  const double u = rng.uniform();
  if (u < q.epsilon) return rng.index(q.n_actions(s));
  return greedy_policy(q, s);
}

inline PipelineSpec greedy_rollout(const QTable& q) {
  SearchState s;
  while (!s.terminal()) s = s.after(greedy_policy(q, s));
  return q.space().pipeline(s.decided);
}

// ---- evaluation --------------------------------------------------------------------

struct Evaluation {
  double reward = 0.0;
  double c_index = std::numeric_limits<double>::quiet_NaN();
  double igs = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // error code name; empty on success
  std::string message;
  std::vector<double> grid;
  std::vector<double> brier;

  bool ok() const { return error.empty(); }
};

struct EvaluationOptions {
  std::uint64_t seed = 0;  // passed to seeded stage methods
  std::size_t grid_points = 50;
  StageParams params;
};

/// Runs the three stages in order on the split, fits the model on the
/// processed train rows and scores the processed test rows. "none" stages
/// are skipped. Every failure becomes reward 0 with the error recorded.
inline Evaluation evaluate_pipeline(const PipelineSpec& p, const SplitPair& split, const ModelSpec& model,
                                    const EvaluationOptions& options = {}) {
  Evaluation out;
  try {
    SurvivalDataset train = split.train, test = split.test;
    for (auto stage : kStageOrder) {
      if (p.method(stage) == "none") continue;
      auto r = apply_action(p.action(stage, options.params, options.seed), train, test);
      train = std::move(r.train);
      test = std::move(r.test);
    }
    const auto fitted = model.fit(train);
    const auto context = EvaluationContext::from_train(split.train, options.grid_points);
    const auto report = evaluate_model(fitted, test, context);
    out.c_index = report.c_index;
    out.igs = report.igs;
    out.grid = report.grid;
    out.brier = report.brier;
    out.reward = report.c_index;
  } catch (const Error& e) {
    out = Evaluation{};
    out.error = std::string(to_string(e.code()));
    out.message = e.what();
  } catch (const std::exception& e) {
    out = Evaluation{};
    out.error = "Exception";
    out.message = e.what();
  }
  return out;
}

/// Memoizing front for an evaluation function, keyed by pipeline key().
/// Safe to share between runs and threads.
class Evaluator {
 public:
  using Function = std::function<Evaluation(const PipelineSpec&)>;

  explicit Evaluator(Function f) : f_(std::move(f)) {}

  Evaluation evaluate(const PipelineSpec& p) {
    const auto key = p.key();
    {
      std::lock_guard lock(mu_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    auto result = f_(p);
    std::lock_guard lock(mu_);
    auto [it, inserted] = memo_.emplace(key, std::move(result));
    if (inserted) ++fits_;
    return it->second;
  }

  /// Evaluates the not-yet-cached pipelines on up to `workers` threads.
  void prefetch(const std::vector<PipelineSpec>& pipelines, std::size_t workers) {
    std::vector<PipelineSpec> todo;
    std::set<std::string> keys;
    {
      std::lock_guard lock(mu_);
      for (const auto& p : pipelines)
        if (!memo_.count(p.key()) && keys.insert(p.key()).second) todo.push_back(p);
    }
    if (workers <= 1 || todo.size() <= 1) {
      for (const auto& p : todo) evaluate(p);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, todo.size()); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < todo.size(); i = next++) evaluate(todo[i]);
      });
    for (auto& t : pool) t.join();
  }

  bool cached(const PipelineSpec& p) const {
    std::lock_guard lock(mu_);
    return memo_.count(p.key()) > 0;
  }

  /// Calls of the underlying function, i.e. model fits.
  std::size_t n_fits() const {
    std::lock_guard lock(mu_);
    return fits_;
  }

 private:
  Function f_;
  mutable std::mutex mu_;
  std::map<std::string, Evaluation> memo_;
  std::size_t fits_ = 0;
};

inline Evaluator make_evaluator(SplitPair split, ModelSpec model, EvaluationOptions options = {}) {
  return Evaluator([split = std::move(split), model = std::move(model), options = std::move(options)](
                       const PipelineSpec& p) { return evaluate_pipeline(p, split, model, options); });
}

// ---- search modes ------------------------------------------------------------------

enum class SearchMode { QLearning, Random, Grid, Custom, NoPrep };

inline const char* to_string(SearchMode m) {
  switch (m) {
    case SearchMode::QLearning: return "optimize";
    case SearchMode::Random: return "random";
    case SearchMode::Grid: return "grid";
    case SearchMode::Custom: return "custom";
    case SearchMode::NoPrep: return "noprep";
  }
  return "?";
}

struct TraceEntry {
  std::size_t index = 0;  // 1-based
  PipelineSpec pipeline;
  Evaluation evaluation;
  double wall_clock_s = 0.0;  // cumulative since the run started
  bool first_visit = true;
  std::size_t distinct = 0;  // distinct pipelines seen so far in this run
};

struct SearchResult {
  SearchMode mode = SearchMode::Grid;
  PipelineSpec best_pipeline;
  double best_reward = 0.0;
  std::size_t best_index = 0;
  std::vector<TraceEntry> trace;
  std::optional<QTable> q;
  std::optional<PipelineSpec> greedy;  // final greedy rollout, Q-learning only

  std::size_t n_distinct() const { return trace.empty() ? 0 : trace.back().distinct; }
};

namespace detail {

class Recorder {
 public:
  Recorder(Evaluator& ev, SearchMode mode) : ev_(ev), start_(std::chrono::steady_clock::now()) { result_.mode = mode; }

  double record(const PipelineSpec& p) {
    TraceEntry e;
    e.index = result_.trace.size() + 1;
    e.pipeline = p;
    e.evaluation = ev_.evaluate(p);
    e.first_visit = seen_.insert(p.key()).second;
    e.distinct = seen_.size();
    e.wall_clock_s = elapsed();
    if (result_.trace.empty() || e.evaluation.reward > result_.best_reward) {
      result_.best_reward = e.evaluation.reward;
      result_.best_pipeline = p;
      result_.best_index = e.index;
    }
    result_.trace.push_back(std::move(e));
    return result_.trace.back().evaluation.reward;
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  bool over_budget(double budget_s) const { return budget_s > 0.0 && elapsed() >= budget_s; }

  SearchResult take() { return std::move(result_); }
  bool take_empty() const { return result_.trace.empty(); }

 private:
  Evaluator& ev_;
  std::chrono::steady_clock::time_point start_;
  std::set<std::string> seen_;
  SearchResult result_;
};

}  // namespace detail

struct QLearningConfig {
  double alpha = 0.5;
  double gamma = 0.9;
  double epsilon_start = 0.9;
  double epsilon_end = 0.05;
  std::size_t episodes = 150;
  std::uint64_t seed = 0;
  double time_budget_s = 0.0;  // 0 means unlimited
};

inline double epsilon_at(const QLearningConfig& c, std::size_t episode) {
  if (c.episodes <= 1) return c.epsilon_start;
  const double f = static_cast<double>(episode) / static_cast<double>(c.episodes - 1);
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * f;
}

/// Each episode walks Start -> terminal with epsilon-greedy choices, earns
/// the pipeline reward on the last transition and updates the trajectory
/// back to front.
inline SearchResult run_qlearning(Evaluator& ev, const QLearningConfig& config,
                                  const SearchSpace& space = SearchSpace::defaults()) {
  require(config.episodes >= 1, ErrorCode::ConfigError, "episodes must be at least 1");
  require(config.epsilon_start >= 0 && config.epsilon_start <= 1 && config.epsilon_end >= 0 && config.epsilon_end <= 1,
          ErrorCode::ConfigError, "epsilon schedule must lie in [0,1]");
  QTable q(space, config.alpha, config.gamma, config.epsilon_start);
  Rng rng = stream(config.seed, Stream::Agent);
  detail::Recorder rec(ev, SearchMode::QLearning);
  for (std::size_t episode = 0; episode < config.episodes; ++episode) {
    if (episode > 0 && rec.over_budget(config.time_budget_s)) break;
    q.epsilon = epsilon_at(config, episode);
    std::vector<SearchState> states{SearchState{}};
    std::vector<std::size_t> actions;
    while (!states.back().terminal()) {
      actions.push_back(epsilon_greedy(q, states.back(), rng));
      states.push_back(states.back().after(actions.back()));
    }
    const double reward = rec.record(space.pipeline(states.back().decided));
    for (std::size_t k = actions.size(); k-- > 0;)
      bellman_update(q, states[k], actions[k], k + 1 == actions.size() ? reward : 0.0, states[k + 1]);
  }
  auto result = rec.take();
  result.greedy = greedy_rollout(q);
  result.q = std::move(q);
  return result;
}

/// n pipelines drawn uniformly with replacement.
inline SearchResult run_random(Evaluator& ev, std::size_t n, std::uint64_t seed,
                               const SearchSpace& space = SearchSpace::defaults(), double time_budget_s = 0.0,
                               std::size_t workers = 1) {
  require(n >= 1, ErrorCode::ConfigError, "random mode needs n >= 1");
  Rng rng = stream(seed, Stream::Sampling);
  std::vector<PipelineSpec> draws;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> c;
    for (const auto& m : space.methods) c.push_back(rng.index(m.size()));
    draws.push_back(space.pipeline(c));
  }
  if (workers > 1 && time_budget_s <= 0.0) ev.prefetch(draws, workers);
  detail::Recorder rec(ev, SearchMode::Random);
  for (const auto& p : draws) {
    if (!rec.take_empty() && rec.over_budget(time_budget_s)) break;
    rec.record(p);
  }
  return rec.take();
}

/// Every pipeline once, in canonical-text order.
inline SearchResult run_grid(Evaluator& ev, const SearchSpace& space = SearchSpace::defaults(), std::size_t workers = 1,
                             double time_budget_s = 0.0) {
  const auto all = space.all();
  if (workers > 1 && time_budget_s <= 0.0) ev.prefetch(all, workers);
  detail::Recorder rec(ev, SearchMode::Grid);
  for (const auto& p : all) {
    if (!rec.take_empty() && rec.over_budget(time_budget_s)) break;
    rec.record(p);
  }
  return rec.take();
}

/// Listed pipelines in order; repeats are served from the cache.
inline SearchResult run_custom(Evaluator& ev, const std::vector<PipelineSpec>& pipelines) {
  require(!pipelines.empty(), ErrorCode::ConfigError, "custom mode needs at least one pipeline");
  detail::Recorder rec(ev, SearchMode::Custom);
  for (const auto& p : pipelines) rec.record(p);
  return rec.take();
}

/// The untouched data straight into the model.
inline SearchResult run_noprep(Evaluator& ev) {
  detail::Recorder rec(ev, SearchMode::NoPrep);
  rec.record(noprep_pipeline());
  return rec.take();
}

/// Distinct evaluations (and elapsed seconds) until the trace first reaches
/// `target - tol`.
struct TimeToTarget {
  std::size_t evaluations = 0;
  std::size_t trace_index = 0;
  double wall_clock_s = 0.0;
};

inline std::optional<TimeToTarget> time_to_target(const SearchResult& r, double target, double tol = 1e-9) {
  for (const auto& e : r.trace)
    if (e.evaluation.reward >= target - tol) return TimeToTarget{e.distinct, e.index, e.wall_clock_s};
  return std::nullopt;
}

// ---- synthetic environment ---------------------------------------------------------

/// Deterministic reward table over a search space. Each stage's methods
/// get evenly spaced effects in a seeded random order, with step 0.04, 0.02
/// and 0.01 for the three stages, plus an interaction term below 0.002. The
/// interaction never bridges the smallest step, so the maximum is unique.
struct SyntheticRewards {
  SearchSpace space;
  std::map<std::string, double> table;  // canonical text -> reward
  PipelineSpec argmax;
  double max_reward = 0.0;

  double reward(const PipelineSpec& p) const {
    auto it = table.find(p.canonical());
    return it == table.end() ? 0.0 : it->second;
  }

  Evaluator evaluator() const {
    return Evaluator([table = table](const PipelineSpec& p) {
      Evaluation e;
      auto it = table.find(p.canonical());
      if (it == table.end()) {
        e.error = "IllegalTransition";
        return e;
      }
      e.reward = e.c_index = it->second;
      return e;
    });
  }
};

inline SyntheticRewards synthetic_rewards(std::uint64_t seed, const SearchSpace& space = SearchSpace::defaults()) {
  Rng rng = stream(seed, Stream::Synthetic);
  constexpr double step[3] = {0.04, 0.02, 0.01};
  std::array<std::vector<double>, 3> effect;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> level(space.methods[k].size());
    std::iota(level.begin(), level.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(level));
    for (auto v : level) effect[k].push_back(step[k] * static_cast<double>(v));
  }
  SyntheticRewards out;
  out.space = space;
  bool first = true;
  for (std::size_t a = 0; a < space.methods[0].size(); ++a)
    for (std::size_t b = 0; b < space.methods[1].size(); ++b)
      for (std::size_t c = 0; c < space.methods[2].size(); ++c) {
        const double r = 0.6 + effect[0][a] + effect[1][b] + effect[2][c] + 0.002 * rng.uniform();
        const auto p = space.pipeline({a, b, c});
        out.table[p.canonical()] = r;
        if (first || r > out.max_reward) out.argmax = p, out.max_reward = r, first = false;
      }
  return out;
}

}  // namespace prepsurv
