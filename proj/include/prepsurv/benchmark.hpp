#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "prepsurv/dataset.hpp"
#include "prepsurv/missingness.hpp"
#include "prepsurv/models.hpp"
#include "prepsurv/search.hpp"

namespace prepsurv {

// ---- report text -------------------------------------------------------------------

namespace detail {

inline std::string number_or_empty(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

}  // namespace detail

inline constexpr const char* kResultsHeader = "eval_index,pipeline,c_index,igs,wall_clock_s,error_code";

inline std::string results_row(const TraceEntry& e, bool timing) {
  const auto& ev = e.evaluation;
  std::string row = std::to_string(e.index) + ',' + detail::csv_field(e.pipeline.key()) + ',';
  if (ev.ok()) row += detail::number_or_empty(ev.c_index);
  row += ',';
  if (ev.ok()) row += detail::number_or_empty(ev.igs);
  row += ',';
  if (timing) row += detail::format_double(e.wall_clock_s);
  row += ',' + ev.error;
  return row;
}

/// The trace as CSV. Wall-clock cells stay empty unless `timing`, so two runs
/// of the same configuration give identical bytes.
inline std::string results_csv(const SearchResult& r, bool timing = false) {
  std::string out = std::string(kResultsHeader) + '\n';
  for (const auto& e : r.trace) out += results_row(e, timing) + '\n';
  return out;
}

inline std::string best_txt(const SearchResult& r, bool timing = false) {
  std::ostringstream out;
  out << "pipeline=" << r.best_pipeline.key() << '\n';
  out << "reward=" << detail::format_double(r.best_reward) << '\n';
  if (r.best_index > 0) {
    const auto& e = r.trace[r.best_index - 1];
    out << "c_index=" << detail::number_or_empty(e.evaluation.ok() ? e.evaluation.c_index : NAN) << '\n';
    out << "igs=" << detail::number_or_empty(e.evaluation.ok() ? e.evaluation.igs : NAN) << '\n';
    out << "error_code=" << e.evaluation.error << '\n';
    if (timing) out << "wall_clock_s=" << detail::format_double(e.wall_clock_s) << '\n';
  }
  out << "eval_index=" << r.best_index << '\n';
  out << "evaluations=" << r.trace.size() << '\n';
  out << "distinct=" << r.n_distinct() << '\n';
  if (r.greedy) out << "greedy=" << r.greedy->key() << '\n';
  return out.str();
}

/// Header plus rows of a CSV file, fields unquoted.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    fail(ErrorCode::SchemaMismatch, "no column '" + name + "'");
  }
};

inline CsvTable parse_csv_table(std::string_view text) {
  CsvTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::EmptyFile, "no header row");
  t.header = detail::split_fields(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    require(fields.size() == t.header.size(), ErrorCode::WidthMismatch,
            "line " + std::to_string(line_no) + ": " + std::to_string(fields.size()) + " fields, header has " +
                std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  return t;
}

// ---- benchmark ---------------------------------------------------------------------

/// One (mechanism, fraction, model, seed) combination. fraction 0 means the
/// data is used as loaded.
struct BenchmarkCell {
  Mechanism mechanism = Mechanism::MCAR;
  double fraction = 0.5;
  std::string model = "cox";
  std::uint64_t seed = 0;
};

struct BenchmarkConfig {
  std::vector<Mechanism> mechanisms{Mechanism::MCAR};
  std::vector<double> fractions{0.5};
  std::vector<std::string> models{"cox"};
  std::vector<SearchMode> modes{SearchMode::QLearning, SearchMode::Random, SearchMode::Grid};
  std::uint64_t seed = 0;
  std::size_t repeats = 1;  // seeds seed .. seed + repeats - 1
  QLearningConfig qlearning;
  std::size_t n_random = 150;
  std::vector<PipelineSpec> pipelines;  // custom mode
  double time_budget_s = 0.0;
  std::size_t workers = 1;
  SearchSpace space = SearchSpace::defaults();

  std::vector<BenchmarkCell> cells() const {
    std::vector<BenchmarkCell> out;
    for (auto m : mechanisms)
      for (double f : fractions)
        for (const auto& model : models)
          for (std::size_t r = 0; r < repeats; ++r) out.push_back({m, f, model, seed + r});
    return out;
  }
};

struct BenchmarkRun {
  BenchmarkCell cell;
  SearchMode mode = SearchMode::Grid;
  SearchResult result;
  Evaluation best;
  double grid_optimum = std::numeric_limits<double>::quiet_NaN();
  std::optional<TimeToTarget> to_optimum;
  std::string error;  // cell-level failure, e.g. injection
  std::string message;
};

struct BenchmarkReport {
  std::vector<BenchmarkRun> runs;
};

/// Builds a fresh evaluator for a cell. Throwing an Error marks the cell failed.
using EvaluatorFactory = std::function<Evaluator(const BenchmarkCell&)>;

inline SearchResult run_mode(SearchMode mode, Evaluator& ev, const BenchmarkConfig& c, std::uint64_t seed) {
  switch (mode) {
    case SearchMode::QLearning: {
      auto q = c.qlearning;
      q.seed = seed;
      q.time_budget_s = c.time_budget_s;
      return run_qlearning(ev, q, c.space);
    }
    case SearchMode::Random: return run_random(ev, c.n_random, seed, c.space, c.time_budget_s);
    case SearchMode::Grid: return run_grid(ev, c.space, 1, c.time_budget_s);
    case SearchMode::Custom: return run_custom(ev, c.pipelines);
    case SearchMode::NoPrep: return run_noprep(ev);
  }
  fail(ErrorCode::ConfigError, "unknown mode");
}

namespace detail {

inline std::vector<BenchmarkRun> run_cell(const BenchmarkCell& cell, const BenchmarkConfig& c,
                                          const EvaluatorFactory& factory) {
  std::vector<BenchmarkRun> runs;
  for (auto mode : c.modes) {
    BenchmarkRun r;
    r.cell = cell;
    r.mode = mode;
    runs.push_back(std::move(r));
  }
  try {
    // unbudgeted grid for the optimum every mode is measured against
    auto grid_ev = factory(cell);
    const auto grid = run_grid(grid_ev, c.space);
    for (auto& r : runs) {
      if (r.mode == SearchMode::Grid && c.time_budget_s <= 0.0) {
        r.result = grid;
      } else {
        auto ev = factory(cell);
        r.result = run_mode(r.mode, ev, c, cell.seed);
      }
      r.grid_optimum = grid.best_reward;
      r.best = r.result.trace.at(r.result.best_index - 1).evaluation;
      r.to_optimum = time_to_target(r.result, grid.best_reward);
    }
  } catch (const Error& e) {
    for (auto& r : runs) {
      r.error = std::string(to_string(e.code()));
      r.message = e.what();
    }
  }
  return runs;
}

}  // namespace detail

/// Every cell runs the grid once for the optimum plus each requested mode on
/// its own evaluator, so evaluation counts and timings are not shared.
/// Cells run on up to `workers` threads; the report keeps cell order.
inline BenchmarkReport run_benchmark(const BenchmarkConfig& c, const EvaluatorFactory& factory) {
  require(!c.modes.empty(), ErrorCode::ConfigError, "benchmark needs at least one mode");
  require(c.repeats >= 1, ErrorCode::ConfigError, "repeats must be at least 1");
  const auto cells = c.cells();
  std::vector<std::vector<BenchmarkRun>> per_cell(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) per_cell[i] = detail::run_cell(cells[i], c, factory);
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(c.workers, 1), cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  BenchmarkReport report;
  for (auto& runs : per_cell)
    for (auto& r : runs) report.runs.push_back(std::move(r));
  return report;
}

namespace detail {

inline std::string cell_prefix(const BenchmarkCell& c, SearchMode mode) {
  return std::string(to_string(c.mechanism)) + ',' + format_double(c.fraction) + ',' + csv_field(c.model) + ',' +
         to_string(mode);
}

}  // namespace detail

/// Every trace of every run, prefixed by its cell.
inline std::string benchmark_results_csv(const BenchmarkReport& rep, bool timing = false) {
  std::string out = std::string("mechanism,fraction,model,mode,seed,") + kResultsHeader + '\n';
  for (const auto& r : rep.runs)
    for (const auto& e : r.result.trace)
      out += detail::cell_prefix(r.cell, r.mode) + ',' + std::to_string(r.cell.seed) + ',' + results_row(e, timing) + '\n';
  return out;
}

/// One row per run: best pipeline and how much searching it took.
inline std::string benchmark_report_csv(const BenchmarkReport& rep, bool timing = false) {
  std::string out =
      "mechanism,fraction,model,mode,seed,pipeline,c_index,igs,evaluations,distinct,wall_clock_s,error_code\n";
  for (const auto& r : rep.runs) {
    out += detail::cell_prefix(r.cell, r.mode) + ',' + std::to_string(r.cell.seed) + ',';
    if (!r.error.empty()) {
      out += ",,,,,," + r.error + '\n';
      continue;
    }
    out += detail::csv_field(r.result.best_pipeline.key()) + ',';
    if (r.best.ok()) out += detail::number_or_empty(r.best.c_index) + ',' + detail::number_or_empty(r.best.igs);
    else out += ',';
    out += ',' + std::to_string(r.result.trace.size()) + ',' + std::to_string(r.result.n_distinct()) + ',';
    if (timing && !r.result.trace.empty()) out += detail::format_double(r.result.trace.back().wall_clock_s);
    out += ',' + r.best.error + '\n';
  }
  return out;
}

/// Brier curve of each run's best pipeline, averaged over seeds pointwise.
/// Seeds whose grid differs from the first one in the cell are left out.
inline std::string brier_over_time_csv(const BenchmarkReport& rep) {
  struct Acc {
    std::vector<double> grid, sum;
    std::size_t n = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  for (const auto& r : rep.runs) {
    if (!r.error.empty() || !r.best.ok() || r.best.grid.empty()) continue;
    const auto key = detail::cell_prefix(r.cell, r.mode);
    auto [it, fresh] = acc.try_emplace(key);
    if (fresh) {
      order.push_back(key);
      it->second.grid = r.best.grid;
      it->second.sum.assign(r.best.grid.size(), 0.0);
    }
    auto& a = it->second;
    if (a.grid != r.best.grid) continue;
    for (std::size_t k = 0; k < a.sum.size(); ++k) a.sum[k] += r.best.brier[k];
    ++a.n;
  }
  std::string out = "mechanism,fraction,model,mode,gridpoint_time,brier\n";
  for (const auto& key : order) {
    const auto& a = acc.at(key);
    for (std::size_t k = 0; k < a.grid.size(); ++k)
      out += key + ',' + detail::format_double(a.grid[k]) + ',' +
             detail::format_double(a.sum[k] / static_cast<double>(a.n)) + '\n';
  }
  return out;
}

/// First point at which each run matches the grid optimum (tolerance 1e-9).
/// Empty cells mean the run never got there.
inline std::string time_to_optimal_csv(const BenchmarkReport& rep, bool timing = false) {
  std::string out =
      "mechanism,fraction,model,mode,seed,grid_optimum,evaluations_to_optimum,trace_index,wall_clock_s,reached\n";
  for (const auto& r : rep.runs) {
    out += detail::cell_prefix(r.cell, r.mode) + ',' + std::to_string(r.cell.seed) + ',' +
           detail::number_or_empty(r.grid_optimum) + ',';
    if (r.to_optimum) {
      out += std::to_string(r.to_optimum->evaluations) + ',' + std::to_string(r.to_optimum->trace_index) + ',';
      if (timing) out += detail::format_double(r.to_optimum->wall_clock_s);
      out += ",1\n";
    } else {
      out += ",,,0\n";
    }
  }
  return out;
}

// ---- injection helpers -------------------------------------------------------------

/// Fills in injection defaults: targets are the numeric features, and MAR
/// without a named driver takes the first numeric feature outside the targets.
inline MissingnessSpec resolve_injection(const SurvivalDataset& ds, Mechanism mechanism, double fraction,
                                         std::vector<std::string> columns, std::string driver, std::uint64_t seed) {
  MissingnessSpec spec;
  spec.mechanism = mechanism;
  spec.fraction = fraction;
  spec.seed = seed;
  spec.driver_column = mechanism == Mechanism::MAR ? std::move(driver) : std::string();
  auto numeric = default_targets(ds);
  if (mechanism == Mechanism::MAR && spec.driver_column.empty()) {
    for (const auto& name : numeric)
      if (std::find(columns.begin(), columns.end(), name) == columns.end()) {
        spec.driver_column = name;
        break;
      }
    require(!spec.driver_column.empty(), ErrorCode::ConfigError, "mar injection needs a driver column outside the targets");
  }
  if (columns.empty())
    for (const auto& name : numeric)
      if (name != spec.driver_column) columns.push_back(name);
  spec.target_columns = std::move(columns);
  return spec;
}

inline std::string injection_manifest(const SurvivalDataset& original, const SurvivalDataset& injected,
                                      const MissingnessSpec& spec) {
  std::ostringstream out;
  out << "mechanism=" << to_string(spec.mechanism) << '\n';
  out << "fraction=" << detail::format_double(spec.fraction) << '\n';
  out << "seed=" << spec.seed << '\n';
  out << "driver=" << spec.driver_column << '\n';
  out << "rows=" << original.n_rows() << '\n';
  out << "quota=" << injection_quota(spec.fraction, original.n_rows()) << '\n';
  for (const auto& name : spec.target_columns) {
    const auto j = static_cast<Eigen::Index>(injected.feature_index(name));
    out << "masked." << name << '=' << (!injected.mask.col(j).array()).count() << '\n';
  }
  return out.str();
}

/// Factory over a loaded dataset: inject (unless fraction is 0), encode
/// categoricals, split with a fixed seed and score with the cell's model.
inline EvaluatorFactory dataset_factory(SurvivalDataset raw, ModelRegistry registry, std::vector<std::string> columns,
                                        std::string driver, std::uint64_t split_seed, double test_fraction = 0.25,
                                        std::size_t grid_points = 50) {
  return [raw = std::move(raw), registry = std::move(registry), columns = std::move(columns), driver = std::move(driver),
          split_seed, test_fraction, grid_points](const BenchmarkCell& cell) {
    SurvivalDataset ds = raw;
    if (cell.fraction > 0.0)
      ds = inject(raw, resolve_injection(raw, cell.mechanism, cell.fraction, columns, driver, cell.seed));
    EvaluationOptions options;
    options.seed = split_seed;
    options.grid_points = grid_points;
    return make_evaluator(split(encode_categoricals(ds), test_fraction, split_seed), registry.resolve(cell.model),
                          options);
  };
}

}  // namespace prepsurv
