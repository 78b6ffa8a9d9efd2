#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prepsurv/benchmark.hpp"

namespace prepsurv::cli {

namespace fs = std::filesystem;

/// 1 for configuration errors, 2 for everything the data or the file system
/// caused.
inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::ParseError: return 1;
    default: return 2;
  }
}

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"optimize", "random", "custom", "noprep", "grid", "inject", "benchmark"};
  return names;
}

struct RunConfig {
  std::string command;
  std::string data;
  std::string schema;  // defaults to the data path with a .schema extension
  std::string out = "prepsurv_out";
  std::string model = "cox";  // benchmark: comma list
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;  // defaults to seed
  double test_fraction = 0.25;
  std::size_t episodes = 150;
  double alpha = 0.5;
  double gamma = 0.9;
  double epsilon_start = 0.9;
  double epsilon_end = 0.05;
  std::size_t n = 150;
  std::string pipelines;
  std::string mechanism = "mcar";  // benchmark: comma list
  std::string fraction = "0.5";    // benchmark: comma list
  std::string columns;             // empty: every numeric feature
  std::string driver;
  std::string modes = "optimize,random,grid";
  std::size_t repeats = 1;
  double budget_seconds = 0.0;
  std::size_t workers = 1;
  bool timing = false;
};

// Option keys in echo order. Each is also the long flag name.
inline const std::vector<std::string>& option_keys() {
  static const std::vector<std::string> keys{
      "data",      "schema", "out",   "model",         "seed",        "split-seed", "test-fraction", "episodes",
      "alpha",     "gamma",  "epsilon-start", "epsilon-end", "n",     "pipelines",  "mechanism",     "fraction",
      "columns",   "driver", "modes", "repeats",       "budget-seconds", "workers", "timing"};
  return keys;
}

inline bool uses(const std::string& cmd, const std::string& key) {
  const bool bench = cmd == "benchmark";
  const bool search = cmd != "inject" && !bench;
  if (key == "data" || key == "schema" || key == "out" || key == "seed" || key == "workers" || key == "timing")
    return true;
  if (key == "model" || key == "split-seed" || key == "test-fraction" || key == "budget-seconds") return search || bench;
  if (key == "episodes" || key == "alpha" || key == "gamma" || key == "epsilon-start" || key == "epsilon-end")
    return cmd == "optimize" || bench;
  if (key == "n") return cmd == "random" || bench;
  if (key == "pipelines") return cmd == "custom" || bench;
  if (key == "mechanism" || key == "fraction" || key == "columns" || key == "driver") return cmd == "inject" || bench;
  if (key == "modes" || key == "repeats") return bench;
  return false;
}

/// Full resolved configuration as key=value lines; `--config` reads it back.
inline std::string config_echo(const RunConfig& c) {
  auto value = [&](const std::string& k) -> std::string {
    if (k == "data") return c.data;
    if (k == "schema") return c.schema;
    if (k == "out") return c.out;
    if (k == "model") return c.model;
    if (k == "seed") return std::to_string(c.seed);
    if (k == "split-seed") return std::to_string(c.split_seed);
    if (k == "test-fraction") return prepsurv::detail::format_double(c.test_fraction);
    if (k == "episodes") return std::to_string(c.episodes);
    if (k == "alpha") return prepsurv::detail::format_double(c.alpha);
    if (k == "gamma") return prepsurv::detail::format_double(c.gamma);
    if (k == "epsilon-start") return prepsurv::detail::format_double(c.epsilon_start);
    if (k == "epsilon-end") return prepsurv::detail::format_double(c.epsilon_end);
    if (k == "n") return std::to_string(c.n);
    if (k == "pipelines") return c.pipelines;
    if (k == "mechanism") return c.mechanism;
    if (k == "fraction") return c.fraction;
    if (k == "columns") return c.columns;
    if (k == "driver") return c.driver;
    if (k == "modes") return c.modes;
    if (k == "repeats") return std::to_string(c.repeats);
    if (k == "budget-seconds") return prepsurv::detail::format_double(c.budget_seconds);
    if (k == "workers") return std::to_string(c.workers);
    if (k == "timing") return c.timing ? "true" : "false";
    return {};
  };
  std::string out = "command=" + c.command + '\n';
  for (const auto& k : option_keys())
    if (uses(c.command, k)) out += k + '=' + value(k) + '\n';
  return out;
}

namespace detail {

inline std::string read_text(const std::string& path, ErrorCode code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(code, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

inline std::vector<std::string> list_of(const std::string& text) {
  std::vector<std::string> out;
  for (auto& f : prepsurv::detail::split_fields(text))
    if (!f.empty()) out.push_back(f);
  return out;
}

inline double to_double(const std::string& s, const char* what) {
  double v = 0;
  if (!prepsurv::detail::parse_double(s, v)) fail(ErrorCode::ConfigError, std::string("bad ") + what + " '" + s + "'");
  return v;
}

inline SearchMode parse_mode(const std::string& s) {
  for (auto m : {SearchMode::QLearning, SearchMode::Random, SearchMode::Grid, SearchMode::Custom, SearchMode::NoPrep})
    if (s == to_string(m)) return m;
  fail(ErrorCode::ConfigError, "unknown mode '" + s + "' (expected optimize|random|grid|custom|noprep)");
}

inline std::string absolute(const std::string& p) {
  return p.empty() ? p : fs::absolute(fs::path(p)).lexically_normal().string();
}

// Replaces `--config FILE` with the file's settings as flags, placed before
// the remaining arguments so that explicit flags win.
inline std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) fail(ErrorCode::ConfigError, "--config needs a file");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty()) return args;

  const auto text = read_text(path, ErrorCode::ConfigError);
  std::istringstream in(text);
  std::string line, command;
  std::vector<std::string> flags;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto body = prepsurv::detail::trim(line);
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorCode::ConfigError, path + " line " + std::to_string(line_no) + ": expected key=value");
    const std::string key(prepsurv::detail::trim(body.substr(0, eq)));
    const std::string value(prepsurv::detail::trim(body.substr(eq + 1)));
    if (key == "command") {
      command = value;
      continue;
    }
    const auto& keys = option_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      fail(ErrorCode::ConfigError, path + " line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!value.empty()) flags.push_back("--" + key + "=" + value);
  }

  const auto& cmds = commands();
  auto sub = std::find_if(rest.begin(), rest.end(),
                          [&](const std::string& a) { return std::find(cmds.begin(), cmds.end(), a) != cmds.end(); });
  if (sub != rest.end()) {
    if (!command.empty() && *sub != command)
      fail(ErrorCode::ConfigError, path + " is a '" + command + "' configuration, not '" + *sub + "'");
    command = *sub;
    rest.erase(sub);
  }
  if (command.empty()) fail(ErrorCode::ConfigError, path + " names no command");
  std::vector<std::string> out{command};
  out.insert(out.end(), flags.begin(), flags.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

inline void add_options(CLI::App* s, RunConfig& c, const std::string& cmd) {
  auto want = [&](const char* k) { return uses(cmd, k); };
  s->add_option("--data", c.data, "input CSV")->required();
  s->add_option("--schema", c.schema, "schema file (default: data path with .schema)");
  s->add_option("--out", c.out, "output directory")->capture_default_str();
  s->add_option("--seed", c.seed, "random seed")->capture_default_str();
  s->add_option("--workers", c.workers, "parallel evaluations or benchmark cells")->capture_default_str();
  s->add_flag("--timing", c.timing, "write wall-clock columns");
  if (want("model")) s->add_option("--model", c.model, cmd == "benchmark" ? "cox|rsf, comma list" : "cox|rsf")->capture_default_str();
  if (want("split-seed")) s->add_option("--split-seed", c.split_seed, "train/test split seed (default: --seed)");
  if (want("test-fraction")) s->add_option("--test-fraction", c.test_fraction)->capture_default_str();
  if (want("episodes")) s->add_option("--episodes", c.episodes)->capture_default_str();
  if (want("alpha")) s->add_option("--alpha", c.alpha, "learning rate")->capture_default_str();
  if (want("gamma")) s->add_option("--gamma", c.gamma, "discount")->capture_default_str();
  if (want("epsilon-start")) s->add_option("--epsilon-start", c.epsilon_start)->capture_default_str();
  if (want("epsilon-end")) s->add_option("--epsilon-end", c.epsilon_end)->capture_default_str();
  if (want("n")) s->add_option("--n", c.n, "random pipelines to draw")->capture_default_str();
  if (want("pipelines")) {
    auto* o = s->add_option("--pipelines", c.pipelines, "custom pipeline file");
    if (cmd == "custom") o->required();
  }
  if (want("mechanism")) s->add_option("--mechanism", c.mechanism, "mcar|mar|mnar")->capture_default_str();
  if (want("fraction")) s->add_option("--fraction", c.fraction, "missing share per target column")->capture_default_str();
  if (want("columns")) s->add_option("--columns", c.columns, "comma list of target columns");
  if (want("driver")) s->add_option("--driver", c.driver, "MAR driver column");
  if (want("modes")) s->add_option("--modes", c.modes)->capture_default_str();
  if (want("repeats")) s->add_option("--repeats", c.repeats, "seeds per cell")->capture_default_str();
  if (want("budget-seconds")) s->add_option("--budget-seconds", c.budget_seconds, "0 means unlimited")->capture_default_str();
}

inline void validate(RunConfig& c, bool seed_given, bool split_seed_given, const ModelRegistry& registry) {
  const auto& cmd = c.command;
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::ConfigError, what); };
  if (cmd == "optimize" || cmd == "random" || cmd == "inject" || cmd == "benchmark")
    check(seed_given, cmd + " needs --seed");
  if (!split_seed_given) c.split_seed = c.seed;
  check(c.workers >= 1, "--workers must be at least 1");
  check(c.budget_seconds >= 0, "--budget-seconds must be non-negative");
  check(c.test_fraction > 0 && c.test_fraction < 1, "--test-fraction must lie in (0,1)");
  check(c.episodes >= 1, "--episodes must be at least 1");
  check(c.alpha >= 0 && c.alpha <= 1, "--alpha must lie in [0,1]");
  check(c.gamma >= 0 && c.gamma <= 1, "--gamma must lie in [0,1]");
  check(c.epsilon_start >= 0 && c.epsilon_start <= 1 && c.epsilon_end >= 0 && c.epsilon_end <= 1,
        "epsilon schedule must lie in [0,1]");
  check(c.n >= 1, "--n must be at least 1");
  check(c.repeats >= 1, "--repeats must be at least 1");
  if (uses(cmd, "model")) {
    const auto models = list_of(c.model);
    check(!models.empty(), "--model is empty");
    check(cmd == "benchmark" || models.size() == 1, "--model takes one model here");
    for (const auto& m : models) registry.resolve(m);
  }
  if (uses(cmd, "mechanism")) {
    const auto ms = list_of(c.mechanism);
    check(!ms.empty(), "--mechanism is empty");
    check(cmd == "benchmark" || ms.size() == 1, "--mechanism takes one mechanism here");
    for (const auto& m : ms) parse_mechanism(m);
    const auto fs_ = list_of(c.fraction);
    check(!fs_.empty(), "--fraction is empty");
    check(cmd == "benchmark" || fs_.size() == 1, "--fraction takes one value here");
    for (const auto& f : fs_) {
      const double v = to_double(f, "fraction");
      check(cmd == "benchmark" ? (v >= 0 && v < 1) : (v > 0 && v < 1),
            cmd == "benchmark" ? "--fraction values must lie in [0,1)" : "--fraction must lie in (0,1)");
    }
  }
  if (cmd == "benchmark") {
    const auto modes = list_of(c.modes);
    check(!modes.empty(), "--modes is empty");
    for (const auto& m : modes)
      if (parse_mode(m) == SearchMode::Custom) check(!c.pipelines.empty(), "custom mode needs --pipelines");
  }
  c.data = absolute(c.data);
  if (c.schema.empty()) {
    auto guess = fs::path(c.data).replace_extension(".schema");
    check(fs::exists(guess), "no --schema given and " + guess.string() + " does not exist");
    c.schema = guess.string();
  }
  c.schema = absolute(c.schema);
  c.pipelines = absolute(c.pipelines);
  if (!c.pipelines.empty()) check(fs::exists(c.pipelines), "pipeline file " + c.pipelines + " does not exist");
  c.out = absolute(c.out);
}

inline std::vector<PipelineSpec> pipelines_of(const RunConfig& c) {
  if (c.pipelines.empty()) return {};
  return parse_pipelines(read_text(c.pipelines, ErrorCode::ConfigError));
}

inline SurvivalDataset load_input(const RunConfig& c) { return load_csv(c.data, load_schema(c.schema)); }

inline int cmd_search(const RunConfig& c, const ModelRegistry& registry, std::ostream& out) {
  const auto custom = pipelines_of(c);
  const auto ds = encode_categoricals(load_input(c));
  EvaluationOptions options;
  options.seed = c.seed;
  auto ev = make_evaluator(split(ds, c.test_fraction, c.split_seed), registry.resolve(c.model), options);

  SearchResult r;
  if (c.command == "optimize") {
    QLearningConfig q;
    q.alpha = c.alpha;
    q.gamma = c.gamma;
    q.epsilon_start = c.epsilon_start;
    q.epsilon_end = c.epsilon_end;
    q.episodes = c.episodes;
    q.seed = c.seed;
    q.time_budget_s = c.budget_seconds;
    r = run_qlearning(ev, q);
  } else if (c.command == "random") {
    r = run_random(ev, c.n, c.seed, SearchSpace::defaults(), c.budget_seconds, c.workers);
  } else if (c.command == "grid") {
    r = run_grid(ev, SearchSpace::defaults(), c.workers, c.budget_seconds);
  } else if (c.command == "custom") {
    r = run_custom(ev, custom);
  } else {
    r = run_noprep(ev);
  }
  write_text(fs::path(c.out) / "results.csv", results_csv(r, c.timing));
  write_text(fs::path(c.out) / "best.txt", best_txt(r, c.timing));
  out << c.command << ": " << r.trace.size() << " evaluations, " << r.n_distinct() << " distinct, best "
      << r.best_pipeline.key() << " c_index " << prepsurv::detail::format_double(r.best_reward) << '\n';
  return 0;
}

inline int cmd_inject(const RunConfig& c, std::ostream& out) {
  const auto raw = load_input(c);
  const auto spec = resolve_injection(raw, parse_mechanism(c.mechanism), to_double(c.fraction, "fraction"),
                                      list_of(c.columns), c.driver, c.seed);
  const auto injected = inject(raw, spec);
  write_text(fs::path(c.out) / "injected.csv", to_csv(injected));
  write_text(fs::path(c.out) / "injected.schema", to_schema_text(schema_of(injected)));
  write_text(fs::path(c.out) / "manifest.txt", injection_manifest(raw, injected, spec));
  out << "inject: " << to_string(spec.mechanism) << ' ' << c.fraction << " on " << spec.target_columns.size()
      << " columns, " << injection_quota(spec.fraction, raw.n_rows()) << " cells each\n";
  return 0;
}

inline int cmd_benchmark(const RunConfig& c, const ModelRegistry& registry, std::ostream& out) {
  BenchmarkConfig b;
  b.mechanisms.clear();
  for (const auto& m : list_of(c.mechanism)) b.mechanisms.push_back(parse_mechanism(m));
  b.fractions.clear();
  for (const auto& f : list_of(c.fraction)) b.fractions.push_back(to_double(f, "fraction"));
  b.models = list_of(c.model);
  b.modes.clear();
  for (const auto& m : list_of(c.modes)) b.modes.push_back(parse_mode(m));
  b.seed = c.seed;
  b.repeats = c.repeats;
  b.qlearning.alpha = c.alpha;
  b.qlearning.gamma = c.gamma;
  b.qlearning.epsilon_start = c.epsilon_start;
  b.qlearning.epsilon_end = c.epsilon_end;
  b.qlearning.episodes = c.episodes;
  b.n_random = c.n;
  b.pipelines = pipelines_of(c);
  b.time_budget_s = c.budget_seconds;
  b.workers = c.workers;

  const auto report =
      run_benchmark(b, dataset_factory(load_input(c), registry, list_of(c.columns), c.driver, c.split_seed,
                                       c.test_fraction));
  const fs::path dir(c.out);
  write_text(dir / "results.csv", benchmark_results_csv(report, c.timing));
  write_text(dir / "report.csv", benchmark_report_csv(report, c.timing));
  write_text(dir / "brier_over_time.csv", brier_over_time_csv(report));
  write_text(dir / "time_to_optimal.csv", time_to_optimal_csv(report, c.timing));

  std::size_t failed = 0;
  for (const auto& r : report.runs) failed += !r.error.empty();
  out << "benchmark: " << report.runs.size() << " runs, " << failed << " failed\n";
  for (const auto& r : report.runs)
    if (!r.error.empty()) out << "  " << prepsurv::detail::cell_prefix(r.cell, r.mode) << " seed " << r.cell.seed << ": " << r.message << '\n';
  return 0;
}

inline std::string strip_code(const Error& e) {
  std::string msg = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  return msg.rfind(prefix, 0) == 0 ? msg.substr(prefix.size()) : msg;
}

}  // namespace detail

/// Runs one command line (without the program name). Errors go to `err` as
/// "E:<code>:<message>" and pick the exit status.
inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err,
               const ModelRegistry& registry = ModelRegistry::with_builtins()) {
  try {
    auto args = detail::expand_config(argv);
    RunConfig c;
    CLI::App app{"Preprocessing pipeline search for survival models", "prepsurv"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1, 1);
    app.add_option("--config", "replay a config.echo file");  // consumed by expand_config
    const char* about[] = {"tabular Q-learning search",     "uniform random pipelines",  "pipelines from a file",
                           "the untouched data",            "every pipeline once",       "mask cells in a complete dataset",
                           "mechanism x fraction x model x mode sweep"};
    for (std::size_t i = 0; i < commands().size(); ++i)
      detail::add_options(app.add_subcommand(commands()[i], about[i]), c, commands()[i]);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return 0;
      err << "E:ConfigError:" << e.what() << '\n';
      return 1;
    }
    auto* sub = app.get_subcommands().front();
    c.command = sub->get_name();
    detail::validate(c, sub->count("--seed") > 0, sub->get_option_no_throw("--split-seed") &&
                                                      sub->get_option("--split-seed")->count() > 0,
                     registry);
    try {
      fs::create_directories(c.out);
    } catch (const fs::filesystem_error& e) {
      fail(ErrorCode::IoError, "cannot create " + c.out + ": " + e.what());
    }
    detail::write_text(fs::path(c.out) / "config.echo", config_echo(c));
    if (c.command == "inject") return detail::cmd_inject(c, out);
    if (c.command == "benchmark") return detail::cmd_benchmark(c, registry, out);
    return detail::cmd_search(c, registry, out);
  } catch (const Error& e) {
    err << "E:" << to_string(e.code()) << ':' << detail::strip_code(e) << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "E:Exception:" << e.what() << '\n';
    return 2;
  }
}

}  // namespace prepsurv::cli
