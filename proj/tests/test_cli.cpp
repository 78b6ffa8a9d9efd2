#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "prepsurv/cli.hpp"
#include "test_support.hpp"

using namespace prepsurv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("prepsurv_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto ds = prepsurv::testing::simulate_cox(160, {0.9, -0.6, 0.3, 0.0}, 5);
    spit(dir / "toy.csv", to_csv(ds));
    spit(dir / "toy.schema", to_schema_text(schema_of(ds)));
    MissingnessSpec s;
    s.target_columns = {"x0", "x2"};
    s.fraction = 0.2;
    s.seed = 3;
    spit(dir / "holed.csv", to_csv(inject(ds, s)));
    spit(dir / "holed.schema", to_schema_text(schema_of(ds)));
  }
  void TearDown() override { fs::remove_all(dir); }

  Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
  }

  std::string toy() const { return (dir / "toy.csv").string(); }
  std::string holed() const { return (dir / "holed.csv").string(); }
  std::string out(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

CsvTable table(const fs::path& p) { return parse_csv_table(slurp(p)); }

}  // namespace

TEST(ExitCodes, ConfigErrorsAreOneDataErrorsAreTwo) {
  const std::set<ErrorCode> config{ErrorCode::ConfigError, ErrorCode::InvalidArgument, ErrorCode::ParseError};
  for (int c = 0; c <= static_cast<int>(ErrorCode::InvalidArgument); ++c) {
    const auto code = static_cast<ErrorCode>(c);
    EXPECT_EQ(cli::exit_code(code), config.count(code) ? 1 : 2) << to_string(code);
  }
}

TEST_F(Cli, NoprepOnCompleteDataWritesOneRow) {
  const auto o = run({"noprep", "--data", toy(), "--out", out("np")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto t = table(dir / "np" / "results.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"eval_index", "pipeline", "c_index", "igs", "wall_clock_s", "error_code"}));
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][1], "impute=none,outlier=none,select=none");
  EXPECT_EQ(t.rows[0][5], "");
  EXPECT_EQ(t.rows[0][4], "");
  EXPECT_TRUE(fs::exists(dir / "np" / "best.txt"));
}

TEST_F(Cli, NoprepOnMissingDataRecordsTheFailure) {
  const auto o = run({"noprep", "--data", holed(), "--out", out("np")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto t = table(dir / "np" / "results.csv");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][5], "MissingCells");
  EXPECT_EQ(t.rows[0][2], "");
}

TEST_F(Cli, GridWritesSeventyFiveParseableRows) {
  const auto o = run({"grid", "--data", holed(), "--out", out("g"), "--workers", "2"});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto t = table(dir / "g" / "results.csv");
  ASSERT_EQ(t.rows.size(), 75u);
  const auto all = SearchSpace::defaults().all();
  double best = -1;
  for (std::size_t i = 0; i < 75; ++i) {
    EXPECT_EQ(t.rows[i][0], std::to_string(i + 1));
    EXPECT_EQ(parse_pipeline(t.rows[i][1]).canonical(), all[i].canonical());
    double v = 0;
    if (detail::parse_double(t.rows[i][2], v)) best = std::max(best, v);
  }
  const auto b = slurp(dir / "g" / "best.txt");
  double reward = -2;
  std::istringstream in(b);
  for (std::string line; std::getline(in, line);)
    if (line.rfind("reward=", 0) == 0) detail::parse_double(line.substr(7), reward);
  EXPECT_EQ(reward, best);
}

TEST_F(Cli, ConfigEchoListsDefaults) {
  ASSERT_EQ(run({"optimize", "--data", toy(), "--seed", "2", "--out", out("q"), "--episodes", "5"}).code, 0);
  const auto echo = slurp(dir / "q" / "config.echo");
  for (const char* line : {"command=optimize\n", "model=cox\n", "seed=2\n", "split-seed=2\n", "test-fraction=0.25\n",
                           "episodes=5\n", "alpha=0.5\n", "gamma=0.9\n", "epsilon-start=0.9\n", "epsilon-end=0.05\n",
                           "budget-seconds=0\n", "workers=1\n", "timing=false\n"})
    EXPECT_NE(echo.find(line), std::string::npos) << line;
  EXPECT_NE(echo.find("schema=" + (dir / "toy.schema").string() + "\n"), std::string::npos);
}

TEST_F(Cli, ReplayFromEchoIsByteIdenticalForEverySubcommand) {
  spit(dir / "custom.txt", "impute=mean,outlier=none,select=uc\n# note\nimpute=knn,outlier=elliptic,select=none\n"
                           "impute=mean,outlier=none,select=uc\n");
  const std::string custom = (dir / "custom.txt").string();
  const std::vector<std::pair<std::vector<std::string>, std::string>> runs{
      {{"optimize", "--data", holed(), "--seed", "7", "--episodes", "40"}, "results.csv"},
      {{"random", "--data", holed(), "--seed", "7", "--n", "20", "--workers", "2"}, "results.csv"},
      {{"grid", "--data", holed(), "--seed", "1"}, "results.csv"},
      {{"custom", "--data", holed(), "--pipelines", custom}, "results.csv"},
      {{"noprep", "--data", toy()}, "results.csv"},
      {{"inject", "--data", toy(), "--seed", "4", "--mechanism", "mar", "--fraction", "0.3"}, "injected.csv"},
      {{"benchmark", "--data", toy(), "--seed", "2", "--episodes", "30", "--n", "20", "--fraction", "0.2,0.4",
        "--mechanism", "mcar,mnar"},
       "results.csv"},
  };
  for (const auto& [args, file] : runs) {
    const auto& cmd = args[0];
    auto a = args;
    a.insert(a.end(), {"--out", out(cmd + "_a")});
    ASSERT_EQ(run(a).code, 0) << cmd;
    auto again = args;
    again.insert(again.end(), {"--out", out(cmd + "_b")});
    ASSERT_EQ(run(again).code, 0) << cmd;
    const auto echo = (dir / (cmd + "_a") / "config.echo").string();
    ASSERT_EQ(run({"--config", echo, "--out", out(cmd + "_c")}).code, 0) << cmd;
    ASSERT_EQ(run({cmd, "--config", echo, "--out", out(cmd + "_d")}).code, 0) << cmd;
    const auto want = slurp(dir / (cmd + "_a") / file);
    EXPECT_GT(want.size(), 40u) << cmd;
    for (const char* other : {"_b", "_c", "_d"}) EXPECT_EQ(slurp(dir / (cmd + other) / file), want) << cmd << other;
    if (cmd == "benchmark") {
      for (const char* f : {"brier_over_time.csv", "time_to_optimal.csv", "report.csv"})
        EXPECT_EQ(slurp(dir / (cmd + "_c") / f), slurp(dir / (cmd + "_a") / f)) << f;
    }
  }
}

TEST_F(Cli, ExplicitFlagsOverrideTheConfigFile) {
  ASSERT_EQ(run({"optimize", "--data", holed(), "--seed", "1", "--episodes", "30", "--out", out("a")}).code, 0);
  const auto echo = (dir / "a" / "config.echo").string();
  ASSERT_EQ(run({"--config", echo, "--episodes", "12", "--out", out("b")}).code, 0);
  EXPECT_EQ(table(dir / "b" / "results.csv").rows.size(), 12u);
  EXPECT_NE(slurp(dir / "b" / "config.echo").find("episodes=12\n"), std::string::npos);
}

TEST_F(Cli, TimingFillsWallClock) {
  ASSERT_EQ(run({"grid", "--data", toy(), "--timing", "--out", out("g")}).code, 0);
  const auto t = table(dir / "g" / "results.csv");
  double prev = 0;
  for (const auto& r : t.rows) {
    double v = -1;
    ASSERT_TRUE(detail::parse_double(r[4], v)) << r[4];
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST_F(Cli, InjectManifestCountsMatchQuota) {
  for (const char* mech : {"mcar", "mar", "mnar"}) {
    const std::string o = out(std::string("inj_") + mech);
    ASSERT_EQ(run({"inject", "--data", toy(), "--seed", "9", "--mechanism", mech, "--fraction", "0.5", "--out", o}).code,
              0);
    const auto manifest = slurp(fs::path(o) / "manifest.txt");
    const std::vector<std::string> targets =
        std::string(mech) == "mar" ? std::vector<std::string>{"x1", "x2", "x3"} : std::vector<std::string>{"x0", "x1", "x2", "x3"};
    for (const auto& c : targets) EXPECT_NE(manifest.find("masked." + c + "=80\n"), std::string::npos) << mech << manifest;
    const auto back = load_csv((fs::path(o) / "injected.csv").string(), load_schema((fs::path(o) / "injected.schema").string()));
    const auto profile = missing_profile(back);
    for (const auto& c : targets) EXPECT_DOUBLE_EQ(profile[back.feature_index(c)], 0.5) << mech << c;
    EXPECT_EQ(back.time, load_csv(toy(), load_schema((dir / "toy.schema").string())).time);
  }
}

TEST_F(Cli, BenchmarkReports) {
  const auto o = run({"benchmark", "--data", toy(), "--seed", "0", "--repeats", "2", "--episodes", "40", "--n", "40",
                      "--fraction", "0,0.3", "--modes", "optimize,random,grid,noprep", "--out", out("b")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto brier = table(dir / "b" / "brier_over_time.csv");
  EXPECT_EQ(brier.header, (std::vector<std::string>{"mechanism", "fraction", "model", "mode", "gridpoint_time", "brier"}));
  std::map<std::string, std::size_t> per_cell;
  for (const auto& r : brier.rows) ++per_cell[r[0] + r[1] + r[2] + r[3]];
  EXPECT_GE(per_cell.size(), 6u);
  for (const auto& [cell, rows] : per_cell) EXPECT_LE(rows, 50u) << cell;

  const auto tto = table(dir / "b" / "time_to_optimal.csv");
  ASSERT_EQ(tto.rows.size(), 2u * 2u * 4u);
  const auto mode = tto.column("mode"), evals = tto.column("evaluations_to_optimum"), reached = tto.column("reached");
  for (const auto& r : tto.rows) {
    if (r[mode] == "grid") {
      EXPECT_EQ(r[reached], "1");
    }
    if (r[reached] == "1" && r[mode] != "noprep") {
      EXPECT_LE(std::stoul(r[evals]), 75u) << r[mode];
    }
  }
  const auto report = table(dir / "b" / "report.csv");
  EXPECT_EQ(report.rows.size(), 16u);
  const auto results = table(dir / "b" / "results.csv");
  EXPECT_EQ(results.header.size(), 11u);
}

TEST_F(Cli, BenchmarkRecordsCellFailuresAndContinues) {
  // x0 already has holes, so injection fails in every cell; the run still completes
  const auto o = run({"benchmark", "--data", holed(), "--seed", "0", "--columns", "x0", "--modes", "grid", "--out",
                      out("b")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto report = table(dir / "b" / "report.csv");
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_EQ(report.rows[0][report.column("error_code")], "AlreadyMissing");
}

TEST_F(Cli, ExitCodeTable) {
  spit(dir / "bad_pipes.txt", "impute=mean,outlier=none\n");
  spit(dir / "bad_event.csv", "time,event,x0\n1,2,0.5\n2,1,0.1\n");
  spit(dir / "bad_event.schema", "time=time\nevent=event\n");
  spit(dir / "empty.csv", "");
  spit(dir / "empty.schema", "time=time\nevent=event\n");
  spit(dir / "wrong.schema", "time=survival\nevent=event\n");
  spit(dir / "blocker", "a file where a directory should go");
  const std::string schema = (dir / "toy.schema").string();
  struct Case {
    std::vector<std::string> args;
    int code;
    std::string prefix;
  };
  const std::vector<Case> cases{
      {{"frobnicate", "--data", toy()}, 1, "E:ConfigError:"},
      {{"grid"}, 1, "E:ConfigError:"},
      {{"grid", "--data", toy(), "--bogus", "1"}, 1, "E:ConfigError:"},
      {{"optimize", "--data", toy()}, 1, "E:ConfigError:"},
      {{"random", "--data", toy()}, 1, "E:ConfigError:"},
      {{"grid", "--data", toy(), "--model", "deephit"}, 1, "E:ConfigError:"},
      {{"grid", "--data", toy(), "--test-fraction", "1.5"}, 1, "E:ConfigError:"},
      {{"optimize", "--data", toy(), "--seed", "1", "--alpha", "2"}, 1, "E:ConfigError:"},
      {{"inject", "--data", toy(), "--seed", "1", "--fraction", "1.5"}, 1, "E:ConfigError:"},
      {{"inject", "--data", toy(), "--seed", "1", "--mechanism", "xyz"}, 1, "E:ConfigError:"},
      {{"custom", "--data", toy()}, 1, "E:ConfigError:"},
      {{"custom", "--data", toy(), "--pipelines", (dir / "nope.txt").string()}, 1, "E:ConfigError:"},
      {{"custom", "--data", toy(), "--pipelines", (dir / "bad_pipes.txt").string()}, 1, "E:ParseError:"},
      {{"grid", "--data", toy(), "--schema", (dir / "nope.schema").string()}, 1, "E:ConfigError:"},
      {{"grid", "--config", (dir / "nope.echo").string()}, 1, "E:ConfigError:"},
      {{"benchmark", "--data", toy(), "--seed", "1", "--modes", "optimize,bogus"}, 1, "E:ConfigError:"},
      {{"inject", "--data", toy(), "--seed", "1", "--columns", "x0,x0"}, 1, "E:InvalidArgument:"},
      {{"grid", "--data", (dir / "nope.csv").string(), "--schema", schema}, 2, "E:IoError:"},
      {{"grid", "--data", toy(), "--schema", (dir / "wrong.schema").string()}, 2, "E:SchemaMismatch:"},
      {{"grid", "--data", (dir / "bad_event.csv").string()}, 2, "E:BadEventValue:"},
      {{"grid", "--data", (dir / "empty.csv").string()}, 2, "E:EmptyFile:"},
      {{"inject", "--data", holed(), "--seed", "1", "--columns", "x0"}, 2, "E:AlreadyMissing:"},
      {{"inject", "--data", toy(), "--seed", "1", "--columns", "time"}, 2, "E:OutcomeColumnTargeted:"},
      {{"inject", "--data", toy(), "--seed", "1", "--columns", "nope"}, 2, "E:SchemaMismatch:"},
      {{"inject", "--data", holed(), "--seed", "1", "--mechanism", "mar", "--columns", "x1", "--driver", "x0"}, 2,
       "E:DriverMissing:"},
      {{"grid", "--data", toy(), "--out", (dir / "blocker" / "sub").string()}, 2, "E:IoError:"},
  };
  for (const auto& c : cases) {
    auto args = c.args;
    if (std::find(args.begin(), args.end(), "--out") == args.end()) args.insert(args.end(), {"--out", out("o")});
    const auto o = run(args);
    std::string joined;
    for (const auto& a : c.args) joined += a + ' ';
    EXPECT_EQ(o.code, c.code) << joined << "\n" << o.err;
    EXPECT_EQ(o.err.rfind(c.prefix, 0), 0u) << joined << "\n" << o.err;
  }
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"grid", "--help"}).code, 0);
}

TEST(CsvText, QuotedFieldsRoundTrip) {
  const auto fields = detail::split_fields(R"(1,"a,b", "say ""hi""",,x)");
  EXPECT_EQ(fields, (std::vector<std::string>{"1", "a,b", "say \"hi\"", "", "x"}));
  for (std::string s : {"plain", "a,b", "q\"uote", ""}) EXPECT_EQ(detail::split_fields(detail::csv_field(s)).at(0), s);
}

TEST(Benchmark, SyntheticQLearningReachesTheOptimumFasterThanGrid) {
  BenchmarkConfig b;
  b.modes = {SearchMode::QLearning, SearchMode::Grid};
  b.repeats = 10;
  const auto rep = run_benchmark(b, [](const BenchmarkCell& c) { return synthetic_rewards(c.seed).evaluator(); });
  std::vector<double> ratio;
  for (std::size_t i = 0; i < rep.runs.size(); i += 2) {
    const auto& q = rep.runs[i];
    const auto& g = rep.runs[i + 1];
    ASSERT_EQ(q.mode, SearchMode::QLearning);
    ASSERT_TRUE(g.to_optimum.has_value());
    ratio.push_back(q.to_optimum ? static_cast<double>(q.to_optimum->evaluations) / 75.0 : 2.0);
    EXPECT_EQ(g.grid_optimum, synthetic_rewards(q.cell.seed).max_reward);
  }
  std::sort(ratio.begin(), ratio.end());
  EXPECT_LT((ratio[4] + ratio[5]) / 2, 1.0);
}

TEST(Benchmark, ParallelCellsMatchSerial) {
  BenchmarkConfig b;
  b.repeats = 4;
  b.qlearning.episodes = 60;
  b.n_random = 30;
  auto factory = [](const BenchmarkCell& c) { return synthetic_rewards(c.seed).evaluator(); };
  const auto serial = run_benchmark(b, factory);
  b.workers = 3;
  const auto parallel = run_benchmark(b, factory);
  EXPECT_EQ(benchmark_results_csv(serial), benchmark_results_csv(parallel));
  EXPECT_EQ(time_to_optimal_csv(serial), time_to_optimal_csv(parallel));
}
