// Rotterdam with 30% of two columns knocked out, a few hand-picked
// pipelines, then a short Q-learning search.

#include <cstdio>

#include "prepsurv/benchmark.hpp"

using namespace prepsurv;

int main() {
  const std::string dir = PREPSURV_DATA_DIR;
  const auto raw = load_csv(dir + "/rotterdam.csv", load_schema(dir + "/rotterdam.schema"));

  MissingnessSpec spec;
  spec.mechanism = Mechanism::MCAR;
  spec.fraction = 0.3;
  spec.target_columns = {"nodes", "pgr"};
  spec.seed = 11;
  const auto holed = inject(raw, spec);
  std::printf("%zu rows, %zu features, missing share of nodes %.2f\n", holed.n_rows(), holed.n_features(),
              missing_profile(holed)[holed.feature_index("nodes")]);

  auto ev = make_evaluator(split(encode_categoricals(holed), 0.25, 11), cox_model());
  for (const char* text : {"impute=cca,outlier=none,select=none", "impute=mean,outlier=none,select=none",
                           "impute=knn,outlier=martingale,select=uc"}) {
    const auto e = ev.evaluate(parse_pipeline(text));
    std::printf("  %-40s c-index %.4f  igs %.4f %s\n", text, e.c_index, e.igs, e.error.c_str());
  }

  QLearningConfig q;
  q.episodes = 60;
  q.seed = 11;
  const auto r = run_qlearning(ev, q);
  std::printf("q-learning: %zu episodes, %zu distinct pipelines, best %s (%.4f at evaluation %zu)\n", r.trace.size(),
              r.n_distinct(), r.best_pipeline.canonical().c_str(), r.best_reward, r.best_index);
  std::printf("greedy rollout: %s\n", r.greedy->canonical().c_str());
}
