#include <random>

#include <benchmark/benchmark.h>

#include "plume/agent.hpp"
#include "plume/clustering.hpp"
#include "plume/features.hpp"
#include "plume/prioritization.hpp"
#include "plume/tracebench.hpp"

using namespace plume;

namespace {

const TraceDataset& balanced() {
  static const auto ds = tracebench::build_dataset(tracebench::DatasetKind::balanced, 400, 1);
  return ds;
}

const FeatureMatrix& balanced_matrix() {
  static const auto m = extract_matrix(balanced(), default_catalog(), 1);
  return m;
}

}  // namespace

static void BM_ExtractFeatures(benchmark::State& state) {
  const auto& t = balanced().traces.front();
  for (auto _ : state) benchmark::DoNotOptimize(extract_features(t, default_catalog()));
}
BENCHMARK(BM_ExtractFeatures);

static void BM_ExtractMatrix(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(extract_raw_matrix(balanced(), default_catalog(), 1));
}
BENCHMARK(BM_ExtractMatrix)->Unit(benchmark::kMillisecond);

static void BM_FitGmm(benchmark::State& state) {
  const auto& m = balanced_matrix();
  for (auto _ : state) benchmark::DoNotOptimize(fit_gmm(m.data, static_cast<int>(state.range(0)), 3));
}
BENCHMARK(BM_FitGmm)->Arg(4)->Arg(7)->Unit(benchmark::kMillisecond);

static void BM_Silhouette(benchmark::State& state) {
  const auto& m = balanced_matrix();
  std::vector<int> labels(static_cast<std::size_t>(m.data.rows()));
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  for (auto _ : state) benchmark::DoNotOptimize(silhouette_score(m.data, labels));
}
BENCHMARK(BM_Silhouette)->Unit(benchmark::kMillisecond);

static void BM_AbrStep(benchmark::State& state) {
  const auto& trace = balanced().traces.front();
  tracebench::AbrEnv env;
  env.reset(trace, 1);
  int a = 0;
  for (auto _ : state) {
    if (env.state().done()) env.reset(trace, 1);
    benchmark::DoNotOptimize(env.step(a));
    a = (a + 1) % 3;
  }
}
BENCHMARK(BM_AbrStep);

static void BM_LearnStep(benchmark::State& state) {
  AgentConfig cfg;
  cfg.hidden_sizes = {static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(0))};
  cfg.dueling = true;
  cfg.double_q = true;
  cfg.learn_start = 64;
  DqnAgent agent(42, 3, cfg);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    Transition t;
    t.state.resize(42);
    t.next.resize(42);
    for (auto& x : t.state) x = g(rng);
    for (auto& x : t.next) x = g(rng);
    t.action = i % 3;
    t.reward = g(rng);
    t.discount = 0.9;
    agent.store(t);
  }
  for (auto _ : state) benchmark::DoNotOptimize(agent.learn_step());
}
BENCHMARK(BM_LearnStep)->Arg(64)->Arg(256);

static void BM_SampleTrace(benchmark::State& state) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (int i = 0; i < 400; ++i) {
    ids.push_back("t" + std::to_string(i));
    labels.push_back(i % static_cast<int>(state.range(0)));
  }
  const auto dist = CategoricalDistribution::from_labels(ids, labels);
  const auto w = static_weights(dist);
  Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(sample_trace(w, dist, rng));
}
BENCHMARK(BM_SampleTrace)->Arg(4)->Arg(16);
BENCHMARK_MAIN();
