#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "plume/agent.hpp"
#include "plume/clustering.hpp"
#include "plume/env.hpp"
#include "plume/feature_selection.hpp"
#include "plume/features.hpp"
#include "plume/prioritization.hpp"
#include "plume/tracebench.hpp"

namespace plume {

enum class SamplerKind { random, two_class, plume_static, plume_dynamic };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view name);

// ---- trace pipeline -------------------------------------------------------------------------

struct PipelineConfig {
  SelectionConfig selection;
  SearchOptions search;
  bool skip_selection = false;  // cluster on every informative column
  std::uint64_t seed = 0;       // overrides selection.seed and search.seed via derive_seed
  unsigned jobs = 0;
};

/// features -> critical feature selection -> clustering -> categorical distribution.
struct PipelineResult {
  FeatureMatrix matrix;  // standardized, full catalog minus constant columns
  std::optional<SelectionReport> selection;
  FeatureMatrix critical;
  ClusterModel model;
  CategoricalDistribution dist;
};

PipelineResult run_pipeline(const TraceDataset& dataset, const PipelineConfig& cfg);

struct PlanConfig {
  PipelineConfig pipeline;
  double two_class_threshold = 2.5;  // MB/s, between the slow and fast level ranges
};

/// Everything a sampler needs: categories, initial weights, and per-trace critical features
/// (the return predictor's input under dynamic prioritization).
struct SamplingPlan {
  SamplerKind kind = SamplerKind::random;
  CategoricalDistribution dist;
  WeightTable initial;
  std::map<std::string, std::vector<double>> features;
  std::optional<PipelineResult> pipeline;
  bool fallback = false;
};

SamplingPlan make_sampling_plan(const TraceDataset& train, SamplerKind kind, const PlanConfig& cfg);

// ---- training loop --------------------------------------------------------------------------

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

/// TraceBench ABR environments with the agent's history length.
EnvFactory abr_env_factory(std::size_t history_len = 10);

struct TrainConfig {
  AgentConfig agent;
  std::uint64_t total_steps = 200000;  // env steps
  std::size_t actors = 4;
  double env_steps_per_learn = 4.0;
  std::uint64_t eval_interval = 50000;
  bool normalize_rewards = true;  // transform rewards before storage and for episode returns
  DynamicPrioritizerConfig dynamic;
  std::uint64_t seed = 0;
  unsigned jobs = 0;
};

struct EvalResult {
  double mean_return = 0.0;  // undiscounted raw episode reward, averaged over traces
  std::map<std::string, double> per_class;
  std::optional<double> slow_return;  // TraceBench slow classes pooled
  std::size_t episodes = 0;
};

/// Greedy rollout over every held-out trace with fixed per-trace episode seeds.
EvalResult evaluate(const QNetwork& network, const TraceDataset& test, const EnvFactory& make_env,
                    std::uint64_t seed, unsigned jobs = 0);

struct MetricsRow {
  std::uint64_t step = 0;
  std::size_t episodes = 0;
  std::uint64_t learn_steps = 0;
  double epsilon = 0.0;
  EvalResult eval;
  std::uint64_t weights_version = 0;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  EvalResult final_eval;
  std::vector<WeightRecord> weight_history;
  CategoricalDistribution dist;
  std::vector<std::size_t> category_episodes;
  std::set<std::string> trained_trace_ids;
  std::uint64_t env_steps = 0;
  std::size_t episodes = 0;
  QNetwork network;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

/// Actors run episodes on sampled traces; a single learner ingests their transitions in actor
/// order, so results depend only on the seed and not on thread scheduling.
TrainResult train(const TraceDataset& train_set, const TraceDataset& test_set, const SamplingPlan& plan,
                  const TrainConfig& cfg, const EnvFactory& make_env, const ProgressFn& progress = {});

/// Metrics CSV with a schema line; one column per class seen in the evaluation.
std::string metrics_csv(const TrainResult& result);

/// Slow/fast split of the sampling mass, read from ground-truth classes (reporting only).
struct WeightDirection {
  double slow_relative = 1.0;  // time-averaged f'(slow clusters) / f(slow clusters)
  double fast_relative = 1.0;
  std::size_t versions = 0;
  std::vector<bool> slow_category;  // majority class of each category is slow
};

WeightDirection weight_direction(const std::vector<WeightRecord>& history,
                                 const CategoricalDistribution& dist, const TraceDataset& train_set);

// ---- scenarios ------------------------------------------------------------------------------

struct Scenario {
  int id = 1;
  tracebench::DatasetKind train;
  tracebench::DatasetKind test;
};

/// 1: majority_fast -> majority_slow, 2: balanced -> balanced, 3: majority_slow -> majority_fast.
Scenario scenario_preset(int id);

/// Workstation-sized run: 600k env steps, 64x64 double/dueling Q network, lr 3e-4.
TrainConfig desk_train_config(std::uint64_t seed = 0);

struct ScenarioOptions {
  std::size_t train_traces = 400;
  std::size_t test_traces = 100;
  PlanConfig plan;
  TrainConfig train = desk_train_config();
};

struct ScenarioRun {
  Scenario scenario;
  TraceDataset train_set;
  TraceDataset test_set;
  SamplingPlan plan;
  TrainResult result;
};

/// Builds the scenario's datasets (seeded only by `seed`, so every sampler sees the same
/// traces), prepares the sampler and trains.
ScenarioRun run_scenario(int scenario, SamplerKind kind, std::uint64_t seed, const ScenarioOptions& opts,
                         const ProgressFn& progress = {});

/// Mean held-out return over the checkpoints in the second half of training; `slow_only`
/// restricts it to the slow classes.
double late_return(const TrainResult& result, bool slow_only = false);

}  // namespace plume
