#include "plume/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "plume/error.hpp"
#include "plume/parallel.hpp"

namespace plume {

std::string_view to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::random: return "random";
    case SamplerKind::two_class: return "two_class";
    case SamplerKind::plume_static: return "plume_static";
    case SamplerKind::plume_dynamic: return "plume_dynamic";
  }
  return "unknown";
}

SamplerKind parse_sampler_kind(std::string_view name) {
  for (auto k : {SamplerKind::random, SamplerKind::two_class, SamplerKind::plume_static,
                 SamplerKind::plume_dynamic}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown sampler '" + std::string(name) +
                        "' (expected random, two_class, plume_static or plume_dynamic)");
}

// ---- pipeline -------------------------------------------------------------------------------

PipelineResult run_pipeline(const TraceDataset& dataset, const PipelineConfig& cfg) {
  PipelineResult out;
  out.matrix = extract_matrix(dataset, default_catalog(), cfg.jobs);
  if (cfg.skip_selection || out.matrix.cols() <= static_cast<std::size_t>(cfg.selection.min_features)) {
    out.critical = out.matrix;
  } else {
    SelectionConfig sel = cfg.selection;
    sel.seed = derive_seed(cfg.seed, "select-features");
    sel.jobs = cfg.jobs;
    out.selection = select_critical_features(out.matrix, sel);
    std::vector<std::size_t> cols;
    for (const auto& s : out.selection->final_specs) cols.push_back(*out.matrix.column_of(s));
    out.critical = out.matrix.select(cols);
  }
  SearchOptions search = cfg.search;
  search.seed = derive_seed(cfg.seed, "cluster");
  search.jobs = cfg.jobs;
  out.model = search_clustering(out.critical, search);
  out.dist = CategoricalDistribution::from_labels(out.model.trace_ids, out.model.labels);
  return out;
}

SamplingPlan make_sampling_plan(const TraceDataset& train, SamplerKind kind, const PlanConfig& cfg) {
  if (train.empty()) throw InvalidArgument("training dataset is empty");
  SamplingPlan plan;
  plan.kind = kind;
  std::vector<std::string> ids;
  for (const auto& t : train.traces) ids.push_back(t.id);
  switch (kind) {
    case SamplerKind::random:
      plan.dist = CategoricalDistribution::single(ids);
      plan.initial = WeightTable::uniform(1);
      break;
    case SamplerKind::two_class: {
      auto tc = two_class_equal_weights(train, cfg.two_class_threshold);
      plan.dist = std::move(tc.dist);
      plan.initial = std::move(tc.table);
      plan.fallback = tc.fallback;
      break;
    }
    case SamplerKind::plume_static:
    case SamplerKind::plume_dynamic: {
      plan.pipeline = run_pipeline(train, cfg.pipeline);
      plan.dist = plan.pipeline->dist;
      plan.initial = kind == SamplerKind::plume_static ? static_weights(plan.dist)
                                                       : WeightTable::uniform(plan.dist.size());
      const auto& m = plan.pipeline->critical;
      for (std::size_t r = 0; r < m.rows(); ++r) {
        const Eigen::VectorXd row = m.data.row(static_cast<Eigen::Index>(r)).transpose();
        plan.features[m.trace_ids[r]] = std::vector<double>(row.data(), row.data() + row.size());
      }
      break;
    }
  }
  return plan;
}

// ---- environments and evaluation ------------------------------------------------------------

EnvFactory abr_env_factory(std::size_t history_len) {
  return [history_len] {
    tracebench::AbrConfig cfg;
    cfg.history_len = history_len;
    return std::unique_ptr<Environment>(std::make_unique<tracebench::AbrEnv>(cfg));
  };
}

namespace {

struct Episode {
  std::vector<Transition> transitions;
  std::vector<double> raw_rewards;
};

void finish_eval(EvalResult& r, const TraceDataset& test, const std::vector<double>& returns) {
  std::map<std::string, std::pair<double, std::size_t>> by_class;
  double slow_sum = 0.0, total = 0.0;
  std::size_t slow_n = 0;
  for (std::size_t i = 0; i < returns.size(); ++i) {
    total += returns[i];
    const auto& cls = test.traces[i].ground_truth_class;
    if (!cls) continue;
    auto& acc = by_class[*cls];
    acc.first += returns[i];
    ++acc.second;
    bool slow = false;
    try {
      slow = tracebench::is_slow_class_name(*cls);
    } catch (const Error&) {
      continue;
    }
    if (slow) {
      slow_sum += returns[i];
      ++slow_n;
    }
  }
  r.episodes = returns.size();
  r.mean_return = returns.empty() ? 0.0 : total / static_cast<double>(returns.size());
  for (const auto& [cls, acc] : by_class) r.per_class[cls] = acc.first / static_cast<double>(acc.second);
  if (slow_n > 0) r.slow_return = slow_sum / static_cast<double>(slow_n);
}

}  // namespace

EvalResult evaluate(const QNetwork& network, const TraceDataset& test, const EnvFactory& make_env,
                    std::uint64_t seed, unsigned jobs) {
  std::vector<double> returns(test.size(), 0.0);
  parallel_for(test.size(), jobs, [&](std::size_t i) {
    auto env = make_env();
    auto obs = env->reset(test.traces[i], derive_seed(seed, "eval-episode", i));
    double total = 0.0;
    for (;;) {
      const auto q = network.q_values(obs);
      auto out = env->step(greedy_action(q));
      total += out.reward;
      if (out.done) break;
      obs = std::move(out.observation);
    }
    returns[i] = total;
  });
  EvalResult r;
  finish_eval(r, test, returns);
  return r;
}

// ---- training loop --------------------------------------------------------------------------

TrainResult train(const TraceDataset& train_set, const TraceDataset& test_set, const SamplingPlan& plan,
                  const TrainConfig& cfg, const EnvFactory& make_env, const ProgressFn& progress) {
  if (cfg.actors == 0) throw InvalidArgument("at least one actor is required");
  if (!(cfg.env_steps_per_learn > 0.0)) throw InvalidArgument("env_steps_per_learn must be positive");
  const std::set<std::string> held_out = [&] {
    std::set<std::string> s;
    for (const auto& t : test_set.traces) s.insert(t.id);
    return s;
  }();

  std::vector<std::unique_ptr<Environment>> envs;
  for (std::size_t a = 0; a < cfg.actors; ++a) envs.push_back(make_env());
  const std::size_t obs_size = envs.front()->observation_size();
  const int actions = envs.front()->action_count();

  AgentConfig agent_cfg = cfg.agent;
  agent_cfg.seed = derive_seed(cfg.seed, "agent");
  DqnAgent agent(obs_size, actions, agent_cfg);

  TraceSelector selector(plan.dist, plan.initial);
  std::optional<DynamicPrioritizer> prioritizer;
  if (plan.kind == SamplerKind::plume_dynamic) {
    if (plan.features.empty()) throw InvalidArgument("dynamic prioritization needs per-trace features");
    DynamicPrioritizerConfig dyn = cfg.dynamic;
    dyn.predictor.seed = derive_seed(cfg.seed, "predictor");
    prioritizer.emplace(selector, plan.features.begin()->second.size(), dyn);
  }

  ReturnSpec reward_spec;
  reward_spec.normalize = cfg.normalize_rewards;
  ReturnSpec return_spec = reward_spec;
  return_spec.gamma = cfg.agent.gamma;

  TrainResult result;
  result.dist = plan.dist;
  result.category_episodes.assign(plan.dist.size(), 0);
  Rng sampler_rng = make_rng(cfg.seed, "trace-sampler");
  const std::uint64_t eval_seed = derive_seed(cfg.seed, "evaluation");

  std::uint64_t step = 0;
  std::uint64_t next_eval = 0;
  double learn_credit = 0.0;

  auto checkpoint = [&] {
    MetricsRow row;
    row.step = step;
    row.episodes = result.episodes;
    row.learn_steps = agent.learn_steps();
    row.epsilon = agent_cfg.epsilon(step);
    row.eval = evaluate(agent.online(), test_set, make_env, eval_seed, cfg.jobs);
    row.weights_version = selector.snapshot()->version;
    result.metrics.push_back(row);
    if (progress) progress(row);
  };

  while (step < cfg.total_steps) {
    if (step >= next_eval) {
      checkpoint();
      next_eval += std::max<std::uint64_t>(1, cfg.eval_interval);
    }
    std::vector<TraceDraw> draws;
    for (std::size_t a = 0; a < cfg.actors; ++a) {
      draws.push_back(selector.sample(sampler_rng));
      if (held_out.count(draws.back().trace_id)) {
        throw Error("held-out trace '" + draws.back().trace_id + "' was drawn for training");
      }
    }
    const double eps = agent_cfg.epsilon(step);
    std::vector<Episode> episodes(cfg.actors);
    parallel_for(cfg.actors, cfg.jobs, [&](std::size_t a) {
      const std::uint64_t episode_index = result.episodes + a;
      Rng rng = make_rng(cfg.seed, "actor", episode_index);
      auto& env = *envs[a];
      auto obs = env.reset(train_set.at(draws[a].trace_id), derive_seed(cfg.seed, "episode", episode_index));
      NStepBuilder builder(agent_cfg.n_step, agent_cfg.gamma);
      for (;;) {
        const int action = agent.act(obs, eps, rng);
        auto out = env.step(action);
        episodes[a].raw_rewards.push_back(out.reward);
        auto done_now = builder.push(obs, action, transform_reward(out.reward, reward_spec),
                                     out.observation, out.done);
        for (auto& t : done_now) episodes[a].transitions.push_back(std::move(t));
        if (out.done) break;
        obs = std::move(out.observation);
      }
    });

    std::uint64_t round_steps = 0;
    for (std::size_t a = 0; a < cfg.actors; ++a) {
      auto& ep = episodes[a];
      for (auto& t : ep.transitions) agent.store(std::move(t));
      round_steps += ep.raw_rewards.size();
      result.trained_trace_ids.insert(draws[a].trace_id);
      ++result.category_episodes[draws[a].category];
      ++result.episodes;
      if (prioritizer) {
        EpisodeResult er;
        er.trace_id = draws[a].trace_id;
        er.category = draws[a].category;
        er.return_g = discounted_return(ep.raw_rewards, return_spec);
        er.features = plan.features.at(er.trace_id);
        er.step = step + round_steps;
        prioritizer->submit(std::move(er));
      }
    }
    step += round_steps;
    if (prioritizer) prioritizer->process();

    learn_credit += static_cast<double>(round_steps) / cfg.env_steps_per_learn;
    while (learn_credit >= 1.0) {
      agent.learn_step();
      learn_credit -= 1.0;
    }
  }
  checkpoint();

  result.final_eval = result.metrics.back().eval;
  result.env_steps = step;
  if (prioritizer) result.weight_history = prioritizer->history();
  result.network = agent.online();
  return result;
}

std::string metrics_csv(const TrainResult& result) {
  std::set<std::string> classes;
  for (const auto& row : result.metrics) {
    for (const auto& [cls, v] : row.eval.per_class) classes.insert(cls);
  }
  std::ostringstream out;
  out.precision(10);
  out << "# schema: plume-metrics/1\n";
  out << "step,episodes,learn_steps,epsilon,mean_return_all";
  for (const auto& c : classes) out << ",mean_return_" << c;
  out << ",weights_version\n";
  for (const auto& row : result.metrics) {
    out << row.step << ',' << row.episodes << ',' << row.learn_steps << ',' << row.epsilon << ','
        << row.eval.mean_return;
    for (const auto& c : classes) {
      auto it = row.eval.per_class.find(c);
      out << ',';
      if (it != row.eval.per_class.end()) out << it->second;
    }
    out << ',' << row.weights_version << '\n';
  }
  return out.str();
}

WeightDirection weight_direction(const std::vector<WeightRecord>& history,
                                 const CategoricalDistribution& dist, const TraceDataset& train_set) {
  WeightDirection out;
  out.slow_category.resize(dist.size());
  for (std::size_t c = 0; c < dist.size(); ++c) {
    std::size_t slow = 0, known = 0;
    for (const auto& id : dist.members[c]) {
      const auto& cls = train_set.at(id).ground_truth_class;
      if (!cls) continue;
      ++known;
      if (tracebench::is_slow_class_name(*cls)) ++slow;
    }
    out.slow_category[c] = known > 0 && 2 * slow > known;
  }
  double slow_f = 0.0;
  for (std::size_t c = 0; c < dist.size(); ++c) {
    if (out.slow_category[c]) slow_f += dist.pdf[c];
  }
  if (history.empty() || slow_f <= 0.0 || slow_f >= 1.0) return out;
  double slow_acc = 0.0, fast_acc = 0.0;
  for (const auto& rec : history) {
    WeightTable t{rec.weights, rec.version};
    const auto fp = t.effective_pdf(dist);
    double slow_fp = 0.0;
    for (std::size_t c = 0; c < dist.size(); ++c) {
      if (out.slow_category[c]) slow_fp += fp[c];
    }
    slow_acc += slow_fp / slow_f;
    fast_acc += (1.0 - slow_fp) / (1.0 - slow_f);
  }
  out.versions = history.size();
  out.slow_relative = slow_acc / static_cast<double>(history.size());
  out.fast_relative = fast_acc / static_cast<double>(history.size());
  return out;
}

Scenario scenario_preset(int id) {
  using tracebench::DatasetKind;
  switch (id) {
    case 1: return {1, DatasetKind::majority_fast, DatasetKind::majority_slow};
    case 2: return {2, DatasetKind::balanced, DatasetKind::balanced};
    case 3: return {3, DatasetKind::majority_slow, DatasetKind::majority_fast};
    default: throw InvalidArgument("scenario must be 1, 2 or 3, got " + std::to_string(id));
  }
}

TrainConfig desk_train_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.total_steps = 600000;
  cfg.eval_interval = 75000;
  cfg.env_steps_per_learn = 4.0;
  cfg.agent.hidden_sizes = {64, 64};
  cfg.agent.lr = 3e-4;
  cfg.agent.batch_size = 64;
  cfg.agent.learn_start = 2000;
  cfg.agent.target_sync_interval = 1000;
  cfg.agent.eps_anneal_steps = 50000;
  cfg.agent.double_q = true;
  cfg.agent.dueling = true;
  return cfg;
}

ScenarioRun run_scenario(int scenario, SamplerKind kind, std::uint64_t seed, const ScenarioOptions& opts,
                         const ProgressFn& progress) {
  ScenarioRun run;
  run.scenario = scenario_preset(scenario);
  run.train_set = tracebench::build_dataset(run.scenario.train, opts.train_traces,
                                            derive_seed(seed, "train-data"), tracebench::DatasetRole::train);
  run.test_set = tracebench::build_dataset(run.scenario.test, opts.test_traces,
                                           derive_seed(seed, "test-data"), tracebench::DatasetRole::test);
  PlanConfig plan_cfg = opts.plan;
  plan_cfg.pipeline.seed = seed;
  plan_cfg.pipeline.jobs = opts.train.jobs;
  run.plan = make_sampling_plan(run.train_set, kind, plan_cfg);
  TrainConfig train_cfg = opts.train;
  train_cfg.seed = seed;
  run.result = train(run.train_set, run.test_set, run.plan, train_cfg,
                     abr_env_factory(train_cfg.agent.history_len), progress);
  return run;
}

double late_return(const TrainResult& result, bool slow_only) {
  if (result.metrics.empty()) throw InvalidArgument("no evaluation checkpoints recorded");
  const std::uint64_t half = result.env_steps / 2;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& row : result.metrics) {
    if (row.step < half) continue;
    if (slow_only) {
      if (!row.eval.slow_return) continue;
      sum += *row.eval.slow_return;
    } else {
      sum += row.eval.mean_return;
    }
    ++n;
  }
  if (n == 0) throw InvalidArgument("no checkpoint carries the requested return");
  return sum / static_cast<double>(n);
}

}  // namespace plume
