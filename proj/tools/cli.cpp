#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "plume/clustering.hpp"
#include "plume/error.hpp"
#include "plume/feature_selection.hpp"
#include "plume/features.hpp"
#include "plume/load_balance.hpp"
#include "plume/prioritization.hpp"
#include "plume/tracebench.hpp"
#include "plume/training.hpp"

namespace fs = std::filesystem;

namespace plume::cli {
namespace {

struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error(what), stage(std::move(stage_name)) {}
  std::string stage;
};

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

/// Relative output paths land under $PLUME_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) {
    if (const char* root = std::getenv("PLUME_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
  }
  return path;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

struct Common {
  std::uint64_t seed = 0;
  unsigned jobs = 0;
  std::string log_level = "warn";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Master seed; every randomized stage derives from it");
  sub->add_option("--jobs", c.jobs, "Worker threads (0 = all cores)");
  sub->add_option("--log-level", c.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

struct TrainFlags {
  std::optional<std::uint64_t> steps;
  std::optional<std::uint64_t> eval_interval;
  std::optional<std::size_t> actors;
  std::optional<double> lr;
  std::vector<std::size_t> hidden;
  bool per = false;
  bool plain = false;
  std::optional<std::size_t> update_interval;
  std::optional<std::size_t> window;
  double threshold = 2.5;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--steps", f.steps, "Environment steps");
  sub->add_option("--eval-interval", f.eval_interval, "Environment steps between evaluations");
  sub->add_option("--actors", f.actors, "Concurrent actors");
  sub->add_option("--lr", f.lr, "Learner step size");
  sub->add_option("--hidden", f.hidden, "Hidden layer sizes")->expected(1, 8);
  sub->add_flag("--per", f.per, "Proportional prioritized replay");
  sub->add_flag("--plain-dqn", f.plain, "Disable the double and dueling extensions");
  sub->add_option("--update-interval", f.update_interval, "Episodes between dynamic weight updates");
  sub->add_option("--window", f.window, "Per-category result window for dynamic weights");
  sub->add_option("--two-class-threshold", f.threshold, "Mean-throughput split for two_class (MB/s)");
}

TrainConfig train_config(const TrainFlags& f, const Common& c) {
  TrainConfig cfg = desk_train_config(c.seed);
  cfg.jobs = c.jobs;
  if (f.steps) cfg.total_steps = *f.steps;
  if (f.eval_interval) cfg.eval_interval = *f.eval_interval;
  if (f.actors) cfg.actors = *f.actors;
  if (f.lr) cfg.agent.lr = *f.lr;
  if (!f.hidden.empty()) cfg.agent.hidden_sizes = f.hidden;
  cfg.agent.prioritized_replay = f.per;
  if (f.plain) cfg.agent.double_q = cfg.agent.dueling = false;
  if (f.update_interval) cfg.dynamic.update_interval = *f.update_interval;
  if (f.window) cfg.dynamic.window = *f.window;
  return cfg;
}

std::string weights_json(const TrainResult& result, const SamplingPlan& plan) {
  auto history = result.weight_history;
  if (history.empty()) {
    WeightRecord rec;
    rec.version = plan.initial.version;
    rec.weights = plan.initial.weights;
    history.push_back(std::move(rec));
  }
  return weight_history_json(history, plan.dist);
}

void write_run(const fs::path& dir, const TrainResult& result, const SamplingPlan& plan) {
  write_file(dir / "metrics.csv", metrics_csv(result));
  write_file(dir / "weights.json", weights_json(result, plan));
  std::ostringstream ckpt;
  result.network.save(ckpt);
  write_file(dir / "checkpoint.qnet", ckpt.str());
  if (plan.pipeline) {
    write_file(dir / "cluster_model.json", plan.pipeline->model.to_json());
    if (plan.pipeline->selection) write_file(dir / "selection.json", plan.pipeline->selection->to_json());
  }
}

void log_progress(const MetricsRow& row) {
  spdlog::info("step {} episodes {} mean return {:.3f}", row.step, row.episodes, row.eval.mean_return);
}

// ---- subcommands ----------------------------------------------------------------------------

struct GenTraces {
  std::string kind = "majority_fast";
  std::size_t n = 400;
  std::string role = "train";
  std::string out;
};

int gen_traces(const GenTraces& o, const Common& c, std::ostream& out) {
  TraceDataset ds = stage("generate", [&] {
    if (o.kind == "lb") {
      TraceDataset d;
      d.name = "lb-" + o.role;
      lb::LbConfig cfg;
      for (std::size_t i = 0; i < o.n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "lb-%s-%04zu", o.role.c_str(), i);
        d.traces.push_back(lb::lb_generate(cfg, derive_seed(c.seed, "lb-" + o.role, i), id));
      }
      return d;
    }
    const auto role = o.role == "test" ? tracebench::DatasetRole::test : tracebench::DatasetRole::train;
    return tracebench::build_dataset(tracebench::parse_dataset_kind(o.kind), o.n, c.seed, role);
  });
  const fs::path dir = output_path(o.out);
  const fs::path manifest = stage("write", [&] {
    const auto m = save_dataset(ds, dir);
    std::ostringstream csv;
    write_summary_csv(ds, csv);
    write_file(dir / "summary.csv", csv.str());
    return m;
  });
  out << manifest.string() << '\n';
  return 0;
}

struct ExtractFeatures {
  std::string dataset;
  std::string out;
  bool raw = false;
};

int extract_features_cmd(const ExtractFeatures& o, const Common& c, std::ostream&) {
  const auto ds = stage("load-dataset", [&] { return load_dataset(o.dataset); });
  const auto m = stage("extract-features", [&] {
    const auto catalog = default_catalog();
    return o.raw ? extract_raw_matrix(ds, catalog, c.jobs) : extract_matrix(ds, catalog, c.jobs);
  });
  stage("write", [&] {
    std::ostringstream csv;
    write_feature_csv(m, csv);
    write_file(output_path(o.out), csv.str());
  });
  return 0;
}

struct SelectFeatures {
  std::string dataset;
  std::string out;
  SelectionConfig cfg;
};

int select_features_cmd(const SelectFeatures& o, const Common& c, std::ostream& out) {
  const auto ds = stage("load-dataset", [&] { return load_dataset(o.dataset); });
  const auto m = stage("extract-features", [&] { return extract_matrix(ds, default_catalog(), c.jobs); });
  const auto report = stage("select-features", [&] {
    SelectionConfig cfg = o.cfg;
    cfg.seed = derive_seed(c.seed, "select-features");
    cfg.jobs = c.jobs;
    return select_critical_features(m, cfg);
  });
  stage("write", [&] { write_file(output_path(o.out), report.to_json()); });
  for (const auto& s : report.final_specs) out << s.name() << '\n';
  return 0;
}

struct Cluster {
  std::string features;
  std::string dataset;
  std::string out;
  int k_min = 3;
  int k_max = 7;
  int seeds_per_k = 10;
};

int cluster_cmd(const Cluster& o, const Common& c, std::ostream& out) {
  FeatureMatrix m = stage("load-features", [&] {
    if (!o.features.empty()) {
      std::ifstream f(o.features);
      if (!f) throw Error("cannot open '" + o.features + "'");
      return read_feature_csv(f);
    }
    if (o.dataset.empty()) throw InvalidArgument("either --features or --dataset is required");
    return extract_raw_matrix(load_dataset(o.dataset), default_catalog(), c.jobs);
  });
  const auto model = stage("cluster", [&] {
    if (o.k_min < 1 || o.k_max < o.k_min) throw InvalidArgument("invalid k range");
    if (static_cast<std::size_t>(o.k_max) > m.rows()) {
      throw InvalidArgument("k_range exceeds rows: k_max = " + std::to_string(o.k_max) + " but only " +
                            std::to_string(m.rows()) + " rows");
    }
    if (!m.standardized) m = standardize(std::move(m));
    SearchOptions opts;
    opts.k_min = o.k_min;
    opts.k_max = o.k_max;
    opts.seeds_per_k = o.seeds_per_k;
    opts.seed = derive_seed(c.seed, "cluster");
    opts.jobs = c.jobs;
    return search_clustering(m, opts);
  });
  stage("write", [&] { write_file(output_path(o.out), model.to_json()); });
  out << "k = " << model.k() << ", silhouette = " << model.silhouette << '\n';
  return 0;
}

struct Train {
  std::string train;
  std::string test;
  std::string sampler = "random";
  std::string out;
  TrainFlags flags;
};

int train_cmd(const Train& o, const Common& c, std::ostream& out) {
  const auto kind = stage("parse", [&] { return parse_sampler_kind(o.sampler); });
  const auto train_set = stage("load-dataset", [&] { return load_dataset(o.train); });
  const auto test_set = stage("load-dataset", [&] { return load_dataset(o.test); });
  const auto plan = stage("prepare-sampler", [&] {
    PlanConfig pc;
    pc.pipeline.seed = c.seed;
    pc.pipeline.jobs = c.jobs;
    pc.two_class_threshold = o.flags.threshold;
    return make_sampling_plan(train_set, kind, pc);
  });
  const auto result = stage("train", [&] {
    const TrainConfig cfg = train_config(o.flags, c);
    return train(train_set, test_set, plan, cfg, abr_env_factory(cfg.agent.history_len), log_progress);
  });
  stage("write", [&] { write_run(output_path(o.out), result, plan); });
  out << "final mean return " << result.final_eval.mean_return << '\n';
  return 0;
}

struct Eval {
  std::string checkpoint;
  std::string dataset;
  std::string out;
};

int eval_cmd(const Eval& o, const Common& c, std::ostream& out) {
  const auto net = stage("load-checkpoint", [&] {
    std::ifstream f(o.checkpoint, std::ios::binary);
    if (!f) throw Error("cannot open '" + o.checkpoint + "'");
    return QNetwork::load(f);
  });
  const auto ds = stage("load-dataset", [&] { return load_dataset(o.dataset); });
  const auto r = stage("evaluate", [&] {
    return evaluate(net, ds, abr_env_factory(), derive_seed(c.seed, "evaluation"), c.jobs);
  });
  std::ostringstream csv;
  csv.precision(10);
  csv << "# schema: plume-eval/1\nclass,mean_return\nall," << r.mean_return << '\n';
  for (const auto& [cls, v] : r.per_class) csv << cls << ',' << v << '\n';
  if (o.out.empty()) {
    out << csv.str();
  } else {
    stage("write", [&] { write_file(output_path(o.out), csv.str()); });
  }
  return 0;
}

struct WeightsDump {
  std::string weights;
  std::string out;
};

int weights_dump_cmd(const WeightsDump& o, const Common&, std::ostream& out) {
  const std::string csv = stage("weights-dump", [&] {
    const auto j = nlohmann::json::parse(read_file(o.weights));
    const auto pdf = j.at("pdf").get<std::vector<double>>();
    const auto cats = j.at("categories").get<std::vector<int>>();
    std::ostringstream s;
    s.precision(10);
    s << "# schema: plume-weights/1\nversion,step,episodes,category,pdf,weight,effective_pdf\n";
    for (const auto& rec : j.at("versions")) {
      const auto w = rec.at("weights").get<std::vector<double>>();
      if (w.size() != pdf.size()) throw DatasetError("weight record does not match the category count");
      double total = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) total += w[i] * pdf[i];
      for (std::size_t i = 0; i < w.size(); ++i) {
        s << rec.at("version").get<std::uint64_t>() << ',' << rec.at("step").get<std::uint64_t>() << ','
          << rec.at("episodes").get<std::size_t>() << ',' << cats[i] << ',' << pdf[i] << ',' << w[i] << ','
          << (total > 0.0 ? w[i] * pdf[i] / total : 0.0) << '\n';
      }
    }
    return s.str();
  });
  if (o.out.empty()) {
    out << csv;
  } else {
    stage("write", [&] { write_file(output_path(o.out), csv); });
  }
  return 0;
}

struct Bench {
  int scenario = 1;
  std::string sampler = "plume_static";
  std::string out;
  std::size_t train_traces = 400;
  std::size_t test_traces = 100;
  TrainFlags flags;
};

int bench_cmd(const Bench& o, const Common& c, std::ostream& out) {
  const auto kind = stage("parse", [&] { return parse_sampler_kind(o.sampler); });
  ScenarioOptions opts;
  opts.train_traces = o.train_traces;
  opts.test_traces = o.test_traces;
  opts.plan.two_class_threshold = o.flags.threshold;
  opts.train = train_config(o.flags, c);
  const auto run = stage("bench", [&] { return run_scenario(o.scenario, kind, c.seed, opts, log_progress); });
  const fs::path dir = output_path(o.out);
  stage("write", [&] {
    write_run(dir, run.result, run.plan);
    if (!run.plan.pipeline) {
      PipelineConfig pc;
      pc.seed = c.seed;
      pc.jobs = c.jobs;
      const auto p = run_pipeline(run.train_set, pc);
      write_file(dir / "cluster_model.json", p.model.to_json());
    }
    std::ostringstream train_csv, test_csv;
    write_summary_csv(run.train_set, train_csv);
    write_summary_csv(run.test_set, test_csv);
    write_file(dir / "train_summary.csv", train_csv.str());
    write_file(dir / "test_summary.csv", test_csv.str());
    nlohmann::json summary = {{"schema_version", 1},
                              {"scenario", o.scenario},
                              {"sampler", o.sampler},
                              {"seed", c.seed},
                              {"env_steps", run.result.env_steps},
                              {"episodes", run.result.episodes},
                              {"final_mean_return", run.result.final_eval.mean_return},
                              {"late_mean_return", late_return(run.result)},
                              {"category_episodes", run.result.category_episodes}};
    if (run.result.final_eval.slow_return) {
      summary["final_slow_return"] = *run.result.final_eval.slow_return;
      summary["late_slow_return"] = late_return(run.result, true);
    }
    write_file(dir / "summary.json", summary.dump(2) + "\n");
  });
  out << "late mean return " << late_return(run.result) << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prioritized trace sampling toolkit", "plume"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  GenTraces gen;
  auto* gen_cmd = app.add_subcommand("gen-traces", "Generate a TraceBench or load-balancing dataset");
  add_common(gen_cmd, common);
  gen_cmd->add_option("--kind", gen.kind, "majority_fast, balanced, majority_slow or lb")
      ->check(CLI::IsMember({"majority_fast", "balanced", "majority_slow", "lb"}));
  gen_cmd->add_option("--n", gen.n, "Number of traces");
  gen_cmd->add_option("--role", gen.role, "train or test")->check(CLI::IsMember({"train", "test"}));
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  ExtractFeatures ext;
  auto* ext_cmd = app.add_subcommand("extract-features", "Write the feature matrix of a dataset as CSV");
  add_common(ext_cmd, common);
  ext_cmd->add_option("--dataset", ext.dataset, "Manifest path")->required();
  ext_cmd->add_option("--out", ext.out, "CSV path")->required();
  ext_cmd->add_flag("--raw", ext.raw, "Skip standardization");

  SelectFeatures sel;
  auto* sel_cmd = app.add_subcommand("select-features", "Identify critical features");
  add_common(sel_cmd, common);
  sel_cmd->add_option("--dataset", sel.dataset, "Manifest path")->required();
  sel_cmd->add_option("--out", sel.out, "Report JSON path")->required();
  sel_cmd->add_option("--initial-clusters", sel.cfg.initial_cluster_count);
  sel_cmd->add_option("--cluster-growth", sel.cfg.cluster_growth);
  sel_cmd->add_option("--elimination-fraction", sel.cfg.elimination_fraction);
  sel_cmd->add_option("--min-features", sel.cfg.min_features);
  sel_cmd->add_option("--ig-threshold", sel.cfg.ig_threshold);
  sel_cmd->add_option("--tree-depth", sel.cfg.tree_max_depth);

  Cluster clu;
  auto* clu_cmd = app.add_subcommand("cluster", "Fit the GMM cluster model");
  add_common(clu_cmd, common);
  auto* feat_opt = clu_cmd->add_option("--features", clu.features, "Feature CSV");
  clu_cmd->add_option("--dataset", clu.dataset, "Manifest path (features extracted on the fly)")
      ->excludes(feat_opt);
  clu_cmd->add_option("--out", clu.out, "Model JSON path")->required();
  clu_cmd->add_option("--k-min", clu.k_min);
  clu_cmd->add_option("--k-max", clu.k_max);
  clu_cmd->add_option("--seeds-per-k", clu.seeds_per_k);

  Train tr;
  auto* tr_cmd = app.add_subcommand("train", "Train an agent on a dataset with a trace sampler");
  add_common(tr_cmd, common);
  tr_cmd->add_option("--train", tr.train, "Training manifest")->required();
  tr_cmd->add_option("--test", tr.test, "Held-out manifest")->required();
  tr_cmd->add_option("--sampler", tr.sampler, "random, two_class, plume_static or plume_dynamic");
  tr_cmd->add_option("--out", tr.out, "Run directory")->required();
  add_train_flags(tr_cmd, tr.flags);

  Eval ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint greedily on a dataset");
  add_common(ev_cmd, common);
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "Q-network checkpoint")->required();
  ev_cmd->add_option("--dataset", ev.dataset, "Manifest path")->required();
  ev_cmd->add_option("--out", ev.out, "CSV path (stdout when omitted)");

  WeightsDump wd;
  auto* wd_cmd = app.add_subcommand("weights-dump", "Tidy CSV of a run's weight versions");
  add_common(wd_cmd, common);
  wd_cmd->add_option("--weights", wd.weights, "weights.json of a run")->required();
  wd_cmd->add_option("--out", wd.out, "CSV path (stdout when omitted)");

  Bench be;
  auto* be_cmd = app.add_subcommand("bench", "Run a TraceBench scenario end to end");
  add_common(be_cmd, common);
  be_cmd->add_option("--scenario", be.scenario, "1, 2 or 3")->check(CLI::Range(1, 3));
  be_cmd->add_option("--sampler", be.sampler, "random, two_class, plume_static or plume_dynamic");
  be_cmd->add_option("--out", be.out, "Run directory")->required();
  be_cmd->add_option("--train-traces", be.train_traces);
  be_cmd->add_option("--test-traces", be.test_traces);
  add_train_flags(be_cmd, be.flags);

  std::vector<const char*> argv{"plume"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "plume: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  spdlog::set_level(spdlog::level::from_str(common.log_level));
  try {
    if (*gen_cmd) return gen_traces(gen, common, out);
    if (*ext_cmd) return extract_features_cmd(ext, common, out);
    if (*sel_cmd) return select_features_cmd(sel, common, out);
    if (*clu_cmd) return cluster_cmd(clu, common, out);
    if (*tr_cmd) return train_cmd(tr, common, out);
    if (*ev_cmd) return eval_cmd(ev, common, out);
    if (*wd_cmd) return weights_dump_cmd(wd, common, out);
    if (*be_cmd) return bench_cmd(be, common, out);
  } catch (const StageError& e) {
    err << "plume: " << e.stage << " failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "plume: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace plume::cli
