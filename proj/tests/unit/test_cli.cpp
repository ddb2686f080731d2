#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = plume::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("plume_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string gen(const fs::path& dir, const std::string& kind, int n, const std::string& role = "train") {
  const auto r = run({"gen-traces", "--kind", kind, "--n", std::to_string(n), "--role", role, "--out", dir.string(),
                      "--seed", "3"});
  EXPECT_EQ(r.code, 0) << r.err;
  return (dir / "manifest.json").string();
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  const auto r = run({"gen-traces", "--kind", "balanced", "--bogus", "1", "--out", "x"});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run({"bench", "--scenario", "4", "--out", "x"}).code, 2);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("bench"), std::string::npos);
}

TEST(Cli, StageFailureExitsOne) {
  const auto dir = scratch("stage");
  const auto r = run({"extract-features", "--dataset", (dir / "missing.json").string(), "--out",
                      (dir / "f.csv").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing.json"), std::string::npos) << r.err;
}

TEST(Cli, ClusterRejectsKRangeBeyondRows) {
  const auto dir = scratch("krange");
  const auto manifest = gen(dir / "data", "balanced", 4);
  const auto r = run({"cluster", "--dataset", manifest, "--out", (dir / "m.json").string(), "--k-min", "3",
                      "--k-max", "7"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("k_range exceeds rows"), std::string::npos) << r.err;
}

TEST(Cli, FeatureAndClusterStages) {
  const auto dir = scratch("stages");
  const auto manifest = gen(dir / "data", "balanced", 60);
  EXPECT_TRUE(fs::exists(dir / "data" / "summary.csv"));
  ASSERT_EQ(run({"extract-features", "--dataset", manifest, "--out", (dir / "f.csv").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "f.csv").rfind("# schema: plume-features/1", 0), 0u);
  const auto sel = run({"select-features", "--dataset", manifest, "--out", (dir / "sel.json").string()});
  ASSERT_EQ(sel.code, 0) << sel.err;
  EXPECT_FALSE(sel.out.empty());
  const auto clu = run({"cluster", "--features", (dir / "f.csv").string(), "--out", (dir / "m.json").string(),
                        "--seeds-per-k", "2"});
  ASSERT_EQ(clu.code, 0) << clu.err;
  EXPECT_NE(clu.out.find("k = "), std::string::npos);
}

TEST(Cli, TrainEvalAndWeightsDump) {
  const auto dir = scratch("train");
  const auto train = gen(dir / "train", "majority_fast", 40);
  const auto test = gen(dir / "test", "majority_slow", 8, "test");
  const auto r = run({"train", "--train", train, "--test", test, "--sampler", "plume_dynamic", "--out",
                      (dir / "run").string(), "--steps", "3000", "--eval-interval", "1500", "--hidden", "16",
                      "--update-interval", "4", "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"metrics.csv", "weights.json", "checkpoint.qnet", "cluster_model.json"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  const auto ev = run({"eval", "--checkpoint", (dir / "run" / "checkpoint.qnet").string(), "--dataset", test});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(ev.out.rfind("# schema: plume-eval/1", 0), 0u);
  const auto wd = run({"weights-dump", "--weights", (dir / "run" / "weights.json").string()});
  ASSERT_EQ(wd.code, 0) << wd.err;
  EXPECT_EQ(wd.out.rfind("# schema: plume-weights/1", 0), 0u);
}

TEST(Cli, BenchArtifactsAreReproducible) {
  const auto dir = scratch("bench");
  auto bench = [&](const std::string& out) {
    return run({"bench", "--scenario", "1", "--sampler", "plume_static", "--out", (dir / out).string(),
                "--train-traces", "40", "--test-traces", "8", "--steps", "2000", "--eval-interval", "1000",
                "--hidden", "16", "--seed", "4", "--jobs", "2"});
  };
  const auto a = bench("a");
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = bench("b");
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"metrics.csv", "weights.json", "cluster_model.json", "train_summary.csv",
                        "test_summary.csv", "summary.json", "checkpoint.qnet"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST(Cli, OutputRootPrefixesRelativePaths) {
  const auto dir = scratch("root");
  ::setenv("PLUME_OUTPUT_ROOT", dir.string().c_str(), 1);
  const auto r = run({"gen-traces", "--kind", "balanced", "--n", "8", "--out", "rel"});
  ::unsetenv("PLUME_OUTPUT_ROOT");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "rel" / "manifest.json"));
}

TEST(Cli, SeedAcceptedEverywhere) {
  for (const char* sub : {"gen-traces", "extract-features", "select-features", "cluster", "train", "eval",
                          "weights-dump", "bench"}) {
    const auto r = run({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--seed"), std::string::npos) << sub;
  }
}
