#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "plume/error.hpp"
#include "plume/trace.hpp"

namespace fs = std::filesystem;
using namespace plume;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("plume_test_trace_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Trace series(std::string id, std::vector<double> values) {
  Trace t;
  t.id = std::move(id);
  for (std::size_t i = 0; i < values.size(); ++i) t.samples.push_back({static_cast<double>(i), values[i]});
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST(LoadDataset, ThreeTracesSortedById) {
  const auto dir = scratch_dir("three");
  TraceDataset ds;
  ds.traces = {series("c", {1, 2}), series("a", {3, 4}), series("b", {5, 6})};
  const auto manifest = save_dataset(ds, dir);
  const auto loaded = load_dataset(manifest);
  ASSERT_EQ(loaded.size(), 3u);
  EXPECT_EQ(loaded.traces[0].id, "a");
  EXPECT_EQ(loaded.traces[1].id, "b");
  EXPECT_EQ(loaded.traces[2].id, "c");
  EXPECT_EQ(loaded.at("b").samples[1].v, 6.0);
}

TEST(LoadDataset, MissingFileNamesThePath) {
  const auto dir = scratch_dir("missing");
  std::ofstream(dir / "manifest.json") << R"(["traces/nope.json"])";
  try {
    load_dataset(dir / "manifest.json");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("nope.json"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, NonMonotoneTimestampsRejected) {
  const auto dir = scratch_dir("monotone");
  fs::create_directories(dir / "traces");
  std::ofstream(dir / "traces" / "bad.json")
      << R"({"id":"bad","kind":"throughput_series","samples":[[0,1],[1,1],[1,2]],"params":{},"ground_truth_class":null})";
  std::ofstream(dir / "manifest.json") << R"(["traces/bad.json"])";
  try {
    load_dataset(dir / "manifest.json");
    FAIL() << "expected an error";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, DuplicateIdsRejected) {
  const auto dir = scratch_dir("dup");
  fs::create_directories(dir / "traces");
  const auto text = serialize_trace(series("x", {1, 2}));
  std::ofstream(dir / "traces" / "x1.json") << text;
  std::ofstream(dir / "traces" / "x2.json") << text;
  std::ofstream(dir / "manifest.json") << R"(["traces/x1.json", "traces/x2.json"])";
  EXPECT_THROW(load_dataset(dir / "manifest.json"), DatasetError);
}

TEST(Trace, InvariantViolations) {
  EXPECT_THROW(series("neg", {1, -1}).validate(), DatasetError);
  Trace empty;
  empty.id = "e";
  EXPECT_THROW(empty.validate(), DatasetError);
  Trace tuple;
  tuple.id = "p";
  tuple.kind = TraceKind::param_tuple;
  EXPECT_THROW(tuple.validate(), DatasetError);
  tuple.params["bandwidth"] = 3.0;
  EXPECT_NO_THROW(tuple.validate());
}

TEST(Serialization, RoundTripIsByteIdentical) {
  const auto dir = scratch_dir("roundtrip");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  TraceDataset ds;
  for (int i = 0; i < 5; ++i) {
    std::vector<double> v(50);
    for (auto& x : v) x = u(rng);
    auto t = series("t" + std::to_string(i), v);
    if (i % 2) t.ground_truth_class = "slow_low_var";
    ds.traces.push_back(t);
  }
  const auto m1 = save_dataset(ds, dir / "one");
  const auto loaded = load_dataset(m1);
  const auto m2 = save_dataset(loaded, dir / "two");
  for (const auto& t : ds.traces) {
    const auto name = fs::path("traces") / (t.id + ".json");
    EXPECT_EQ(slurp(dir / "one" / name), slurp(dir / "two" / name)) << t.id;
  }
  EXPECT_EQ(slurp(m1), slurp(m2));
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded.traces[i], ds.at(loaded.traces[i].id));
  }

  TraceDataset tuples;
  Trace tuple;
  tuple.id = "tuple";
  tuple.kind = TraceKind::param_tuple;
  tuple.params = {{"bandwidth", 1.0 / 3.0}, {"loss", 1e-5}};
  tuples.traces.push_back(tuple);
  const auto t1 = save_dataset(tuples, dir / "tuple_one");
  const auto t2 = save_dataset(load_dataset(t1), dir / "tuple_two");
  EXPECT_EQ(slurp(dir / "tuple_one" / "traces" / "tuple.json"), slurp(dir / "tuple_two" / "traces" / "tuple.json"));
  EXPECT_EQ(load_dataset(t2).traces.front(), tuple);
}

TEST(LoadDataset, MixedKindsRejected) {
  const auto dir = scratch_dir("mixed");
  fs::create_directories(dir / "traces");
  Trace tuple;
  tuple.id = "p";
  tuple.kind = TraceKind::param_tuple;
  tuple.params = {{"bandwidth", 2.0}};
  std::ofstream(dir / "traces" / "a.json") << serialize_trace(series("a", {1, 2}));
  std::ofstream(dir / "traces" / "p.json") << serialize_trace(tuple);
  std::ofstream(dir / "manifest.json") << R"(["traces/a.json", "traces/p.json"])";
  EXPECT_THROW(load_dataset(dir / "manifest.json"), DatasetError);
}

TEST(DiscountedReturn, Examples) {
  ReturnSpec spec;
  spec.gamma = 0.95;
  const std::vector<double> ones{1, 1};
  EXPECT_DOUBLE_EQ(discounted_return(ones, spec), 1.95);
  EXPECT_NEAR(normalize_reward(3.0, 0.01), 1.03, 1e-15);
  const std::vector<double> zeros(7, 0.0);
  EXPECT_EQ(discounted_return(zeros, spec), 0.0);
}

TEST(DiscountedReturn, NonFiniteRewardThrows) {
  ReturnSpec spec;
  const std::vector<double> bad{1.0, std::nan("")};
  EXPECT_THROW(discounted_return(bad, spec), InvalidArgument);
  const std::vector<double> inf{INFINITY};
  EXPECT_THROW(discounted_return(inf, spec), InvalidArgument);
}

TEST(DiscountedReturn, GammaLimits) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(1 + trial % 17);
    for (auto& x : r) x = u(rng);
    for (bool norm : {false, true}) {
      ReturnSpec spec;
      spec.normalize = norm;
      spec.gamma = 0.0;
      EXPECT_DOUBLE_EQ(discounted_return(r, spec), transform_reward(r[0], spec));
      spec.gamma = 1.0;
      double plain = 0.0;
      for (double x : r) plain += transform_reward(x, spec);
      EXPECT_NEAR(discounted_return(r, spec), plain, 1e-9);
    }
  }
}

TEST(DiscountedReturn, NormalizationIsOdd) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1e4);
  for (int i = 0; i < 1000; ++i) {
    const double r = u(rng);
    for (double eps : {1e-2, 1e-3, 0.5}) {
      EXPECT_DOUBLE_EQ(normalize_reward(-r, eps), -normalize_reward(r, eps));
    }
  }
}

TEST(DiscountedReturn, ClipRange) {
  ReturnSpec spec;
  spec.normalize = true;
  EXPECT_EQ(transform_reward(1e9, spec), 32.0);
  EXPECT_EQ(transform_reward(-1e9, spec), -32.0);
  spec.gamma = 1.5;
  EXPECT_THROW(spec.validate(), InvalidArgument);
}

TEST(Preprocessing, SplitIsDeterministicAndCoversFullSegments) {
  std::vector<double> v(1234);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto t = series("long", v);
  const auto a = split_trace(t, 500, 9);
  const auto b = split_trace(t, 500, 9);
  ASSERT_EQ(a, b);
  ASSERT_FALSE(a.empty());
  for (const auto& seg : a) {
    EXPECT_EQ(seg.samples.size(), 500u);
    for (std::size_t i = 1; i < seg.samples.size(); ++i) EXPECT_EQ(seg.samples[i].v, seg.samples[i - 1].v + 1);
  }
  for (std::size_t k = 1; k < a.size(); ++k) EXPECT_EQ(a[k].samples.front().v, a[k - 1].samples.back().v + 1);
  EXPECT_EQ(split_trace(series("short", {1, 2, 3}), 500, 1).size(), 1u);
}

TEST(Preprocessing, MinLengthFilter) {
  TraceDataset ds;
  ds.traces = {series("a", {1, 2}), series("b", {1, 2, 3, 4})};
  const auto f = filter_min_length(ds, 3);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f.traces[0].id, "b");
}

TEST(Preprocessing, NonUniformTraceResampledWithPreviousValue) {
  Trace t;
  t.id = "nu";
  t.samples = {{0.0, 1.0}, {1.0, 2.0}, {3.0, 3.0}, {4.0, 4.0}};
  // Median step 1: grid 0, 1, 2, 3, 4 with previous-value interpolation.
  const auto v = uniform_values(t);
  EXPECT_EQ(v, (std::vector<double>{1.0, 2.0, 2.0, 3.0, 4.0}));
  const auto u = uniform_values(series("u", {5, 6, 7}));
  EXPECT_EQ(u, (std::vector<double>{5, 6, 7}));
}

TEST(Summary, CsvHasSchemaLine) {
  TraceDataset ds;
  ds.traces = {series("a", {1, 3})};
  std::ostringstream out;
  write_summary_csv(ds, out);
  EXPECT_EQ(out.str().rfind("# schema: plume-trace-summary/1\n", 0), 0u);
  EXPECT_NE(out.str().find("a,"), std::string::npos);
}
