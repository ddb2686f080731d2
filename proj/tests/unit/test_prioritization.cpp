#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "plume/error.hpp"
#include "plume/prioritization.hpp"
#include "plume/tracebench.hpp"

using namespace plume;

namespace {

std::vector<std::string> ids(std::size_t n, const std::string& prefix = "t") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(1000 + i));
  return out;
}

CategoricalDistribution dist_from_counts(const std::vector<std::size_t>& counts) {
  std::vector<std::string> trace_ids;
  std::vector<int> labels;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      trace_ids.push_back("c" + std::to_string(c) + "_" + std::to_string(i));
      labels.push_back(static_cast<int>(c));
    }
  }
  return CategoricalDistribution::from_labels(trace_ids, labels);
}

/// Distribution with arbitrary real pdf entries (members are placeholders).
CategoricalDistribution dist_from_pdf(const std::vector<double>& pdf) {
  CategoricalDistribution d;
  for (std::size_t c = 0; c < pdf.size(); ++c) {
    d.categories.push_back(static_cast<int>(c));
    d.pdf.push_back(pdf[c]);
    d.members.push_back({"m" + std::to_string(c) + "a", "m" + std::to_string(c) + "b"});
  }
  return d;
}

std::vector<double> random_pdf(std::mt19937_64& rng, std::size_t k) {
  std::uniform_real_distribution<double> u(1e-4, 1.0);
  std::vector<double> p(k);
  for (auto& x : p) x = u(rng);
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& x : p) x /= s;
  return p;
}

struct ConstantModel final : ReturnModel {
  double value = 0.0;
  bool is_trained = true;
  double predict(std::span<const double>) const override { return value; }
  bool trained() const override { return is_trained; }
};

std::deque<EpisodeResult> window(std::size_t category, const std::vector<double>& returns) {
  std::deque<EpisodeResult> w;
  for (double g : returns) w.push_back({"x", category, g, {0.0}, 0});
  return w;
}

Trace flat_trace(const std::string& id, double level) {
  Trace t;
  t.id = id;
  for (int i = 0; i < 5; ++i) t.samples.push_back({static_cast<double>(i), level});
  return t;
}

}  // namespace

TEST(CategoricalDistribution, FromLabels) {
  const auto d = dist_from_counts({1, 4});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_DOUBLE_EQ(d.pdf[0], 0.2);
  EXPECT_DOUBLE_EQ(d.pdf[1], 0.8);
  EXPECT_EQ(d.trace_count(), 5u);
  EXPECT_EQ(d.category_of("c1_3"), 1u);
  EXPECT_FALSE(d.category_of("nope").has_value());
  EXPECT_NO_THROW(d.validate());
}

TEST(StaticWeights, WorkedExample) {
  const auto d = dist_from_counts({1, 4});
  const auto w = static_weights(d);
  EXPECT_DOUBLE_EQ(w.weights[0], 5.0);
  EXPECT_DOUBLE_EQ(w.weights[1], 1.25);
  const auto fp = w.effective_pdf(d);
  EXPECT_DOUBLE_EQ(fp[0], 0.5);
  EXPECT_DOUBLE_EQ(fp[1], 0.5);
}

TEST(StaticWeights, UniformIsAFixedPoint) {
  const auto d = dist_from_counts({3, 3, 3, 3});
  const auto w = static_weights(d);
  for (double x : w.weights) EXPECT_DOUBLE_EQ(x, 4.0);
  for (double x : w.effective_pdf(d)) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(StaticWeights, EffectivePdfUniformOnRandomDistributions) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = dist_from_pdf(random_pdf(rng, 7));
    const auto fp = static_weights(d).effective_pdf(d);
    for (double x : fp) EXPECT_NEAR(x, 1.0 / 7.0, 1e-12);
  }
}

TEST(StaticWeights, EmptyCategoryExcluded) {
  const auto d = dist_from_pdf({0.5, 0.0, 0.5});
  const auto w = static_weights(d);
  EXPECT_EQ(w.weights[1], 0.0);
  const auto fp = w.effective_pdf(d);
  EXPECT_DOUBLE_EQ(fp[0], 0.5);
  EXPECT_DOUBLE_EQ(fp[1], 0.0);
}

TEST(UniformWeights, DensityRatioFollowsTheData) {
  for (double L : {10.0, 100.0, 1000.0}) {
    const auto d = dist_from_pdf({1.0 / (1.0 + L), L / (1.0 + L)});
    const auto plain = WeightTable::uniform(2).effective_pdf(d);
    EXPECT_NEAR(plain[1] / plain[0], L, 1e-12 * L);
    const auto fixed = static_weights(d).effective_pdf(d);
    EXPECT_NEAR(fixed[1] / fixed[0], 1.0, 1e-12);
  }
}

TEST(WeightTable, Validation) {
  const auto d = dist_from_counts({1, 1});
  WeightTable w;
  w.weights = {1.0};
  EXPECT_THROW(w.validate(d), InvalidArgument);
  w.weights = {-1.0, 1.0};
  EXPECT_THROW(w.validate(d), InvalidArgument);
  w.weights = {0.0, 0.0};
  EXPECT_THROW(w.validate(d), InvalidArgument);
  w.weights = {NAN, 1.0};
  EXPECT_THROW(w.validate(d), InvalidArgument);
}

TEST(TwoClass, NinetyTenSplit) {
  TraceDataset ds;
  for (int i = 0; i < 90; ++i) ds.traces.push_back(flat_trace("f" + std::to_string(i), 6.0));
  for (int i = 0; i < 10; ++i) ds.traces.push_back(flat_trace("s" + std::to_string(i), 1.0));
  const auto tc = two_class_equal_weights(ds, 2.5);
  EXPECT_FALSE(tc.fallback);
  const auto fp = tc.table.effective_pdf(tc.dist);
  EXPECT_DOUBLE_EQ(fp[0], 0.5);
  EXPECT_DOUBLE_EQ(fp[1], 0.5);
  // Per-trace probability: slow 0.5 / 10, fast 0.5 / 90.
  EXPECT_DOUBLE_EQ(fp[0] / static_cast<double>(tc.dist.members[0].size()), 1.0 / 20.0);
  EXPECT_DOUBLE_EQ(fp[1] / static_cast<double>(tc.dist.members[1].size()), 1.0 / 180.0);
}

TEST(TwoClass, OneClassFallsBackToRandom) {
  TraceDataset ds;
  for (int i = 0; i < 5; ++i) ds.traces.push_back(flat_trace("f" + std::to_string(i), 6.0));
  const auto tc = two_class_equal_weights(ds, 2.5);
  EXPECT_TRUE(tc.fallback);
  ASSERT_EQ(tc.dist.size(), 1u);
  EXPECT_EQ(tc.dist.members[0].size(), 5u);
}

TEST(TwoClass, TraceBenchSplitMatchesGeneratorSpeed) {
  const auto ds = tracebench::build_dataset(tracebench::DatasetKind::balanced, 200, 4);
  const auto tc = two_class_equal_weights(ds, 2.5);
  for (std::size_t c = 0; c < 2; ++c) {
    for (const auto& id : tc.dist.members[c]) {
      EXPECT_EQ(tracebench::is_slow_class_name(*ds.at(id).ground_truth_class), c == 0) << id;
    }
  }
}

TEST(DynamicWeights, SymmetricCategoriesGetEqualWeights) {
  const auto d = dist_from_counts({2, 2, 2});
  ConstantModel model;
  std::vector<std::deque<EpisodeResult>> w{window(0, {1, 2}), window(1, {2, 1}), window(2, {1.5, 1.5})};
  const auto t = update_dynamic_weights(model, d, w, 4);
  EXPECT_EQ(t.version, 5u);
  for (double x : t.weights) EXPECT_NEAR(x, 1.0, 1e-12);
}

TEST(DynamicWeights, LowerReturnGetsMoreWeight) {
  const auto d = dist_from_counts({2, 2, 2});
  ConstantModel model;
  model.is_trained = false;  // isolate the return term
  std::vector<std::deque<EpisodeResult>> w{window(0, {5, 5}), window(1, {1, 1}), window(2, {3, 3})};
  DynamicTerms terms;
  const auto t = update_dynamic_weights(model, d, w, 0, {}, &terms);
  EXPECT_TRUE(terms.predictor_untrained);
  EXPECT_GT(t.weights[1], t.weights[2]);
  EXPECT_GT(t.weights[2], t.weights[0]);
  EXPECT_NEAR(std::accumulate(t.weights.begin(), t.weights.end(), 0.0), 3.0, 1e-12);
  // Min-max normalized return term is 0, 1, 0.5; W = term + w_min, then scaled to mean 1.
  const double s = (0.05 + 1.05 + 0.55) / 3.0;
  EXPECT_NEAR(t.weights[0], 0.05 / s, 1e-12);
  EXPECT_NEAR(t.weights[1], 1.05 / s, 1e-12);
}

TEST(DynamicWeights, LargerPredictionErrorGetsMoreWeight) {
  const auto d = dist_from_counts({2, 2});
  ConstantModel model;
  model.value = 0.0;
  // Equal mean return, different spread: errors around the constant prediction differ.
  std::vector<std::deque<EpisodeResult>> w{window(0, {-1, 1}), window(1, {-4, 4})};
  DynamicTerms terms;
  const auto t = update_dynamic_weights(model, d, w, 0, {}, &terms);
  EXPECT_DOUBLE_EQ(terms.prediction_error[0], 1.0);
  EXPECT_DOUBLE_EQ(terms.prediction_error[1], 4.0);
  EXPECT_GT(t.weights[1], t.weights[0]);
}

TEST(DynamicWeights, InvariantToReturnScale) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto d = dist_from_counts({2, 2, 2, 2});
  ConstantModel model;
  std::vector<std::deque<EpisodeResult>> a, b;
  for (std::size_t c = 0; c < 4; ++c) {
    std::vector<double> r;
    for (int i = 0; i < 10; ++i) r.push_back(g(rng) + static_cast<double>(c));
    a.push_back(window(c, r));
    for (auto& x : r) x *= 7.5;
    b.push_back(window(c, r));
  }
  const auto ta = update_dynamic_weights(model, d, a, 0);
  const auto tb = update_dynamic_weights(model, d, b, 0);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(ta.weights[c], tb.weights[c], 1e-12);
}

TEST(DynamicWeights, ColdCategoryUsesGlobalMean) {
  const auto d = dist_from_counts({2, 2});
  ConstantModel model;
  std::vector<std::deque<EpisodeResult>> w{window(0, {1, 3}), {}};
  DynamicTerms terms;
  update_dynamic_weights(model, d, w, 0, {}, &terms);
  EXPECT_TRUE(terms.cold[1]);
  EXPECT_DOUBLE_EQ(terms.negative_return[1], terms.negative_return[0]);
  std::vector<std::deque<EpisodeResult>> none{{}, {}};
  EXPECT_THROW(update_dynamic_weights(model, d, none, 0), InvalidArgument);
}

TEST(SampleTrace, FrequenciesMatchEffectivePdf) {
  std::mt19937_64 gen(9);
  for (int table = 0; table < 5; ++table) {
    const auto d = dist_from_pdf(random_pdf(gen, 2 + static_cast<std::size_t>(table)));
    WeightTable w;
    std::uniform_real_distribution<double> u(0.1, 3.0);
    for (std::size_t c = 0; c < d.size(); ++c) w.weights.push_back(u(gen));
    const auto fp = w.effective_pdf(d);
    Rng rng(static_cast<std::uint64_t>(table));
    const int n = 100000;
    std::vector<int> counts(d.size(), 0);
    for (int i = 0; i < n; ++i) ++counts[sample_trace(w, d, rng).category];
    for (std::size_t c = 0; c < d.size(); ++c) {
      const double sigma = std::sqrt(n * fp[c] * (1.0 - fp[c]));
      EXPECT_LE(std::abs(counts[c] - n * fp[c]), 4.0 * sigma) << "table " << table << " category " << c;
    }
  }
}

TEST(SampleTrace, ZeroWeightNeverDrawnAndMembersUniform) {
  const auto d = dist_from_counts({3, 2});
  WeightTable w;
  w.weights = {0.0, 1.0};
  Rng rng(1);
  std::map<std::string, int> hits;
  for (int i = 0; i < 20000; ++i) {
    const auto draw = sample_trace(w, d, rng);
    ASSERT_EQ(draw.category, 1u);
    ++hits[draw.trace_id];
  }
  ASSERT_EQ(hits.size(), 2u);
  for (const auto& [id, n] : hits) EXPECT_NEAR(n, 10000, 4.0 * std::sqrt(20000 * 0.25)) << id;
}

TEST(SampleTrace, SingleCategory) {
  const auto all = ids(7);
  const auto d = CategoricalDistribution::single(all);
  Rng rng(2);
  const auto draw = sample_trace(WeightTable::uniform(1), d, rng);
  EXPECT_EQ(draw.category, 0u);
  EXPECT_NE(std::find(all.begin(), all.end(), draw.trace_id), all.end());
}

TEST(ReturnPredictor, LearnsALinearTarget) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> g(0.0, 1.0);
  PredictorConfig cfg;
  cfg.seed = 3;
  cfg.capacity_per_category = 1000;
  ReturnPredictor p(3, 2, cfg);
  std::vector<double> targets;
  for (int i = 0; i < 2000; ++i) {
    EpisodeResult r;
    r.category = static_cast<std::size_t>(i % 2);
    r.features = {g(gen), g(gen), g(gen)};
    r.return_g = 2.0 * r.features[0] - r.features[1] + 0.5 * r.features[2] + 10.0;
    targets.push_back(r.return_g);
    p.observe(r);
  }
  Rng rng(4);
  for (int s = 0; s < 2000; ++s) ASSERT_TRUE(p.train_step(64, rng).has_value());
  const double n = static_cast<double>(targets.size());
  double mean = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
  double var = 0.0;
  for (double t : targets) var += (t - mean) * (t - mean);
  const double sd = std::sqrt(var / n);
  double mae = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> x{g(gen), g(gen), g(gen)};
    mae += std::abs(p.predict(x) - (2.0 * x[0] - x[1] + 0.5 * x[2] + 10.0));
  }
  EXPECT_LT(mae / 200.0, 0.05 * sd);
}

TEST(ReturnPredictor, ConstantTarget) {
  ReturnPredictor p(2, 1);
  for (int i = 0; i < 100; ++i) p.observe({"x", 0, 3.5, {0.01 * i, -0.02 * i}, 0});
  Rng rng(1);
  double loss = 1.0;
  for (int s = 0; s < 2000; ++s) loss = *p.train_step(32, rng);
  EXPECT_LT(loss, 1e-4);
  EXPECT_NEAR(p.predict(std::vector<double>{0.5, -1.0}), 3.5, 1e-2);
}

TEST(ReturnPredictor, EmptyBufferIsANoOp) {
  ReturnPredictor p(2, 2);
  Rng rng(1);
  EXPECT_FALSE(p.train_step(8, rng).has_value());
  EXPECT_FALSE(p.trained());
  EXPECT_EQ(p.steps(), 0u);
}

TEST(ReturnPredictor, BuffersAreBoundedFifo) {
  PredictorConfig cfg;
  cfg.capacity_per_category = 5;
  ReturnPredictor p(1, 2, cfg);
  for (int i = 0; i < 12; ++i) p.observe({"x", 1, 1.0, {1.0}, 0});
  EXPECT_EQ(p.buffered(1), 5u);
  EXPECT_EQ(p.buffered(0), 0u);
  EXPECT_EQ(p.buffered(), 5u);
}

TEST(ReturnPredictor, SaveLoadRoundTrip) {
  ReturnPredictor p(2, 1);
  for (int i = 0; i < 50; ++i) p.observe({"x", 0, 0.3 * i, {0.1 * i, 1.0}, 0});
  Rng rng(1);
  for (int s = 0; s < 20; ++s) p.train_step(16, rng);
  std::stringstream buf;
  p.save(buf);
  const auto q = ReturnPredictor::load(buf);
  const std::vector<double> x{0.7, -0.3};
  EXPECT_EQ(q.predict(x), p.predict(x));
  EXPECT_TRUE(q.trained());
}

TEST(WeightBoard, VersionsIncreaseAndReadsNeverTear) {
  WeightBoard board(WeightTable::uniform(4, 0));
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    std::uint64_t last = 0;
    while (!stop) {
      const auto snap = board.snapshot();
      if (snap->version < last) ++bad;
      last = snap->version;
      // Every published table holds its version in all four slots.
      for (double w : snap->weights) {
        if (snap->version > 0 && w != static_cast<double>(snap->version)) ++bad;
      }
    }
  });
  for (std::uint64_t v = 1; v <= 2000; ++v) {
    WeightTable t;
    t.version = v;
    t.weights.assign(4, static_cast<double>(v));
    board.publish(t);
  }
  stop = true;
  reader.join();
  EXPECT_EQ(bad.load(), 0);
  EXPECT_EQ(board.snapshot()->version, 2000u);
  WeightTable stale = WeightTable::uniform(4, 2000);
  EXPECT_THROW(board.publish(stale), InvalidArgument);
}

TEST(MpscQueue, KeepsPerProducerOrder) {
  MpscQueue<std::pair<int, int>> q;
  std::vector<std::thread> producers;
  for (int p = 0; p < 4; ++p) {
    producers.emplace_back([&q, p] {
      for (int i = 0; i < 500; ++i) q.push({p, i});
    });
  }
  for (auto& t : producers) t.join();
  const auto items = q.drain();
  ASSERT_EQ(items.size(), 2000u);
  std::vector<int> next(4, 0);
  for (const auto& [p, i] : items) EXPECT_EQ(i, next[static_cast<std::size_t>(p)]++);
  EXPECT_EQ(q.size(), 0u);
}

TEST(DynamicPrioritizer, ColdStartThenEveryInterval) {
  const auto d = dist_from_counts({2, 2});
  TraceSelector selector(d, WeightTable::uniform(2));
  DynamicPrioritizerConfig cfg;
  cfg.update_interval = 4;
  cfg.window = 8;
  cfg.cold_start_intervals = 3;
  cfg.predictor_batch = 4;
  DynamicPrioritizer prio(selector, 1, cfg);
  std::vector<std::size_t> published_at;
  for (std::size_t e = 1; e <= 30; ++e) {
    const std::size_t c = e % 2;
    prio.submit({d.members[c][0], c, c == 0 ? -1.0 : 1.0, {static_cast<double>(c)}, e});
    if (prio.process()) published_at.push_back(e);
  }
  EXPECT_EQ(published_at, (std::vector<std::size_t>{12, 16, 20, 24, 28}));
  ASSERT_EQ(prio.history().size(), 5u);
  for (std::size_t i = 0; i < prio.history().size(); ++i) EXPECT_EQ(prio.history()[i].version, i + 1);
  EXPECT_EQ(selector.snapshot()->version, 5u);
  // The low-return category ends up with more weight.
  EXPECT_GT(selector.snapshot()->weights[0], selector.snapshot()->weights[1]);
  const auto json = weight_history_json(prio.history(), d, {"slow", "fast"});
  EXPECT_NE(json.find("\"versions\""), std::string::npos);
  EXPECT_NE(json.find("\"slow\""), std::string::npos);
}
