#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "plume/error.hpp"
#include "plume/feature_selection.hpp"
#include "plume/tracebench.hpp"
#include "synthetic.hpp"

using namespace plume;

TEST(InformationGain, PerfectSplit) {
  const std::vector<int> labels{0, 0, 1, 1};
  const std::vector<double> col{1, 1, 9, 9};
  const auto ig = information_gain(labels, col, 3);
  EXPECT_DOUBLE_EQ(ig.value, 1.0);
  EXPECT_DOUBLE_EQ(ig.label_entropy, 1.0);
  EXPECT_FALSE(ig.degenerate);
}

TEST(InformationGain, UninformativeFeature) {
  const std::vector<int> labels{0, 1, 0, 1};
  const std::vector<double> col{5, 5, 5, 5};
  EXPECT_EQ(information_gain(labels, col, 3).value, 0.0);
}

TEST(InformationGain, SingleLabelIsDegenerate) {
  const std::vector<int> labels{2, 2, 2};
  const std::vector<double> col{1, 2, 3};
  const auto ig = information_gain(labels, col, 3);
  EXPECT_TRUE(ig.degenerate);
  EXPECT_EQ(ig.value, 0.0);
}

TEST(InformationGain, InputErrors) {
  const std::vector<int> labels{0, 1};
  const std::vector<double> col{1.0};
  EXPECT_THROW(information_gain(labels, col, 3), InvalidArgument);
}

TEST(InformationGain, DepthOneMatchesExhaustiveThresholdOracle) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> labels;
    std::vector<double> col;
    for (int i = 0; i < 150; ++i) {
      const int c = i % 3;
      labels.push_back(c);
      // Clusters 1 and 2 overlap on this feature, cluster 0 sits apart.
      col.push_back(c == 0 ? -3.0 + g(rng) : 0.5 * c + g(rng));
    }
    const double expected = oracle::best_threshold_gain(labels, col);
    EXPECT_NEAR(information_gain(labels, col, 1).value, expected, 1e-9);
  }
}

TEST(InformationGain, BoundedByLabelEntropyAndMonotoneInDepth) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> labels;
    std::vector<double> col;
    for (int i = 0; i < 120; ++i) {
      labels.push_back(i % 4);
      col.push_back(0.7 * (i % 4) + g(rng));
    }
    double prev = 0.0;
    for (int depth = 1; depth <= 5; ++depth) {
      const auto ig = information_gain(labels, col, depth);
      EXPECT_GE(ig.value, 0.0);
      EXPECT_LE(ig.value, ig.label_entropy + 1e-12);
      EXPECT_GE(ig.value, prev - 1e-12);
      prev = ig.value;
    }
  }
}

TEST(InformationGain, InvariantUnderMonotoneTransforms) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<int> labels;
  std::vector<double> col, cubed, shifted, exped;
  for (int i = 0; i < 200; ++i) {
    labels.push_back(i % 3);
    const double v = (i % 3) + g(rng);
    col.push_back(v);
    cubed.push_back(v * v * v);
    shifted.push_back(4.0 * v - 7.0);
    exped.push_back(std::exp(v));
  }
  const double base = information_gain(labels, col, 3).value;
  EXPECT_NEAR(information_gain(labels, cubed, 3).value, base, 1e-12);
  EXPECT_NEAR(information_gain(labels, shifted, 3).value, base, 1e-12);
  EXPECT_NEAR(information_gain(labels, exped, 3).value, base, 1e-12);
}

TEST(SelectCriticalFeatures, RecoversInformativeColumns) {
  int successes = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto data = synthetic::blob_matrix(seed);
    SelectionConfig cfg;
    cfg.seed = seed;
    const auto report = select_critical_features(data.matrix, cfg);
    std::size_t informative = 0;
    for (std::size_t c : synthetic::informative_columns()) {
      const auto& spec = default_catalog()[c];
      if (std::find(report.final_specs.begin(), report.final_specs.end(), spec) != report.final_specs.end()) {
        ++informative;
      }
    }
    const std::size_t noise = report.final_specs.size() - informative;
    if (informative == 3 && noise <= 2) ++successes;
  }
  EXPECT_GE(successes, 2);
}

TEST(SelectCriticalFeatures, FloorCaseReturnsEverythingInOneRound) {
  const auto data = synthetic::blob_matrix(3, 100);
  const std::vector<std::size_t> cols{5, 9};
  const auto two = data.matrix.select(cols);
  SelectionConfig cfg;
  cfg.min_features = 2;
  const auto report = select_critical_features(two, cfg);
  EXPECT_EQ(report.rounds.size(), 1u);
  EXPECT_EQ(report.final_specs, two.specs);
}

TEST(SelectCriticalFeatures, RoundsShrinkAndTerminateWithinBound) {
  const auto data = synthetic::blob_matrix(4);
  SelectionConfig cfg;
  cfg.ig_threshold = 10.0;  // never satisfied: runs to the floor
  const auto report = select_critical_features(data.matrix, cfg);
  for (std::size_t r = 1; r < report.rounds.size(); ++r) {
    EXPECT_LT(report.rounds[r].specs.size(), report.rounds[r - 1].specs.size());
    EXPECT_EQ(report.rounds[r].cluster_count, report.rounds[r - 1].cluster_count + cfg.cluster_growth);
  }
  EXPECT_EQ(report.final_specs.size(), static_cast<std::size_t>(cfg.min_features));
  const double bound =
      std::ceil(std::log(17.0 / cfg.min_features) / std::log(1.0 / (1.0 - cfg.elimination_fraction))) + 1.0;
  EXPECT_LE(static_cast<double>(report.rounds.size()), bound);
}

TEST(SelectCriticalFeatures, Deterministic) {
  const auto data = synthetic::blob_matrix(9);
  SelectionConfig cfg;
  cfg.seed = 77;
  EXPECT_EQ(select_critical_features(data.matrix, cfg).to_json(),
            select_critical_features(data.matrix, cfg).to_json());
}

TEST(SelectCriticalFeatures, ConfigValidation) {
  const auto data = synthetic::blob_matrix(1, 40);
  SelectionConfig cfg;
  cfg.min_features = 1;
  EXPECT_THROW(select_critical_features(data.matrix, cfg), InvalidArgument);
  cfg.min_features = 4;
  cfg.elimination_fraction = 1.0;
  EXPECT_THROW(select_critical_features(data.matrix, cfg), InvalidArgument);
  cfg.elimination_fraction = 0.25;
  cfg.min_features = 30;
  EXPECT_THROW(select_critical_features(data.matrix, cfg), InvalidArgument);
}

// Loose check of the observation that about 40% of the catalog is eliminated on ABR traces.
TEST(SelectCriticalFeatures, AbrLikeEliminationShare) {
  const auto ds = tracebench::build_dataset(tracebench::DatasetKind::balanced, 400, 21);
  const auto m = extract_matrix(ds, default_catalog());
  SelectionConfig cfg;
  cfg.seed = 21;
  const auto report = select_critical_features(m, cfg);
  const double eliminated = 1.0 - static_cast<double>(report.final_specs.size()) / 17.0;
  RecordProperty("eliminated_share", std::to_string(eliminated));
  EXPECT_GE(eliminated, 0.2);
  EXPECT_LE(eliminated, 0.6);
}
