#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plume/clustering.hpp"
#include "plume/features.hpp"

namespace plume {

/// Shannon entropy (bits) of a label multiset.
double entropy_bits(std::span<const int> labels);

struct InformationGain {
  double value = 0.0;          // H(c) - H(c | feature), bits
  double label_entropy = 0.0;  // H(c)
  bool degenerate = false;     // fewer than two distinct labels
};

/// Information gain of a single feature about the labels, measured by a depth-bounded binary
/// decision tree (entropy criterion) grown on that feature alone.
InformationGain information_gain(std::span<const int> labels, std::span<const double> column,
                                 int tree_max_depth);

struct SelectionConfig {
  int initial_cluster_count = 4;
  int cluster_growth = 2;          // added to the cluster count after every round
  double elimination_fraction = 0.25;
  int min_features = 4;
  double ig_threshold = 0.5;       // stop once every feature keeps IG >= ig_threshold * H(c)
  int tree_max_depth = 3;
  std::uint64_t seed = 0;
  GmmOptions gmm;
  unsigned jobs = 0;

  void validate() const;
};

struct SelectionRound {
  std::vector<FeatureSpec> specs;
  std::vector<double> information_gain;
  int cluster_count = 0;
  double label_entropy = 0.0;
  std::vector<FeatureSpec> eliminated;
};

struct SelectionReport {
  std::vector<SelectionRound> rounds;
  std::vector<FeatureSpec> final_specs;

  std::string to_json() const;
};

/// Recursive cluster / classify / eliminate loop over the columns of a standardized matrix.
SelectionReport select_critical_features(const FeatureMatrix& matrix, const SelectionConfig& cfg);

}  // namespace plume
