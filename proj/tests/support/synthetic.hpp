#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "plume/features.hpp"

namespace synthetic {

/// Columns of the blob matrix that carry the cluster structure.
inline const std::vector<std::size_t>& informative_columns() {
  static const std::vector<std::size_t> cols{5, 9, 13};
  return cols;
}

struct BlobMatrix {
  plume::FeatureMatrix matrix;  // standardized
  std::vector<int> blob;        // generating blob of every row
};

/// 17 columns named after the catalog. Three columns place 4 blobs at different orderings of
/// well-separated levels; the other 14 are i.i.d. standard normal noise.
inline BlobMatrix blob_matrix(std::uint64_t seed, std::size_t rows = 400) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const int orders[3][4] = {{0, 1, 2, 3}, {2, 0, 3, 1}, {1, 3, 0, 2}};
  BlobMatrix out;
  auto& m = out.matrix;
  m.specs = plume::default_catalog();
  m.data.resize(static_cast<Eigen::Index>(rows), 17);
  for (std::size_t r = 0; r < rows; ++r) {
    const int b = static_cast<int>(r % 4);
    out.blob.push_back(b);
    m.trace_ids.push_back("row" + std::to_string(r));
    for (Eigen::Index c = 0; c < 17; ++c) m.data(static_cast<Eigen::Index>(r), c) = g(rng);
    for (std::size_t i = 0; i < 3; ++i) {
      m.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(informative_columns()[i])) += 6.0 * orders[i][b];
    }
  }
  m = plume::standardize(std::move(m));
  return out;
}

}  // namespace synthetic
