#include "plume/feature_selection.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "plume/error.hpp"
#include "plume/parallel.hpp"
#include "plume/rng.hpp"

namespace plume {

double entropy_bits(std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (const auto& [l, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

namespace {

struct Point {
  double x;
  int label;
};

double entropy_of_counts(const std::map<int, std::size_t>& counts, std::size_t n) {
  if (n == 0) return 0.0;
  double h = 0.0;
  for (const auto& [l, c] : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log2(p);
  }
  return h;
}

/// Grows the tree on points[begin, end) (sorted by x) and returns the sum over leaves of
/// n_leaf * H(leaf).
double grow(std::span<const Point> pts, int depth_left) {
  const std::size_t n = pts.size();
  std::map<int, std::size_t> total;
  for (const auto& p : pts) ++total[p.label];
  const double h_node = entropy_of_counts(total, n);
  if (depth_left == 0 || n < 2 || total.size() < 2) return static_cast<double>(n) * h_node;

  // Scan split positions between distinct consecutive values.
  std::map<int, std::size_t> left;
  std::map<int, std::size_t> right = total;
  double best_weighted = static_cast<double>(n) * h_node;
  std::size_t best_split = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    ++left[pts[i].label];
    --right[pts[i].label];
    if (pts[i].x == pts[i + 1].x) continue;
    const std::size_t nl = i + 1;
    const std::size_t nr = n - nl;
    const double weighted = static_cast<double>(nl) * entropy_of_counts(left, nl) +
                            static_cast<double>(nr) * entropy_of_counts(right, nr);
    if (weighted < best_weighted - 1e-12) {
      best_weighted = weighted;
      best_split = nl;
    }
  }
  if (best_split == 0) return static_cast<double>(n) * h_node;
  return grow(pts.first(best_split), depth_left - 1) + grow(pts.subspan(best_split), depth_left - 1);
}

}  // namespace

InformationGain information_gain(std::span<const int> labels, std::span<const double> column,
                                 int tree_max_depth) {
  if (labels.size() != column.size()) {
    throw InvalidArgument("information_gain: labels and column differ in length");
  }
  if (labels.size() < 2) throw InvalidArgument("information_gain needs at least two rows");
  if (tree_max_depth < 1) throw InvalidArgument("tree_max_depth must be at least 1");
  InformationGain out;
  out.label_entropy = entropy_bits(labels);
  std::map<int, int> distinct;
  for (int l : labels) distinct[l] = 1;
  if (distinct.size() < 2) {
    out.degenerate = true;
    return out;
  }
  std::vector<Point> pts(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) pts[i] = {column[i], labels[i]};
  std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
  const double conditional = grow(pts, tree_max_depth) / static_cast<double>(labels.size());
  out.value = std::clamp(out.label_entropy - conditional, 0.0, out.label_entropy);
  return out;
}

void SelectionConfig::validate() const {
  if (min_features < 2) throw InvalidArgument("min_features must be at least 2");
  if (!(elimination_fraction > 0.0 && elimination_fraction < 1.0)) {
    throw InvalidArgument("elimination_fraction must lie in (0, 1)");
  }
  if (initial_cluster_count < 2) throw InvalidArgument("initial_cluster_count must be at least 2");
  if (cluster_growth < 0) throw InvalidArgument("cluster_growth must be non-negative");
  if (ig_threshold < 0.0) throw InvalidArgument("ig_threshold must be non-negative");
  if (tree_max_depth < 1) throw InvalidArgument("tree_max_depth must be at least 1");
}

SelectionReport select_critical_features(const FeatureMatrix& matrix, const SelectionConfig& cfg) {
  cfg.validate();
  if (matrix.cols() < static_cast<std::size_t>(cfg.min_features)) {
    throw InvalidArgument("matrix has " + std::to_string(matrix.cols()) +
                          " features, fewer than min_features = " + std::to_string(cfg.min_features));
  }
  const int rows = static_cast<int>(matrix.rows());
  std::vector<std::size_t> surviving(matrix.cols());
  std::iota(surviving.begin(), surviving.end(), std::size_t{0});

  SelectionReport report;
  int k = cfg.initial_cluster_count;
  const std::uint64_t cluster_seed = derive_seed(cfg.seed, "feature-selection");
  for (int round = 0;; ++round) {
    const FeatureMatrix sub = matrix.select(surviving);
    const int k_round = std::min(k, rows);
    GmmFit fit;
    try {
      fit = fit_gmm(sub.data, k_round, cluster_seed, cfg.gmm);
    } catch (const Error& e) {
      throw FitError("feature selection round " + std::to_string(round) + " (k = " +
                     std::to_string(k_round) + "): " + e.what());
    }
    SelectionRound rec;
    rec.specs = sub.specs;
    rec.cluster_count = k_round;
    rec.information_gain.resize(surviving.size());
    parallel_for(surviving.size(), cfg.jobs, [&](std::size_t j) {
      const Eigen::VectorXd col = sub.data.col(static_cast<Eigen::Index>(j));
      rec.information_gain[j] =
          information_gain(fit.labels, std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                           cfg.tree_max_depth)
              .value;
    });
    rec.label_entropy = entropy_bits(fit.labels);

    const bool at_floor = surviving.size() <= static_cast<std::size_t>(cfg.min_features);
    const bool all_high = rec.label_entropy > 0.0 &&
                          std::all_of(rec.information_gain.begin(), rec.information_gain.end(),
                                      [&](double ig) { return ig >= cfg.ig_threshold * rec.label_entropy; });
    if (at_floor || all_high) {
      report.rounds.push_back(std::move(rec));
      break;
    }

    const std::size_t m = surviving.size();
    std::size_t drop = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(cfg.elimination_fraction * static_cast<double>(m))));
    drop = std::min(drop, m - static_cast<std::size_t>(cfg.min_features));
    // Lowest IG first; ties broken by catalog (column) order.
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return rec.information_gain[a] < rec.information_gain[b];
    });
    std::vector<bool> remove(m, false);
    for (std::size_t i = 0; i < drop; ++i) remove[order[i]] = true;
    std::vector<std::size_t> next;
    for (std::size_t j = 0; j < m; ++j) {
      if (remove[j]) {
        rec.eliminated.push_back(sub.specs[j]);
      } else {
        next.push_back(surviving[j]);
      }
    }
    surviving = std::move(next);
    report.rounds.push_back(std::move(rec));
    k += cfg.cluster_growth;
  }
  report.final_specs = report.rounds.back().specs;
  return report;
}

std::string SelectionReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  nlohmann::json rounds_j = nlohmann::json::array();
  for (const auto& r : rounds) {
    nlohmann::json rj;
    rj["cluster_count"] = r.cluster_count;
    rj["label_entropy"] = r.label_entropy;
    nlohmann::json feats = nlohmann::json::array();
    for (std::size_t i = 0; i < r.specs.size(); ++i) {
      feats.push_back({{"name", r.specs[i].name()}, {"information_gain", r.information_gain[i]}});
    }
    rj["features"] = std::move(feats);
    nlohmann::json elim = nlohmann::json::array();
    for (const auto& s : r.eliminated) elim.push_back(s.name());
    rj["eliminated"] = std::move(elim);
    rounds_j.push_back(std::move(rj));
  }
  j["rounds"] = std::move(rounds_j);
  nlohmann::json final_j = nlohmann::json::array();
  for (const auto& s : final_specs) final_j.push_back(s.name());
  j["final_features"] = std::move(final_j);
  return j.dump(2) + "\n";
}

}  // namespace plume
