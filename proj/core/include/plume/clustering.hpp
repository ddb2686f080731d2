#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plume/features.hpp"

namespace plume {

/// Diagonal-covariance Gaussian mixture.
struct GmmParams {
  int k = 0;
  Eigen::VectorXd weights;    // k
  Eigen::MatrixXd means;      // k x d
  Eigen::MatrixXd variances;  // k x d, every entry >= reg_covar
  double reg_covar = 1e-6;

  std::size_t dim() const { return static_cast<std::size_t>(means.cols()); }

  /// Per-row, per-component log(weight_j * N(x | mean_j, var_j)).
  Eigen::MatrixXd weighted_log_prob(const Eigen::MatrixXd& x) const;
  /// Row-normalized responsibilities; also returns the per-row log-likelihood.
  Eigen::MatrixXd responsibilities(const Eigen::MatrixXd& x, Eigen::VectorXd* row_log_lik = nullptr) const;
  double log_likelihood(const Eigen::MatrixXd& x) const;
  /// argmax responsibility per row.
  std::vector<int> predict(const Eigen::MatrixXd& x) const;
};

struct GmmOptions {
  int max_iters = 200;
  double tol = 1e-4;          // on the change of mean per-row log-likelihood
  double reg_covar = 1e-6;
};

struct GmmFit {
  GmmParams params;
  std::vector<int> labels;
  double log_likelihood = 0.0;              // total over rows
  std::vector<double> log_likelihood_trace; // total after each E-step, since the last re-seed
  int iterations = 0;
  bool converged = false;
  bool reseeded = false;
};

/// k-means++ seeding: first centroid uniform over rows, then D^2 sampling. Returns k x d.
Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& x, int k, std::uint64_t seed);

/// EM for a diagonal GMM, initialised from k-means++ centroids by hard assignment.
GmmFit fit_gmm(const Eigen::MatrixXd& x, int k, std::uint64_t seed, const GmmOptions& opts = {});

/// Mean silhouette coefficient with Euclidean distances. Points in singleton clusters score 0.
/// Throws InvalidArgument "silhouette undefined" with fewer than two clusters.
double silhouette_score(const Eigen::MatrixXd& x, std::span<const int> labels);

/// Fraction of rows whose cluster's majority class equals their own class.
double cluster_purity(std::span<const int> labels, std::span<const std::string> classes);

struct SearchEntry {
  int k = 0;
  std::uint64_t best_seed = 0;
  double log_likelihood = 0.0;
  double silhouette = 0.0;
  bool failed = false;
};

struct SearchOptions {
  int k_min = 3;
  int k_max = 7;
  int seeds_per_k = 10;
  std::uint64_t seed = 0;
  GmmOptions gmm;
  std::size_t silhouette_max_rows = 5000;
  unsigned jobs = 0;
};

struct ClusterModel {
  GmmParams params;
  std::vector<std::string> trace_ids;
  std::vector<int> labels;
  double log_likelihood = 0.0;
  double silhouette = 0.0;
  std::vector<SearchEntry> search_log;
  std::vector<FeatureSpec> specs;  // columns the model was fitted on

  int k() const { return params.k; }
  std::string to_json() const;
  static ClusterModel from_json(std::string_view text);
};

/// Two-stage search: per k keep the seed with the best log-likelihood, then pick the k with
/// the best silhouette. Seeds are derived from opts.seed, so the result is reproducible.
ClusterModel search_clustering(const FeatureMatrix& matrix, const SearchOptions& opts);

/// Per-domain cluster-count ranges.
struct KRange {
  int k_min;
  int k_max;
};
KRange default_k_range(std::string_view domain);

}  // namespace plume
