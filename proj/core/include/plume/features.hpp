#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "plume/trace.hpp"

namespace plume {

enum class FeatureKind {
  mean,
  quantile,                  // a = level
  truncated_mean,            // a = lower level; keeps values in [Q(a), Q(1-a)]
  spectral_centroid,         // centroid of |rfft|
  ratio_beyond_sigma,        // a = multiple of the population std
  variation_coefficient,
  mean_second_derivative_central,
  truncated_mean_abs_change, // a, b = lower / upper level on the change series
  autocorrelation,           // a = lag
  param,                     // value of a param_tuple entry named `key`
};

/// One entry of the feature catalog together with its parameters.
struct FeatureSpec {
  FeatureKind kind = FeatureKind::mean;
  double a = 0.0;
  double b = 0.0;
  std::string key;

  static FeatureSpec mean() { return {FeatureKind::mean, 0.0, 0.0, {}}; }
  static FeatureSpec quantile(double q) { return {FeatureKind::quantile, q, 0.0, {}}; }
  static FeatureSpec truncated_mean(double q) { return {FeatureKind::truncated_mean, q, 0.0, {}}; }
  static FeatureSpec spectral_centroid() { return {FeatureKind::spectral_centroid, 0.0, 0.0, {}}; }
  static FeatureSpec ratio_beyond_sigma(double r) { return {FeatureKind::ratio_beyond_sigma, r, 0.0, {}}; }
  static FeatureSpec variation_coefficient() { return {FeatureKind::variation_coefficient, 0.0, 0.0, {}}; }
  static FeatureSpec mean_second_derivative_central() {
    return {FeatureKind::mean_second_derivative_central, 0.0, 0.0, {}};
  }
  static FeatureSpec truncated_mean_abs_change(double ql, double qh) {
    return {FeatureKind::truncated_mean_abs_change, ql, qh, {}};
  }
  static FeatureSpec autocorrelation(std::size_t lag) {
    return {FeatureKind::autocorrelation, static_cast<double>(lag), 0.0, {}};
  }
  static FeatureSpec param(std::string key) { return {FeatureKind::param, 0.0, 0.0, std::move(key)}; }

  /// Stable textual name, e.g. "quantile__q_0.05"; round-trips through parse().
  std::string name() const;
  static FeatureSpec parse(std::string_view name);

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// The 17-entry catalog in its canonical order.
const std::vector<FeatureSpec>& default_catalog();

struct FeatureVector {
  std::string trace_id;
  std::vector<FeatureSpec> specs;
  std::vector<double> values;
};

/// Rows are traces, columns are features. When `standardized` is set, `data` holds z-scores and
/// `column_mean` / `column_std` hold the raw statistics used.
struct FeatureMatrix {
  std::vector<FeatureSpec> specs;
  std::vector<std::string> trace_ids;
  Eigen::MatrixXd data;
  bool standardized = false;
  Eigen::VectorXd column_mean;
  Eigen::VectorXd column_std;
  std::vector<FeatureSpec> dropped;  // constant columns removed before standardization

  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(data.cols()); }
  /// Column subset in the given order.
  FeatureMatrix select(std::span<const std::size_t> columns) const;
  std::optional<std::size_t> column_of(const FeatureSpec& spec) const;
};

// ---- single statistics (exposed for oracle tests and reuse) --------------------------------

namespace stats {

double mean(std::span<const double> x);
/// Population variance.
double variance(std::span<const double> x);
/// Linear interpolation between closest ranks (h = (n-1) q).
double quantile_sorted(std::span<const double> sorted, double q);
double quantile(std::span<const double> x, double q);

}  // namespace stats

/// Computes one feature on a uniform value series. Undefined statistics are imputed with 0.
double compute_feature(std::span<const double> values, const FeatureSpec& spec);

/// Features for one trace. Series traces are resampled to a uniform grid first; param_tuple
/// traces bypass extraction and return their params (all of them when `specs` is empty).
FeatureVector extract_features(const Trace& trace, std::span<const FeatureSpec> specs);

/// Raw (unstandardized) feature matrix.
FeatureMatrix extract_raw_matrix(const TraceDataset& dataset, std::span<const FeatureSpec> specs,
                                 unsigned jobs = 0);

/// Drops constant columns and z-scores the rest (population std).
/// Throws InvalidArgument "dataset has no informative features" when every column is constant.
FeatureMatrix standardize(FeatureMatrix raw);

/// extract_raw_matrix followed by standardize.
FeatureMatrix extract_matrix(const TraceDataset& dataset, std::span<const FeatureSpec> specs,
                             unsigned jobs = 0);

/// CSV with a schema line, header "trace_id,<feature names>", one row per trace.
void write_feature_csv(const FeatureMatrix& matrix, std::ostream& out);
FeatureMatrix read_feature_csv(std::istream& in);

}  // namespace plume
