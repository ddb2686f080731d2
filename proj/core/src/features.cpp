#include "plume/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fftw3.h>

#include "plume/error.hpp"
#include "plume/parallel.hpp"

namespace plume {

namespace {

std::string format_number(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view s, std::string_view context) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidArgument("bad number '" + std::string(s) + "' in '" + std::string(context) + "'");
  }
  return x;
}

std::vector<std::string_view> split_name(std::string_view name) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (true) {
    auto next = name.find("__", pos);
    parts.push_back(name.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 2;
  }
  return parts;
}

double param_value(std::string_view part, std::string_view prefix, std::string_view name) {
  if (part.substr(0, prefix.size()) != prefix) {
    throw InvalidArgument("feature '" + std::string(name) + "' expects parameter " +
                          std::string(prefix));
  }
  return parse_number(part.substr(prefix.size()), name);
}

}  // namespace

std::string FeatureSpec::name() const {
  switch (kind) {
    case FeatureKind::mean: return "mean";
    case FeatureKind::quantile: return "quantile__q_" + format_number(a);
    case FeatureKind::truncated_mean: return "truncated_mean__q_" + format_number(a);
    case FeatureKind::spectral_centroid: return "spectral_centroid";
    case FeatureKind::ratio_beyond_sigma: return "ratio_beyond_sigma__r_" + format_number(a);
    case FeatureKind::variation_coefficient: return "variation_coefficient";
    case FeatureKind::mean_second_derivative_central: return "mean_second_derivative_central";
    case FeatureKind::truncated_mean_abs_change:
      return "truncated_mean_abs_change__ql_" + format_number(a) + "__qh_" + format_number(b);
    case FeatureKind::autocorrelation: return "autocorrelation__lag_" + format_number(a);
    case FeatureKind::param: return "param__" + key;
  }
  return "unknown";
}

FeatureSpec FeatureSpec::parse(std::string_view name) {
  const auto parts = split_name(name);
  const auto head = parts.front();
  auto expect = [&](std::size_t n) {
    if (parts.size() != n) {
      throw InvalidArgument("feature name '" + std::string(name) + "' has wrong parameter count");
    }
  };
  if (head == "mean") { expect(1); return mean(); }
  if (head == "spectral_centroid") { expect(1); return spectral_centroid(); }
  if (head == "variation_coefficient") { expect(1); return variation_coefficient(); }
  if (head == "mean_second_derivative_central") { expect(1); return mean_second_derivative_central(); }
  if (head == "quantile") { expect(2); return quantile(param_value(parts[1], "q_", name)); }
  if (head == "truncated_mean") {
    expect(2);
    return truncated_mean(param_value(parts[1], "q_", name));
  }
  if (head == "ratio_beyond_sigma") {
    expect(2);
    return ratio_beyond_sigma(param_value(parts[1], "r_", name));
  }
  if (head == "truncated_mean_abs_change") {
    expect(3);
    return truncated_mean_abs_change(param_value(parts[1], "ql_", name),
                                     param_value(parts[2], "qh_", name));
  }
  if (head == "autocorrelation") {
    expect(2);
    const double lag = param_value(parts[1], "lag_", name);
    if (lag < 0 || lag != std::floor(lag)) throw InvalidArgument("lag must be a whole number");
    return autocorrelation(static_cast<std::size_t>(lag));
  }
  if (head == "param") {
    if (parts.size() < 2) throw InvalidArgument("param feature without key");
    return param(std::string(name.substr(7)));
  }
  throw InvalidArgument("unknown feature '" + std::string(name) + "'");
}

const std::vector<FeatureSpec>& default_catalog() {
  static const std::vector<FeatureSpec> catalog = {
      FeatureSpec::mean(),
      FeatureSpec::quantile(0.025),
      FeatureSpec::quantile(0.05),
      FeatureSpec::quantile(0.95),
      FeatureSpec::truncated_mean(0.05),
      FeatureSpec::truncated_mean(0.125),
      FeatureSpec::truncated_mean(0.25),
      FeatureSpec::spectral_centroid(),
      FeatureSpec::ratio_beyond_sigma(1.0),
      FeatureSpec::ratio_beyond_sigma(2.5),
      FeatureSpec::variation_coefficient(),
      FeatureSpec::mean_second_derivative_central(),
      FeatureSpec::truncated_mean_abs_change(0.05, 0.95),
      FeatureSpec::truncated_mean_abs_change(0.0125, 0.9875),
      FeatureSpec::autocorrelation(3),
      FeatureSpec::autocorrelation(4),
      FeatureSpec::autocorrelation(8),
  };
  return catalog;
}

FeatureMatrix FeatureMatrix::select(std::span<const std::size_t> columns) const {
  FeatureMatrix out;
  out.trace_ids = trace_ids;
  out.standardized = standardized;
  out.dropped = dropped;
  out.data.resize(data.rows(), static_cast<Eigen::Index>(columns.size()));
  if (standardized) {
    out.column_mean.resize(static_cast<Eigen::Index>(columns.size()));
    out.column_std.resize(static_cast<Eigen::Index>(columns.size()));
  }
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(columns[j]);
    if (c >= data.cols()) throw InvalidArgument("column index out of range");
    out.specs.push_back(specs[columns[j]]);
    out.data.col(static_cast<Eigen::Index>(j)) = data.col(c);
    if (standardized) {
      out.column_mean[static_cast<Eigen::Index>(j)] = column_mean[c];
      out.column_std[static_cast<Eigen::Index>(j)] = column_std[c];
    }
  }
  return out;
}

std::optional<std::size_t> FeatureMatrix::column_of(const FeatureSpec& spec) const {
  for (std::size_t j = 0; j < specs.size(); ++j) {
    if (specs[j] == spec) return j;
  }
  return std::nullopt;
}

// ---- statistics ------------------------------------------------------------------------------

namespace stats {

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size());
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  // Snap ranks that are whole numbers up to rounding, e.g. 60 * 0.05.
  if (std::abs(h - std::round(h)) < 1e-9) h = std::round(h);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::span<const double> x, double q) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, q);
}

}  // namespace stats

namespace {

bool near_zero(double x, double scale) { return std::abs(x) <= 1e-12 * std::max(1.0, scale); }

double truncated_mean(std::span<const double> x, double q) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = stats::quantile_sorted(sorted, q);
  const double hi = stats::quantile_sorted(sorted, 1.0 - q);
  double sum = 0.0;
  std::size_t count = 0;
  for (double v : sorted) {
    if (v >= lo && v <= hi) {
      sum += v;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

double spectral_centroid(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  if (n < 2) return 0.0;
  const int bins = n / 2 + 1;
  std::vector<double> in(x.begin(), x.end());
  auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins));
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in.data(), out, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  double weighted = 0.0, total = 0.0;
  for (int k = 0; k < bins; ++k) {
    const double mag = std::hypot(out[k][0], out[k][1]);
    weighted += static_cast<double>(k) * mag;
    total += mag;
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(out);
  return total > 0.0 ? weighted / total : 0.0;
}

double ratio_beyond_sigma(std::span<const double> x, double r) {
  const double m = stats::mean(x);
  const double var = stats::variance(x);
  if (near_zero(var, m * m)) return 0.0;
  const double sd = std::sqrt(var);
  std::size_t count = 0;
  for (double v : x) {
    if (std::abs(v - m) > r * sd) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(x.size());
}

double variation_coefficient(std::span<const double> x) {
  const double m = stats::mean(x);
  const double var = stats::variance(x);
  if (near_zero(m, 0.0) || near_zero(var, m * m)) return 0.0;
  return std::sqrt(var) / m;
}

double mean_second_derivative_central(std::span<const double> x) {
  if (x.size() < 3) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) sum += 0.5 * (x[i + 1] - 2.0 * x[i] + x[i - 1]);
  return sum / static_cast<double>(x.size() - 2);
}

double truncated_mean_abs_change(std::span<const double> x, double ql, double qh) {
  if (x.size() < 2) return 0.0;
  std::vector<double> change(x.size() - 1);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) change[i] = x[i + 1] - x[i];
  std::vector<double> sorted = change;
  std::sort(sorted.begin(), sorted.end());
  const double lo = stats::quantile_sorted(sorted, ql);
  const double hi = stats::quantile_sorted(sorted, qh);
  double sum = 0.0;
  std::size_t count = 0;
  for (double c : change) {
    if (c >= lo && c <= hi) {
      sum += std::abs(c);
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double autocorrelation(std::span<const double> x, std::size_t lag) {
  const std::size_t n = x.size();
  if (lag >= n) return 0.0;
  const double m = stats::mean(x);
  const double var = stats::variance(x);
  if (near_zero(var, m * m)) return 0.0;
  double acc = 0.0;
  for (std::size_t t = 0; t + lag < n; ++t) acc += (x[t] - m) * (x[t + lag] - m);
  return acc / static_cast<double>(n) / var;
}

}  // namespace

double compute_feature(std::span<const double> values, const FeatureSpec& spec) {
  if (values.empty()) return 0.0;
  double out = 0.0;
  switch (spec.kind) {
    case FeatureKind::mean: out = stats::mean(values); break;
    case FeatureKind::quantile: out = stats::quantile(values, spec.a); break;
    case FeatureKind::truncated_mean: out = truncated_mean(values, spec.a); break;
    case FeatureKind::spectral_centroid: out = spectral_centroid(values); break;
    case FeatureKind::ratio_beyond_sigma: out = ratio_beyond_sigma(values, spec.a); break;
    case FeatureKind::variation_coefficient: out = variation_coefficient(values); break;
    case FeatureKind::mean_second_derivative_central:
      out = mean_second_derivative_central(values);
      break;
    case FeatureKind::truncated_mean_abs_change:
      out = truncated_mean_abs_change(values, spec.a, spec.b);
      break;
    case FeatureKind::autocorrelation:
      out = autocorrelation(values, static_cast<std::size_t>(spec.a));
      break;
    case FeatureKind::param:
      throw InvalidArgument("param features are only defined for param_tuple traces");
  }
  return std::isfinite(out) ? out : 0.0;
}

FeatureVector extract_features(const Trace& trace, std::span<const FeatureSpec> specs) {
  FeatureVector fv;
  fv.trace_id = trace.id;
  if (trace.kind == TraceKind::param_tuple) {
    if (specs.empty()) {
      for (const auto& [k, v] : trace.params) {
        fv.specs.push_back(FeatureSpec::param(k));
        fv.values.push_back(v);
      }
      return fv;
    }
    for (const auto& spec : specs) {
      if (spec.kind != FeatureKind::param) {
        throw InvalidArgument("trace '" + trace.id + "' is a param tuple; '" + spec.name() +
                              "' does not apply");
      }
      auto it = trace.params.find(spec.key);
      if (it == trace.params.end()) {
        throw InvalidArgument("trace '" + trace.id + "' has no param '" + spec.key + "'");
      }
      fv.specs.push_back(spec);
      fv.values.push_back(it->second);
    }
    return fv;
  }
  if (trace.samples.size() < 2) {
    throw InvalidArgument("trace '" + trace.id + "' needs at least 2 samples for features");
  }
  const auto values = uniform_values(trace);
  fv.specs.assign(specs.begin(), specs.end());
  fv.values.reserve(specs.size());
  for (const auto& spec : specs) fv.values.push_back(compute_feature(values, spec));
  return fv;
}

FeatureMatrix extract_raw_matrix(const TraceDataset& dataset, std::span<const FeatureSpec> specs,
                                 unsigned jobs) {
  if (dataset.empty()) throw InvalidArgument("dataset '" + dataset.name + "' is empty");
  std::vector<FeatureVector> rows(dataset.size());
  parallel_for(dataset.size(), jobs,
               [&](std::size_t i) { rows[i] = extract_features(dataset.traces[i], specs); });
  FeatureMatrix m;
  m.specs = rows.front().specs;
  m.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.specs.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].specs != m.specs) {
      throw InvalidArgument("trace '" + rows[i].trace_id + "' yields a different feature layout");
    }
    m.trace_ids.push_back(rows[i].trace_id);
    for (std::size_t j = 0; j < m.specs.size(); ++j) {
      m.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].values[j];
    }
  }
  return m;
}

FeatureMatrix standardize(FeatureMatrix raw) {
  if (raw.standardized) return raw;
  const auto n = raw.data.rows();
  if (n == 0) throw InvalidArgument("cannot standardize an empty matrix");
  std::vector<std::size_t> keep;
  std::vector<double> means, stds;
  for (Eigen::Index j = 0; j < raw.data.cols(); ++j) {
    const double m = raw.data.col(j).mean();
    const double sd = std::sqrt((raw.data.col(j).array() - m).square().sum() / static_cast<double>(n));
    if (sd > 1e-12 * std::max(1.0, std::abs(m))) {
      keep.push_back(static_cast<std::size_t>(j));
      means.push_back(m);
      stds.push_back(sd);
    } else {
      raw.dropped.push_back(raw.specs[static_cast<std::size_t>(j)]);
    }
  }
  if (keep.empty()) throw InvalidArgument("dataset has no informative features");
  FeatureMatrix out = raw.select(keep);
  out.column_mean = Eigen::Map<Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
  out.column_std = Eigen::Map<Eigen::VectorXd>(stds.data(), static_cast<Eigen::Index>(stds.size()));
  for (Eigen::Index j = 0; j < out.data.cols(); ++j) {
    out.data.col(j) = (out.data.col(j).array() - out.column_mean[j]) / out.column_std[j];
  }
  out.standardized = true;
  return out;
}

FeatureMatrix extract_matrix(const TraceDataset& dataset, std::span<const FeatureSpec> specs,
                             unsigned jobs) {
  return standardize(extract_raw_matrix(dataset, specs, jobs));
}

void write_feature_csv(const FeatureMatrix& matrix, std::ostream& out) {
  out << "# schema: plume-features/1" << (matrix.standardized ? " standardized" : " raw") << '\n';
  out << "trace_id";
  for (const auto& s : matrix.specs) out << ',' << s.name();
  out << '\n';
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    out << matrix.trace_ids[i];
    for (std::size_t j = 0; j < matrix.cols(); ++j) {
      out << ',' << format_number(matrix.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    out << '\n';
  }
}

FeatureMatrix read_feature_csv(std::istream& in) {
  std::string line;
  FeatureMatrix m;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.find("standardized") != std::string::npos) m.standardized = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      if (cells.empty() || cells[0] != "trace_id") {
        throw InvalidArgument("feature CSV header must start with trace_id");
      }
      for (std::size_t j = 1; j < cells.size(); ++j) m.specs.push_back(FeatureSpec::parse(cells[j]));
      have_header = true;
      continue;
    }
    if (cells.size() != m.specs.size() + 1) {
      throw InvalidArgument("feature CSV line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(m.specs.size() + 1));
    }
    m.trace_ids.push_back(cells[0]);
    std::vector<double> row;
    for (std::size_t j = 1; j < cells.size(); ++j) row.push_back(parse_number(cells[j], cells[j]));
    rows.push_back(std::move(row));
  }
  if (!have_header) throw InvalidArgument("feature CSV has no header");
  m.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.specs.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < m.specs.size(); ++j) {
      m.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  if (m.standardized) {
    // Raw statistics are not carried in the CSV.
    m.column_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.specs.size()));
    m.column_std = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m.specs.size()));
  }
  return m;
}

}  // namespace plume
