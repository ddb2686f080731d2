#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace plume {

enum class TraceKind { throughput_series, job_size_series, param_tuple };

std::string_view to_string(TraceKind kind);
TraceKind parse_trace_kind(std::string_view name);

struct Sample {
  double t = 0.0;  // seconds
  double v = 0.0;  // domain units (MB/s for TraceBench throughput, job-size units for LB)

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// One input trace: the unit that the sampler hands to an environment.
struct Trace {
  std::string id;
  TraceKind kind = TraceKind::throughput_series;
  std::vector<Sample> samples;
  std::map<std::string, double> params;            // param_tuple traces only
  std::optional<std::string> ground_truth_class;   // evaluation only, never used for training

  bool is_series() const { return kind != TraceKind::param_tuple; }
  std::vector<double> values() const;
  /// Throws DatasetError naming the trace when an invariant is broken.
  void validate() const;

  friend bool operator==(const Trace&, const Trace&) = default;
};

struct TraceDataset {
  std::string name;
  std::vector<Trace> traces;
  std::filesystem::path manifest_path;

  std::size_t size() const { return traces.size(); }
  bool empty() const { return traces.empty(); }
  const Trace& at(std::string_view id) const;
  std::optional<std::size_t> index_of(std::string_view id) const;
  /// Unique ids, single kind, and every trace valid.
  void validate() const;
};

/// Discounting and reward normalization for returns fed to the prioritizer and the learner.
struct ReturnSpec {
  double gamma = 1.0;
  bool normalize = false;
  double epsilon = 1e-2;
  double clip_low = -32.0;
  double clip_high = 32.0;

  void validate() const;
};

/// sign(r)(sqrt(|r|+1) - 1) + eps*r, unclipped.
double normalize_reward(double reward, double epsilon);

/// Normalizes (if requested) and clips one reward.
double transform_reward(double reward, const ReturnSpec& spec);

/// Sum of gamma^t r_t, rewards transformed first when spec.normalize is set.
double discounted_return(std::span<const double> rewards, const ReturnSpec& spec);

// ---- serialization -------------------------------------------------------------------------

/// Canonical single-line JSON encoding of a trace (sorted keys, shortest round-trip doubles).
std::string serialize_trace(const Trace& trace);
Trace parse_trace(std::string_view text, std::string_view source);

Trace load_trace(const std::filesystem::path& path);
void save_trace(const Trace& trace, const std::filesystem::path& path);

/// Manifest is a JSON array of trace-file paths relative to the manifest's directory.
/// Traces are returned sorted by id.
TraceDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `<dir>/traces/<id>.json` for every trace and `<dir>/manifest.json`.
/// Returns the manifest path.
std::filesystem::path save_dataset(const TraceDataset& dataset, const std::filesystem::path& dir);

/// CSV summary (id, kind, length, mean, std, min, max, ground_truth_class) with a schema line.
void write_summary_csv(const TraceDataset& dataset, std::ostream& out);

// ---- preprocessing -------------------------------------------------------------------------

/// Drops series traces with fewer than `min_samples` samples.
TraceDataset filter_min_length(const TraceDataset& dataset, std::size_t min_samples);

/// Splits a long series into consecutive segments of `segment_len` samples. The start offset
/// (0 .. segment_len-1) is drawn from `seed`; leftover head and tail pieces shorter than
/// `segment_len` are discarded. Traces no longer than `segment_len` are returned unchanged.
std::vector<Trace> split_trace(const Trace& trace, std::size_t segment_len, std::uint64_t seed);

TraceDataset split_long_traces(const TraceDataset& dataset, std::size_t segment_len,
                               std::uint64_t seed);

/// Value series on a uniform time grid. Uniformly spaced traces are returned as-is; otherwise
/// the series is resampled at the median step with previous-value interpolation.
std::vector<double> uniform_values(const Trace& trace);

}  // namespace plume
