#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "plume/env.hpp"
#include "plume/rng.hpp"
#include "plume/trace.hpp"

namespace plume::tracebench {

enum class TraceClass { fast_low_var, fast_high_var, slow_low_var, slow_high_var };

inline constexpr std::array<TraceClass, 4> kAllClasses = {
    TraceClass::fast_low_var, TraceClass::fast_high_var, TraceClass::slow_low_var,
    TraceClass::slow_high_var};

std::string_view to_string(TraceClass c);
TraceClass parse_trace_class(std::string_view name);
bool is_slow(TraceClass c);
/// True for the slow classes' names; false for fast ones. Throws on unknown names.
bool is_slow_class_name(std::string_view name);

/// Two-level Markov throughput generator settings. Levels are in MB/s.
struct TraceGenConfig {
  TraceClass trace_class = TraceClass::fast_low_var;
  double p_high_to_low = 0.05;
  double p_low_to_high = 0.05;
  double high_level = 8.0;
  double low_level = 4.0;
  double noise_sigma = 0.02;  // relative
  double duration = 100.0;    // seconds, at most 100
  double step = 1.0;          // seconds
  std::uint64_t seed = 0;
  std::optional<bool> start_high;  // unset: draw from the stationary distribution

  /// Declared per-class constants.
  static TraceGenConfig preset(TraceClass c, std::uint64_t seed);
  void validate() const;
};

/// 2-state chain path (true = high). Starts from `start_high` or the stationary distribution.
std::vector<bool> markov_path(double p_high_to_low, double p_low_to_high, std::size_t steps,
                              std::optional<bool> start_high, Rng& rng);

Trace generate_trace(const TraceGenConfig& cfg, std::string id);

enum class DatasetKind { majority_fast, balanced, majority_slow };
enum class DatasetRole { train, test };

std::string_view to_string(DatasetKind k);
DatasetKind parse_dataset_kind(std::string_view name);

/// Per-class trace counts in kAllClasses order.
std::array<std::size_t, 4> class_counts(DatasetKind kind, std::size_t n);

/// Builds a dataset of n traces. Train and test roles draw from disjoint seed streams and use
/// distinct id prefixes.
TraceDataset build_dataset(DatasetKind kind, std::size_t n, std::uint64_t seed,
                           DatasetRole role = DatasetRole::train);

// ---- simplified ABR environment ------------------------------------------------------------

struct AbrConfig {
  std::array<double, 3> bitrates = {1.0, 3.0, 6.0};  // MB per second of video
  double chunk_seconds = 1.0;
  double max_buffer = 15.0;
  double stall_penalty = 6.0;     // reward lost per stall-second
  double chunk_size_sigma = 0.1;  // relative std of chunk sizes around the nominal bitrate
  std::size_t max_chunks = 100;
  std::size_t history_len = 10;
};

struct AbrAction {
  int bitrate_index = 0;
};

struct ChunkRecord {
  std::size_t chunk = 0;
  int bitrate_index = 0;
  double size = 0.0;      // MB
  double transmit = 0.0;  // seconds
  double stall = 0.0;     // seconds
  double sleep = 0.0;     // idle wait because the buffer was full
  double buffer = 0.0;    // after the chunk was added
  double reward = 0.0;
};

struct AbrEnvState {
  double buffer = 0.0;
  std::size_t chunk_index = 0;
  std::size_t total_chunks = 0;
  double wall_time = 0.0;  // trace cursor, seconds since the trace start
  std::deque<ChunkRecord> history;
  std::uint64_t episode_seed = 0;

  bool done() const { return chunk_index >= total_chunks; }
};

struct AbrStepResult {
  AbrEnvState next;
  double reward = 0.0;
  ChunkRecord record;
};

/// Piecewise-constant throughput replay; the trace repeats cyclically past its end.
class ThroughputReplay {
 public:
  explicit ThroughputReplay(const Trace& trace);
  /// Seconds needed to move `megabytes` starting at trace time `start`.
  double download_time(double start, double megabytes) const;
  double period() const { return period_; }

 private:
  std::vector<double> starts_;  // relative to the first sample
  std::vector<double> rates_;
  double period_ = 0.0;
  double bytes_per_period_ = 0.0;
};

double chunk_size(const AbrConfig& cfg, std::uint64_t episode_seed, std::size_t chunk, int bitrate_index);

AbrEnvState abr_reset(const Trace& trace, const AbrConfig& cfg, std::uint64_t episode_seed);

/// One chunk download. Stall is max(0, transmit - buffer) except for the first chunk, whose
/// download is start-up delay. Throws EnvError once the episode is done.
AbrStepResult abr_step(const AbrEnvState& state, AbrAction action, const Trace& trace,
                       const AbrConfig& cfg);
AbrStepResult abr_step(const AbrEnvState& state, AbrAction action, const ThroughputReplay& replay,
                       const AbrConfig& cfg);

/// Frame-stacked observation: per history slot (bitrate, transmit, stall, measured throughput)
/// followed by buffer level and remaining-chunk fraction.
std::vector<double> abr_observation(const AbrEnvState& state, const AbrConfig& cfg);
std::size_t abr_observation_size(const AbrConfig& cfg);

class AbrEnv final : public Environment {
 public:
  explicit AbrEnv(AbrConfig cfg = {});
  std::size_t observation_size() const override;
  int action_count() const override { return static_cast<int>(cfg_.bitrates.size()); }
  std::vector<double> reset(const Trace& trace, std::uint64_t seed) override;
  StepOutcome step(int action) override;

  const AbrEnvState& state() const { return state_; }
  const AbrConfig& config() const { return cfg_; }
  /// Per-chunk log of the current episode.
  const std::vector<ChunkRecord>& log() const { return log_; }

 private:
  AbrConfig cfg_;
  std::optional<ThroughputReplay> replay_;
  AbrEnvState state_;
  std::vector<ChunkRecord> log_;
};

/// JSON-lines episode log: one object per chunk.
std::string episode_log_jsonl(const std::vector<ChunkRecord>& log);

}  // namespace plume::tracebench
