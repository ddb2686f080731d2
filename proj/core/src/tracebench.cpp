#include "plume/tracebench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <json.hpp>

#include "plume/error.hpp"

namespace plume::tracebench {

std::string_view to_string(TraceClass c) {
  switch (c) {
    case TraceClass::fast_low_var: return "fast_low_var";
    case TraceClass::fast_high_var: return "fast_high_var";
    case TraceClass::slow_low_var: return "slow_low_var";
    case TraceClass::slow_high_var: return "slow_high_var";
  }
  return "unknown";
}

TraceClass parse_trace_class(std::string_view name) {
  for (auto c : kAllClasses) {
    if (to_string(c) == name) return c;
  }
  throw InvalidArgument("unknown trace class '" + std::string(name) + "'");
}

bool is_slow(TraceClass c) {
  return c == TraceClass::slow_low_var || c == TraceClass::slow_high_var;
}

bool is_slow_class_name(std::string_view name) { return is_slow(parse_trace_class(name)); }

TraceGenConfig TraceGenConfig::preset(TraceClass c, std::uint64_t seed) {
  TraceGenConfig cfg;
  cfg.trace_class = c;
  cfg.seed = seed;
  const bool high_var = c == TraceClass::fast_high_var || c == TraceClass::slow_high_var;
  cfg.p_high_to_low = high_var ? 0.35 : 0.05;
  cfg.p_low_to_high = high_var ? 0.35 : 0.05;
  cfg.noise_sigma = high_var ? 0.10 : 0.02;
  if (is_slow(c)) {
    cfg.high_level = 1.2;
    cfg.low_level = 0.4;
  } else {
    cfg.high_level = 8.0;
    cfg.low_level = 4.0;
  }
  return cfg;
}

void TraceGenConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_high_to_low) || !prob(p_low_to_high)) {
    throw InvalidArgument("switching probabilities must lie in [0, 1]");
  }
  if (!(high_level > low_level && low_level > 0.0)) {
    throw InvalidArgument("throughput levels must satisfy high > low > 0");
  }
  if (!(duration > 0.0 && duration <= 100.0)) throw InvalidArgument("duration must lie in (0, 100] s");
  if (!(step > 0.0 && step <= duration)) throw InvalidArgument("invalid step");
  if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be non-negative");
}

std::vector<bool> markov_path(double p_high_to_low, double p_low_to_high, std::size_t steps,
                              std::optional<bool> start_high, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<bool> path;
  path.reserve(steps);
  if (steps == 0) return path;
  bool high;
  if (start_high) {
    high = *start_high;
  } else {
    const double denom = p_high_to_low + p_low_to_high;
    const double pi_high = denom > 0.0 ? p_low_to_high / denom : 0.5;
    high = u(rng) < pi_high;
  }
  path.push_back(high);
  for (std::size_t i = 1; i < steps; ++i) {
    const double flip = high ? p_high_to_low : p_low_to_high;
    if (u(rng) < flip) high = !high;
    path.push_back(high);
  }
  return path;
}

Trace generate_trace(const TraceGenConfig& cfg, std::string id) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "tracebench-trace"));
  const auto steps = static_cast<std::size_t>(std::floor(cfg.duration / cfg.step + 1e-9));
  const auto path = markov_path(cfg.p_high_to_low, cfg.p_low_to_high, steps, cfg.start_high, rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  Trace t;
  t.id = std::move(id);
  t.kind = TraceKind::throughput_series;
  t.ground_truth_class = std::string(to_string(cfg.trace_class));
  t.samples.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double level = path[i] ? cfg.high_level : cfg.low_level;
    const double eps = cfg.noise_sigma > 0.0 ? noise(rng) : 0.0;
    t.samples.push_back({static_cast<double>(i) * cfg.step,
                         std::max(0.0, level * (1.0 + cfg.noise_sigma * eps))});
  }
  return t;
}

std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::majority_fast: return "majority_fast";
    case DatasetKind::balanced: return "balanced";
    case DatasetKind::majority_slow: return "majority_slow";
  }
  return "unknown";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "majority_fast") return DatasetKind::majority_fast;
  if (name == "balanced") return DatasetKind::balanced;
  if (name == "majority_slow") return DatasetKind::majority_slow;
  throw InvalidArgument("unknown dataset kind '" + std::string(name) + "'");
}

std::array<std::size_t, 4> class_counts(DatasetKind kind, std::size_t n) {
  if (n < 4) throw InvalidArgument("a TraceBench dataset needs at least 4 traces");
  auto halves = [](std::size_t m) { return std::array<std::size_t, 2>{m - m / 2, m / 2}; };
  switch (kind) {
    case DatasetKind::balanced: {
      std::array<std::size_t, 4> out{};
      for (std::size_t i = 0; i < 4; ++i) out[i] = n / 4 + (i < n % 4 ? 1 : 0);
      return out;
    }
    case DatasetKind::majority_fast:
    case DatasetKind::majority_slow: {
      const auto major = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
      const std::size_t minor = n - major;
      const auto fast = halves(kind == DatasetKind::majority_fast ? major : minor);
      const auto slow = halves(kind == DatasetKind::majority_fast ? minor : major);
      return {fast[0], fast[1], slow[0], slow[1]};
    }
  }
  return {};
}

TraceDataset build_dataset(DatasetKind kind, std::size_t n, std::uint64_t seed, DatasetRole role) {
  const auto counts = class_counts(kind, n);
  const std::string role_tag = role == DatasetRole::train ? "train" : "test";
  std::vector<TraceClass> classes;
  for (std::size_t c = 0; c < 4; ++c) classes.insert(classes.end(), counts[c], kAllClasses[c]);
  Rng order_rng(derive_seed(seed, "tracebench-order-" + role_tag + "-" + std::string(to_string(kind))));
  std::shuffle(classes.begin(), classes.end(), order_rng);

  TraceDataset ds;
  ds.name = std::string(to_string(kind)) + "-" + role_tag;
  for (std::size_t i = 0; i < n; ++i) {
    char id[96];
    std::snprintf(id, sizeof(id), "%s-%s-%04zu", std::string(to_string(kind)).c_str(), role_tag.c_str(), i);
    const auto trace_seed = derive_seed(seed, "tracebench-" + role_tag + "-" + std::string(to_string(kind)), i);
    ds.traces.push_back(generate_trace(TraceGenConfig::preset(classes[i], trace_seed), id));
  }
  return ds;
}

// ---- ABR -------------------------------------------------------------------------------------

ThroughputReplay::ThroughputReplay(const Trace& trace) {
  if (!trace.is_series() || trace.samples.empty()) {
    throw EnvError("trace '" + trace.id + "' cannot drive the ABR environment");
  }
  const auto& s = trace.samples;
  const double t0 = s.front().t;
  double last_step = 1.0;
  if (s.size() > 1) {
    std::vector<double> steps;
    for (std::size_t i = 1; i < s.size(); ++i) steps.push_back(s[i].t - s[i - 1].t);
    std::nth_element(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(steps.size() / 2), steps.end());
    last_step = steps[steps.size() / 2];
  }
  for (const auto& sample : s) {
    starts_.push_back(sample.t - t0);
    rates_.push_back(sample.v);
  }
  period_ = starts_.back() + last_step;
  for (std::size_t i = 0; i < starts_.size(); ++i) {
    const double end = i + 1 < starts_.size() ? starts_[i + 1] : period_;
    bytes_per_period_ += rates_[i] * (end - starts_[i]);
  }
  if (!(bytes_per_period_ > 0.0)) {
    throw EnvError("trace '" + trace.id + "' has zero total throughput");
  }
}

double ThroughputReplay::download_time(double start, double megabytes) const {
  if (megabytes <= 0.0) return 0.0;
  double tau = std::fmod(std::max(0.0, start), period_);
  auto it = std::upper_bound(starts_.begin(), starts_.end(), tau);
  std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - starts_.begin()) - 1));
  double remaining = megabytes;
  double elapsed = 0.0;
  while (true) {
    const double seg_end = i + 1 < starts_.size() ? starts_[i + 1] : period_;
    const double avail = rates_[i] * (seg_end - tau);
    if (rates_[i] > 0.0 && avail >= remaining) return elapsed + remaining / rates_[i];
    remaining -= avail;
    elapsed += seg_end - tau;
    tau = seg_end;
    ++i;
    if (i == starts_.size()) {
      i = 0;
      tau = 0.0;
      const double whole = std::floor(remaining / bytes_per_period_);
      if (whole >= 1.0) {
        elapsed += whole * period_;
        remaining -= whole * bytes_per_period_;
        if (remaining <= 0.0) return elapsed;
      }
    }
  }
}

double chunk_size(const AbrConfig& cfg, std::uint64_t episode_seed, std::size_t chunk, int bitrate_index) {
  const double nominal = cfg.bitrates.at(static_cast<std::size_t>(bitrate_index)) * cfg.chunk_seconds;
  if (cfg.chunk_size_sigma <= 0.0) return nominal;
  Rng rng(derive_seed(episode_seed, "chunk", chunk * 16 + static_cast<std::size_t>(bitrate_index)));
  std::normal_distribution<double> g(0.0, 1.0);
  return nominal * std::clamp(1.0 + cfg.chunk_size_sigma * g(rng), 0.5, 1.5);
}

AbrEnvState abr_reset(const Trace& trace, const AbrConfig& cfg, std::uint64_t episode_seed) {
  AbrEnvState s;
  s.total_chunks = std::min(cfg.max_chunks, trace.samples.size());
  s.episode_seed = episode_seed;
  return s;
}

AbrStepResult abr_step(const AbrEnvState& state, AbrAction action, const ThroughputReplay& replay,
                       const AbrConfig& cfg) {
  if (state.done()) throw EnvError("abr_step called on a finished episode");
  if (action.bitrate_index < 0 || action.bitrate_index >= static_cast<int>(cfg.bitrates.size())) {
    throw InvalidArgument("bitrate index " + std::to_string(action.bitrate_index) + " out of range");
  }
  AbrStepResult out{state, 0.0, {}};
  AbrEnvState& next = out.next;
  ChunkRecord& rec = out.record;
  rec.chunk = state.chunk_index;
  rec.bitrate_index = action.bitrate_index;
  rec.size = chunk_size(cfg, state.episode_seed, state.chunk_index, action.bitrate_index);
  rec.transmit = replay.download_time(state.wall_time, rec.size);
  rec.stall = state.chunk_index == 0 ? 0.0 : std::max(0.0, rec.transmit - state.buffer);
  next.buffer = std::max(0.0, state.buffer - rec.transmit) + cfg.chunk_seconds;
  next.wall_time = state.wall_time + rec.transmit;
  rec.sleep = std::max(0.0, next.buffer - cfg.max_buffer);
  next.buffer -= rec.sleep;
  next.wall_time += rec.sleep;
  rec.buffer = next.buffer;
  rec.reward = cfg.bitrates[static_cast<std::size_t>(action.bitrate_index)] - cfg.stall_penalty * rec.stall;
  out.reward = rec.reward;
  next.chunk_index = state.chunk_index + 1;
  next.history.push_back(rec);
  while (next.history.size() > cfg.history_len) next.history.pop_front();
  return out;
}

AbrStepResult abr_step(const AbrEnvState& state, AbrAction action, const Trace& trace,
                       const AbrConfig& cfg) {
  return abr_step(state, action, ThroughputReplay(trace), cfg);
}

std::size_t abr_observation_size(const AbrConfig& cfg) { return cfg.history_len * 4 + 2; }

std::vector<double> abr_observation(const AbrEnvState& state, const AbrConfig& cfg) {
  std::vector<double> obs(abr_observation_size(cfg), 0.0);
  const double top = cfg.bitrates.back();
  std::size_t slot = 0;
  for (auto it = state.history.rbegin(); it != state.history.rend() && slot < cfg.history_len; ++it, ++slot) {
    const double rate = it->transmit > 0.0 ? it->size / it->transmit : 0.0;
    obs[slot * 4 + 0] = cfg.bitrates[static_cast<std::size_t>(it->bitrate_index)] / top;
    obs[slot * 4 + 1] = std::min(it->transmit / 10.0, 3.0);
    obs[slot * 4 + 2] = std::min(it->stall / 10.0, 3.0);
    obs[slot * 4 + 3] = std::min(rate / 10.0, 3.0);
  }
  obs[cfg.history_len * 4] = state.buffer / cfg.max_buffer;
  obs[cfg.history_len * 4 + 1] =
      state.total_chunks == 0
          ? 0.0
          : static_cast<double>(state.total_chunks - state.chunk_index) / static_cast<double>(cfg.max_chunks);
  return obs;
}

AbrEnv::AbrEnv(AbrConfig cfg) : cfg_(cfg) {}

std::size_t AbrEnv::observation_size() const { return abr_observation_size(cfg_); }

std::vector<double> AbrEnv::reset(const Trace& trace, std::uint64_t seed) {
  replay_.emplace(trace);
  state_ = abr_reset(trace, cfg_, seed);
  log_.clear();
  return abr_observation(state_, cfg_);
}

StepOutcome AbrEnv::step(int action) {
  if (!replay_) throw EnvError("AbrEnv::step before reset");
  auto res = abr_step(state_, AbrAction{action}, *replay_, cfg_);
  state_ = std::move(res.next);
  log_.push_back(res.record);
  return {abr_observation(state_, cfg_), res.reward, state_.done()};
}

std::string episode_log_jsonl(const std::vector<ChunkRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    nlohmann::json j = {{"chunk", r.chunk},     {"action", r.bitrate_index}, {"size", r.size},
                        {"transmit", r.transmit}, {"stall", r.stall},        {"sleep", r.sleep},
                        {"buffer", r.buffer},   {"reward", r.reward}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace plume::tracebench
