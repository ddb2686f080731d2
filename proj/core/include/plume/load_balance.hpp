#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plume/env.hpp"
#include "plume/trace.hpp"

namespace plume::lb {

/// Job-trace generator and k-server FIFO simulator. Distribution parameters are taken
/// literally: inter-arrival ~ exponential(rate = arrival_rate), size ~ pareto(scale, shape).
struct LbConfig {
  std::size_t servers = 10;
  double arrival_rate = 55.0;
  double pareto_scale = 1.5;  // x_m
  double pareto_shape = 100.0;  // alpha
  std::size_t trace_length = 650;

  void validate() const;
};

/// Job trace: sample t = arrival time, v = job size.
Trace lb_generate(const LbConfig& cfg, std::uint64_t seed, std::string id);

struct LbState {
  std::vector<double> server_free_at;  // time each server finishes its queue
  std::size_t job_index = 0;
  std::size_t total_jobs = 0;

  bool done() const { return job_index >= total_jobs; }
};

struct LbStepResult {
  LbState next;
  double reward = 0.0;           // negative completion time
  double completion_time = 0.0;  // finish - arrival
};

LbState lb_reset(const Trace& jobs, const LbConfig& cfg);
/// Assigns the next job to `server`. Servers work FIFO at unit rate.
LbStepResult lb_step(const LbState& state, int server, const Trace& jobs, const LbConfig& cfg);

class LbEnv final : public Environment {
 public:
  explicit LbEnv(LbConfig cfg = {});
  std::size_t observation_size() const override { return cfg_.servers + 1; }
  int action_count() const override { return static_cast<int>(cfg_.servers); }
  std::vector<double> reset(const Trace& trace, std::uint64_t seed) override;
  StepOutcome step(int action) override;

 private:
  std::vector<double> observe() const;

  LbConfig cfg_;
  std::optional<Trace> trace_;
  LbState state_;
};

}  // namespace plume::lb
