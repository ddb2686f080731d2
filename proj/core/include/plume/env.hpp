#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "plume/trace.hpp"

namespace plume {

struct StepOutcome {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
};

/// Trace-driven episodic environment as seen by the agent. One instance is single-threaded;
/// concurrent actors own separate instances.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::size_t observation_size() const = 0;
  virtual int action_count() const = 0;
  /// Starts an episode that replays `trace`; `seed` drives any per-episode randomness.
  virtual std::vector<double> reset(const Trace& trace, std::uint64_t seed) = 0;
  virtual StepOutcome step(int action) = 0;
};

}  // namespace plume
