#include "plume/load_balance.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "plume/error.hpp"
#include "plume/rng.hpp"

namespace plume::lb {

void LbConfig::validate() const {
  if (servers == 0) throw InvalidArgument("load balancer needs at least one server");
  if (!(arrival_rate > 0.0)) throw InvalidArgument("arrival_rate must be positive");
  if (!(pareto_scale > 0.0 && pareto_shape > 0.0)) throw InvalidArgument("invalid pareto parameters");
  if (trace_length == 0) throw InvalidArgument("trace_length must be positive");
}

Trace lb_generate(const LbConfig& cfg, std::uint64_t seed, std::string id) {
  cfg.validate();
  Rng rng(derive_seed(seed, "lb-jobs"));
  std::exponential_distribution<double> gap(cfg.arrival_rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Trace t;
  t.id = std::move(id);
  t.kind = TraceKind::job_size_series;
  double clock = 0.0;
  for (std::size_t i = 0; i < cfg.trace_length; ++i) {
    clock += gap(rng);
    // Inverse-CDF pareto draw; 1 - u lies in (0, 1].
    const double size = cfg.pareto_scale / std::pow(1.0 - u(rng), 1.0 / cfg.pareto_shape);
    if (!t.samples.empty() && !(clock > t.samples.back().t)) {
      clock = std::nextafter(t.samples.back().t, INFINITY);
    }
    t.samples.push_back({clock, size});
  }
  return t;
}

LbState lb_reset(const Trace& jobs, const LbConfig& cfg) {
  cfg.validate();
  LbState s;
  s.server_free_at.assign(cfg.servers, 0.0);
  s.total_jobs = jobs.samples.size();
  return s;
}

LbStepResult lb_step(const LbState& state, int server, const Trace& jobs, const LbConfig& cfg) {
  if (state.done()) throw EnvError("lb_step called on a finished episode");
  if (server < 0 || static_cast<std::size_t>(server) >= cfg.servers ||
      static_cast<std::size_t>(server) >= state.server_free_at.size()) {
    throw InvalidArgument("server index " + std::to_string(server) + " out of range");
  }
  const auto& job = jobs.samples.at(state.job_index);
  LbStepResult out{state, 0.0, 0.0};
  double& free_at = out.next.server_free_at[static_cast<std::size_t>(server)];
  const double finish = std::max(job.t, free_at) + job.v;
  free_at = finish;
  out.completion_time = finish - job.t;
  out.reward = -out.completion_time;
  out.next.job_index = state.job_index + 1;
  return out;
}

LbEnv::LbEnv(LbConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::vector<double> LbEnv::observe() const {
  std::vector<double> obs(observation_size(), 0.0);
  if (!trace_ || state_.done()) return obs;
  const auto& job = trace_->samples[state_.job_index];
  const double scale = std::max(cfg_.pareto_scale, 1e-9);
  obs[0] = job.v / scale;
  for (std::size_t s = 0; s < cfg_.servers; ++s) {
    obs[s + 1] = std::max(0.0, state_.server_free_at[s] - job.t) / (scale * 100.0);
  }
  return obs;
}

std::vector<double> LbEnv::reset(const Trace& trace, std::uint64_t /*seed*/) {
  if (trace.kind != TraceKind::job_size_series) {
    throw EnvError("trace '" + trace.id + "' is not a job-size series");
  }
  trace_ = trace;
  state_ = lb_reset(*trace_, cfg_);
  return observe();
}

StepOutcome LbEnv::step(int action) {
  if (!trace_) throw EnvError("LbEnv::step before reset");
  auto res = lb_step(state_, action, *trace_, cfg_);
  state_ = std::move(res.next);
  return {observe(), res.reward, state_.done()};
}

}  // namespace plume::lb
