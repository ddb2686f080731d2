#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "plume/rng.hpp"

namespace plume {

/// n-step transition. `reward` is the discounted sum of `rewards`; `discount` is the factor
/// applied to the bootstrap value of `next` (0 at terminal).
struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> rewards;  // per-step rewards folded into `reward`
  std::vector<double> next;
  bool done = false;
  double discount = 0.0;
};

/// Turns a stream of one-step transitions into n-step transitions. At episode end the
/// remaining partial windows are flushed with a zero bootstrap.
class NStepBuilder {
 public:
  NStepBuilder(std::size_t n, double gamma);

  /// Returns the transitions completed by this step (zero, one, or a flush at done).
  std::vector<Transition> push(std::vector<double> state, int action, double reward,
                               const std::vector<double>& next, bool done);
  void clear() { pending_.clear(); }

 private:
  struct Step {
    std::vector<double> state;
    int action;
    double reward;
  };
  Transition make(std::size_t len, const std::vector<double>& next, bool done) const;

  std::size_t n_;
  double gamma_;
  std::deque<Step> pending_;
};

/// Binary sum tree over a fixed number of leaves.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);
  void set(std::size_t leaf, double value);
  double get(std::size_t leaf) const { return nodes_[base_ + leaf]; }
  double total() const { return nodes_[1]; }
  /// Leaf whose cumulative interval contains `mass` (0 <= mass < total).
  std::size_t find(double mass) const;
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t base_;
  std::vector<double> nodes_;
};

struct PerConfig {
  double alpha = 0.6;
  double beta_start = 0.4;
  double beta_end = 1.0;
  std::uint64_t beta_anneal_steps = 100000;
  double eta = 1e-3;
};

struct ReplaySample {
  std::vector<std::size_t> slots;
  std::vector<double> weights;  // importance corrections, max 1; all 1 without PER
};

/// Ring buffer with FIFO eviction; optional proportional prioritized sampling.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::optional<PerConfig> per = std::nullopt);

  void push(Transition t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return slots_.size(); }
  bool prioritized() const { return per_.has_value(); }
  const Transition& at(std::size_t slot) const { return slots_.at(slot); }
  /// Slot holding the i-th oldest transition.
  std::size_t slot_of_age(std::size_t i) const;

  /// Uniform with replacement, or proportional to priority^alpha with stratified draws.
  /// `step` drives the beta schedule.
  ReplaySample sample(std::size_t batch, Rng& rng, std::uint64_t step = 0) const;
  /// priority = |td| + eta.
  void update_priorities(const std::vector<std::size_t>& slots, const std::vector<double>& td);
  double priority(std::size_t slot) const;
  double beta(std::uint64_t step) const;

 private:
  std::vector<Transition> slots_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::optional<PerConfig> per_;
  std::optional<SumTree> tree_;
  std::vector<double> priorities_;
  double max_priority_ = 1.0;
};

}  // namespace plume
