#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "plume/mlp.hpp"
#include "plume/replay.hpp"
#include "plume/rng.hpp"

namespace plume {

struct AgentConfig {
  std::size_t history_len = 10;
  std::size_t n_step = 7;
  double gamma = 0.975;
  double lr = 1e-4;
  double eps_start = 1.0;
  double eps_end = 0.05;
  std::uint64_t eps_anneal_steps = 100000;
  std::size_t replay_capacity = 50000;
  std::size_t batch_size = 64;
  std::size_t learn_start = 1000;             // transitions stored before learning starts
  std::uint64_t target_sync_interval = 1000;  // learn steps
  std::vector<std::size_t> hidden_sizes = {256, 256};
  bool dueling = false;
  bool double_q = false;
  bool prioritized_replay = false;
  PerConfig per;
  double max_grad_norm = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
  /// Linear anneal from eps_start to eps_end over eps_anneal_steps env steps.
  double epsilon(std::uint64_t env_step) const;
};

/// Q(s, .) approximator. With `dueling` the network emits (V, A_1..A_n) and
/// Q = V + A - mean(A).
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(std::size_t obs_size, int actions, const std::vector<std::size_t>& hidden, bool dueling,
           std::uint64_t seed);

  std::size_t observation_size() const { return net_.input_size(); }
  int action_count() const { return actions_; }
  bool dueling() const { return dueling_; }

  /// Column per example; returns actions x batch.
  Eigen::MatrixXd q_values(const Eigen::MatrixXd& obs) const;
  std::vector<double> q_values(std::span<const double> obs) const;
  Eigen::MatrixXd forward_train(const Eigen::MatrixXd& obs);
  void backward(const Eigen::MatrixXd& grad_q);
  void adam_step(const AdamConfig& cfg) { net_.adam_step(cfg); }

  void copy_weights_from(const QNetwork& other) { net_.copy_weights_from(other.net_); }
  bool same_weights(const QNetwork& other) const { return net_.same_weights(other.net_); }
  void save(std::ostream& out) const;
  static QNetwork load(std::istream& in);

 private:
  Eigen::MatrixXd combine(const Eigen::MatrixXd& raw) const;

  Mlp net_;
  int actions_ = 0;
  bool dueling_ = false;
};

/// argmax with ties to the lowest index.
int greedy_action(std::span<const double> q);
/// Uniform action with probability epsilon, otherwise greedy_action(q).
int epsilon_greedy(std::span<const double> q, double epsilon, Rng& rng);

struct LearnStats {
  double loss = 0.0;         // importance-weighted mean squared TD error
  double mean_abs_td = 0.0;
  std::vector<double> td;    // per sampled transition
  bool synced = false;       // target network was synced after this step
};

/// n-step DQN learner. Owns the online and target networks and the replay buffer.
class DqnAgent {
 public:
  DqnAgent(std::size_t obs_size, int actions, AgentConfig cfg);

  int act(std::span<const double> obs, double epsilon, Rng& rng) const;
  void store(Transition t) { replay_.push(std::move(t)); }
  /// One gradient step; nullopt (and no change) until `learn_start` transitions are stored
  /// and the buffer holds at least one batch.
  std::optional<LearnStats> learn_step();

  const QNetwork& online() const { return online_; }
  const QNetwork& target() const { return target_; }
  const ReplayBuffer& replay() const { return replay_; }
  const AgentConfig& config() const { return cfg_; }
  std::uint64_t learn_steps() const { return learn_steps_; }

  void save(std::ostream& out) const { online_.save(out); }

 private:
  AgentConfig cfg_;
  QNetwork online_;
  QNetwork target_;
  ReplayBuffer replay_;
  Rng rng_;
  std::uint64_t learn_steps_ = 0;
};

}  // namespace plume
