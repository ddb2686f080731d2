#include "plume/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "plume/error.hpp"

namespace plume {

void AgentConfig::validate() const {
  if (n_step == 0) throw InvalidArgument("n_step must be at least 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (replay_capacity < batch_size) throw InvalidArgument("replay capacity must be at least batch_size");
  if (target_sync_interval == 0) throw InvalidArgument("target_sync_interval must be positive");
  if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0)) {
    throw InvalidArgument("epsilon schedule must stay in [0, 1]");
  }
}

double AgentConfig::epsilon(std::uint64_t env_step) const {
  if (eps_anneal_steps == 0 || env_step >= eps_anneal_steps) return eps_end;
  const double frac = static_cast<double>(env_step) / static_cast<double>(eps_anneal_steps);
  return eps_start + frac * (eps_end - eps_start);
}

// ---- network --------------------------------------------------------------------------------

namespace {

std::vector<std::size_t> q_sizes(std::size_t obs, int actions, const std::vector<std::size_t>& hidden,
                                 bool dueling) {
  std::vector<std::size_t> s{obs};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(static_cast<std::size_t>(actions) + (dueling ? 1 : 0));
  return s;
}

constexpr char kQMagic[8] = {'P', 'L', 'U', 'M', 'E', 'Q', 'N', 'T'};
constexpr std::uint32_t kQVersion = 1;

}  // namespace

QNetwork::QNetwork(std::size_t obs_size, int actions, const std::vector<std::size_t>& hidden, bool dueling,
                   std::uint64_t seed)
    : net_(q_sizes(obs_size, actions, hidden, dueling), seed), actions_(actions), dueling_(dueling) {
  if (actions < 1) throw InvalidArgument("a Q network needs at least one action");
}

Eigen::MatrixXd QNetwork::combine(const Eigen::MatrixXd& raw) const {
  if (!dueling_) return raw;
  const Eigen::Index a = actions_;
  Eigen::MatrixXd adv = raw.bottomRows(a);
  const Eigen::RowVectorXd mean = adv.colwise().mean();
  adv.rowwise() -= mean;
  adv.rowwise() += raw.row(0);
  return adv;
}

Eigen::MatrixXd QNetwork::q_values(const Eigen::MatrixXd& obs) const {
  if (static_cast<std::size_t>(obs.rows()) != observation_size()) {
    throw InvalidArgument("observation has " + std::to_string(obs.rows()) + " entries, network expects " +
                          std::to_string(observation_size()));
  }
  return combine(net_.forward(obs));
}

std::vector<double> QNetwork::q_values(std::span<const double> obs) const {
  const Eigen::Map<const Eigen::VectorXd> x(obs.data(), static_cast<Eigen::Index>(obs.size()));
  const Eigen::MatrixXd q = q_values(Eigen::MatrixXd(x));
  return {q.data(), q.data() + q.size()};
}

Eigen::MatrixXd QNetwork::forward_train(const Eigen::MatrixXd& obs) {
  if (static_cast<std::size_t>(obs.rows()) != observation_size()) {
    throw InvalidArgument("observation batch has the wrong input size");
  }
  return combine(net_.forward_train(obs));
}

void QNetwork::backward(const Eigen::MatrixXd& grad_q) {
  if (!dueling_) {
    net_.backward(grad_q);
    return;
  }
  Eigen::MatrixXd raw(grad_q.rows() + 1, grad_q.cols());
  raw.row(0) = grad_q.colwise().sum();
  const Eigen::RowVectorXd mean = grad_q.colwise().mean();
  raw.bottomRows(grad_q.rows()) = grad_q.rowwise() - mean;
  net_.backward(raw);
}

void QNetwork::save(std::ostream& out) const {
  out.write(kQMagic, sizeof(kQMagic));
  const std::uint32_t version = kQVersion;
  const std::int32_t actions = actions_;
  const std::uint8_t dueling = dueling_ ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&actions), sizeof(actions));
  out.write(reinterpret_cast<const char*>(&dueling), sizeof(dueling));
  net_.save(out);
}

QNetwork QNetwork::load(std::istream& in) {
  char magic[sizeof(kQMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kQMagic, sizeof(magic)) != 0) throw InvalidArgument("not a Q-network checkpoint");
  std::uint32_t version = 0;
  std::int32_t actions = 0;
  std::uint8_t dueling = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&actions), sizeof(actions));
  in.read(reinterpret_cast<char*>(&dueling), sizeof(dueling));
  if (!in || version != kQVersion) throw InvalidArgument("unsupported Q-network checkpoint");
  QNetwork q;
  q.net_ = Mlp::load(in);
  q.actions_ = actions;
  q.dueling_ = dueling != 0;
  if (q.net_.output_size() != static_cast<std::size_t>(actions) + dueling) {
    throw InvalidArgument("Q-network checkpoint output size does not match its action count");
  }
  return q;
}

// ---- policy ---------------------------------------------------------------------------------

int greedy_action(std::span<const double> q) {
  if (q.empty()) throw InvalidArgument("greedy_action needs at least one value");
  int best = 0;
  for (std::size_t i = 1; i < q.size(); ++i) {
    if (q[i] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

int epsilon_greedy(std::span<const double> q, double epsilon, Rng& rng) {
  if (q.empty()) throw InvalidArgument("epsilon_greedy needs at least one value");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < epsilon) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(q.size()) - 1);
    return pick(rng);
  }
  return greedy_action(q);
}

// ---- learner --------------------------------------------------------------------------------

DqnAgent::DqnAgent(std::size_t obs_size, int actions, AgentConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      online_(obs_size, actions, cfg_.hidden_sizes, cfg_.dueling, derive_seed(cfg_.seed, "q-network")),
      target_(online_),
      replay_(cfg_.replay_capacity, cfg_.prioritized_replay ? std::optional<PerConfig>(cfg_.per) : std::nullopt),
      rng_(derive_seed(cfg_.seed, "learner")) {}

int DqnAgent::act(std::span<const double> obs, double epsilon, Rng& rng) const {
  if (obs.size() != online_.observation_size()) {
    throw InvalidArgument("observation has " + std::to_string(obs.size()) + " entries, network expects " +
                          std::to_string(online_.observation_size()));
  }
  const auto q = online_.q_values(obs);
  return epsilon_greedy(q, epsilon, rng);
}

std::optional<LearnStats> DqnAgent::learn_step() {
  if (replay_.size() < std::max(cfg_.learn_start, cfg_.batch_size)) return std::nullopt;
  const std::size_t b = cfg_.batch_size;
  const auto sample = replay_.sample(b, rng_, learn_steps_);
  const auto d = static_cast<Eigen::Index>(online_.observation_size());
  Eigen::MatrixXd obs(d, static_cast<Eigen::Index>(b));
  Eigen::MatrixXd next(d, static_cast<Eigen::Index>(b));
  for (std::size_t i = 0; i < b; ++i) {
    const auto& t = replay_.at(sample.slots[i]);
    const auto col = static_cast<Eigen::Index>(i);
    obs.col(col) = Eigen::Map<const Eigen::VectorXd>(t.state.data(), d);
    if (t.done) {
      next.col(col).setZero();
    } else {
      next.col(col) = Eigen::Map<const Eigen::VectorXd>(t.next.data(), d);
    }
  }
  const Eigen::MatrixXd q_next = target_.q_values(next);
  Eigen::MatrixXd q_next_online;
  if (cfg_.double_q) q_next_online = online_.q_values(next);

  const Eigen::MatrixXd q = online_.forward_train(obs);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  LearnStats stats;
  stats.td.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& t = replay_.at(sample.slots[i]);
    const auto col = static_cast<Eigen::Index>(i);
    double bootstrap = 0.0;
    if (!t.done) {
      if (cfg_.double_q) {
        Eigen::Index a_star = 0;
        for (Eigen::Index a = 1; a < q_next_online.rows(); ++a) {
          if (q_next_online(a, col) > q_next_online(a_star, col)) a_star = a;
        }
        bootstrap = q_next(a_star, col);
      } else {
        bootstrap = q_next.col(col).maxCoeff();
      }
    }
    const double y = t.reward + t.discount * bootstrap;
    const double delta = q(t.action, col) - y;
    stats.td[i] = delta;
    stats.loss += sample.weights[i] * delta * delta;
    stats.mean_abs_td += std::abs(delta);
    grad(t.action, col) = 2.0 * sample.weights[i] * delta / static_cast<double>(b);
  }
  stats.loss /= static_cast<double>(b);
  stats.mean_abs_td /= static_cast<double>(b);
  online_.backward(grad);
  AdamConfig adam;
  adam.lr = cfg_.lr;
  adam.max_grad_norm = cfg_.max_grad_norm;
  online_.adam_step(adam);
  replay_.update_priorities(sample.slots, stats.td);
  ++learn_steps_;
  if (learn_steps_ % cfg_.target_sync_interval == 0) {
    target_.copy_weights_from(online_);
    stats.synced = true;
  }
  return stats;
}

}  // namespace plume
