#include "plume/replay.hpp"

#include <algorithm>
#include <cmath>

#include "plume/error.hpp"

namespace plume {

NStepBuilder::NStepBuilder(std::size_t n, double gamma) : n_(n), gamma_(gamma) {
  if (n == 0) throw InvalidArgument("n_step must be at least 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
}

Transition NStepBuilder::make(std::size_t len, const std::vector<double>& next, bool done) const {
  Transition t;
  t.state = pending_.front().state;
  t.action = pending_.front().action;
  double g = 1.0;
  for (std::size_t i = 0; i < len; ++i) {
    t.rewards.push_back(pending_[i].reward);
    t.reward += g * pending_[i].reward;
    g *= gamma_;
  }
  t.next = next;
  t.done = done;
  t.discount = done ? 0.0 : g;
  return t;
}

std::vector<Transition> NStepBuilder::push(std::vector<double> state, int action, double reward,
                                           const std::vector<double>& next, bool done) {
  pending_.push_back({std::move(state), action, reward});
  std::vector<Transition> out;
  if (done) {
    while (!pending_.empty()) {
      out.push_back(make(pending_.size(), next, true));
      pending_.pop_front();
    }
    return out;
  }
  if (pending_.size() == n_) {
    out.push_back(make(n_, next, false));
    pending_.pop_front();
  }
  return out;
}

SumTree::SumTree(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidArgument("sum tree capacity must be positive");
  base_ = 1;
  while (base_ < capacity) base_ <<= 1;
  nodes_.assign(2 * base_, 0.0);
}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= capacity_) throw InvalidArgument("sum tree leaf out of range");
  std::size_t i = base_ + leaf;
  nodes_[i] = value;
  for (i /= 2; i >= 1; i /= 2) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < base_) {
    const double left = nodes_[2 * i];
    if (mass < left || nodes_[2 * i + 1] <= 0.0) {
      i = 2 * i;
    } else {
      mass -= left;
      i = 2 * i + 1;
    }
  }
  return std::min(i - base_, capacity_ - 1);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::optional<PerConfig> per)
    : slots_(capacity), per_(per) {
  if (capacity == 0) throw InvalidArgument("replay capacity must be positive");
  if (per_) {
    if (!(per_->alpha >= 0.0) || !(per_->eta > 0.0)) throw InvalidArgument("invalid PER settings");
    tree_.emplace(capacity);
    priorities_.assign(capacity, 0.0);
  }
}

void ReplayBuffer::push(Transition t) {
  slots_[head_] = std::move(t);
  if (per_) {
    priorities_[head_] = max_priority_;
    tree_->set(head_, std::pow(max_priority_, per_->alpha));
  }
  head_ = (head_ + 1) % slots_.size();
  size_ = std::min(size_ + 1, slots_.size());
}

std::size_t ReplayBuffer::slot_of_age(std::size_t i) const {
  if (i >= size_) throw InvalidArgument("replay index out of range");
  const std::size_t oldest = size_ < slots_.size() ? 0 : head_;
  return (oldest + i) % slots_.size();
}

double ReplayBuffer::beta(std::uint64_t step) const {
  if (!per_) return 0.0;
  if (per_->beta_anneal_steps == 0) return per_->beta_end;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(per_->beta_anneal_steps));
  return per_->beta_start + frac * (per_->beta_end - per_->beta_start);
}

double ReplayBuffer::priority(std::size_t slot) const {
  return per_ ? priorities_.at(slot) : 1.0;
}

ReplaySample ReplayBuffer::sample(std::size_t batch, Rng& rng, std::uint64_t step) const {
  if (size_ == 0 || batch == 0) throw InvalidArgument("cannot sample from an empty replay buffer");
  ReplaySample out;
  out.slots.resize(batch);
  out.weights.assign(batch, 1.0);
  if (!per_) {
    std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
    for (auto& s : out.slots) s = slot_of_age(pick(rng));
    return out;
  }
  const double total = tree_->total();
  const double segment = total / static_cast<double>(batch);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double b = beta(step);
  double max_w = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double mass = std::min((static_cast<double>(i) + u(rng)) * segment, std::nextafter(total, 0.0));
    out.slots[i] = tree_->find(mass);
    const double p = tree_->get(out.slots[i]) / total;
    out.weights[i] = std::pow(static_cast<double>(size_) * p, -b);
    max_w = std::max(max_w, out.weights[i]);
  }
  for (double& w : out.weights) w /= max_w;
  return out;
}

void ReplayBuffer::update_priorities(const std::vector<std::size_t>& slots, const std::vector<double>& td) {
  if (!per_) return;
  if (slots.size() != td.size()) throw InvalidArgument("priority update sizes differ");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double p = std::abs(td[i]) + per_->eta;
    priorities_.at(slots[i]) = p;
    tree_->set(slots[i], std::pow(p, per_->alpha));
    max_priority_ = std::max(max_priority_, p);
  }
}

}  // namespace plume
