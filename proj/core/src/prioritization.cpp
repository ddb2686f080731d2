#include "plume/prioritization.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "plume/error.hpp"

namespace plume {

// ---- categorical distribution --------------------------------------------------------------

CategoricalDistribution CategoricalDistribution::from_labels(std::span<const std::string> trace_ids,
                                                             std::span<const int> labels) {
  if (trace_ids.size() != labels.size()) {
    throw InvalidArgument("trace id and label counts differ");
  }
  if (trace_ids.empty()) throw InvalidArgument("cannot build a distribution over no traces");
  std::map<int, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(trace_ids[i]);
  CategoricalDistribution d;
  const double n = static_cast<double>(trace_ids.size());
  for (auto& [label, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    d.categories.push_back(label);
    d.pdf.push_back(static_cast<double>(ids.size()) / n);
    d.members.push_back(std::move(ids));
  }
  d.build_index();
  d.validate();
  return d;
}

CategoricalDistribution CategoricalDistribution::single(std::span<const std::string> trace_ids) {
  std::vector<int> labels(trace_ids.size(), 0);
  return from_labels(trace_ids, labels);
}

std::size_t CategoricalDistribution::trace_count() const {
  std::size_t n = 0;
  for (const auto& m : members) n += m.size();
  return n;
}

void CategoricalDistribution::build_index() {
  index_.clear();
  for (std::size_t c = 0; c < members.size(); ++c) {
    for (const auto& id : members[c]) {
      if (!index_.emplace(id, c).second) {
        throw InvalidArgument("trace '" + id + "' belongs to more than one category");
      }
    }
  }
}

std::optional<std::size_t> CategoricalDistribution::category_of(const std::string& trace_id) const {
  if (index_.empty() && trace_count() != 0) {
    for (std::size_t c = 0; c < members.size(); ++c) {
      if (std::find(members[c].begin(), members[c].end(), trace_id) != members[c].end()) return c;
    }
    return std::nullopt;
  }
  auto it = index_.find(trace_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void CategoricalDistribution::validate() const {
  if (categories.size() != pdf.size() || categories.size() != members.size()) {
    throw InvalidArgument("categorical distribution fields are misaligned");
  }
  double sum = 0.0;
  for (double p : pdf) {
    if (!(p >= 0.0)) throw InvalidArgument("negative category density");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("category densities do not sum to 1");
}

// ---- weights --------------------------------------------------------------------------------

WeightTable WeightTable::uniform(std::size_t categories, std::uint64_t version) {
  return {std::vector<double>(categories, 1.0), version};
}

std::vector<double> WeightTable::effective_pdf(const CategoricalDistribution& dist) const {
  validate(dist);
  std::vector<double> out(weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = weights[i] * dist.pdf[i];
    total += out[i];
  }
  if (!(total > 0.0)) throw InvalidArgument("weight table gives zero mass to every category");
  for (double& p : out) p /= total;
  return out;
}

void WeightTable::validate(const CategoricalDistribution& dist) const {
  if (weights.size() != dist.size()) {
    throw InvalidArgument("weight table has " + std::to_string(weights.size()) +
                          " entries for " + std::to_string(dist.size()) + " categories");
  }
  bool any = false;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("weights must be finite and >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw InvalidArgument("at least one weight must be positive");
}

WeightTable static_weights(const CategoricalDistribution& dist) {
  WeightTable t;
  t.weights.resize(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist.pdf[i] > 0.0) {
      t.weights[i] = 1.0 / dist.pdf[i];
    } else {
      spdlog::warn("static weights: category {} is empty and is excluded", dist.categories[i]);
      t.weights[i] = 0.0;
    }
  }
  t.validate(dist);
  return t;
}

TwoClassSampling two_class_equal_weights(const TraceDataset& dataset, double threshold) {
  if (dataset.empty()) throw InvalidArgument("two-class sampling needs a non-empty dataset");
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& t : dataset.traces) {
    if (t.kind != TraceKind::throughput_series) {
      throw InvalidArgument("two-class sampling needs throughput traces; '" + t.id + "' is not one");
    }
    const auto v = t.values();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    ids.push_back(t.id);
    labels.push_back(mean >= threshold ? 1 : 0);
  }
  TwoClassSampling out;
  out.dist = CategoricalDistribution::from_labels(ids, labels);
  if (out.dist.size() < 2) {
    spdlog::warn("two-class sampling: every trace falls in one class at threshold {}; using random sampling",
                 threshold);
    out.fallback = true;
    out.table = WeightTable::uniform(out.dist.size());
    return out;
  }
  // Each class gets total probability 1/2.
  out.table.weights = {0.5 / out.dist.pdf[0], 0.5 / out.dist.pdf[1]};
  return out;
}

TraceDraw sample_trace(const WeightTable& table, const CategoricalDistribution& dist, Rng& rng) {
  const auto f = table.effective_pdf(dist);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  std::size_t cat = f.size();
  for (std::size_t i = 0; i < f.size(); ++i) {
    acc += f[i];
    if (r < acc && f[i] > 0.0) {
      cat = i;
      break;
    }
  }
  if (cat == f.size()) {
    // r landed in the rounding gap above the last partial sum: take the last positive category.
    for (std::size_t i = f.size(); i-- > 0;) {
      if (f[i] > 0.0) {
        cat = i;
        break;
      }
    }
  }
  const auto& members = dist.members[cat];
  if (members.empty()) throw InvalidArgument("sampled category has no members");
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  return {cat, members[pick(rng)]};
}

// ---- return predictor -----------------------------------------------------------------------

namespace {

std::vector<std::size_t> predictor_sizes(std::size_t dim, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> s{dim};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(1);
  return s;
}

constexpr char kPredictorMagic[8] = {'P', 'L', 'U', 'M', 'E', 'R', 'E', 'T'};
constexpr std::uint32_t kPredictorVersion = 1;

}  // namespace

ReturnPredictor::ReturnPredictor(std::size_t feature_dim, std::size_t categories, PredictorConfig cfg)
    : feature_dim_(feature_dim),
      cfg_(std::move(cfg)),
      net_(predictor_sizes(feature_dim, cfg_.hidden), derive_seed(cfg_.seed, "return-predictor")),
      buffers_(categories) {
  if (feature_dim == 0) throw InvalidArgument("return predictor needs at least one feature");
  if (categories == 0) throw InvalidArgument("return predictor needs at least one category");
  if (cfg_.capacity_per_category == 0) throw InvalidArgument("predictor capacity must be positive");
}

void ReturnPredictor::observe(const EpisodeResult& result) {
  if (result.features.size() != feature_dim_) {
    throw InvalidArgument("episode result for '" + result.trace_id + "' has " +
                          std::to_string(result.features.size()) + " features, expected " +
                          std::to_string(feature_dim_));
  }
  if (!std::isfinite(result.return_g)) throw InvalidArgument("episode return is not finite");
  auto& buf = buffers_.at(result.category);
  buf.push_back({result.features, result.return_g});
  while (buf.size() > cfg_.capacity_per_category) buf.pop_front();
}

std::size_t ReturnPredictor::buffered() const {
  std::size_t n = 0;
  for (const auto& b : buffers_) n += b.size();
  return n;
}

std::optional<double> ReturnPredictor::train_step(std::size_t batch_size, Rng& rng) {
  const std::size_t total = buffered();
  if (batch_size == 0 || total < batch_size) return std::nullopt;
  double sum = 0.0, sq = 0.0;
  for (const auto& b : buffers_) {
    for (const auto& p : b) {
      sum += p.target;
      sq += p.target * p.target;
    }
  }
  target_mean_ = sum / static_cast<double>(total);
  target_std_ = std::sqrt(std::max(0.0, sq / static_cast<double>(total) - target_mean_ * target_mean_));
  if (target_std_ < 1e-8) target_std_ = 1.0;

  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(feature_dim_), static_cast<Eigen::Index>(batch_size));
  Eigen::MatrixXd y(1, static_cast<Eigen::Index>(batch_size));
  for (std::size_t b = 0; b < batch_size; ++b) {
    std::size_t idx = pick(rng);
    std::size_t c = 0;
    while (idx >= buffers_[c].size()) idx -= buffers_[c++].size();
    const auto& p = buffers_[c][idx];
    for (std::size_t j = 0; j < feature_dim_; ++j) x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) = p.features[j];
    y(0, static_cast<Eigen::Index>(b)) = (p.target - target_mean_) / target_std_;
  }
  const Eigen::MatrixXd& out = net_.forward_train(x);
  const Eigen::MatrixXd diff = out - y;
  const double loss = diff.squaredNorm() / static_cast<double>(batch_size);
  net_.backward(2.0 * diff / static_cast<double>(batch_size));
  net_.adam_step({cfg_.lr});
  ++steps_;
  // Loss reported in target units.
  return loss * target_std_ * target_std_;
}

double ReturnPredictor::predict(std::span<const double> features) const {
  if (features.size() != feature_dim_) throw InvalidArgument("predictor input has the wrong size");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(feature_dim_), 1);
  for (std::size_t j = 0; j < feature_dim_; ++j) x(static_cast<Eigen::Index>(j), 0) = features[j];
  return target_mean_ + target_std_ * net_.forward(x)(0, 0);
}

void ReturnPredictor::save(std::ostream& out) const {
  out.write(kPredictorMagic, sizeof(kPredictorMagic));
  const std::uint32_t version = kPredictorVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t dim = feature_dim_, cats = buffers_.size(), steps = steps_;
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(&cats), sizeof(cats));
  out.write(reinterpret_cast<const char*>(&steps), sizeof(steps));
  out.write(reinterpret_cast<const char*>(&target_mean_), sizeof(double));
  out.write(reinterpret_cast<const char*>(&target_std_), sizeof(double));
  net_.save(out);
}

ReturnPredictor ReturnPredictor::load(std::istream& in) {
  char magic[sizeof(kPredictorMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kPredictorMagic, sizeof(magic)) != 0) {
    throw InvalidArgument("not a return-predictor checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t dim = 0, cats = 0, steps = 0;
  double mean = 0.0, sd = 1.0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kPredictorVersion) throw InvalidArgument("unsupported return-predictor checkpoint version");
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  in.read(reinterpret_cast<char*>(&cats), sizeof(cats));
  in.read(reinterpret_cast<char*>(&steps), sizeof(steps));
  in.read(reinterpret_cast<char*>(&mean), sizeof(mean));
  in.read(reinterpret_cast<char*>(&sd), sizeof(sd));
  if (!in) throw InvalidArgument("truncated return-predictor checkpoint");
  Mlp net = Mlp::load(in);
  PredictorConfig cfg;
  cfg.hidden.assign(net.sizes().begin() + 1, net.sizes().end() - 1);
  ReturnPredictor p(static_cast<std::size_t>(dim), static_cast<std::size_t>(cats), cfg);
  p.net_ = std::move(net);
  p.steps_ = steps;
  p.target_mean_ = mean;
  p.target_std_ = sd;
  return p;
}

// ---- dynamic weights ------------------------------------------------------------------------

namespace {

std::vector<double> min_max(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.0);
  const double span = *hi - *lo;
  if (!(span > 1e-12 * std::max(1.0, std::max(std::abs(*lo), std::abs(*hi))))) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / span;
  return out;
}

}  // namespace

WeightTable update_dynamic_weights(const ReturnModel& predictor, const CategoricalDistribution& dist,
                                   std::span<const std::deque<EpisodeResult>> windows,
                                   std::uint64_t previous_version, const DynamicWeightConfig& cfg,
                                   DynamicTerms* terms_out) {
  const std::size_t k = dist.size();
  if (windows.size() != k) throw InvalidArgument("one result window per category is required");
  if (!(cfg.w_min >= 0.0)) throw InvalidArgument("w_min must be non-negative");
  DynamicTerms terms;
  terms.predictor_untrained = !predictor.trained();
  terms.prediction_error.assign(k, 0.0);
  terms.negative_return.assign(k, 0.0);
  terms.cold.assign(k, false);

  double global_err = 0.0, global_ret = 0.0;
  std::size_t global_n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (windows[c].empty()) {
      terms.cold[c] = true;
      continue;
    }
    double err = 0.0, ret = 0.0;
    for (const auto& r : windows[c]) {
      const double g_hat = terms.predictor_untrained ? 0.0 : predictor.predict(r.features);
      err += std::abs(g_hat - r.return_g);
      ret += r.return_g;
    }
    global_err += err;
    global_ret += ret;
    global_n += windows[c].size();
    const double n = static_cast<double>(windows[c].size());
    terms.prediction_error[c] = err / n;
    terms.negative_return[c] = -ret / n;
  }
  if (global_n == 0) throw InvalidArgument("dynamic weights need at least one episode result");
  for (std::size_t c = 0; c < k; ++c) {
    if (terms.cold[c]) {
      terms.prediction_error[c] = global_err / static_cast<double>(global_n);
      terms.negative_return[c] = -global_ret / static_cast<double>(global_n);
    }
  }
  if (terms.predictor_untrained) {
    // Without a trained predictor the error term carries no category information.
    spdlog::warn("dynamic weights: return predictor is untrained; error term held constant");
    std::fill(terms.prediction_error.begin(), terms.prediction_error.end(), 1.0);
  }
  terms.prediction_error_norm = min_max(terms.prediction_error);
  terms.negative_return_norm = min_max(terms.negative_return);

  WeightTable table;
  table.version = previous_version + 1;
  table.weights.resize(k);
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    table.weights[c] = terms.prediction_error_norm[c] + terms.negative_return_norm[c] + cfg.w_min;
    sum += table.weights[c];
  }
  if (!(sum > 0.0)) {
    std::fill(table.weights.begin(), table.weights.end(), 1.0);
  } else {
    for (double& w : table.weights) w *= static_cast<double>(k) / sum;
  }
  if (terms_out) *terms_out = std::move(terms);
  return table;
}

// ---- selection service ----------------------------------------------------------------------

namespace {
std::mutex& board_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

WeightBoard::WeightBoard(WeightTable initial)
    : current_(std::make_shared<const WeightTable>(std::move(initial))) {}

std::shared_ptr<const WeightTable> WeightBoard::snapshot() const {
  std::lock_guard lock(board_mutex());
  return current_;
}

void WeightBoard::publish(WeightTable table) {
  auto next = std::make_shared<const WeightTable>(std::move(table));
  std::lock_guard lock(board_mutex());
  if (next->version <= current_->version) {
    throw InvalidArgument("weight table version " + std::to_string(next->version) +
                          " does not advance past " + std::to_string(current_->version));
  }
  current_ = std::move(next);
}

TraceSelector::TraceSelector(CategoricalDistribution dist, WeightTable initial)
    : dist_(std::move(dist)), board_((initial.validate(dist_), std::move(initial))) {}

TraceDraw TraceSelector::sample(Rng& rng) const {
  const auto table = board_.snapshot();
  return sample_trace(*table, dist_, rng);
}

DynamicPrioritizer::DynamicPrioritizer(TraceSelector& selector, std::size_t feature_dim,
                                       DynamicPrioritizerConfig cfg)
    : selector_(selector),
      cfg_(std::move(cfg)),
      predictor_(feature_dim, selector.distribution().size(), cfg_.predictor),
      windows_(selector.distribution().size()),
      rng_(derive_seed(cfg_.predictor.seed, "dynamic-prioritizer")) {
  if (cfg_.update_interval == 0 || cfg_.window == 0) {
    throw InvalidArgument("update interval and window must be positive");
  }
}

bool DynamicPrioritizer::process() {
  bool published = false;
  for (auto& r : queue_.drain()) {
    const std::uint64_t step = r.step;
    predictor_.observe(r);
    auto& win = windows_.at(r.category);
    win.push_back(std::move(r));
    while (win.size() > cfg_.window) win.pop_front();
    ++episodes_;
    ++since_update_;
    for (std::size_t s = 0; s < cfg_.predictor_steps_per_episode; ++s) {
      predictor_.train_step(cfg_.predictor_batch, rng_);
    }
    if (episodes_ >= cfg_.cold_start_intervals * cfg_.update_interval &&
        since_update_ >= cfg_.update_interval) {
      since_update_ = 0;
      WeightRecord rec;
      auto table = update_dynamic_weights(predictor_, selector_.distribution(), windows_,
                                          selector_.snapshot()->version, cfg_.weights, &rec.terms);
      rec.version = table.version;
      rec.step = step;
      rec.episodes = episodes_;
      rec.weights = table.weights;
      selector_.publish(std::move(table));
      history_.push_back(std::move(rec));
      published = true;
    }
  }
  return published;
}

std::string weight_history_json(const std::vector<WeightRecord>& history,
                                const CategoricalDistribution& dist,
                                const std::vector<std::string>& category_names) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["categories"] = dist.categories;
  j["pdf"] = dist.pdf;
  if (!category_names.empty()) j["category_names"] = category_names;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : history) {
    nlohmann::json rj = {{"version", r.version},
                         {"step", r.step},
                         {"episodes", r.episodes},
                         {"weights", r.weights}};
    if (!r.terms.prediction_error.empty()) {
      rj["prediction_error"] = r.terms.prediction_error;
      rj["negative_return"] = r.terms.negative_return;
      rj["predictor_untrained"] = r.terms.predictor_untrained;
    }
    recs.push_back(std::move(rj));
  }
  j["versions"] = std::move(recs);
  return j.dump(2) + "\n";
}

}  // namespace plume
