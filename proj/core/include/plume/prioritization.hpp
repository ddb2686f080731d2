#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plume/mlp.hpp"
#include "plume/rng.hpp"
#include "plume/trace.hpp"

namespace plume {

/// Categorical distribution of traces over clusters: category i has label categories[i],
/// density pdf[i] and member trace ids members[i].
struct CategoricalDistribution {
  std::vector<int> categories;
  std::vector<double> pdf;
  std::vector<std::vector<std::string>> members;

  static CategoricalDistribution from_labels(std::span<const std::string> trace_ids,
                                             std::span<const int> labels);
  /// Every trace in one category (plain random sampling).
  static CategoricalDistribution single(std::span<const std::string> trace_ids);

  std::size_t size() const { return categories.size(); }
  std::size_t trace_count() const;
  /// Index into `categories` of the category holding `trace_id`.
  std::optional<std::size_t> category_of(const std::string& trace_id) const;
  void validate() const;

 private:
  std::map<std::string, std::size_t> index_;
  void build_index();
};

/// Sampling weights W per category. The effective pdf is W f / sum(W f).
struct WeightTable {
  std::vector<double> weights;
  std::uint64_t version = 0;

  static WeightTable uniform(std::size_t categories, std::uint64_t version = 0);
  std::vector<double> effective_pdf(const CategoricalDistribution& dist) const;
  void validate(const CategoricalDistribution& dist) const;
};

/// W = 1 / f. Empty categories (f = 0) get W = 0 and are excluded with a warning.
WeightTable static_weights(const CategoricalDistribution& dist);

struct TwoClassSampling {
  CategoricalDistribution dist;  // category 0: mean < threshold, category 1: mean >= threshold
  WeightTable table;
  bool fallback = false;         // one class was empty; sampling degenerates to random
};

/// Splits throughput traces by mean against `threshold` and gives each class total probability
/// one half.
TwoClassSampling two_class_equal_weights(const TraceDataset& dataset, double threshold);

struct TraceDraw {
  std::size_t category = 0;
  std::string trace_id;
};

/// Category drawn from the effective pdf, then a member uniformly.
TraceDraw sample_trace(const WeightTable& table, const CategoricalDistribution& dist, Rng& rng);

// ---- dynamic prioritization ----------------------------------------------------------------

struct EpisodeResult {
  std::string trace_id;
  std::size_t category = 0;        // index into CategoricalDistribution::categories
  double return_g = 0.0;           // discounted, normalized return
  std::vector<double> features;    // critical features of the trace
  std::uint64_t step = 0;          // learner env-step count when the episode finished
};

/// Anything that maps trace features to a predicted return.
class ReturnModel {
 public:
  virtual ~ReturnModel() = default;
  virtual double predict(std::span<const double> features) const = 0;
  virtual bool trained() const = 0;
};

struct PredictorConfig {
  std::vector<std::size_t> hidden = {64, 64};
  double lr = 1e-3;
  std::size_t capacity_per_category = 256;
  std::uint64_t seed = 0;
};

/// Feed-forward regressor from features to return, trained on bounded per-category FIFO
/// buffers of (features, return) pairs. Targets are standardized with the buffer statistics.
class ReturnPredictor final : public ReturnModel {
 public:
  ReturnPredictor(std::size_t feature_dim, std::size_t categories, PredictorConfig cfg = {});

  void observe(const EpisodeResult& result);
  std::size_t buffered(std::size_t category) const { return buffers_.at(category).size(); }
  std::size_t buffered() const;
  /// One squared-error step on a uniform batch over the union of buffers; nullopt (and no
  /// change) when fewer than batch_size pairs are buffered.
  std::optional<double> train_step(std::size_t batch_size, Rng& rng);

  double predict(std::span<const double> features) const override;
  bool trained() const override { return steps_ > 0; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::uint64_t steps() const { return steps_; }

  void save(std::ostream& out) const;
  static ReturnPredictor load(std::istream& in);

 private:
  struct Pair {
    std::vector<double> features;
    double target;
  };

  std::size_t feature_dim_;
  PredictorConfig cfg_;
  Mlp net_;
  std::vector<std::deque<Pair>> buffers_;
  double target_mean_ = 0.0;
  double target_std_ = 1.0;
  std::uint64_t steps_ = 0;
};

struct DynamicWeightConfig {
  double w_min = 0.05;
};

/// Per-category terms behind a dynamic update, before and after min-max normalization.
struct DynamicTerms {
  std::vector<double> prediction_error;  // mean |G_hat - G|
  std::vector<double> negative_return;   // -mean G
  std::vector<double> prediction_error_norm;
  std::vector<double> negative_return_norm;
  std::vector<bool> cold;                // category had an empty window
  bool predictor_untrained = false;
};

/// W_i proportional to minmax(mean |G_hat - G|)_i + minmax(-mean G)_i + w_min, scaled to mean 1.
/// `windows[i]` holds recent results of category i. The version is `previous_version + 1`.
WeightTable update_dynamic_weights(const ReturnModel& predictor, const CategoricalDistribution& dist,
                                   std::span<const std::deque<EpisodeResult>> windows,
                                   std::uint64_t previous_version, const DynamicWeightConfig& cfg = {},
                                   DynamicTerms* terms = nullptr);

// ---- trace selection service ---------------------------------------------------------------

/// Publishes immutable weight snapshots. A reader always sees one complete table.
class WeightBoard {
 public:
  explicit WeightBoard(WeightTable initial);
  std::shared_ptr<const WeightTable> snapshot() const;
  /// Rejects tables whose version does not increase.
  void publish(WeightTable table);

 private:
  std::shared_ptr<const WeightTable> current_;
};

/// Multi-producer, single-consumer queue.
template <typename T>
class MpscQueue {
 public:
  void push(T item) {
    std::lock_guard lock(mutex_);
    items_.push_back(std::move(item));
  }
  std::vector<T> drain() {
    std::lock_guard lock(mutex_);
    std::vector<T> out(std::make_move_iterator(items_.begin()), std::make_move_iterator(items_.end()));
    items_.clear();
    return out;
  }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::deque<T> items_;
};

/// Supplies traces to environments according to the latest published weights.
class TraceSelector {
 public:
  TraceSelector(CategoricalDistribution dist, WeightTable initial);
  TraceDraw sample(Rng& rng) const;
  std::shared_ptr<const WeightTable> snapshot() const { return board_.snapshot(); }
  void publish(WeightTable table) { board_.publish(std::move(table)); }
  const CategoricalDistribution& distribution() const { return dist_; }

 private:
  CategoricalDistribution dist_;
  WeightBoard board_;
};

struct DynamicPrioritizerConfig {
  std::size_t update_interval = 64;     // U: episodes between weight updates
  std::size_t window = 256;             // H: results kept per category
  std::size_t cold_start_intervals = 10;  // first update after cold_start_intervals * U episodes
  std::size_t predictor_batch = 32;
  std::size_t predictor_steps_per_episode = 1;
  DynamicWeightConfig weights;
  PredictorConfig predictor;
};

struct WeightRecord {
  std::uint64_t version = 0;
  std::uint64_t step = 0;
  std::size_t episodes = 0;
  std::vector<double> weights;
  DynamicTerms terms;
};

/// Consumes episode results, trains the return predictor and republishes dynamic weights every
/// `update_interval` episodes once the cold start is over.
class DynamicPrioritizer {
 public:
  DynamicPrioritizer(TraceSelector& selector, std::size_t feature_dim, DynamicPrioritizerConfig cfg);

  /// Safe to call from any actor thread.
  void submit(EpisodeResult result) { queue_.push(std::move(result)); }
  /// Single consumer: ingests queued results in submission order; returns true if new weights
  /// were published.
  bool process();

  const std::vector<WeightRecord>& history() const { return history_; }
  const ReturnPredictor& predictor() const { return predictor_; }
  std::size_t episodes_seen() const { return episodes_; }

 private:
  TraceSelector& selector_;
  DynamicPrioritizerConfig cfg_;
  ReturnPredictor predictor_;
  MpscQueue<EpisodeResult> queue_;
  std::vector<std::deque<EpisodeResult>> windows_;
  std::size_t episodes_ = 0;
  std::size_t since_update_ = 0;
  Rng rng_;
  std::vector<WeightRecord> history_;
};

/// Weight-trajectory JSON (one record per published version).
std::string weight_history_json(const std::vector<WeightRecord>& history,
                                const CategoricalDistribution& dist,
                                const std::vector<std::string>& category_names = {});

}  // namespace plume
