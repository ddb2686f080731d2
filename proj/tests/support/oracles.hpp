#pragma once

// Independent reference implementations used as test oracles. They follow the textbook
// definitions directly (long double accumulation, exact rational ranks, O(N^2) DFT) and share
// no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace oracle {

/// Exact rational quantile level p / d.
struct Level {
  std::int64_t p;
  std::int64_t d;
  double value() const { return static_cast<double>(p) / static_cast<double>(d); }
};

inline long double mean(const std::vector<double>& x) {
  long double s = 0.0L;
  for (double v : x) s += v;
  return s / static_cast<long double>(x.size());
}

inline long double pop_variance(const std::vector<double>& x) {
  const long double m = mean(x);
  long double s = 0.0L;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<long double>(x.size());
}

/// Linear interpolation between the order statistics around rank (n-1) p / d, computed with
/// integer arithmetic for the rank.
inline long double quantile(std::vector<double> x, Level q) {
  std::sort(x.begin(), x.end());
  const std::int64_t n = static_cast<std::int64_t>(x.size());
  const std::int64_t num = (n - 1) * q.p;
  const std::int64_t lo = num / q.d;
  const std::int64_t rem = num % q.d;
  if (rem == 0) return x[static_cast<std::size_t>(lo)];
  const long double frac = static_cast<long double>(rem) / static_cast<long double>(q.d);
  return x[static_cast<std::size_t>(lo)] +
         frac * (static_cast<long double>(x[static_cast<std::size_t>(lo) + 1]) - x[static_cast<std::size_t>(lo)]);
}

inline long double truncated_mean(const std::vector<double>& x, Level q) {
  const long double lo = quantile(x, q);
  const long double hi = quantile(x, {q.d - q.p, q.d});
  long double s = 0.0L;
  std::size_t c = 0;
  for (double v : x) {
    if (v >= lo && v <= hi) {
      s += v;
      ++c;
    }
  }
  return c ? s / static_cast<long double>(c) : 0.0L;
}

/// Magnitude-weighted mean frequency bin over bins 0..N/2 of a directly evaluated DFT.
inline long double spectral_centroid(const std::vector<double>& x) {
  const std::size_t n = x.size();
  long double num = 0.0L, den = 0.0L;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    long double re = 0.0L, im = 0.0L;
    for (std::size_t t = 0; t < n; ++t) {
      const long double ang = -2.0L * std::numbers::pi_v<long double> * static_cast<long double>((k * t) % n) /
                              static_cast<long double>(n);
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    const long double mag = std::sqrt(re * re + im * im);
    num += static_cast<long double>(k) * mag;
    den += mag;
  }
  return den > 0.0L ? num / den : 0.0L;
}

inline bool degenerate(const std::vector<double>& x) {
  const long double m = mean(x);
  return pop_variance(x) <= 1e-12L * std::max(1.0L, m * m);
}

inline long double ratio_beyond_sigma(const std::vector<double>& x, double r) {
  if (degenerate(x)) return 0.0L;
  const long double m = mean(x);
  const long double sd = std::sqrt(pop_variance(x));
  std::size_t c = 0;
  for (double v : x) c += std::fabs(v - m) > r * sd ? 1 : 0;
  return static_cast<long double>(c) / static_cast<long double>(x.size());
}

inline long double variation_coefficient(const std::vector<double>& x) {
  const long double m = mean(x);
  if (std::fabs(m) <= 1e-12L || degenerate(x)) return 0.0L;
  return std::sqrt(pop_variance(x)) / m;
}

/// Mean of 0.5 (x[i+1] - 2 x[i] + x[i-1]); the sum telescopes to the closed form used here.
inline long double mean_second_derivative_central(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 3) return 0.0L;
  const long double telescoped = (static_cast<long double>(x[n - 1]) - x[n - 2]) - (static_cast<long double>(x[1]) - x[0]);
  return 0.5L * telescoped / static_cast<long double>(n - 2);
}

inline long double truncated_mean_abs_change(const std::vector<double>& x, Level lo_q, Level hi_q) {
  std::vector<double> d;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) d.push_back(x[i + 1] - x[i]);
  if (d.empty()) return 0.0L;
  const long double lo = quantile(d, lo_q);
  const long double hi = quantile(d, hi_q);
  long double s = 0.0L;
  std::size_t c = 0;
  for (double v : d) {
    if (v >= lo && v <= hi) {
      s += std::fabs(v);
      ++c;
    }
  }
  return c ? s / static_cast<long double>(c) : 0.0L;
}

inline long double autocorrelation(const std::vector<double>& x, std::size_t lag) {
  if (lag >= x.size() || degenerate(x)) return 0.0L;
  const long double m = mean(x);
  long double s = 0.0L;
  for (std::size_t t = 0; t + lag < x.size(); ++t) s += (x[t] - m) * (x[t + lag] - m);
  return s / static_cast<long double>(x.size()) / pop_variance(x);
}

/// The 17 catalog features, in catalog order.
inline std::vector<long double> catalog(const std::vector<double>& x) {
  return {
      mean(x),
      quantile(x, {1, 40}),
      quantile(x, {1, 20}),
      quantile(x, {19, 20}),
      truncated_mean(x, {1, 20}),
      truncated_mean(x, {1, 8}),
      truncated_mean(x, {1, 4}),
      spectral_centroid(x),
      ratio_beyond_sigma(x, 1.0),
      ratio_beyond_sigma(x, 2.5),
      variation_coefficient(x),
      mean_second_derivative_central(x),
      truncated_mean_abs_change(x, {1, 20}, {19, 20}),
      truncated_mean_abs_change(x, {1, 80}, {79, 80}),
      autocorrelation(x, 3),
      autocorrelation(x, 4),
      autocorrelation(x, 8),
  };
}

/// Random non-negative series mixing a level process, noise, spikes and repeated values.
inline std::vector<double> random_series(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  double level = 1.0 + 9.0 * u(rng);
  const double noise = 0.05 + u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (u(rng) < 0.05) level = 1.0 + 9.0 * u(rng);
    double v = level + noise * g(rng);
    if (u(rng) < 0.02) v += 20.0 * u(rng);
    if (u(rng) < 0.1 && i > 0) v = x[i - 1];
    x[i] = std::max(0.0, v);
  }
  return x;
}

/// Entropy (bits) of the class frequencies in `labels`.
inline double entropy(const std::vector<int>& labels) {
  std::vector<int> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  double h = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double p = static_cast<double>(j - i) / static_cast<double>(sorted.size());
    h -= p * std::log2(p);
    i = j;
  }
  return h;
}

/// Best single-threshold information gain by trying every cut between distinct values.
inline double best_threshold_gain(const std::vector<int>& labels, const std::vector<double>& column) {
  const double h = entropy(labels);
  std::vector<double> cuts = column;
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double best = 0.0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double thr = 0.5 * (cuts[c] + cuts[c + 1]);
    std::vector<int> left, right;
    for (std::size_t i = 0; i < labels.size(); ++i) (column[i] <= thr ? left : right).push_back(labels[i]);
    const double n = static_cast<double>(labels.size());
    const double cond = static_cast<double>(left.size()) / n * entropy(left) +
                        static_cast<double>(right.size()) / n * entropy(right);
    best = std::max(best, h - cond);
  }
  return best;
}

/// Mean silhouette by the definition (Euclidean, singletons score 0).
template <typename Matrix>
double silhouette(const Matrix& x, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> by_label;
    std::vector<int> ids;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (x.row(static_cast<long>(i)) - x.row(static_cast<long>(j))).norm();
      auto it = std::find(ids.begin(), ids.end(), labels[j]);
      if (it == ids.end()) {
        ids.push_back(labels[j]);
        by_label.push_back({d, 1});
      } else {
        auto& e = by_label[static_cast<std::size_t>(it - ids.begin())];
        e.first += d;
        ++e.second;
      }
    }
    double a = -1.0, b = INFINITY;
    for (std::size_t c = 0; c < ids.size(); ++c) {
      const double avg = by_label[c].first / static_cast<double>(by_label[c].second);
      if (ids[c] == labels[i]) {
        a = avg;
      } else {
        b = std::min(b, avg);
      }
    }
    if (a < 0.0 || !std::isfinite(b)) continue;  // singleton or single cluster: contributes 0
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace oracle
