#include "plume/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "plume/error.hpp"
#include "plume/parallel.hpp"
#include "plume/rng.hpp"

namespace plume {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

VectorXd logsumexp_rows(const MatrixXd& m) {
  VectorXd out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      out[i] = mx;
      continue;
    }
    out[i] = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

int argmax_row(const MatrixXd& m, Index i) {
  Index best = 0;
  for (Index j = 1; j < m.cols(); ++j) {
    if (m(i, j) > m(i, best)) best = j;
  }
  return static_cast<int>(best);
}

}  // namespace

MatrixXd GmmParams::weighted_log_prob(const MatrixXd& x) const {
  const Index n = x.rows();
  const Index d = x.cols();
  MatrixXd out(n, k);
  for (int j = 0; j < k; ++j) {
    const auto var = variances.row(j).array();
    const double log_norm = std::log(weights[j]) - 0.5 * (d * kLog2Pi + var.log().sum());
    const auto inv = var.inverse();
    for (Index i = 0; i < n; ++i) {
      const double maha = ((x.row(i) - means.row(j)).array().square() * inv).sum();
      out(i, j) = log_norm - 0.5 * maha;
    }
  }
  return out;
}

MatrixXd GmmParams::responsibilities(const MatrixXd& x, VectorXd* row_log_lik) const {
  MatrixXd wlp = weighted_log_prob(x);
  const VectorXd norm = logsumexp_rows(wlp);
  for (Index i = 0; i < wlp.rows(); ++i) {
    wlp.row(i) = (wlp.row(i).array() - norm[i]).exp();
    // Renormalize so that rows sum to one up to rounding of a single division.
    wlp.row(i) /= wlp.row(i).sum();
  }
  if (row_log_lik) *row_log_lik = norm;
  return wlp;
}

double GmmParams::log_likelihood(const MatrixXd& x) const {
  return logsumexp_rows(weighted_log_prob(x)).sum();
}

std::vector<int> GmmParams::predict(const MatrixXd& x) const {
  const MatrixXd wlp = weighted_log_prob(x);
  std::vector<int> labels(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) labels[static_cast<std::size_t>(i)] = argmax_row(wlp, i);
  return labels;
}

MatrixXd kmeanspp_init(const MatrixXd& x, int k, std::uint64_t seed) {
  const Index n = x.rows();
  if (k < 1) throw InvalidArgument("k must be at least 1");
  if (k > n) {
    throw InvalidArgument("k = " + std::to_string(k) + " exceeds row count " + std::to_string(n));
  }
  Rng rng(seed);
  MatrixXd centroids(k, x.cols());
  std::uniform_int_distribution<Index> first(0, n - 1);
  centroids.row(0) = x.row(first(rng));
  VectorXd d2(n);
  for (Index i = 0; i < n; ++i) d2[i] = (x.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      const double target = u(rng);
      double acc = 0.0;
      pick = -1;
      for (Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        // Rounding left `target` just above the accumulated sum; take the last eligible row.
        for (Index i = n - 1; i >= 0; --i) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      pick = first(rng);
    }
    centroids.row(c) = x.row(pick);
    for (Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x.row(i) - centroids.row(c)).squaredNorm());
    }
  }
  return centroids;
}

namespace {

/// Returns the index of a component whose effective count collapsed, or -1.
int m_step(const MatrixXd& x, const MatrixXd& resp, double reg_covar, GmmParams& p) {
  const Index n = x.rows();
  const VectorXd nk = resp.colwise().sum().transpose();
  for (int j = 0; j < p.k; ++j) {
    if (nk[j] < 1e-10) return j;
  }
  p.weights = nk / static_cast<double>(n);
  p.weights /= p.weights.sum();
  p.means = (resp.transpose() * x).array().colwise() / nk.array();
  for (int j = 0; j < p.k; ++j) {
    const auto diff = (x.rowwise() - p.means.row(j)).array().square();
    p.variances.row(j) =
        (resp.col(j).transpose() * diff.matrix()).array() / nk[j] + reg_covar;
  }
  return -1;
}

VectorXd column_variances(const MatrixXd& x) {
  const auto mean = x.colwise().mean();
  return ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows()))
      .transpose();
}

}  // namespace

GmmFit fit_gmm(const MatrixXd& x, int k, std::uint64_t seed, const GmmOptions& opts) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (n == 0 || d == 0) throw InvalidArgument("fit_gmm needs a non-empty matrix");
  if (!x.allFinite()) throw InvalidArgument("fit_gmm input contains non-finite values");
  const MatrixXd centroids = kmeanspp_init(x, k, seed);

  GmmFit fit;
  GmmParams& p = fit.params;
  p.k = k;
  p.reg_covar = opts.reg_covar;
  p.weights = VectorXd::Constant(k, 1.0 / k);
  p.means = centroids;
  p.variances = MatrixXd::Constant(k, d, 1.0);

  MatrixXd resp = MatrixXd::Zero(n, k);
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
      const double dist = (x.row(i) - centroids.row(j)).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = j;
      }
    }
    resp(i, best) = 1.0;
  }

  auto reseed = [&](int j, const VectorXd& row_ll) {
    if (fit.reseeded) {
      throw FitError("GMM component " + std::to_string(j) + " collapsed again after re-seeding (k = " +
                     std::to_string(k) + ")");
    }
    fit.reseeded = true;
    Index worst = 0;
    row_ll.minCoeff(&worst);
    p.means.row(j) = x.row(worst);
    p.variances.row(j) = column_variances(x).transpose().array() + opts.reg_covar;
    p.weights[j] = 1.0 / static_cast<double>(n);
    p.weights /= p.weights.sum();
    fit.log_likelihood_trace.clear();
  };

  if (int empty = m_step(x, resp, opts.reg_covar, p); empty >= 0) {
    // Hard assignment left a component without rows (duplicate centroids). Fill it in using
    // the other components' fit before re-seeding.
    const VectorXd nk = resp.colwise().sum().transpose();
    for (int j = 0; j < k; ++j) {
      if (nk[j] < 1e-10) {
        p.means.row(j) = centroids.row(j);
        p.variances.row(j) = column_variances(x).transpose().array() + opts.reg_covar;
        continue;
      }
      p.means.row(j) = (resp.col(j).transpose() * x) / nk[j];
      const auto diff = (x.rowwise() - p.means.row(j)).array().square();
      p.variances.row(j) = (resp.col(j).transpose() * diff.matrix()).array() / nk[j] + opts.reg_covar;
    }
    p.weights = (nk.array() + 1e-10).matrix() / (nk.sum() + k * 1e-10);
    VectorXd row_ll;
    p.responsibilities(x, &row_ll);
    reseed(empty, row_ll);
  }

  double prev_mean_ll = -std::numeric_limits<double>::infinity();
  VectorXd row_ll;
  for (int iter = 0;; ++iter) {
    resp = p.responsibilities(x, &row_ll);
    const double total = row_ll.sum();
    if (!std::isfinite(total)) throw FitError("GMM log-likelihood became non-finite");
    fit.log_likelihood_trace.push_back(total);
    fit.log_likelihood = total;
    fit.iterations = iter;
    const double mean_ll = total / static_cast<double>(n);
    if (std::abs(mean_ll - prev_mean_ll) < opts.tol) {
      fit.converged = true;
      break;
    }
    if (iter >= opts.max_iters) break;
    prev_mean_ll = mean_ll;
    if (int empty = m_step(x, resp, opts.reg_covar, p); empty >= 0) {
      reseed(empty, row_ll);
      prev_mean_ll = -std::numeric_limits<double>::infinity();
    }
  }
  fit.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) fit.labels[static_cast<std::size_t>(i)] = argmax_row(resp, i);
  return fit;
}

double silhouette_score(const MatrixXd& x, std::span<const int> labels) {
  const Index n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw InvalidArgument("silhouette: label count does not match row count");
  }
  std::map<int, int> remap;
  for (int l : labels) remap.emplace(l, 0);
  if (remap.size() < 2) throw InvalidArgument("silhouette undefined for fewer than two clusters");
  int next = 0;
  for (auto& [l, idx] : remap) idx = next++;
  const int k = next;
  std::vector<int> lab(labels.size());
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    lab[i] = remap[labels[i]];
    ++sizes[static_cast<std::size_t>(lab[i])];
  }
  double total = 0.0;
  std::vector<double> dist_sum(static_cast<std::size_t>(k));
  for (Index i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(lab[static_cast<std::size_t>(i)]);
    if (sizes[own] == 1) continue;  // singleton contributes 0
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dist_sum[static_cast<std::size_t>(lab[static_cast<std::size_t>(j)])] += (x.row(i) - x.row(j)).norm();
    }
    const double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < dist_sum.size(); ++c) {
      if (c == own) continue;
      b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

double cluster_purity(std::span<const int> labels, std::span<const std::string> classes) {
  if (labels.size() != classes.size() || labels.empty()) {
    throw InvalidArgument("purity: labels and classes must be non-empty and aligned");
  }
  std::map<int, std::map<std::string, int>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) ++counts[labels[i]][classes[i]];
  int hits = 0;
  for (const auto& [label, by_class] : counts) {
    int best = 0;
    for (const auto& [cls, c] : by_class) best = std::max(best, c);
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClusterModel search_clustering(const FeatureMatrix& matrix, const SearchOptions& opts) {
  const auto n = static_cast<int>(matrix.rows());
  if (opts.k_min < 1 || opts.k_min > opts.k_max) throw InvalidArgument("invalid k_range");
  if (opts.k_max > n) {
    throw InvalidArgument("k_range exceeds rows (k_max = " + std::to_string(opts.k_max) +
                          ", rows = " + std::to_string(n) + ")");
  }
  if (opts.seeds_per_k < 1) throw InvalidArgument("seeds_per_k must be positive");

  struct Job {
    int k;
    std::uint64_t seed;
    std::optional<GmmFit> fit;
    std::string error;
  };
  std::vector<Job> jobs;
  for (int k = opts.k_min; k <= opts.k_max; ++k) {
    for (int s = 0; s < opts.seeds_per_k; ++s) {
      jobs.push_back({k, derive_seed(opts.seed, "gmm-k" + std::to_string(k), static_cast<std::uint64_t>(s)), std::nullopt, {}});
    }
  }
  parallel_for(jobs.size(), opts.jobs, [&](std::size_t i) {
    try {
      jobs[i].fit = fit_gmm(matrix.data, jobs[i].k, jobs[i].seed, opts.gmm);
    } catch (const Error& e) {
      jobs[i].error = e.what();
    }
  });

  // Silhouette input, subsampled for large datasets.
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  if (rows.size() > opts.silhouette_max_rows) {
    Rng rng(derive_seed(opts.seed, "silhouette-subsample"));
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(opts.silhouette_max_rows);
    std::sort(rows.begin(), rows.end());
  }
  MatrixXd sil_x(static_cast<Index>(rows.size()), matrix.data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) sil_x.row(static_cast<Index>(i)) = matrix.data.row(rows[i]);

  ClusterModel best;
  const GmmFit* best_fit = nullptr;
  double best_sil = -std::numeric_limits<double>::infinity();
  for (int k = opts.k_min; k <= opts.k_max; ++k) {
    const GmmFit* winner = nullptr;
    std::uint64_t winner_seed = 0;
    for (const auto& job : jobs) {
      if (job.k != k || !job.fit) continue;
      if (!winner || job.fit->log_likelihood > winner->log_likelihood) {
        winner = &*job.fit;
        winner_seed = job.seed;
      }
    }
    SearchEntry entry{k, winner_seed, 0.0, 0.0, winner == nullptr};
    if (!winner) {
      spdlog::warn("clustering: every fit failed for k = {}; skipping", k);
      best.search_log.push_back(entry);
      continue;
    }
    entry.log_likelihood = winner->log_likelihood;
    std::vector<int> sub_labels;
    for (Index r : rows) sub_labels.push_back(winner->labels[static_cast<std::size_t>(r)]);
    try {
      entry.silhouette = silhouette_score(sil_x, sub_labels);
    } catch (const InvalidArgument&) {
      spdlog::warn("clustering: k = {} produced a single populated cluster", k);
      entry.silhouette = -1.0;
    }
    best.search_log.push_back(entry);
    if (entry.silhouette > best_sil) {
      best_sil = entry.silhouette;
      best_fit = winner;
    }
  }
  if (!best_fit) throw FitError("clustering failed for every k in the range");
  best.params = best_fit->params;
  best.labels = best_fit->labels;
  best.log_likelihood = best_fit->log_likelihood;
  best.silhouette = best_sil;
  best.trace_ids = matrix.trace_ids;
  best.specs = matrix.specs;
  return best;
}

KRange default_k_range(std::string_view domain) {
  if (domain == "tracebench") return {3, 7};
  if (domain == "abr") return {6, 15};
  if (domain == "cc") return {4, 9};
  if (domain == "lb") return {3, 8};
  throw InvalidArgument("unknown domain '" + std::string(domain) + "'");
}

// ---- JSON ------------------------------------------------------------------------------------

namespace {

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

MatrixXd json_matrix(const nlohmann::json& j) {
  const auto rows = static_cast<Index>(j.size());
  const auto cols = rows == 0 ? Index{0} : static_cast<Index>(j[0].size());
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j[static_cast<std::size_t>(i)].size()) != cols) {
      throw InvalidArgument("ragged matrix in cluster model JSON");
    }
    for (Index c = 0; c < cols; ++c) m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

std::string ClusterModel::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["k"] = params.k;
  j["weights"] = std::vector<double>(params.weights.data(), params.weights.data() + params.weights.size());
  j["means"] = matrix_json(params.means);
  j["variances"] = matrix_json(params.variances);
  j["reg_covar"] = params.reg_covar;
  nlohmann::json labels_j = nlohmann::json::object();
  for (std::size_t i = 0; i < labels.size(); ++i) labels_j[trace_ids.at(i)] = labels[i];
  j["labels"] = std::move(labels_j);
  j["log_likelihood"] = log_likelihood;
  j["silhouette"] = silhouette;
  nlohmann::json features = nlohmann::json::array();
  for (const auto& s : specs) features.push_back(s.name());
  j["features"] = std::move(features);
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : search_log) {
    log.push_back({{"k", e.k},
                   {"best_seed", e.best_seed},
                   {"log_likelihood", e.log_likelihood},
                   {"silhouette", e.silhouette},
                   {"failed", e.failed}});
  }
  j["search_log"] = std::move(log);
  return j.dump(2) + "\n";
}

ClusterModel ClusterModel::from_json(std::string_view text) {
  ClusterModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.value("schema_version", 0) != 1) throw InvalidArgument("unsupported cluster model schema");
    m.params.k = j.at("k").get<int>();
    const auto w = j.at("weights").get<std::vector<double>>();
    m.params.weights = Eigen::Map<const VectorXd>(w.data(), static_cast<Index>(w.size()));
    m.params.means = json_matrix(j.at("means"));
    m.params.variances = json_matrix(j.at("variances"));
    m.params.reg_covar = j.at("reg_covar").get<double>();
    for (const auto& [id, label] : j.at("labels").items()) {
      m.trace_ids.push_back(id);
      m.labels.push_back(label.get<int>());
    }
    m.log_likelihood = j.at("log_likelihood").get<double>();
    m.silhouette = j.at("silhouette").get<double>();
    for (const auto& f : j.at("features")) m.specs.push_back(FeatureSpec::parse(f.get<std::string>()));
    for (const auto& e : j.at("search_log")) {
      m.search_log.push_back({e.at("k").get<int>(), e.at("best_seed").get<std::uint64_t>(),
                              e.at("log_likelihood").get<double>(), e.at("silhouette").get<double>(),
                              e.at("failed").get<bool>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed cluster model JSON: ") + e.what());
  }
  if (m.params.weights.size() != m.params.k || m.params.means.rows() != m.params.k) {
    throw InvalidArgument("cluster model JSON is inconsistent with k");
  }
  return m;
}

}  // namespace plume
