#include "tml/explain.hpp"

#include <limits>
#include <numeric>

#include "tml/error.hpp"
#include "tml/parallel.hpp"
#include "tml/rng.hpp"

namespace tml {

namespace {

Matrix standardize_columns(const Matrix& m) {
  Matrix out = m;
  const auto n = static_cast<double>(m.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).sum() / n;
    double ss = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) ss += (m(r, c) - mean) * (m(r, c) - mean);
    const double sd = std::sqrt(ss / n);
    for (Eigen::Index r = 0; r < m.rows(); ++r) out(r, c) = sd > 0.0 ? (m(r, c) - mean) / sd : 0.0;
  }
  return out;
}

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double d2 = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    d2 += d * d;
  }
  return d2;
}

} // namespace

ClusterResult kmeans(const Matrix& raw_items, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  const auto n = static_cast<std::size_t>(raw_items.rows());
  if (n == 0) throw ValidationError("kmeans: no items to cluster");
  if (k < 1 || k > n)
    throw ValidationError("kmeans: k must lie in [1, " + std::to_string(n) + "], got " + std::to_string(k));
  if (options.max_iter < 1) throw ValidationError("kmeans: max_iter must be >= 1");
  const Matrix items = options.standardize ? standardize_columns(raw_items) : raw_items;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  ClusterResult result;
  result.k = k;
  result.seed = seed;
  result.centroids.resize(static_cast<Eigen::Index>(k), items.cols());
  for (std::size_t c = 0; c < k; ++c)
    result.centroids.row(static_cast<Eigen::Index>(c)) = items.row(static_cast<Eigen::Index>(order[c]));

  std::vector<std::size_t> assign(n, k), previous;
  std::vector<double> cost(n);
  for (std::size_t iter = 0; iter < options.max_iter; ++iter) {
    parallel_for(n, [&](std::size_t i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d2 =
            squared_distance(items, static_cast<Eigen::Index>(i), result.centroids, static_cast<Eigen::Index>(c));
        if (d2 < best) {
          best = d2;
          best_c = c;
        }
      }
      assign[i] = best_c;
      cost[i] = best;
    });
    double inertia = 0.0;
    for (double v : cost) inertia += v;
    result.inertia = inertia;
    result.inertia_history.push_back(inertia);
    result.iterations = iter + 1;
    if (assign == previous) {
      result.converged = true;
      break;
    }
    previous = assign;
    if (iter + 1 == options.max_iter) break;

    std::vector<std::size_t> members(k, 0);
    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), items.cols());
    for (std::size_t i = 0; i < n; ++i) {
      ++members[assign[i]];
      sums.row(static_cast<Eigen::Index>(assign[i])) += items.row(static_cast<Eigen::Index>(i));
    }
    for (std::size_t c = 0; c < k; ++c)
      if (members[c] > 0)
        result.centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(members[c]);
    for (std::size_t c = 0; c < k; ++c) {
      if (members[c] > 0) continue;
      std::size_t far = n;
      double far_cost = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (members[assign[i]] > 1 && cost[i] > far_cost) {
          far_cost = cost[i];
          far = i;
        }
      if (far == n) continue;
      --members[assign[far]];
      assign[far] = c;
      members[c] = 1;
      cost[far] = 0.0;
      result.centroids.row(static_cast<Eigen::Index>(c)) = items.row(static_cast<Eigen::Index>(far));
    }
  }
  result.assignments = std::move(assign);
  return result;
}

CrossPredictionMatrix cross_prediction_matrix(const ModelBank& bank, const Matrix& pool,
                                              std::vector<std::string> example_ids) {
  if (bank.models.empty()) throw ValidationError("cross_prediction_matrix: empty bank");
  const std::size_t p = bank.models.front().feature_count();
  if (static_cast<std::size_t>(pool.cols()) != p)
    throw ValidationError("cross_prediction_matrix: pool has " + std::to_string(pool.cols()) +
                          " columns, bank expects " + std::to_string(p));
  if (example_ids.empty())
    for (Eigen::Index r = 0; r < pool.rows(); ++r) example_ids.push_back(std::to_string(r));
  if (static_cast<Eigen::Index>(example_ids.size()) != pool.rows())
    throw ValidationError("cross_prediction_matrix: example id count does not match pool rows");

  CrossPredictionMatrix out;
  out.values.resize(pool.rows(), static_cast<Eigen::Index>(bank.size()));
  parallel_for(bank.size(), [&](std::size_t m) {
    try {
      out.values.col(static_cast<Eigen::Index>(m)) = predict(bank.models[m], pool);
    } catch (const std::exception& e) {
      throw Error("prediction by model '" + bank.task_ids[m] + "' failed: " + e.what());
    }
  });
  out.example_ids = std::move(example_ids);
  out.task_ids = bank.task_ids;
  return out;
}

namespace {

// Both views standardize per task: a task's prediction column is z-scored,
// which is a row of the item matrix when tasks are clustered.
Matrix prepared(const CrossPredictionMatrix& matrix, const KMeansOptions& options) {
  return options.standardize ? standardize_columns(matrix.values) : matrix.values;
}

KMeansOptions without_standardize(KMeansOptions options) {
  options.standardize = false;
  return options;
}

} // namespace

ClusterResult cluster_tasks(const CrossPredictionMatrix& matrix, std::size_t k, std::uint64_t seed,
                            const KMeansOptions& options) {
  if (matrix.values.size() == 0) throw ValidationError("cluster_tasks: empty cross-prediction matrix");
  return kmeans(prepared(matrix, options).transpose(), k, seed, without_standardize(options));
}

ClusterResult cluster_examples(const CrossPredictionMatrix& matrix, std::size_t k, std::uint64_t seed,
                               const KMeansOptions& options) {
  if (matrix.values.size() == 0) throw ValidationError("cluster_examples: empty cross-prediction matrix");
  return kmeans(prepared(matrix, options), k, seed, without_standardize(options));
}

Matrix pairwise_distances(const Matrix& items) {
  const Eigen::Index n = items.rows();
  Matrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) d(i, j) = d(j, i) = std::sqrt(squared_distance(items, i, items, j));
  return d;
}

} // namespace tml
