#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tml/matrix.hpp"
#include "tml/transform.hpp"

namespace tml {

/// Every bank model applied to every pooled example (no exclusion).
struct CrossPredictionMatrix {
  Matrix values; // rows = examples, cols = task models
  std::vector<std::string> example_ids;
  std::vector<std::string> task_ids;
};

struct ClusterResult {
  std::vector<std::size_t> assignments;
  Matrix centroids; // one row per cluster
  double inertia = 0.0; // sum of squared distances to assigned centroid
  std::vector<double> inertia_history; // after every assignment step
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct KMeansOptions {
  std::size_t max_iter = 300;
  /// z-score each feature of the items before clustering.
  bool standardize = false;
};

/// Lloyd's algorithm over the rows of `items`. Initial centroids are a seeded
/// sample of distinct rows. Converges when an assignment step changes nothing,
/// so at termination every centroid is the mean of its members and every item
/// sits with its nearest centroid. A cluster that empties is reseeded with the
/// item farthest from its centroid.
ClusterResult kmeans(const Matrix& items, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

CrossPredictionMatrix cross_prediction_matrix(const ModelBank& bank, const Matrix& pool,
                                              std::vector<std::string> example_ids = {});

/// Items are tasks, described by their prediction vectors over the pool.
/// In both cluster_* calls `standardize` z-scores each task's predictions.
ClusterResult cluster_tasks(const CrossPredictionMatrix& matrix, std::size_t k, std::uint64_t seed,
                            const KMeansOptions& options = {});
/// Items are examples, described by the predictions of all task models.
ClusterResult cluster_examples(const CrossPredictionMatrix& matrix, std::size_t k, std::uint64_t seed,
                               const KMeansOptions& options = {});

/// Pairwise Euclidean distances between the rows of `items`.
Matrix pairwise_distances(const Matrix& items);

} // namespace tml
