#include <doctest.h>

#include <set>

#include "support.hpp"
#include "tml/error.hpp"
#include "tml/explain.hpp"
#include "tml/parallel.hpp"

using namespace tml;

namespace {

constexpr int kCases = 250;

Vector row_mean(const Matrix& items, const std::vector<std::size_t>& assign, std::size_t c) {
  Vector sum = Vector::Zero(items.cols());
  std::size_t count = 0;
  for (std::size_t i = 0; i < assign.size(); ++i)
    if (assign[i] == c) {
      sum += items.row(static_cast<Eigen::Index>(i)).transpose();
      ++count;
    }
  return count ? Vector(sum / static_cast<double>(count)) : sum;
}

double sq(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) { return (a.row(i) - b.row(j)).squaredNorm(); }

// Random items drawn around a few centres so clusters are not trivial.
Matrix clustered_items(Rng& rng) {
  const auto n = static_cast<Eigen::Index>(3 + rng.below(40));
  const auto p = static_cast<Eigen::Index>(1 + rng.below(5));
  const auto centres = static_cast<Eigen::Index>(1 + rng.below(4));
  const Matrix c = test::random_matrix(rng, centres, p) * 4.0;
  Matrix items(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    items.row(i) = c.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(centres)))) +
                   test::random_matrix(rng, 1, p);
  return items;
}

CrossPredictionMatrix matrix_of(const Matrix& values) {
  CrossPredictionMatrix m;
  m.values = values;
  m.example_ids = test::ids("e", static_cast<std::size_t>(values.rows()));
  m.task_ids = test::ids("t", static_cast<std::size_t>(values.cols()));
  return m;
}

} // namespace

TEST_SUITE("explain") {

TEST_CASE("cross-prediction matrix equals direct predict calls") {
  const TaskCollection c = test::toy_collection(3, 10, 2, 3);
  const ModelBank bank = stage1_train(c, LearnerSpec::forest(10, 1), TrainingScope::FullTask);
  Rng rng(4);
  const Matrix pool = test::random_matrix(rng, 5, 2);
  const CrossPredictionMatrix m = cross_prediction_matrix(bank, pool);
  CHECK(m.values.rows() == 5);
  CHECK(m.values.cols() == 3);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(m.values(i, static_cast<Eigen::Index>(j)) == predict(bank.models[j], pool.row(i))(0));
  CHECK(m.task_ids == bank.task_ids);

  const CrossPredictionMatrix empty = cross_prediction_matrix(bank, Matrix(0, 2));
  CHECK(empty.values.rows() == 0);
  CHECK(empty.values.cols() == 3);
  CHECK_THROWS_AS(cross_prediction_matrix(bank, Matrix::Zero(2, 5)), ValidationError);
}

TEST_CASE("identical task columns share a cluster") {
  Matrix v(4, 3);
  v << 1, 1, 9, 2, 2, -3, 3, 3, 7, 4, 4, 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ClusterResult r = cluster_tasks(matrix_of(v), 2, seed);
    CHECK(r.assignments[0] == r.assignments[1]);
    CHECK(r.assignments[0] != r.assignments[2]);
  }
}

TEST_CASE("k equal to the item count gives singletons and zero inertia") {
  Rng rng(5);
  const Matrix v = test::random_matrix(rng, 6, 4);
  const ClusterResult r = cluster_tasks(matrix_of(v), 4, 3);
  CHECK(std::set<std::size_t>(r.assignments.begin(), r.assignments.end()).size() == 4);
  CHECK(r.inertia == 0.0);
}

TEST_CASE("duplicating the pool rows keeps task assignments") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix v = test::random_matrix(rng, 8, 6);
    Matrix doubled(16, 6);
    doubled << v, v;
    const ClusterResult a = cluster_tasks(matrix_of(v), 3, 11);
    const ClusterResult b = cluster_tasks(matrix_of(doubled), 3, 11);
    CHECK(a.assignments == b.assignments);
    // distances grow by sqrt(2), squared distances by 2
    double brute = 0.0;
    const Matrix items = doubled.transpose();
    for (std::size_t i = 0; i < b.assignments.size(); ++i)
      brute += sq(items, static_cast<Eigen::Index>(i), b.centroids, static_cast<Eigen::Index>(b.assignments[i]));
    CHECK(b.inertia == doctest::Approx(brute).epsilon(1e-12));
    CHECK(b.inertia == doctest::Approx(2.0 * a.inertia).epsilon(1e-12));
  }
}

TEST_CASE("identical example rows always share a cluster") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix v = test::random_matrix(rng, 9, 3);
    v.row(4) = v.row(1);
    const std::size_t k = 1 + rng.below(8);
    const ClusterResult r = cluster_examples(matrix_of(v), k, rng.next());
    CHECK(r.assignments[1] == r.assignments[4]);
  }
}

TEST_CASE("k = 1 puts the centroid at the column means") {
  Rng rng(8);
  const Matrix v = test::random_matrix(rng, 12, 3);
  const ClusterResult r = cluster_examples(matrix_of(v), 1, 1);
  CHECK((r.centroids.row(0).transpose() - Vector(v.colwise().mean().transpose())).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("assignments beat every other assignment of 6 items given the centroids") {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix v = test::random_matrix(rng, 6, 2);
    const ClusterResult r = cluster_examples(matrix_of(v), 2, rng.next());
    auto cost = [&](unsigned mask) {
      double total = 0.0;
      for (Eigen::Index i = 0; i < 6; ++i) total += sq(v, i, r.centroids, (mask >> i) & 1u);
      return total;
    };
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < 64; ++mask) best = std::min(best, cost(mask));
    unsigned chosen = 0;
    for (std::size_t i = 0; i < 6; ++i) chosen |= static_cast<unsigned>(r.assignments[i]) << i;
    CHECK(cost(chosen) <= best + 1e-12);
  }
}

TEST_CASE("property: centroids are the means of their members") {
  Rng rng(201);
  for (int i = 0; i < kCases; ++i) {
    const Matrix items = clustered_items(rng);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(items.rows()));
    const ClusterResult r = kmeans(items, k, rng.next());
    REQUIRE(r.converged);
    for (std::size_t c = 0; c < k; ++c)
      CHECK((r.centroids.row(static_cast<Eigen::Index>(c)).transpose() - row_mean(items, r.assignments, c))
                .cwiseAbs()
                .maxCoeff() <= 1e-9);
  }
}

TEST_CASE("property: every item sits with its nearest centroid") {
  Rng rng(202);
  for (int i = 0; i < kCases; ++i) {
    const Matrix items = clustered_items(rng);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(items.rows()));
    const ClusterResult r = kmeans(items, k, rng.next());
    REQUIRE(r.assignments.size() == static_cast<std::size_t>(items.rows()));
    for (Eigen::Index it = 0; it < items.rows(); ++it) {
      const double mine = sq(items, it, r.centroids, static_cast<Eigen::Index>(r.assignments[static_cast<std::size_t>(it)]));
      for (std::size_t c = 0; c < k; ++c) CHECK(mine <= sq(items, it, r.centroids, static_cast<Eigen::Index>(c)));
    }
  }
}

TEST_CASE("property: initialization is a seeded sample of distinct items") {
  Rng rng(203);
  for (int i = 0; i < kCases; ++i) {
    const Matrix items = clustered_items(rng);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(items.rows()));
    const std::uint64_t seed = rng.next();
    KMeansOptions one_step;
    one_step.max_iter = 1; // centroids are left at their initial values
    const ClusterResult a = kmeans(items, k, seed, one_step);
    const ClusterResult b = kmeans(items, k, seed, one_step);
    CHECK(a.centroids == b.centroids);
    std::set<Eigen::Index> used;
    for (Eigen::Index c = 0; c < a.centroids.rows(); ++c) {
      Eigen::Index match = -1;
      for (Eigen::Index it = 0; it < items.rows(); ++it)
        if (!used.count(it) && items.row(it) == a.centroids.row(c)) {
          match = it;
          break;
        }
      CHECK(match >= 0);
      used.insert(match);
    }
    const ClusterResult full_a = kmeans(items, k, seed), full_b = kmeans(items, k, seed);
    CHECK(full_a.assignments == full_b.assignments);
    CHECK(full_a.centroids == full_b.centroids);
  }
}

TEST_CASE("property: inertia never increases") {
  Rng rng(204);
  for (int i = 0; i < kCases; ++i) {
    const Matrix items = clustered_items(rng);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(items.rows()));
    const ClusterResult r = kmeans(items, k, rng.next());
    for (std::size_t s = 1; s < r.inertia_history.size(); ++s)
      CHECK(r.inertia_history[s] <= r.inertia_history[s - 1] + 1e-12 * std::max(1.0, r.inertia_history[s - 1]));
    CHECK(r.inertia == r.inertia_history.back());
  }
}

TEST_CASE("clustering does not depend on the worker count") {
  Rng rng(10);
  const Matrix items = test::random_matrix(rng, 200, 5);
  set_max_workers(1);
  const ClusterResult a = kmeans(items, 6, 3);
  set_max_workers(4);
  const ClusterResult b = kmeans(items, 6, 3);
  set_max_workers(1);
  CHECK(a.assignments == b.assignments);
  CHECK(a.centroids == b.centroids);
}

TEST_CASE("standardized clustering z-scores each task") {
  Matrix v(5, 3);
  v << 1, 100, 2, 2, 200, 1, 3, 300, 2, 4, 400, 1, 5, 500, 2;
  KMeansOptions opts;
  opts.standardize = true;
  // columns 0 and 1 are the same prediction pattern at different scales
  const ClusterResult r = cluster_tasks(matrix_of(v), 2, 1, opts);
  CHECK(r.assignments[0] == r.assignments[1]);
  CHECK(r.assignments[0] != r.assignments[2]);
}

TEST_CASE("k out of range is rejected") {
  const Matrix v = Matrix::Ones(3, 2);
  CHECK_THROWS_AS(kmeans(v, 0, 1), ValidationError);
  CHECK_THROWS_AS(kmeans(v, 4, 1), ValidationError);
  CHECK_THROWS_AS(cluster_tasks(matrix_of(v), 3, 1), ValidationError);
  CHECK_THROWS_AS(cluster_examples(matrix_of(Matrix(0, 2)), 1, 1), ValidationError);
}

TEST_CASE("pairwise distances") {
  Matrix v(3, 2);
  v << 0, 0, 3, 4, 0, 1;
  const Matrix d = pairwise_distances(v);
  CHECK(d(0, 1) == 5.0);
  CHECK(d(1, 0) == 5.0);
  CHECK(d(0, 2) == 1.0);
  CHECK(d(2, 2) == 0.0);
}

} // TEST_SUITE
