#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tml/dataset.hpp"
#include "tml/rng.hpp"

namespace tml::test {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(TML_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

inline std::vector<std::string> ids(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline std::vector<std::string> names(std::size_t p) { return ids("x", p); }

// Small collection with a shared smooth signal plus per-task offsets.
inline TaskCollection toy_collection(std::size_t tasks, std::size_t n, std::size_t p, std::uint64_t seed,
                                     CollectionMode mode = CollectionMode::IndependentExamples) {
  Rng rng(seed);
  std::vector<Task> out;
  const Matrix shared_x = random_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t t = 0; t < tasks; ++t) {
    const Matrix X = mode == CollectionMode::SharedExamples
                         ? shared_x
                         : random_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    Vector y(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      y(i) = std::sin(X(i, 0)) + 0.3 * static_cast<double>(t) * X(i, p > 1 ? 1 : 0) + 0.1 * rng.normal();
    const auto example_ids = mode == CollectionMode::SharedExamples ? ids("e", n) : ids("t" + std::to_string(t) + "_e", n);
    out.push_back(make_task("t" + std::to_string(t), X, y, names(p), example_ids));
  }
  return assemble_collection(std::move(out), mode, "toy");
}

} // namespace tml::test
