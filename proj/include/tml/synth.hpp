#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "tml/dataset.hpp"
#include "tml/transform.hpp"

namespace tml {

enum class Nonlinearity { Linear, Nonlinear };

/// Related-task generator settings.
///
/// Features are i.i.d. standard normal. Each task's target is
///   relatedness * g_shared(x) + (1 - relatedness) * g_task(x) + noise,
/// where every g is drawn from the seed:
///   Linear:    g(x) = sum_j w_j x_j / ||w||,  w_j ~ N(0, 1)
///   Nonlinear: g(x) = sum_m a_m x_{i_m} x_{j_m} + sum_m b_m (1[|x_{k_m}| > t_m] - P(|Z| > t_m))
///              with four products (i_m != j_m), four centred threshold terms
///              (t_m ~ U(0.3, 1.5)) and a_m, b_m ~ N(0, 1), scaled to unit
///              variance. Both term types are even in each coordinate, so a
///              linear model finds no signal in them.
/// Streams are separated: features, functions and noise draw from distinct
/// derived seeds, so changing noise_sd leaves the features untouched.
struct SynthSpec {
  std::size_t n_tasks = 4;
  std::size_t n_examples_per_task = 30;
  std::size_t n_features = 10;
  double relatedness = 0.5;
  Nonlinearity nonlinearity = Nonlinearity::Nonlinear;
  double noise_sd = 0.1;
  std::uint64_t seed = 1;
  CollectionMode mode = CollectionMode::IndependentExamples;

  void validate() const;
};

TaskCollection generate_collection(const SynthSpec& spec);

/// Writes task_XX.csv files plus collection.json; returns the manifest path.
std::filesystem::path write_collection(const TaskCollection& collection, const std::filesystem::path& dir,
                                       const std::string& collection_id);

/// Naive-loop reference for build_extrinsic on task `task_id`'s own examples:
/// entry (i, j) is model j's single-row prediction for example i. Used by tests.
Matrix oracle_extrinsic(const TaskCollection& collection, const ModelBank& bank, const std::string& task_id);

} // namespace tml
