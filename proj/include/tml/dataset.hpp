#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tml/matrix.hpp"

namespace tml {

/// One regression problem: intrinsic features, targets and identifiers.
/// Construct through make_task() or load_task(); both validate invariants.
struct Task {
  std::string task_id;
  Matrix features;
  Vector targets;
  std::vector<std::string> feature_names;
  std::vector<std::string> example_ids;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(features.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(features.cols()); }
};

enum class CollectionMode { IndependentExamples, SharedExamples };

std::string to_string(CollectionMode mode);
CollectionMode parse_collection_mode(const std::string& text);

/// Tasks sharing one intrinsic feature space.
struct TaskCollection {
  std::vector<Task> tasks;
  CollectionMode mode = CollectionMode::IndependentExamples;
  std::string feature_space_id;

  std::size_t size() const noexcept { return tasks.size(); }
  std::size_t feature_count() const noexcept { return tasks.empty() ? 0 : tasks.front().cols(); }
  /// Index of a task by id; throws ValidationError when absent.
  std::size_t index_of(const std::string& task_id) const;
  const Task& task(const std::string& task_id) const { return tasks[index_of(task_id)]; }
};

enum class SplitKind { KFold, Holdout };

/// Assignment of each example to a fold (KFold) or to train/test (Holdout).
/// For Holdout, fold 0 is the test side and fold 1 the train side, so both
/// kinds share the "held-out fold" vocabulary.
struct SplitPlan {
  SplitKind kind = SplitKind::KFold;
  std::vector<std::size_t> assignments;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  double test_fraction = 0.0;

  std::size_t size() const noexcept { return assignments.size(); }
  /// Number of evaluation rounds: k for KFold, 1 for Holdout.
  std::size_t rounds() const noexcept { return kind == SplitKind::KFold ? k : 1; }
  /// Rows scored in a round.
  std::vector<std::size_t> test_rows(std::size_t round) const;
  /// Rows fitted in a round.
  std::vector<std::size_t> train_rows(std::size_t round) const;
  /// Stable digest of the assignments; equal plans have equal hashes.
  std::uint64_t hash() const noexcept;
};

struct NormalizationParams {
  double min = 0.0;
  double max = 1.0;

  double apply(double y) const noexcept { return (y - min) / (max - min); }
  double invert(double z) const noexcept { return min + z * (max - min); }
};

struct IngestionOptions {
  std::string target_column = "y";
  /// When false the file carries only id + feature columns (prediction pools);
  /// targets are left empty.
  bool has_target = true;
  bool reject_constant_targets = true;
  /// Overrides the file stem as task id.
  std::string task_id;
};

/// Validates and assembles a Task from in-memory parts.
Task make_task(std::string task_id, Matrix features, Vector targets,
               std::vector<std::string> feature_names, std::vector<std::string> example_ids);

Task load_task(const std::filesystem::path& path, const IngestionOptions& options = {});
void write_task(const Task& task, const std::filesystem::path& path, const std::string& target_column = "y");

TaskCollection assemble_collection(std::vector<Task> tasks, CollectionMode mode,
                                   std::string feature_space_id = "default");

/// Collection manifest (JSON):
///   { "collection_id": "...", "mode": "independent"|"shared",
///     "target_column": "y", "tasks": [ {"id": "...", "file": "relative.csv"}, ... ] }
struct CollectionManifest {
  std::string collection_id;
  CollectionMode mode = CollectionMode::IndependentExamples;
  std::string target_column = "y";
  std::vector<std::pair<std::string, std::filesystem::path>> tasks; // id, file (absolute)
};

CollectionManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const CollectionManifest& manifest, const std::filesystem::path& path);
/// Loads every task named in the manifest and assembles the collection.
TaskCollection load_collection(const std::filesystem::path& manifest_path);

SplitPlan make_fold_plan(std::size_t n, std::size_t k, std::uint64_t seed);
SplitPlan make_holdout_plan(std::size_t n, double test_fraction, std::uint64_t seed);

/// Min-max scaling of targets onto [0, 1] over the whole target vector.
std::pair<Task, NormalizationParams> normalize_targets(const Task& task);
Vector denormalize(const Vector& values, const NormalizationParams& params);

/// Row subset helpers.
Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows);
Vector take_rows(const Vector& v, const std::vector<std::size_t>& rows);

} // namespace tml
