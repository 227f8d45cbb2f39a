#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tml/dataset.hpp"
#include "tml/evaluation.hpp"
#include "tml/learners.hpp"
#include "tml/transform.hpp"

namespace tml {

struct SplitProtocol {
  SplitKind kind = SplitKind::KFold;
  std::size_t k = 10;
  double test_fraction = 0.3;
};

/// Declarative experiment configuration (JSON):
///
///   {
///     "collection": "data/collection.json",
///     "transformer": {"kind": "RandomForest", "hyperparams": {"trees": 500}, "seed": 1},
///     "final":       {"kind": "RandomForest", "hyperparams": {"trees": 500}, "seed": 1},
///     "descriptor_cap": 500,
///     "split": {"kind": "kfold", "k": 10},     or {"kind": "holdout", "test_fraction": 0.3}
///     "seed": 1,
///     "order": 1,
///     "scope": "full" | "train_split",          default: full for independent, train_split for shared
///     "augment": false,
///     "normalize_targets": false,
///     "strict": false
///   }
struct PipelineConfig {
  std::filesystem::path collection_path;
  LearnerSpec transformer_spec;
  LearnerSpec final_spec;
  std::optional<std::size_t> descriptor_cap;
  SplitProtocol split;
  std::uint64_t seed = 1;
  int order = 1;
  std::optional<TrainingScope> scope;
  bool augment = false;
  bool normalize_targets = false;
  bool strict = false;

  /// Config-level checks (order, split parameters, learner specs).
  void validate() const;
  /// Checks that need the collection (cap <= tasks - 1, split sizes).
  void validate_against(const TaskCollection& collection) const;
  TrainingScope effective_scope(CollectionMode mode) const;
};

PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const PipelineConfig& config);
/// Parse errors name the offending field (and line for JSON syntax errors).
PipelineConfig load_config(const std::filesystem::path& path);

struct TaskFailure {
  std::string task_id;
  std::string stage;
  std::string message;
};

struct BankRecord {
  std::optional<std::size_t> held_out_round;
  std::vector<std::pair<std::string, std::string>> fingerprints; // task id, fingerprint
};

struct ExperimentResult {
  PipelineConfig config;
  std::string collection_id;
  CollectionMode mode = CollectionMode::IndependentExamples;
  TrainingScope scope = TrainingScope::FullTask;
  std::vector<CvResult> scores; // per task in collection order: intrinsic, transformed, second order
  std::vector<TaskFailure> failures;
  std::vector<BankRecord> banks;
  std::vector<std::pair<std::string, std::uint64_t>> plan_hashes;
  std::vector<std::pair<std::string, std::uint64_t>> descriptor_seeds;
  /// Empty when every held-out row set passed the fingerprint audit.
  std::vector<std::string> leakage_violations;
};

struct RunOptions {
  /// When set, stage-1 banks are written here (bank/ or bank_round_<r>/).
  std::optional<std::filesystem::path> bank_dir;
};

/// Loads the collection named in the config and runs the whole protocol.
ExperimentResult run_pipeline(const PipelineConfig& config, const RunOptions& options = {});
/// Same, on an already assembled collection.
ExperimentResult run_pipeline(const PipelineConfig& config, TaskCollection collection,
                              std::vector<TaskFailure> prior_failures = {}, const RunOptions& options = {});

nlohmann::json result_to_json(const ExperimentResult& result);
ExperimentResult result_from_json(const nlohmann::json& j);

/// Delimited per-task score table.
std::string format_scores_tsv(const std::vector<CvResult>& scores);

/// Writes result.json, scores.tsv, table.tsv and table.txt into dir.
void write_result(const ExperimentResult& result, const std::filesystem::path& dir);
ExperimentResult read_result(const std::filesystem::path& result_json);

} // namespace tml
