#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tml/dataset.hpp"
#include "tml/learners.hpp"

namespace tml {

enum class TrainingScope { FullTask, TrainSplitOnly };

std::string to_string(TrainingScope scope);
TrainingScope parse_training_scope(const std::string& text);

/// Stage-1 models, one per task, in collection order.
struct ModelBank {
  std::vector<std::string> task_ids;
  std::vector<FittedModel> models;
  LearnerSpec learner_spec;
  std::string collection_id;
  TrainingScope training_scope = TrainingScope::FullTask;
  /// Round held out of every task's training rows (TrainSplitOnly).
  std::optional<std::size_t> held_out_round;

  std::size_t size() const noexcept { return models.size(); }
  std::size_t index_of(const std::string& task_id) const;
  const FittedModel& model(const std::string& task_id) const { return models[index_of(task_id)]; }
};

/// Per-example predictions of other tasks' models.
struct ExtrinsicMatrix {
  Matrix values;
  std::vector<std::string> source_model_ids;
  std::string target_task_id;
  int order = 1;

  std::size_t cols() const noexcept { return source_model_ids.size(); }
};

/// Fits one model per task. FullTask uses all rows; TrainSplitOnly uses each
/// task's plan with `held_out_round` removed. In SharedExamples mode with
/// TrainSplitOnly all plans must be identical. Per-task seeds derive from
/// spec.seed and the task id.
ModelBank stage1_train(const TaskCollection& collection, const LearnerSpec& spec, TrainingScope scope,
                       const std::vector<SplitPlan>& split_plans = {},
                       std::optional<std::size_t> held_out_round = std::nullopt);

/// Column j holds the predictions of the j-th model other than the target's.
ExtrinsicMatrix build_extrinsic(const std::string& target_task_id, const ModelBank& bank, const Matrix& X);

/// Seeded uniform subsample of `cap` columns; kept columns stay in their
/// original relative order.
ExtrinsicMatrix select_descriptors(const ExtrinsicMatrix& matrix, std::size_t cap, std::uint64_t seed);

FittedModel stage2_train(const ExtrinsicMatrix& extrinsic, const Vector& y, const LearnerSpec& spec);

/// A task's stage-2 model with the stage-1 sources it consumes, in column order.
struct Stage2Model {
  std::string task_id;
  std::vector<std::string> source_model_ids;
  FittedModel model;
};

struct Stage2Bank {
  std::vector<Stage2Model> models; // collection order

  std::size_t index_of(const std::string& task_id) const;
};

/// Stage-2 model of `source` evaluated on X: builds source's extrinsic view of
/// X from the stage-1 bank, restricted to its recorded columns, then predicts.
Vector predict_stage2(const Stage2Model& source, const ModelBank& bank, const Matrix& X);

/// Second-order representation of X for target_task_id: one column per other
/// task's stage-2 model.
ExtrinsicMatrix second_order_extrinsic(const std::string& target_task_id, const ModelBank& bank,
                                       const Stage2Bank& stage2, const Matrix& X);

struct TransformConfig {
  std::optional<std::size_t> descriptor_cap;
  std::uint64_t seed = 0;
};

/// Fits each task's stage-2 model on its first-order view (capped when
/// configured). `train_rows`, when given, restricts task i's fit to
/// train_rows[i]; otherwise all rows are used.
Stage2Bank train_stage2_bank(const TaskCollection& collection, const ModelBank& bank, const LearnerSpec& final_spec,
                             const TransformConfig& config,
                             const std::vector<std::vector<std::size_t>>* train_rows = nullptr);

/// Trains stage-2 models on every task's full first-order view and returns
/// each task's order-2 matrix over its own examples (capped when configured).
std::vector<ExtrinsicMatrix> second_order_transform(const TaskCollection& collection, const ModelBank& bank,
                                                    const LearnerSpec& final_spec, const TransformConfig& config,
                                                    Stage2Bank* stage2_out = nullptr);

/// Applies the configured cap (if any) with the task's descriptor seed.
ExtrinsicMatrix apply_cap(const ExtrinsicMatrix& matrix, const TransformConfig& config);

/// Transformer spec with the per-task seed used for stage-1 fits.
LearnerSpec task_seeded(const LearnerSpec& spec, const std::string& task_id);

/// Seed used by select_descriptors for a task.
std::uint64_t descriptor_seed(std::uint64_t seed, const std::string& task_id, int order);

/// Ids of `held_out_row_ids` that any bank model was trained on, formatted
/// "model_id:row_id". Also flags models whose fingerprint does not match their
/// recorded rows. Empty means the audit passed.
std::vector<std::string> audit_leakage(const ModelBank& bank, const std::vector<std::string>& held_out_row_ids);

/// Bank directory: index.json plus one archive per task.
void save_bank(const ModelBank& bank, const std::filesystem::path& dir);
ModelBank load_bank(const std::filesystem::path& dir);

} // namespace tml
