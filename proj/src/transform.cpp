#include "tml/transform.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "tml/archive.hpp"
#include "tml/error.hpp"
#include "tml/parallel.hpp"
#include "tml/rng.hpp"

namespace tml {
namespace fs = std::filesystem;

std::string to_string(TrainingScope scope) {
  return scope == TrainingScope::FullTask ? "full" : "train_split";
}

TrainingScope parse_training_scope(const std::string& text) {
  if (text == "full" || text == "FullTask") return TrainingScope::FullTask;
  if (text == "train_split" || text == "TrainSplitOnly") return TrainingScope::TrainSplitOnly;
  throw ValidationError("unknown training scope '" + text + "' (expected full|train_split)");
}

std::size_t ModelBank::index_of(const std::string& task_id) const {
  for (std::size_t i = 0; i < task_ids.size(); ++i)
    if (task_ids[i] == task_id) return i;
  throw ValidationError("task '" + task_id + "' is not in model bank '" + collection_id + "'");
}

std::size_t Stage2Bank::index_of(const std::string& task_id) const {
  for (std::size_t i = 0; i < models.size(); ++i)
    if (models[i].task_id == task_id) return i;
  throw ValidationError("no stage-2 model for task '" + task_id + "'");
}

LearnerSpec task_seeded(const LearnerSpec& spec, const std::string& task_id) {
  LearnerSpec out = spec;
  out.seed = derive_seed(spec.seed, fnv1a(task_id));
  return out;
}

std::uint64_t descriptor_seed(std::uint64_t seed, const std::string& task_id, int order) {
  return derive_seed(derive_seed(seed, fnv1a(task_id)), static_cast<std::uint64_t>(order) + 0x5eedULL);
}

ModelBank stage1_train(const TaskCollection& collection, const LearnerSpec& spec, TrainingScope scope,
                       const std::vector<SplitPlan>& split_plans, std::optional<std::size_t> held_out_round) {
  if (collection.size() < 2) throw ValidationError("stage1_train: collection needs at least 2 tasks");
  spec.validate();
  if (scope == TrainingScope::TrainSplitOnly) {
    if (split_plans.size() != collection.size())
      throw ValidationError("stage1_train: train-split scope needs one split plan per task (" +
                            std::to_string(collection.size()) + "), got " + std::to_string(split_plans.size()));
    if (!held_out_round) throw ValidationError("stage1_train: train-split scope needs a held-out round");
    for (std::size_t t = 0; t < collection.size(); ++t) {
      const auto& plan = split_plans[t];
      if (plan.size() != collection.tasks[t].rows())
        throw ValidationError("stage1_train: split plan for task '" + collection.tasks[t].task_id + "' covers " +
                              std::to_string(plan.size()) + " rows, task has " +
                              std::to_string(collection.tasks[t].rows()));
      if (*held_out_round >= plan.rounds())
        throw ValidationError("stage1_train: held-out round " + std::to_string(*held_out_round) + " out of range");
      if (collection.mode == CollectionMode::SharedExamples && plan.assignments != split_plans.front().assignments)
        throw ValidationError("stage1_train: shared-examples collections must use one split plan for all tasks");
    }
  }

  ModelBank bank;
  bank.learner_spec = spec;
  bank.collection_id = collection.feature_space_id;
  bank.training_scope = scope;
  bank.held_out_round = scope == TrainingScope::TrainSplitOnly ? held_out_round : std::nullopt;
  std::vector<std::optional<FittedModel>> slots(collection.size());
  parallel_for(collection.size(), [&](std::size_t t) {
    const Task& task = collection.tasks[t];
    try {
      std::vector<std::size_t> rows;
      if (scope == TrainingScope::TrainSplitOnly) {
        rows = split_plans[t].train_rows(*held_out_round);
      } else {
        rows.resize(task.rows());
        std::iota(rows.begin(), rows.end(), 0);
      }
      std::vector<std::string> row_ids;
      row_ids.reserve(rows.size());
      for (std::size_t r : rows) row_ids.push_back(task.example_ids[r]);
      const FittedModel model = fit(task_seeded(spec, task.task_id), take_rows(task.features, rows),
                                    take_rows(task.targets, rows));
      std::string fp = train_fingerprint(task.task_id, row_ids);
      slots[t] = model.with_provenance(TrainProvenance{task.task_id, std::move(row_ids), std::move(fp)});
    } catch (const TaskError&) {
      throw;
    } catch (const std::exception& e) {
      throw TaskError(task.task_id, std::string("stage-1 fit failed: ") + e.what());
    }
  });
  for (std::size_t t = 0; t < collection.size(); ++t) {
    bank.task_ids.push_back(collection.tasks[t].task_id);
    bank.models.push_back(std::move(*slots[t]));
  }
  return bank;
}

namespace {

// Predictions of the listed bank models on X, one column each.
Matrix predict_columns(const ModelBank& bank, const std::vector<std::size_t>& model_indices, const Matrix& X) {
  Matrix out(X.rows(), static_cast<Eigen::Index>(model_indices.size()));
  parallel_for(model_indices.size(), [&](std::size_t c) {
    const std::size_t m = model_indices[c];
    try {
      out.col(static_cast<Eigen::Index>(c)) = predict(bank.models[m], X);
    } catch (const std::exception& e) {
      throw Error("prediction by model '" + bank.task_ids[m] + "' failed: " + e.what());
    }
  });
  return out;
}

void check_columns(const ModelBank& bank, const Matrix& X, const char* who) {
  if (bank.models.empty()) throw ValidationError(std::string(who) + ": empty model bank");
  const std::size_t p = bank.models.front().feature_count();
  if (static_cast<std::size_t>(X.cols()) != p)
    throw ValidationError(std::string(who) + ": input has " + std::to_string(X.cols()) + " columns, bank expects " +
                          std::to_string(p));
}

} // namespace

ExtrinsicMatrix build_extrinsic(const std::string& target_task_id, const ModelBank& bank, const Matrix& X) {
  const std::size_t target = bank.index_of(target_task_id);
  check_columns(bank, X, "build_extrinsic");
  std::vector<std::size_t> sources;
  ExtrinsicMatrix out;
  for (std::size_t m = 0; m < bank.size(); ++m) {
    if (m == target) continue;
    sources.push_back(m);
    out.source_model_ids.push_back(bank.task_ids[m]);
  }
  out.values = predict_columns(bank, sources, X);
  out.target_task_id = target_task_id;
  out.order = 1;
  return out;
}

ExtrinsicMatrix select_descriptors(const ExtrinsicMatrix& matrix, std::size_t cap, std::uint64_t seed) {
  const std::size_t cols = matrix.cols();
  if (cap == 0) throw ValidationError("select_descriptors: cap must be >= 1");
  if (cap > cols)
    throw ValidationError("select_descriptors: cap " + std::to_string(cap) + " exceeds " + std::to_string(cols) +
                          " available descriptors");
  if (cap == cols) return matrix;
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(cap);
  std::sort(order.begin(), order.end());

  ExtrinsicMatrix out;
  out.values.resize(matrix.values.rows(), static_cast<Eigen::Index>(cap));
  for (std::size_t c = 0; c < cap; ++c) {
    out.values.col(static_cast<Eigen::Index>(c)) = matrix.values.col(static_cast<Eigen::Index>(order[c]));
    out.source_model_ids.push_back(matrix.source_model_ids[order[c]]);
  }
  out.target_task_id = matrix.target_task_id;
  out.order = matrix.order;
  return out;
}

ExtrinsicMatrix apply_cap(const ExtrinsicMatrix& matrix, const TransformConfig& config) {
  if (!config.descriptor_cap) return matrix;
  const std::size_t cap = std::min(*config.descriptor_cap, matrix.cols());
  return select_descriptors(matrix, cap, descriptor_seed(config.seed, matrix.target_task_id, matrix.order));
}

FittedModel stage2_train(const ExtrinsicMatrix& extrinsic, const Vector& y, const LearnerSpec& spec) {
  if (extrinsic.values.rows() != y.size())
    throw ValidationError("stage2_train: extrinsic matrix has " + std::to_string(extrinsic.values.rows()) +
                          " rows, target vector has " + std::to_string(y.size()));
  return fit(spec, extrinsic.values, y);
}

namespace {

// Column of every bank model, keyed by task id.
std::unordered_map<std::string, std::size_t> bank_positions(const ModelBank& bank) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t m = 0; m < bank.size(); ++m) pos.emplace(bank.task_ids[m], m);
  return pos;
}

Vector predict_stage2_from(const Stage2Model& source, const std::unordered_map<std::string, std::size_t>& pos,
                           const Matrix& all_predictions) {
  Matrix view(all_predictions.rows(), static_cast<Eigen::Index>(source.source_model_ids.size()));
  for (std::size_t c = 0; c < source.source_model_ids.size(); ++c) {
    const auto it = pos.find(source.source_model_ids[c]);
    if (it == pos.end())
      throw ValidationError("stage-2 model '" + source.task_id + "' needs source '" + source.source_model_ids[c] +
                            "', which is not in the bank");
    view.col(static_cast<Eigen::Index>(c)) = all_predictions.col(static_cast<Eigen::Index>(it->second));
  }
  return predict(source.model, view);
}

} // namespace

Vector predict_stage2(const Stage2Model& source, const ModelBank& bank, const Matrix& X) {
  const ExtrinsicMatrix view = build_extrinsic(source.task_id, bank, X);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t c = 0; c < view.cols(); ++c) pos.emplace(view.source_model_ids[c], c);
  return predict_stage2_from(source, pos, view.values);
}

ExtrinsicMatrix second_order_extrinsic(const std::string& target_task_id, const ModelBank& bank,
                                       const Stage2Bank& stage2, const Matrix& X) {
  check_columns(bank, X, "second_order_extrinsic");
  const std::size_t target = stage2.index_of(target_task_id);
  std::vector<std::size_t> everyone(bank.size());
  std::iota(everyone.begin(), everyone.end(), 0);
  const Matrix all = predict_columns(bank, everyone, X);
  const auto pos = bank_positions(bank);

  ExtrinsicMatrix out;
  out.target_task_id = target_task_id;
  out.order = 2;
  std::vector<std::size_t> sources;
  for (std::size_t m = 0; m < stage2.models.size(); ++m) {
    if (m == target) continue;
    sources.push_back(m);
    out.source_model_ids.push_back(stage2.models[m].task_id);
  }
  out.values.resize(X.rows(), static_cast<Eigen::Index>(sources.size()));
  parallel_for(sources.size(), [&](std::size_t c) {
    const Stage2Model& source = stage2.models[sources[c]];
    try {
      out.values.col(static_cast<Eigen::Index>(c)) = predict_stage2_from(source, pos, all);
    } catch (const std::exception& e) {
      throw Error("prediction by stage-2 model '" + source.task_id + "' failed: " + e.what());
    }
  });
  return out;
}

Stage2Bank train_stage2_bank(const TaskCollection& collection, const ModelBank& bank, const LearnerSpec& final_spec,
                             const TransformConfig& config, const std::vector<std::vector<std::size_t>>* train_rows) {
  if (train_rows && train_rows->size() != collection.size())
    throw ValidationError("train_stage2_bank: need one row set per task");
  std::vector<std::optional<Stage2Model>> slots(collection.size());
  parallel_for(collection.size(), [&](std::size_t t) {
    const Task& task = collection.tasks[t];
    try {
      const ExtrinsicMatrix view = apply_cap(build_extrinsic(task.task_id, bank, task.features), config);
      FittedModel model = [&] {
        if (!train_rows) return stage2_train(view, task.targets, final_spec);
        const auto& rows = (*train_rows)[t];
        ExtrinsicMatrix sub = view;
        sub.values = take_rows(view.values, rows);
        return stage2_train(sub, take_rows(task.targets, rows), final_spec);
      }();
      slots[t] = Stage2Model{task.task_id, view.source_model_ids, std::move(model)};
    } catch (const TaskError&) {
      throw;
    } catch (const std::exception& e) {
      throw TaskError(task.task_id, std::string("stage-2 fit failed: ") + e.what());
    }
  });
  Stage2Bank out;
  for (auto& slot : slots) out.models.push_back(std::move(*slot));
  return out;
}

std::vector<ExtrinsicMatrix> second_order_transform(const TaskCollection& collection, const ModelBank& bank,
                                                    const LearnerSpec& final_spec, const TransformConfig& config,
                                                    Stage2Bank* stage2_out) {
  if (bank.size() != collection.size()) throw ValidationError("second_order_transform: bank does not match collection");
  Stage2Bank stage2 = train_stage2_bank(collection, bank, final_spec, config);
  std::vector<ExtrinsicMatrix> out;
  out.reserve(collection.size());
  for (const Task& task : collection.tasks)
    out.push_back(apply_cap(second_order_extrinsic(task.task_id, bank, stage2, task.features), config));
  if (stage2_out) *stage2_out = std::move(stage2);
  return out;
}

std::vector<std::string> audit_leakage(const ModelBank& bank, const std::vector<std::string>& held_out_row_ids) {
  const std::unordered_set<std::string> held_out(held_out_row_ids.begin(), held_out_row_ids.end());
  std::vector<std::string> violations;
  for (std::size_t m = 0; m < bank.size(); ++m) {
    const auto& prov = bank.models[m].provenance();
    if (train_fingerprint(prov.task_id, prov.row_ids) != prov.fingerprint)
      violations.push_back(bank.task_ids[m] + ":<fingerprint mismatch>");
    for (const auto& id : prov.row_ids)
      if (held_out.count(id)) violations.push_back(bank.task_ids[m] + ":" + id);
  }
  return violations;
}

void save_bank(const ModelBank& bank, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json index;
  index["format"] = "tml-bank";
  index["version"] = kModelArchiveVersion;
  index["collection_id"] = bank.collection_id;
  index["training_scope"] = to_string(bank.training_scope);
  index["held_out_round"] = bank.held_out_round ? nlohmann::ordered_json(*bank.held_out_round) : nullptr;
  index["learner_spec"] = spec_to_json(bank.learner_spec);
  index["models"] = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < bank.size(); ++m) {
    char name[32];
    std::snprintf(name, sizeof name, "model_%04zu.json", m);
    save_model(bank.models[m], dir / name);
    index["models"].push_back(
        {{"task_id", bank.task_ids[m]}, {"file", name}, {"fingerprint", bank.models[m].train_fingerprint()}});
  }
  std::ofstream out(dir / "index.json");
  if (!out) throw Error("cannot write bank index in '" + dir.string() + "'");
  out << index.dump(2) << '\n';
}

ModelBank load_bank(const fs::path& dir) {
  const fs::path index_path = dir / "index.json";
  std::ifstream in(index_path);
  if (!in) throw ValidationError("cannot open bank index '" + index_path.string() + "'");
  ModelBank bank;
  try {
    const auto index = nlohmann::json::parse(in);
    if (index.at("format").get<std::string>() != "tml-bank") throw ValidationError("not a model bank index");
    bank.collection_id = index.at("collection_id").get<std::string>();
    bank.training_scope = parse_training_scope(index.at("training_scope").get<std::string>());
    if (!index.at("held_out_round").is_null()) bank.held_out_round = index.at("held_out_round").get<std::size_t>();
    bank.learner_spec = spec_from_json(index.at("learner_spec"));
    for (const auto& entry : index.at("models")) {
      FittedModel model = load_model(dir / entry.at("file").get<std::string>());
      if (model.train_fingerprint() != entry.at("fingerprint").get<std::string>())
        throw ValidationError("fingerprint of '" + entry.at("file").get<std::string>() + "' does not match the index");
      bank.task_ids.push_back(entry.at("task_id").get<std::string>());
      bank.models.push_back(std::move(model));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(index_path.string() + ": " + e.what());
  }
  if (bank.models.empty()) throw ValidationError(index_path.string() + ": bank has no models");
  return bank;
}

} // namespace tml
