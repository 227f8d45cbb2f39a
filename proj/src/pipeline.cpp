#include "tml/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "tml/archive.hpp"
#include "tml/error.hpp"
#include "tml/parallel.hpp"
#include "tml/rng.hpp"

namespace tml {
namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  if (order != 1 && order != 2) throw ValidationError("config: order must be 1 or 2, got " + std::to_string(order));
  if (split.kind == SplitKind::KFold && split.k < 2) throw ValidationError("config: split.k must be >= 2");
  if (split.kind == SplitKind::Holdout && !(split.test_fraction > 0.0 && split.test_fraction < 1.0))
    throw ValidationError("config: split.test_fraction must lie in (0, 1)");
  if (descriptor_cap && *descriptor_cap == 0) throw ValidationError("config: descriptor_cap must be >= 1");
  transformer_spec.validate();
  final_spec.validate();
}

void PipelineConfig::validate_against(const TaskCollection& collection) const {
  validate();
  const std::size_t n = collection.size();
  if (descriptor_cap && *descriptor_cap > n - 1)
    throw ValidationError("config: descriptor_cap " + std::to_string(*descriptor_cap) + " exceeds tasks - 1 = " +
                          std::to_string(n - 1));
  for (const Task& t : collection.tasks) {
    if (split.kind == SplitKind::KFold && split.k > t.rows())
      throw ValidationError("config: split.k = " + std::to_string(split.k) + " exceeds the " +
                            std::to_string(t.rows()) + " rows of task '" + t.task_id + "'");
  }
}

TrainingScope PipelineConfig::effective_scope(CollectionMode mode) const {
  if (scope) return *scope;
  return mode == CollectionMode::SharedExamples ? TrainingScope::TrainSplitOnly : TrainingScope::FullTask;
}

namespace {

template <typename F>
auto field(const json& j, const std::string& name, F&& read) -> decltype(read(j)) {
  try {
    return read(j);
  } catch (const json::exception& e) {
    throw ValidationError("config field '" + name + "': " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("config field '" + name + "': " + e.what());
  }
}

} // namespace

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  static const std::set<std::string> known{"collection", "transformer", "final",  "descriptor_cap",
                                           "split",      "seed",        "order",  "scope",
                                           "augment",    "normalize_targets",     "strict"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ValidationError("config: unknown field '" + key + "'");

  PipelineConfig c;
  c.collection_path = field(j, "collection", [](const json& v) { return fs::path(v.at("collection").get<std::string>()); });
  if (c.collection_path.is_relative() && !base_dir.empty()) c.collection_path = base_dir / c.collection_path;
  c.transformer_spec = field(j, "transformer", [](const json& v) { return spec_from_json(v.at("transformer")); });
  c.final_spec = field(j, "final", [](const json& v) { return spec_from_json(v.at("final")); });
  if (j.contains("descriptor_cap") && !j.at("descriptor_cap").is_null())
    c.descriptor_cap = field(j, "descriptor_cap", [](const json& v) { return v.at("descriptor_cap").get<std::size_t>(); });
  if (j.contains("split")) {
    const json& s = j.at("split");
    const auto kind = field(s, "split.kind", [](const json& v) { return v.at("kind").get<std::string>(); });
    if (kind == "kfold") {
      c.split.kind = SplitKind::KFold;
      c.split.k = field(s, "split.k", [](const json& v) { return v.value("k", std::size_t{10}); });
    } else if (kind == "holdout") {
      c.split.kind = SplitKind::Holdout;
      c.split.test_fraction = field(s, "split.test_fraction", [](const json& v) { return v.value("test_fraction", 0.3); });
    } else {
      throw ValidationError("config field 'split.kind': expected kfold|holdout, got '" + kind + "'");
    }
  }
  c.seed = field(j, "seed", [](const json& v) { return v.value("seed", std::uint64_t{1}); });
  c.order = field(j, "order", [](const json& v) { return v.value("order", 1); });
  if (j.contains("scope"))
    c.scope = field(j, "scope", [](const json& v) { return parse_training_scope(v.at("scope").get<std::string>()); });
  c.augment = field(j, "augment", [](const json& v) { return v.value("augment", false); });
  c.normalize_targets = field(j, "normalize_targets", [](const json& v) { return v.value("normalize_targets", false); });
  c.strict = field(j, "strict", [](const json& v) { return v.value("strict", false); });
  c.validate();
  return c;
}

json config_to_json(const PipelineConfig& c) {
  json j;
  j["collection"] = c.collection_path.generic_string();
  j["transformer"] = spec_to_json(c.transformer_spec);
  j["final"] = spec_to_json(c.final_spec);
  j["descriptor_cap"] = c.descriptor_cap ? json(*c.descriptor_cap) : json(nullptr);
  if (c.split.kind == SplitKind::KFold) j["split"] = {{"kind", "kfold"}, {"k", c.split.k}};
  else j["split"] = {{"kind", "holdout"}, {"test_fraction", c.split.test_fraction}};
  j["seed"] = c.seed;
  j["order"] = c.order;
  if (c.scope) j["scope"] = to_string(*c.scope);
  j["augment"] = c.augment;
  j["normalize_targets"] = c.normalize_targets;
  j["strict"] = c.strict;
  return j;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  try {
    return config_from_json(j, path.parent_path());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Orchestration

ExperimentResult run_pipeline(const PipelineConfig& config, const RunOptions& options) {
  config.validate();
  const CollectionManifest manifest = read_manifest(config.collection_path);
  std::vector<Task> tasks;
  std::vector<TaskFailure> failures;
  for (const auto& [id, file] : manifest.tasks) {
    IngestionOptions opts;
    opts.target_column = manifest.target_column;
    opts.task_id = id;
    try {
      tasks.push_back(load_task(file, opts));
    } catch (const std::exception& e) {
      if (config.strict) throw TaskError(id, e.what());
      failures.push_back({id, "load", e.what()});
    }
  }
  if (manifest.mode == CollectionMode::SharedExamples && !config.strict) {
    // drop tasks whose rows disagree with the first loaded task rather than fail the whole run
    std::vector<Task> kept;
    for (auto& t : tasks) {
      if (!kept.empty() && t.example_ids != kept.front().example_ids) {
        failures.push_back({t.task_id, "load", "example ids differ from task '" + kept.front().task_id + "'"});
        continue;
      }
      kept.push_back(std::move(t));
    }
    tasks = std::move(kept);
  }
  if (tasks.size() < 2 && !failures.empty())
    throw ValidationError("fewer than 2 tasks loaded; task '" + failures.front().task_id + "': " + failures.front().message);
  TaskCollection collection = assemble_collection(std::move(tasks), manifest.mode, manifest.collection_id);
  return run_pipeline(config, std::move(collection), std::move(failures), options);
}

namespace {

Matrix concat_columns(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

SplitPlan plan_for(const PipelineConfig& config, std::size_t n, std::uint64_t seed) {
  return config.split.kind == SplitKind::KFold ? make_fold_plan(n, config.split.k, seed)
                                               : make_holdout_plan(n, config.split.test_fraction, seed);
}

struct TaskOutcome {
  std::vector<CvResult> scores;
  std::optional<TaskFailure> failure;
};

} // namespace

ExperimentResult run_pipeline(const PipelineConfig& config, TaskCollection collection,
                              std::vector<TaskFailure> prior_failures, const RunOptions& options) {
  config.validate_against(collection);
  ExperimentResult result;
  result.config = config;
  result.collection_id = collection.feature_space_id;
  result.mode = collection.mode;
  result.scope = config.effective_scope(collection.mode);
  result.failures = std::move(prior_failures);

  if (config.normalize_targets)
    for (auto& task : collection.tasks) task = normalize_targets(task).first;

  const bool shared = collection.mode == CollectionMode::SharedExamples;
  const TransformConfig transform{config.descriptor_cap, config.seed};

  // stage 1, dropping failed tasks unless strict
  std::vector<SplitPlan> plans;
  std::vector<ModelBank> banks;
  for (;;) {
    plans.clear();
    banks.clear();
    if (collection.size() < 2) throw ValidationError("fewer than 2 usable tasks remain");
    for (const Task& t : collection.tasks)
      plans.push_back(plan_for(config, t.rows(), shared ? config.seed : derive_seed(config.seed, fnv1a(t.task_id))));
    try {
      if (result.scope == TrainingScope::FullTask) {
        banks.push_back(stage1_train(collection, config.transformer_spec, result.scope));
      } else {
        for (std::size_t r = 0; r < plans.front().rounds(); ++r)
          banks.push_back(stage1_train(collection, config.transformer_spec, result.scope, plans, r));
      }
      break;
    } catch (const TaskError& e) {
      if (config.strict) throw;
      result.failures.push_back({e.task_id(), "stage1", e.what()});
      const std::size_t idx = collection.index_of(e.task_id());
      collection.tasks.erase(collection.tasks.begin() + static_cast<std::ptrdiff_t>(idx));
    }
  }
  if (config.descriptor_cap) config.validate_against(collection);

  // stage-2 banks for the second-order view: one per stage-1 bank
  std::vector<Stage2Bank> stage2;
  if (config.order == 2) {
    for (std::size_t b = 0; b < banks.size(); ++b) {
      if (result.scope == TrainingScope::FullTask) {
        stage2.push_back(train_stage2_bank(collection, banks[b], config.final_spec, transform));
      } else {
        std::vector<std::vector<std::size_t>> rows;
        for (const auto& plan : plans) rows.push_back(plan.train_rows(b));
        stage2.push_back(train_stage2_bank(collection, banks[b], config.final_spec, transform, &rows));
      }
    }
  }

  std::vector<TaskOutcome> outcomes(collection.size());
  parallel_for(collection.size(), [&](std::size_t t) {
    const Task& task = collection.tasks[t];
    const SplitPlan& plan = plans[t];
    TaskOutcome& out = outcomes[t];
    std::string stage = "intrinsic";
    try {
      out.scores.push_back(cross_validate(task.features, task.targets, config.final_spec, plan, task.task_id,
                                          Representation::intrinsic()));
      stage = "transformed";
      std::vector<Matrix> views;
      for (const auto& bank : banks) {
        Matrix v = apply_cap(build_extrinsic(task.task_id, bank, task.features), transform).values;
        views.push_back(config.augment ? concat_columns(task.features, v) : std::move(v));
      }
      out.scores.push_back(cross_validate(views, task.targets, config.final_spec, plan, task.task_id,
                                          Representation::transformed(config.transformer_spec, 1)));
      if (config.order == 2) {
        stage = "second-order";
        std::vector<Matrix> views2;
        for (std::size_t b = 0; b < banks.size(); ++b) {
          Matrix v = apply_cap(second_order_extrinsic(task.task_id, banks[b], stage2[b], task.features), transform).values;
          views2.push_back(config.augment ? concat_columns(task.features, v) : std::move(v));
        }
        out.scores.push_back(cross_validate(views2, task.targets, config.final_spec, plan, task.task_id,
                                            Representation::transformed(config.transformer_spec, 2)));
      }
    } catch (const std::exception& e) {
      if (config.strict) throw TaskError(task.task_id, e.what());
      out.scores.clear();
      out.failure = TaskFailure{task.task_id, stage, e.what()};
    }
  });

  for (std::size_t t = 0; t < collection.size(); ++t) {
    const Task& task = collection.tasks[t];
    result.plan_hashes.emplace_back(task.task_id, plans[t].hash());
    if (config.descriptor_cap) result.descriptor_seeds.emplace_back(task.task_id, descriptor_seed(config.seed, task.task_id, 1));
    if (outcomes[t].failure) result.failures.push_back(*outcomes[t].failure);
    for (auto& s : outcomes[t].scores) result.scores.push_back(std::move(s));
  }

  for (std::size_t b = 0; b < banks.size(); ++b) {
    BankRecord record;
    record.held_out_round = banks[b].held_out_round;
    for (std::size_t m = 0; m < banks[b].size(); ++m)
      record.fingerprints.emplace_back(banks[b].task_ids[m], banks[b].models[m].train_fingerprint());
    result.banks.push_back(std::move(record));
  }

  if (shared) {
    // every held-out row set must be disjoint from the rows behind its features
    const Task& first = collection.tasks.front();
    for (std::size_t r = 0; r < plans.front().rounds(); ++r) {
      std::vector<std::string> held_out;
      for (std::size_t i : plans.front().test_rows(r)) held_out.push_back(first.example_ids[i]);
      const ModelBank& bank = banks.size() == 1 ? banks.front() : banks[r];
      for (auto& v : audit_leakage(bank, held_out)) result.leakage_violations.push_back("round " + std::to_string(r) + ": " + v);
    }
  }

  if (options.bank_dir) {
    for (std::size_t b = 0; b < banks.size(); ++b) {
      const fs::path dir = banks.size() == 1 ? *options.bank_dir / "bank"
                                             : *options.bank_dir / ("bank_round_" + std::to_string(b));
      save_bank(banks[b], dir);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Result documents

namespace {

json representation_to_json(const Representation& r) {
  if (r.is_intrinsic()) return {{"kind", "intrinsic"}};
  return {{"kind", "transformed"}, {"transformer", spec_to_json(*r.transformer)}, {"order", r.order}};
}

Representation representation_from_json(const json& j) {
  if (j.at("kind").get<std::string>() == "intrinsic") return Representation::intrinsic();
  return Representation::transformed(spec_from_json(j.at("transformer")), j.at("order").get<int>());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  std::from_chars(s.data(), s.data() + s.size(), v, 16);
  return v;
}

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

} // namespace

json result_to_json(const ExperimentResult& r) {
  json j;
  j["format"] = "tml-result";
  j["version"] = 1;
  j["software_version"] = TML_VERSION;
  j["config"] = config_to_json(r.config);
  j["collection_id"] = r.collection_id;
  j["mode"] = to_string(r.mode);
  j["scope"] = to_string(r.scope);
  j["scores"] = json::array();
  for (const auto& s : r.scores)
    j["scores"].push_back({{"task_id", s.task_id},
                           {"representation", representation_to_json(s.representation)},
                           {"final_learner", spec_to_json(s.final_learner)},
                           {"per_fold_rmse", s.per_fold_rmse},
                           {"mean_rmse", s.mean_rmse},
                           {"plan_hash", hex64(s.plan_hash)}});
  j["failures"] = json::array();
  for (const auto& f : r.failures) j["failures"].push_back({{"task_id", f.task_id}, {"stage", f.stage}, {"message", f.message}});
  j["banks"] = json::array();
  for (const auto& b : r.banks) {
    json fps = json::array();
    for (const auto& [task, fp] : b.fingerprints) fps.push_back({{"task_id", task}, {"fingerprint", fp}});
    j["banks"].push_back({{"held_out_round", b.held_out_round ? json(*b.held_out_round) : json(nullptr)},
                          {"fingerprints", std::move(fps)}});
  }
  j["plan_hashes"] = json::array();
  for (const auto& [task, h] : r.plan_hashes) j["plan_hashes"].push_back({{"task_id", task}, {"hash", hex64(h)}});
  j["descriptor_seeds"] = json::array();
  for (const auto& [task, s] : r.descriptor_seeds) j["descriptor_seeds"].push_back({{"task_id", task}, {"seed", s}});
  j["leakage_violations"] = r.leakage_violations;
  return j;
}

ExperimentResult result_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "tml-result") throw ValidationError("not an experiment result");
    ExperimentResult r;
    r.config = config_from_json(j.at("config"));
    r.collection_id = j.at("collection_id").get<std::string>();
    r.mode = parse_collection_mode(j.at("mode").get<std::string>());
    r.scope = parse_training_scope(j.at("scope").get<std::string>());
    for (const auto& s : j.at("scores")) {
      CvResult cv;
      cv.task_id = s.at("task_id").get<std::string>();
      cv.representation = representation_from_json(s.at("representation"));
      cv.final_learner = spec_from_json(s.at("final_learner"));
      cv.per_fold_rmse = s.at("per_fold_rmse").get<std::vector<double>>();
      cv.mean_rmse = s.at("mean_rmse").get<double>();
      cv.plan_hash = parse_hex64(s.at("plan_hash").get<std::string>());
      r.scores.push_back(std::move(cv));
    }
    for (const auto& f : j.at("failures"))
      r.failures.push_back({f.at("task_id").get<std::string>(), f.at("stage").get<std::string>(),
                            f.at("message").get<std::string>()});
    for (const auto& b : j.at("banks")) {
      BankRecord rec;
      if (!b.at("held_out_round").is_null()) rec.held_out_round = b.at("held_out_round").get<std::size_t>();
      for (const auto& fp : b.at("fingerprints"))
        rec.fingerprints.emplace_back(fp.at("task_id").get<std::string>(), fp.at("fingerprint").get<std::string>());
      r.banks.push_back(std::move(rec));
    }
    for (const auto& p : j.at("plan_hashes"))
      r.plan_hashes.emplace_back(p.at("task_id").get<std::string>(), parse_hex64(p.at("hash").get<std::string>()));
    for (const auto& p : j.at("descriptor_seeds"))
      r.descriptor_seeds.emplace_back(p.at("task_id").get<std::string>(), p.at("seed").get<std::uint64_t>());
    r.leakage_violations = j.at("leakage_violations").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("experiment result: ") + e.what());
  }
}

std::string format_scores_tsv(const std::vector<CvResult>& scores) {
  std::ostringstream out;
  out << "task_id\trepresentation\tfinal_learner\tmean_rmse\tfold_rmse\tplan_hash\n";
  for (const auto& s : scores) {
    out << s.task_id << '\t' << s.representation.label() << '\t' << s.final_learner.label() << '\t'
        << shortest(s.mean_rmse) << '\t';
    for (std::size_t f = 0; f < s.per_fold_rmse.size(); ++f) out << (f ? ";" : "") << shortest(s.per_fold_rmse[f]);
    out << '\t' << hex64(s.plan_hash) << '\n';
  }
  return out.str();
}

void write_result(const ExperimentResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write '" + (dir / name).string() + "'");
    out << text;
  };
  write("result.json", result_to_json(result).dump(2) + "\n");
  write("scores.tsv", format_scores_tsv(result.scores));
  const ComparisonTable table = compare_representations(result.scores);
  write("table.tsv", format_table_tsv(table));
  write("table.txt", format_table_text(table));
}

ExperimentResult read_result(const fs::path& result_json) {
  std::ifstream in(result_json);
  if (!in) throw ValidationError("cannot open result '" + result_json.string() + "'");
  try {
    return result_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError(result_json.string() + ": " + e.what());
  }
}

} // namespace tml
