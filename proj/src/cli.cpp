#include "tml/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "tml/error.hpp"
#include "tml/explain.hpp"
#include "tml/parallel.hpp"
#include "tml/pipeline.hpp"
#include "tml/synth.hpp"

namespace tml::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool strict = false;
  bool save_bank = false;
};

int cmd_run(const RunArgs& a) {
  PipelineConfig config = load_config(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.strict) config.strict = true;
  const std::string started = utc_now();

  RunOptions options;
  if (a.save_bank) options.bank_dir = fs::path(a.out);
  const ExperimentResult result = run_pipeline(config, options);
  write_result(result, a.out);

  json manifest;
  manifest["config_path"] = fs::absolute(a.config).lexically_normal().generic_string();
  manifest["config"] = config_to_json(config);
  manifest["output_dir"] = fs::absolute(a.out).lexically_normal().generic_string();
  manifest["started_utc"] = started;
  manifest["finished_utc"] = utc_now();
  manifest["tool_version"] = TML_VERSION;
  write_text(fs::path(a.out) / "manifest.json", manifest.dump(2) + "\n");

  std::cout << format_table_text(compare_representations(result.scores));
  for (const auto& f : result.failures)
    std::cerr << "warning: task '" << f.task_id << "' failed at " << f.stage << ": " << f.message << '\n';
  for (const auto& v : result.leakage_violations) std::cerr << "leakage: " << v << '\n';
  return result.leakage_violations.empty() ? kOk : kRuntime;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SynthSpec spec;
  std::string nonlinearity = "nonlinear";
  std::string mode = "independent";
  std::string out;
  std::string id = "synth";
};

int cmd_synth(SynthArgs a) {
  a.spec.nonlinearity = a.nonlinearity == "linear" ? Nonlinearity::Linear : Nonlinearity::Nonlinear;
  a.spec.mode = parse_collection_mode(a.mode);
  a.spec.validate();
  const TaskCollection collection = generate_collection(a.spec);
  const fs::path manifest = write_collection(collection, a.out, a.id);
  std::cout << manifest.generic_string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct ClusterArgs {
  std::string bank;
  std::string pool;
  std::size_t k = 2;
  std::uint64_t seed = 1;
  std::string what = "both";
  bool raw = false;
  bool dump_distances = false;
  std::string out;
};

std::string cluster_rows(const std::vector<std::string>& ids, const ClusterResult& c, const char* header) {
  std::string text = std::string(header) + "\tcluster\n";
  for (std::size_t i = 0; i < ids.size(); ++i) text += ids[i] + '\t' + std::to_string(c.assignments[i]) + '\n';
  return text;
}

json cluster_summary(const ClusterResult& c) {
  return {{"k", c.k},       {"seed", c.seed},           {"inertia", c.inertia},
          {"iterations", c.iterations}, {"converged", c.converged}};
}

std::string distance_tsv(const std::vector<std::string>& ids, const Matrix& d) {
  std::string text = "id";
  for (const auto& id : ids) text += '\t' + id;
  text += '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    text += ids[i];
    for (std::size_t j = 0; j < ids.size(); ++j) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "\t%.10g", d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      text += buf;
    }
    text += '\n';
  }
  return text;
}

int cmd_cluster(const ClusterArgs& a) {
  const ModelBank bank = load_bank(a.bank);
  IngestionOptions opts;
  opts.has_target = false;
  opts.task_id = "pool";
  const Task pool = load_task(a.pool, opts);
  const bool tasks = a.what != "examples";
  const bool examples = a.what != "tasks";
  if (tasks && a.k > bank.size())
    throw ValidationError("k = " + std::to_string(a.k) + " exceeds the " + std::to_string(bank.size()) + " bank models");
  if (examples && a.k > pool.rows())
    throw ValidationError("k = " + std::to_string(a.k) + " exceeds the " + std::to_string(pool.rows()) + " pool rows");

  const CrossPredictionMatrix m = cross_prediction_matrix(bank, pool.features, pool.example_ids);
  const KMeansOptions options{300, !a.raw};
  fs::create_directories(a.out);
  json report;
  if (tasks) {
    const ClusterResult c = cluster_tasks(m, a.k, a.seed, options);
    write_text(fs::path(a.out) / "task_clusters.tsv", cluster_rows(m.task_ids, c, "task_id"));
    report["tasks"] = cluster_summary(c);
    if (a.dump_distances)
      write_text(fs::path(a.out) / "task_distances.tsv", distance_tsv(m.task_ids, pairwise_distances(m.values.transpose())));
  }
  if (examples) {
    const ClusterResult c = cluster_examples(m, a.k, a.seed, options);
    write_text(fs::path(a.out) / "example_clusters.tsv", cluster_rows(m.example_ids, c, "example_id"));
    report["examples"] = cluster_summary(c);
    if (a.dump_distances)
      write_text(fs::path(a.out) / "example_distances.tsv", distance_tsv(m.example_ids, pairwise_distances(m.values)));
  }
  write_text(fs::path(a.out) / "clusters.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_compare(const std::vector<std::string>& files, const std::string& out) {
  std::vector<CvResult> merged;
  // the same intrinsic score appears in every run over a collection; keep one
  std::set<std::tuple<std::string, std::string, std::string>> seen_intrinsic;
  for (const auto& file : files) {
    const ExperimentResult r = read_result(file);
    for (const auto& s : r.scores) {
      if (s.representation.is_intrinsic() &&
          !seen_intrinsic.emplace(r.collection_id + "/" + s.task_id, s.final_learner.label(), "original").second)
        continue;
      merged.push_back(s);
    }
  }
  const ComparisonTable table = compare_representations(merged);
  const std::string text = format_table_text(table);
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "table.txt", text);
    write_text(fs::path(out) / "table.tsv", format_table_tsv(table));
  }
  std::cout << text;
  return kOk;
}

int cmd_inspect_bank(const std::string& dir) {
  const ModelBank bank = load_bank(dir);
  std::cout << "collection\t" << bank.collection_id << "\nlearner\t" << bank.learner_spec.label() << "\nscope\t"
            << to_string(bank.training_scope) << "\nheld_out_round\t"
            << (bank.held_out_round ? std::to_string(*bank.held_out_round) : "-") << "\n";
  std::cout << "task_id\tfeatures\ttrain_rows\tfingerprint\n";
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const FittedModel& m = bank.models[i];
    std::cout << bank.task_ids[i] << '\t' << m.feature_count() << '\t' << m.provenance().row_ids.size() << '\t'
              << m.train_fingerprint() << '\n';
  }
  return kOk;
}

} // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Related-task prediction transfer experiments", "tml"};
  app.set_version_flag("--version", std::string(TML_VERSION));
  app.require_subcommand(1);
  std::optional<std::size_t> workers;
  app.add_option("--workers", workers, "Worker threads (overrides TML_WORKERS)")->check(CLI::PositiveNumber);

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment config");
  run_cmd->add_option("--config", run_args.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", run_args.out, "Output directory")->required();
  run_cmd->add_option("--seed", run_args.seed, "Override the config seed");
  run_cmd->add_flag("--strict", run_args.strict, "Abort on the first task failure");
  run_cmd->add_flag("--save-bank", run_args.save_bank, "Write stage-1 model banks into the output directory");
  run_cmd->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic task collection");
  synth_cmd->add_option("--tasks", synth_args.spec.n_tasks, "Number of tasks")->check(CLI::Range(2, 100000));
  synth_cmd->add_option("--examples", synth_args.spec.n_examples_per_task, "Examples per task")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--features", synth_args.spec.n_features, "Feature count")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--relatedness", synth_args.spec.relatedness, "Shared-signal weight in [0,1]")
      ->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--nonlinearity", synth_args.nonlinearity, "linear|nonlinear")
      ->check(CLI::IsMember({"linear", "nonlinear"}));
  synth_cmd->add_option("--noise", synth_args.spec.noise_sd, "Noise standard deviation")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--seed", synth_args.spec.seed, "Generator seed");
  synth_cmd->add_option("--mode", synth_args.mode, "independent|shared")->check(CLI::IsMember({"independent", "shared"}));
  synth_cmd->add_option("--id", synth_args.id, "Collection id");
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();

  ClusterArgs cluster_args;
  auto* cluster_cmd = app.add_subcommand("cluster", "Cluster tasks and/or examples by cross-predictions");
  cluster_cmd->add_option("--bank", cluster_args.bank, "Bank directory")->required()->check(CLI::ExistingDirectory);
  cluster_cmd->add_option("--pool", cluster_args.pool, "Pool of examples (task-file format, target optional)")
      ->required()
      ->check(CLI::ExistingFile);
  cluster_cmd->add_option("--k", cluster_args.k, "Cluster count")->check(CLI::PositiveNumber);
  cluster_cmd->add_option("--seed", cluster_args.seed, "Initialisation seed");
  cluster_cmd->add_option("--what", cluster_args.what, "tasks|examples|both")
      ->check(CLI::IsMember({"tasks", "examples", "both"}));
  cluster_cmd->add_flag("--raw", cluster_args.raw, "Cluster raw predictions (default: z-score each task's predictions)");
  cluster_cmd->add_flag("--dump-distances", cluster_args.dump_distances, "Write pairwise distance matrices");
  cluster_cmd->add_option("--out", cluster_args.out, "Output directory")->required();

  std::vector<std::string> compare_files;
  std::string compare_out;
  auto* compare_cmd = app.add_subcommand("compare", "Merge result files into one comparison table");
  compare_cmd->add_option("results", compare_files, "result.json files")->required()->check(CLI::ExistingFile);
  compare_cmd->add_option("--out", compare_out, "Output directory for table.txt/table.tsv");

  std::string inspect_dir;
  auto* inspect_cmd = app.add_subcommand("inspect-bank", "List bank models and fingerprints");
  inspect_cmd->add_option("--bank", inspect_dir, "Bank directory")->required()->check(CLI::ExistingDirectory);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (workers) set_max_workers(*workers);
    if (run_cmd->parsed()) return cmd_run(run_args);
    if (synth_cmd->parsed()) return cmd_synth(synth_args);
    if (cluster_cmd->parsed()) return cmd_cluster(cluster_args);
    if (compare_cmd->parsed()) return cmd_compare(compare_files, compare_out);
    if (inspect_cmd->parsed()) return cmd_inspect_bank(inspect_dir);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

} // namespace tml::cli
