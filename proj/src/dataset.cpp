#include "tml/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "tml/error.hpp"
#include "tml/rng.hpp"

namespace tml {
namespace fs = std::filesystem;

std::string to_string(CollectionMode mode) {
  return mode == CollectionMode::SharedExamples ? "shared" : "independent";
}

CollectionMode parse_collection_mode(const std::string& text) {
  if (text == "independent" || text == "IndependentExamples") return CollectionMode::IndependentExamples;
  if (text == "shared" || text == "SharedExamples") return CollectionMode::SharedExamples;
  throw ValidationError("unknown collection mode '" + text + "' (expected independent|shared)");
}

std::size_t TaskCollection::index_of(const std::string& task_id) const {
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].task_id == task_id) return i;
  throw ValidationError("unknown task id '" + task_id + "'");
}

std::vector<std::size_t> SplitPlan::test_rows(std::size_t round) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == round) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> SplitPlan::train_rows(std::size_t round) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] != round) rows.push_back(i);
  return rows;
}

std::uint64_t SplitPlan::hash() const noexcept {
  std::uint64_t h = fnv1a(kind == SplitKind::KFold ? "kfold" : "holdout");
  for (std::size_t a : assignments) h = mix64(h ^ a);
  return h;
}

Task make_task(std::string task_id, Matrix features, Vector targets, std::vector<std::string> feature_names,
               std::vector<std::string> example_ids) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (task_id.empty()) throw ValidationError("task id must not be empty");
  if (n == 0) throw ValidationError("task '" + task_id + "': task has zero examples");
  if (static_cast<std::size_t>(targets.size()) != n && targets.size() != 0)
    throw ValidationError("task '" + task_id + "': " + std::to_string(n) + " feature rows but " +
                          std::to_string(targets.size()) + " targets");
  if (example_ids.size() != n)
    throw ValidationError("task '" + task_id + "': " + std::to_string(n) + " feature rows but " +
                          std::to_string(example_ids.size()) + " example ids");
  if (feature_names.size() != static_cast<std::size_t>(features.cols()))
    throw ValidationError("task '" + task_id + "': feature name count does not match column count");
  std::unordered_set<std::string> seen;
  for (const auto& name : feature_names)
    if (!seen.insert(name).second) throw ValidationError("task '" + task_id + "': duplicate feature name '" + name + "'");
  seen.clear();
  for (const auto& id : example_ids)
    if (!seen.insert(id).second) throw ValidationError("task '" + task_id + "': duplicate example id '" + id + "'");
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    for (Eigen::Index c = 0; c < features.cols(); ++c)
      if (!std::isfinite(features(r, c)))
        throw ValidationError("task '" + task_id + "': non-finite feature at row " + std::to_string(r + 1) +
                              ", column '" + feature_names[static_cast<std::size_t>(c)] + "'");
  for (Eigen::Index r = 0; r < targets.size(); ++r)
    if (!std::isfinite(targets(r)))
      throw ValidationError("task '" + task_id + "': non-finite target at row " + std::to_string(r + 1));
  return Task{std::move(task_id), std::move(features), std::move(targets), std::move(feature_names),
              std::move(example_ids)};
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, delim)) cells.push_back(cell);
  if (!line.empty() && line.back() == delim) cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

} // namespace

Task load_task(const fs::path& path, const IngestionOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open task file '" + path.string() + "'");
  const std::string where = path.string();

  std::string header_line;
  if (!std::getline(in, header_line)) throw ValidationError(where + ": file is empty (no header row)");
  if (header_line.size() >= 3 && header_line.compare(0, 3, "\xEF\xBB\xBF") == 0) header_line.erase(0, 3);
  if (!header_line.empty() && header_line.back() == '\r') header_line.pop_back();
  const char delim = header_line.find('\t') != std::string::npos ? '\t' : ',';

  std::vector<std::string> header = split_line(header_line, delim);
  for (auto& h : header) h = trim(h);
  if (header.size() < 2) throw ValidationError(where + ": header needs an id column and at least one more column");
  {
    std::set<std::string> seen;
    for (std::size_t c = 0; c < header.size(); ++c)
      if (!seen.insert(header[c]).second)
        throw ValidationError(where + ": duplicate header '" + header[c] + "' at column " + std::to_string(c + 1));
  }

  std::size_t target_col = header.size();
  if (options.has_target) {
    for (std::size_t c = 1; c < header.size(); ++c)
      if (header[c] == options.target_column) target_col = c;
    if (target_col == header.size())
      throw ValidationError(where + ": missing target column '" + options.target_column + "'");
  }

  std::vector<std::string> feature_names;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (c == target_col) continue;
    feature_names.push_back(header[c]);
    feature_cols.push_back(c);
  }

  std::vector<std::string> example_ids;
  std::vector<double> values;
  std::vector<double> targets;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_line(line, delim);
    if (cells.size() != header.size())
      throw ValidationError(where + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
    auto parse = [&](std::size_t c) {
      const std::string text = trim(cells[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
        throw ValidationError(where + ": non-numeric cell '" + text + "' at line " + std::to_string(line_no) +
                              ", column '" + header[c] + "'");
      if (!std::isfinite(v))
        throw ValidationError(where + ": non-finite cell '" + text + "' at line " + std::to_string(line_no) +
                              ", column '" + header[c] + "'");
      return v;
    };
    example_ids.push_back(trim(cells[0]));
    for (std::size_t c : feature_cols) values.push_back(parse(c));
    if (options.has_target) targets.push_back(parse(target_col));
  }

  std::string task_id = options.task_id.empty() ? path.stem().string() : options.task_id;
  if (example_ids.empty()) throw ValidationError(where + ": task has zero examples");

  const auto n = static_cast<Eigen::Index>(example_ids.size());
  const auto p = static_cast<Eigen::Index>(feature_cols.size());
  Matrix features = Eigen::Map<Matrix>(values.data(), n, p);
  Vector y = options.has_target ? Vector(Eigen::Map<Vector>(targets.data(), n)) : Vector();
  if (options.has_target && options.reject_constant_targets && n > 1 && y.maxCoeff() == y.minCoeff())
    throw ValidationError(where + ": constant target vector (all values " + std::to_string(y(0)) + ")");
  return make_task(std::move(task_id), std::move(features), std::move(y), std::move(feature_names),
                   std::move(example_ids));
}

void write_task(const Task& task, const fs::path& path, const std::string& target_column) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "id";
  for (const auto& name : task.feature_names) out << ',' << name;
  if (task.targets.size() > 0) out << ',' << target_column;
  out << '\n';
  char buf[64];
  auto put = [&](double v) {
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, res.ptr - buf);
  };
  for (std::size_t r = 0; r < task.rows(); ++r) {
    out << task.example_ids[r];
    for (std::size_t c = 0; c < task.cols(); ++c) {
      out << ',';
      put(task.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
    if (task.targets.size() > 0) {
      out << ',';
      put(task.targets(static_cast<Eigen::Index>(r)));
    }
    out << '\n';
  }
}

TaskCollection assemble_collection(std::vector<Task> tasks, CollectionMode mode, std::string feature_space_id) {
  if (tasks.size() < 2)
    throw ValidationError("a collection needs at least 2 tasks, got " + std::to_string(tasks.size()));
  std::unordered_set<std::string> ids;
  const Task& first = tasks.front();
  for (const Task& t : tasks) {
    if (!ids.insert(t.task_id).second) throw ValidationError("duplicate task id '" + t.task_id + "'");
    if (t.targets.size() != static_cast<Eigen::Index>(t.rows()))
      throw ValidationError("task '" + t.task_id + "' has no targets");
    const std::size_t common = std::min(t.feature_names.size(), first.feature_names.size());
    for (std::size_t c = 0; c < common; ++c)
      if (t.feature_names[c] != first.feature_names[c])
        throw ValidationError("feature space mismatch: task '" + t.task_id + "' column " + std::to_string(c + 1) +
                              " is '" + t.feature_names[c] + "', task '" + first.task_id + "' has '" +
                              first.feature_names[c] + "'");
    if (t.feature_names.size() != first.feature_names.size()) {
      const auto& longer = t.feature_names.size() > first.feature_names.size() ? t : first;
      throw ValidationError("feature space mismatch: task '" + t.task_id + "' has " +
                            std::to_string(t.feature_names.size()) + " features, task '" + first.task_id + "' has " +
                            std::to_string(first.feature_names.size()) + "; first differing column '" +
                            longer.feature_names[common] + "'");
    }
    if (mode == CollectionMode::SharedExamples && t.example_ids != first.example_ids) {
      std::string detail = "row counts differ";
      for (std::size_t r = 0; r < std::min(t.rows(), first.rows()); ++r)
        if (t.example_ids[r] != first.example_ids[r]) {
          detail = "row " + std::to_string(r + 1) + " is '" + t.example_ids[r] + "' vs '" + first.example_ids[r] + "'";
          break;
        }
      throw ValidationError("shared-examples mode violation: task '" + t.task_id + "' example ids differ from '" +
                            first.task_id + "' (" + detail + ")");
    }
  }
  return TaskCollection{std::move(tasks), mode, std::move(feature_space_id)};
}

CollectionManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open collection manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  CollectionManifest m;
  try {
    m.collection_id = j.at("collection_id").get<std::string>();
    m.mode = parse_collection_mode(j.value("mode", std::string("independent")));
    m.target_column = j.value("target_column", std::string("y"));
    const fs::path base = path.parent_path();
    for (const auto& entry : j.at("tasks")) {
      fs::path file = entry.at("file").get<std::string>();
      if (file.is_relative()) file = base / file;
      std::string id = entry.contains("id") ? entry.at("id").get<std::string>() : file.stem().string();
      m.tasks.emplace_back(std::move(id), std::move(file));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": invalid manifest: " + e.what());
  }
  return m;
}

void write_manifest(const CollectionManifest& manifest, const fs::path& path) {
  nlohmann::ordered_json j;
  j["collection_id"] = manifest.collection_id;
  j["mode"] = to_string(manifest.mode);
  j["target_column"] = manifest.target_column;
  j["tasks"] = nlohmann::ordered_json::array();
  for (const auto& [id, file] : manifest.tasks) {
    const fs::path base = fs::absolute(path).parent_path();
    const fs::path rel = fs::absolute(file).lexically_normal().lexically_relative(base.lexically_normal());
    j["tasks"].push_back({{"id", id}, {"file", rel.generic_string()}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

TaskCollection load_collection(const fs::path& manifest_path) {
  const CollectionManifest m = read_manifest(manifest_path);
  std::vector<Task> tasks;
  for (const auto& [id, file] : m.tasks) {
    IngestionOptions opts;
    opts.target_column = m.target_column;
    opts.task_id = id;
    tasks.push_back(load_task(file, opts));
  }
  return assemble_collection(std::move(tasks), m.mode, m.collection_id);
}

SplitPlan make_fold_plan(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k-fold needs k >= 2, got " + std::to_string(k));
  if (k > n) throw ValidationError("k-fold needs k <= n, got k=" + std::to_string(k) + ", n=" + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  SplitPlan plan;
  plan.kind = SplitKind::KFold;
  plan.seed = seed;
  plan.k = k;
  plan.assignments.resize(n);
  for (std::size_t pos = 0; pos < n; ++pos) plan.assignments[order[pos]] = pos % k;
  return plan;
}

SplitPlan make_holdout_plan(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ValidationError("holdout test fraction must lie in (0, 1), got " + std::to_string(test_fraction));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n_test == 0 || n_test >= n)
    throw ValidationError("holdout with n=" + std::to_string(n) + " and fraction " + std::to_string(test_fraction) +
                          " leaves an empty train or test side");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  SplitPlan plan;
  plan.kind = SplitKind::Holdout;
  plan.seed = seed;
  plan.test_fraction = test_fraction;
  plan.assignments.assign(n, 1);
  for (std::size_t pos = 0; pos < n_test; ++pos) plan.assignments[order[pos]] = 0;
  return plan;
}

std::pair<Task, NormalizationParams> normalize_targets(const Task& task) {
  const double lo = task.targets.minCoeff();
  const double hi = task.targets.maxCoeff();
  if (!(hi > lo)) throw ValidationError("task '" + task.task_id + "': cannot normalize a constant target vector");
  NormalizationParams params{lo, hi};
  Task out = task;
  for (Eigen::Index i = 0; i < out.targets.size(); ++i) out.targets(i) = params.apply(task.targets(i));
  return {std::move(out), params};
}

Vector denormalize(const Vector& values, const NormalizationParams& params) {
  Vector out(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) out(i) = params.invert(values(i));
  return out;
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Vector take_rows(const Vector& v, const std::vector<std::size_t>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(rows[i]));
  return out;
}

} // namespace tml
