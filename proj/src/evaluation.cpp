#include "tml/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "tml/error.hpp"
#include "tml/parallel.hpp"

namespace tml {

double rmse(const Vector& pred, const Vector& truth) {
  if (pred.size() != truth.size())
    throw ValidationError("rmse: length mismatch (" + std::to_string(pred.size()) + " vs " +
                          std::to_string(truth.size()) + ")");
  if (pred.size() == 0) throw ValidationError("rmse: empty vectors");
  if (!pred.allFinite() || !truth.allFinite()) throw ValidationError("rmse: non-finite entries");
  double ss = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double d = pred(i) - truth(i);
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(pred.size()));
}

double improvement_pct(double rmse_original, double rmse_tl) {
  if (!(rmse_original > 0.0) || !std::isfinite(rmse_original))
    throw ValidationError("improvement_pct: original RMSE must be positive");
  if (!(rmse_tl >= 0.0) || !std::isfinite(rmse_tl))
    throw ValidationError("improvement_pct: transformed RMSE must be non-negative");
  return (rmse_original - rmse_tl) / rmse_original * 100.0;
}

std::string Representation::label() const {
  if (!transformer) return "original";
  return (order <= 1 ? "TL-" : "TL" + std::to_string(order) + "-") + transformer->label();
}

CvResult cross_validate(const std::vector<Matrix>& per_round_X, const Vector& y, const LearnerSpec& spec,
                        const SplitPlan& plan, std::string task_id, Representation representation) {
  const std::size_t rounds = plan.rounds();
  if (per_round_X.size() != 1 && per_round_X.size() != rounds)
    throw ValidationError("cross_validate: need 1 or " + std::to_string(rounds) + " feature matrices");
  if (plan.size() != static_cast<std::size_t>(y.size()))
    throw ValidationError("cross_validate: plan covers " + std::to_string(plan.size()) + " rows, data has " +
                          std::to_string(y.size()));
  for (const auto& X : per_round_X)
    if (X.rows() != y.size()) throw ValidationError("cross_validate: feature rows do not match targets");

  CvResult result;
  result.task_id = std::move(task_id);
  result.representation = std::move(representation);
  result.final_learner = spec;
  result.plan_hash = plan.hash();
  result.per_fold_rmse.assign(rounds, 0.0);
  parallel_for(rounds, [&](std::size_t r) {
    const Matrix& X = per_round_X.size() == 1 ? per_round_X.front() : per_round_X[r];
    const auto train = plan.train_rows(r);
    const auto test = plan.test_rows(r);
    try {
      if (test.empty()) throw ValidationError("empty test fold");
      const FittedModel model = fit(spec, take_rows(X, train), take_rows(y, train));
      result.per_fold_rmse[r] = rmse(predict(model, take_rows(X, test)), take_rows(y, test));
    } catch (const std::exception& e) {
      throw Error("fold " + std::to_string(r) + ": " + e.what());
    }
  });
  double sum = 0.0;
  for (double v : result.per_fold_rmse) sum += v;
  result.mean_rmse = sum / static_cast<double>(rounds);
  return result;
}

CvResult cross_validate(const Matrix& X, const Vector& y, const LearnerSpec& spec, const SplitPlan& plan,
                        std::string task_id, Representation representation) {
  return cross_validate(std::vector<Matrix>{X}, y, spec, plan, std::move(task_id), std::move(representation));
}

WinCount win_count(const std::vector<std::pair<std::string, double>>& baseline,
                   const std::vector<std::pair<std::string, double>>& challenger) {
  std::map<std::string, double> base(baseline.begin(), baseline.end());
  std::map<std::string, double> chal(challenger.begin(), challenger.end());
  if (base.size() != baseline.size() || chal.size() != challenger.size())
    throw ValidationError("win_count: duplicate task ids");
  if (base.size() != chal.size()) throw ValidationError("win_count: task sets differ in size");
  WinCount wc;
  for (const auto& [task, b] : base) {
    const auto it = chal.find(task);
    if (it == chal.end()) throw ValidationError("win_count: task '" + task + "' missing from challenger");
    const double c = it->second;
    if (std::abs(c - b) <= kTieTolerance) ++wc.ties;
    else if (c < b) ++wc.wins;
    else ++wc.losses;
  }
  return wc;
}

const ComparisonRow* ComparisonTable::find(const std::string& final_learner, const std::string& representation) const {
  for (const auto& row : rows)
    if (row.final_learner == final_learner && row.representation == representation) return &row;
  return nullptr;
}

namespace {

// Sort key placing "original" first, then transformers alphabetically.
std::pair<int, std::string> representation_key(const std::string& label) {
  return {label == "original" ? 0 : 1, label};
}

} // namespace

ComparisonTable compare_representations(const std::vector<CvResult>& results) {
  // (final, representation) -> task -> mean rmse
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> groups;
  for (const auto& r : results) {
    auto& group = groups[{r.final_learner.label(), r.representation.label()}];
    if (!group.emplace(r.task_id, r.mean_rmse).second)
      throw ValidationError("compare_representations: duplicate result for task '" + r.task_id + "' (" +
                            r.final_learner.label() + ", " + r.representation.label() + ")");
  }

  ComparisonTable table;
  for (const auto& [key, scores] : groups) {
    ComparisonRow row;
    row.final_learner = key.first;
    row.representation = key.second;
    row.task_count = scores.size();
    double sum = 0.0;
    for (const auto& [task, v] : scores) sum += v; // map order: independent of input order
    row.mean_rmse = sum / static_cast<double>(scores.size());
    table.rows.push_back(std::move(row));
  }

  for (auto& row : table.rows) {
    if (row.representation == "original") continue;
    const auto base_it = groups.find({row.final_learner, "original"});
    if (base_it == groups.end()) continue;
    const auto& base = base_it->second;
    const auto& mine = groups.at({row.final_learner, row.representation});
    std::vector<std::pair<std::string, double>> b, c;
    for (const auto& [task, v] : base) {
      const auto it = mine.find(task);
      if (it == mine.end()) {
        row.missing_tasks.push_back(task);
        continue;
      }
      b.emplace_back(task, v);
      c.emplace_back(task, it->second);
    }
    if (c.size() != mine.size()) {
      for (const auto& [task, v] : mine)
        if (!base.count(task)) row.missing_tasks.push_back("(baseline lacks) " + task);
    }
    if (!row.missing_tasks.empty()) continue;
    const double base_mean = table.find(row.final_learner, "original")->mean_rmse;
    row.improvement = improvement_pct(base_mean, row.mean_rmse);
    row.versus_intrinsic = win_count(b, c);
  }

  std::sort(table.rows.begin(), table.rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.final_learner != b.final_learner) return a.final_learner < b.final_learner;
    return representation_key(a.representation) < representation_key(b.representation);
  });
  return table;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

} // namespace

std::string format_table_tsv(const ComparisonTable& table) {
  std::ostringstream out;
  out << "final_learner\trepresentation\ttasks\tmean_rmse\timprovement_pct\twins\tlosses\tties\tmissing\n";
  for (const auto& row : table.rows) {
    out << row.final_learner << '\t' << row.representation << '\t' << row.task_count << '\t'
        << fixed(row.mean_rmse, 6) << '\t' << (row.improvement ? fixed(*row.improvement, 2) : "") << '\t';
    if (row.versus_intrinsic)
      out << row.versus_intrinsic->wins << '\t' << row.versus_intrinsic->losses << '\t' << row.versus_intrinsic->ties;
    else
      out << "\t\t";
    out << '\t' << row.missing_tasks.size() << '\n';
  }
  return out.str();
}

std::string format_table_text(const ComparisonTable& table) {
  std::vector<std::string> learners;
  std::vector<std::string> transformed;
  for (const auto& row : table.rows) {
    if (std::find(learners.begin(), learners.end(), row.final_learner) == learners.end())
      learners.push_back(row.final_learner);
    if (row.representation != "original" &&
        std::find(transformed.begin(), transformed.end(), row.representation) == transformed.end())
      transformed.push_back(row.representation);
  }
  std::sort(transformed.begin(), transformed.end());

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Learning Method", "Original rep."};
  for (const auto& t : transformed) {
    std::string name = t;
    if (name.rfind("TL-", 0) == 0) name = "TL - " + name.substr(3);
    header.push_back(name);
    header.push_back("(%)");
  }
  cells.push_back(header);
  for (const auto& learner : learners) {
    std::vector<std::string> line{learner};
    const auto* base = table.find(learner, "original");
    line.push_back(base ? fixed(base->mean_rmse, 4) : "-");
    for (const auto& t : transformed) {
      const auto* row = table.find(learner, t);
      line.push_back(row ? fixed(row->mean_rmse, 4) : "-");
      line.push_back(row && row->improvement ? fixed(*row->improvement, 2) : "-");
    }
    cells.push_back(std::move(line));
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (std::size_t l = 0; l < cells.size(); ++l) {
    for (std::size_t c = 0; c < cells[l].size(); ++c) {
      if (c > 0) out << "  ";
      const auto& cell = cells[l][c];
      if (c == 0) out << cell << std::string(width[c] - cell.size(), ' ');
      else out << std::string(width[c] - cell.size(), ' ') << cell;
    }
    out << '\n';
    if (l == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

} // namespace tml
