#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "tml/dataset.hpp"
#include "tml/learners.hpp"

namespace tml {

double rmse(const Vector& pred, const Vector& truth);

/// (original - transformed) / original * 100. Positive means the transformed
/// representation has lower error.
double improvement_pct(double rmse_original, double rmse_tl);

/// Which representation a score belongs to. Intrinsic has no transformer.
struct Representation {
  std::optional<LearnerSpec> transformer;
  int order = 0;

  static Representation intrinsic() { return {}; }
  static Representation transformed(LearnerSpec transformer, int order = 1) { return {std::move(transformer), order}; }

  bool is_intrinsic() const noexcept { return !transformer.has_value(); }
  /// "original", "TL-RF", "TL2-Ridge", ...
  std::string label() const;
};

struct CvResult {
  std::string task_id;
  std::vector<double> per_fold_rmse;
  double mean_rmse = 0.0;
  Representation representation;
  LearnerSpec final_learner;
  std::uint64_t plan_hash = 0;
};

/// Fits on the complement of each round and scores RMSE on the round's rows.
CvResult cross_validate(const Matrix& X, const Vector& y, const LearnerSpec& spec, const SplitPlan& plan,
                        std::string task_id = {}, Representation representation = {});

/// As above with one feature matrix per round (fold-specific extrinsic views).
CvResult cross_validate(const std::vector<Matrix>& per_round_X, const Vector& y, const LearnerSpec& spec,
                        const SplitPlan& plan, std::string task_id = {}, Representation representation = {});

struct WinCount {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
  bool operator==(const WinCount&) const = default;
};

inline constexpr double kTieTolerance = 1e-12;

/// Challenger wins a task when its RMSE is strictly lower than the baseline's
/// beyond kTieTolerance. Scores are (task_id, rmse) pairs.
WinCount win_count(const std::vector<std::pair<std::string, double>>& baseline,
                   const std::vector<std::pair<std::string, double>>& challenger);

struct ComparisonRow {
  std::string final_learner;  // short label
  std::string representation; // Representation::label()
  std::size_t task_count = 0;
  double mean_rmse = 0.0;
  std::optional<double> improvement;  // absent for the intrinsic row
  std::optional<WinCount> versus_intrinsic;
  std::vector<std::string> missing_tasks; // tasks the intrinsic row has but this one lacks
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows; // sorted by (final learner, representation)

  const ComparisonRow* find(const std::string& final_learner, const std::string& representation) const;
};

/// Order-independent aggregation: mean over tasks of each task's mean RMSE,
/// improvement from the unrounded row means, wins against the intrinsic row
/// of the same final learner.
ComparisonTable compare_representations(const std::vector<CvResult>& results);

/// Delimited form: one line per row.
std::string format_table_tsv(const ComparisonTable& table);
/// Aligned form: one line per final learner with Original rep., TL-<x>, (%) columns.
std::string format_table_text(const ComparisonTable& table);

} // namespace tml
