#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tml/matrix.hpp"

namespace tml {

enum class LearnerKind { Ridge, RidgeInternalCV, RandomForest, SvrRbf };

std::string to_string(LearnerKind kind);
LearnerKind parse_learner_kind(const std::string& text);
/// Short label used in tables ("RF", "Ridge", "RidgeCV", "SVM").
std::string short_label(LearnerKind kind);

/// Learner configuration. Recognised hyperparameters per kind (defaults):
///   Ridge            lambda (10), standardize (1), intercept (1)
///   RidgeInternalCV  folds (10), standardize (1), intercept (1); grid in lambda_grid
///   RandomForest     trees (500), mtry (0 = ceil(p/3)), min_node_size (5), bootstrap (1)
///   SvrRbf           C (1), epsilon (0.1), sigma (0.2), tol (1e-3), max_iter (1e7), standardize (1)
struct LearnerSpec {
  LearnerKind kind = LearnerKind::Ridge;
  std::map<std::string, double> hyperparams;
  std::vector<double> lambda_grid;
  std::uint64_t seed = 0;

  /// Hyperparameter value, or the kind's default.
  double param(const std::string& key) const;
  /// Throws ValidationError on unknown keys or out-of-range values.
  void validate() const;
  std::string label() const { return short_label(kind); }

  static LearnerSpec ridge(double lambda = 10.0);
  static LearnerSpec ridge_cv(std::vector<double> grid, std::size_t folds = 10, std::uint64_t seed = 0);
  static LearnerSpec forest(std::size_t trees = 500, std::uint64_t seed = 0);
  static LearnerSpec svr(double C = 1.0, double epsilon = 0.1, double sigma = 0.2);
};

bool operator==(const LearnerSpec& a, const LearnerSpec& b);

/// Which rows of which task a model was fitted on.
struct TrainProvenance {
  std::string task_id;
  std::vector<std::string> row_ids;
  std::string fingerprint;
};

/// Hex FNV-1a digest of (task_id, row ids in order).
std::string train_fingerprint(const std::string& task_id, std::span<const std::string> row_ids);

/// Per-feature affine map applied before fitting: z = (x - mean) / scale.
struct Standardization {
  Vector mean;
  Vector scale;

  static Standardization identity(std::size_t p);
  /// Population statistics; constant columns get scale 1 so they map to 0.
  static Standardization fit(const Matrix& X);
  Matrix apply(const Matrix& X) const;
};

struct RidgeState {
  double intercept = 0.0;
  Vector coef; // on the standardized scale
  double lambda = 0.0;
  /// Mean internal-CV RMSE per grid value (RidgeInternalCV only).
  std::vector<double> cv_rmse;
};

struct TreeNode {
  std::int32_t feature = -1; // -1 marks a leaf
  double threshold = 0.0;    // go left when x[feature] <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  double predict(std::span<const double> x) const noexcept;
};

struct ForestState {
  std::vector<RegressionTree> trees;
  double y_min = 0.0;
  double y_max = 0.0;
};

struct SvrState {
  Matrix train;       // standardized training rows
  Vector alpha;       // multipliers of the upper tube constraints
  Vector alpha_star;  // multipliers of the lower tube constraints
  double bias = 0.0;  // f(x) = sum (alpha - alpha_star) k(x_i, x) + bias
  double sigma = 0.2;
  std::size_t iterations = 0;
  double kkt_violation = 0.0;
};

/// A fitted regression model. Immutable once built; predict is const and
/// safe to call from many threads.
class FittedModel {
public:
  using State = std::variant<RidgeState, ForestState, SvrState>;

  FittedModel(LearnerSpec spec, std::size_t feature_count, Standardization standardization,
              State state, TrainProvenance provenance = {});

  const LearnerSpec& spec() const noexcept { return spec_; }
  LearnerKind kind() const noexcept { return spec_.kind; }
  std::size_t feature_count() const noexcept { return feature_count_; }
  const Standardization& standardization() const noexcept { return standardization_; }
  const State& state() const noexcept { return state_; }
  const TrainProvenance& provenance() const noexcept { return provenance_; }
  const std::string& train_fingerprint() const noexcept { return provenance_.fingerprint; }

  const RidgeState& ridge() const { return std::get<RidgeState>(state_); }
  const ForestState& forest() const { return std::get<ForestState>(state_); }
  const SvrState& svr() const { return std::get<SvrState>(state_); }

  /// Prediction for one row; no validation.
  double predict_row(std::span<const double> x) const;

  /// Copy with provenance attached.
  FittedModel with_provenance(TrainProvenance provenance) const;

private:
  LearnerSpec spec_;
  std::size_t feature_count_;
  Standardization standardization_;
  State state_;
  TrainProvenance provenance_;
};

/// k(x, z) = exp(-sigma * ||x - z||^2)
double rbf_kernel(std::span<const double> x, std::span<const double> z, double sigma);

FittedModel fit_ridge(const Matrix& X, const Vector& y, double lambda, bool standardize = true,
                      bool intercept = true);
FittedModel fit_ridge_cv(const Matrix& X, const Vector& y, const std::vector<double>& lambda_grid,
                         std::size_t k, std::uint64_t seed, bool standardize = true, bool intercept = true);

struct ForestParams {
  std::size_t trees = 500;
  std::size_t mtry = 0; // 0 = ceil(p / 3)
  std::size_t min_node_size = 5;
  bool bootstrap = true;
};

FittedModel fit_forest(const Matrix& X, const Vector& y, const ForestParams& params, std::uint64_t seed);

struct SvrParams {
  double C = 1.0;
  double epsilon = 0.1;
  double sigma = 0.2;
  double tol = 1e-3;
  std::size_t max_iter = 10'000'000;
  bool standardize = true;
};

FittedModel fit_svr(const Matrix& X, const Vector& y, const SvrParams& params);

/// Dispatches on spec.kind.
FittedModel fit(const LearnerSpec& spec, const Matrix& X, const Vector& y);

/// One prediction per row. Throws on column mismatch or non-finite input.
Vector predict(const FittedModel& model, const Matrix& X);

} // namespace tml
