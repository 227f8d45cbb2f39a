#include "tml/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tml/dataset.hpp"
#include "tml/error.hpp"
#include "tml/parallel.hpp"
#include "tml/rng.hpp"

namespace tml {

// ---------------------------------------------------------------------------
// LearnerSpec

std::string to_string(LearnerKind kind) {
  switch (kind) {
  case LearnerKind::Ridge: return "Ridge";
  case LearnerKind::RidgeInternalCV: return "RidgeInternalCV";
  case LearnerKind::RandomForest: return "RandomForest";
  case LearnerKind::SvrRbf: return "SvrRbf";
  }
  return "?";
}

LearnerKind parse_learner_kind(const std::string& text) {
  if (text == "Ridge" || text == "ridge") return LearnerKind::Ridge;
  if (text == "RidgeInternalCV" || text == "ridge_cv" || text == "RidgeCV") return LearnerKind::RidgeInternalCV;
  if (text == "RandomForest" || text == "rf" || text == "RF") return LearnerKind::RandomForest;
  if (text == "SvrRbf" || text == "svr" || text == "SVM") return LearnerKind::SvrRbf;
  throw ValidationError("unknown learner kind '" + text + "'");
}

std::string short_label(LearnerKind kind) {
  switch (kind) {
  case LearnerKind::Ridge: return "Ridge";
  case LearnerKind::RidgeInternalCV: return "RidgeCV";
  case LearnerKind::RandomForest: return "RF";
  case LearnerKind::SvrRbf: return "SVM";
  }
  return "?";
}

namespace {

const std::map<std::string, double>& defaults_for(LearnerKind kind) {
  static const std::map<std::string, double> ridge{{"lambda", 10.0}, {"standardize", 1.0}, {"intercept", 1.0}};
  static const std::map<std::string, double> ridge_cv{{"folds", 10.0}, {"standardize", 1.0}, {"intercept", 1.0}};
  static const std::map<std::string, double> forest{
      {"trees", 500.0}, {"mtry", 0.0}, {"min_node_size", 5.0}, {"bootstrap", 1.0}};
  static const std::map<std::string, double> svr{{"C", 1.0},        {"epsilon", 0.1},    {"sigma", 0.2},
                                                 {"tol", 1e-3},     {"max_iter", 1e7},   {"standardize", 1.0}};
  switch (kind) {
  case LearnerKind::Ridge: return ridge;
  case LearnerKind::RidgeInternalCV: return ridge_cv;
  case LearnerKind::RandomForest: return forest;
  case LearnerKind::SvrRbf: return svr;
  }
  return ridge;
}

bool is_whole(double v) { return std::floor(v) == v; }

} // namespace

double LearnerSpec::param(const std::string& key) const {
  if (auto it = hyperparams.find(key); it != hyperparams.end()) return it->second;
  const auto& d = defaults_for(kind);
  if (auto it = d.find(key); it != d.end()) return it->second;
  throw ValidationError("learner " + to_string(kind) + " has no hyperparameter '" + key + "'");
}

void LearnerSpec::validate() const {
  const auto& d = defaults_for(kind);
  for (const auto& [key, value] : hyperparams) {
    if (!d.count(key)) throw ValidationError("learner " + to_string(kind) + ": unknown hyperparameter '" + key + "'");
    if (!std::isfinite(value)) throw ValidationError("learner " + to_string(kind) + ": '" + key + "' is not finite");
  }
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("learner " + to_string(kind) + ": " + what);
  };
  switch (kind) {
  case LearnerKind::Ridge: require(param("lambda") >= 0.0, "lambda must be >= 0"); break;
  case LearnerKind::RidgeInternalCV:
    require(!lambda_grid.empty(), "lambda_grid must not be empty");
    for (double l : lambda_grid) require(std::isfinite(l) && l >= 0.0, "lambda_grid values must be >= 0");
    require(param("folds") >= 2 && is_whole(param("folds")), "folds must be an integer >= 2");
    break;
  case LearnerKind::RandomForest:
    require(param("trees") >= 1 && is_whole(param("trees")), "trees must be an integer >= 1");
    require(param("mtry") >= 0 && is_whole(param("mtry")), "mtry must be an integer >= 0");
    require(param("min_node_size") >= 1 && is_whole(param("min_node_size")), "min_node_size must be an integer >= 1");
    break;
  case LearnerKind::SvrRbf:
    require(param("C") > 0.0, "C must be > 0");
    require(param("epsilon") >= 0.0, "epsilon must be >= 0");
    require(param("sigma") > 0.0, "sigma must be > 0");
    require(param("tol") > 0.0, "tol must be > 0");
    require(param("max_iter") >= 1, "max_iter must be >= 1");
    break;
  }
}

LearnerSpec LearnerSpec::ridge(double lambda) {
  return LearnerSpec{LearnerKind::Ridge, {{"lambda", lambda}}, {}, 0};
}

LearnerSpec LearnerSpec::ridge_cv(std::vector<double> grid, std::size_t folds, std::uint64_t seed) {
  return LearnerSpec{LearnerKind::RidgeInternalCV, {{"folds", static_cast<double>(folds)}}, std::move(grid), seed};
}

LearnerSpec LearnerSpec::forest(std::size_t trees, std::uint64_t seed) {
  return LearnerSpec{LearnerKind::RandomForest, {{"trees", static_cast<double>(trees)}}, {}, seed};
}

LearnerSpec LearnerSpec::svr(double C, double epsilon, double sigma) {
  return LearnerSpec{LearnerKind::SvrRbf, {{"C", C}, {"epsilon", epsilon}, {"sigma", sigma}}, {}, 0};
}

bool operator==(const LearnerSpec& a, const LearnerSpec& b) {
  return a.kind == b.kind && a.hyperparams == b.hyperparams && a.lambda_grid == b.lambda_grid && a.seed == b.seed;
}

// ---------------------------------------------------------------------------
// Provenance and standardization

std::string train_fingerprint(const std::string& task_id, std::span<const std::string> row_ids) {
  std::uint64_t h = fnv1a(task_id);
  h = fnv1a(std::string_view("\x1f", 1), h);
  for (const auto& id : row_ids) {
    h = fnv1a(id, h);
    h = fnv1a(std::string_view("\x1e", 1), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Standardization Standardization::identity(std::size_t p) {
  const auto n = static_cast<Eigen::Index>(p);
  return {Vector::Zero(n), Vector::Ones(n)};
}

Standardization Standardization::fit(const Matrix& X) {
  const Eigen::Index p = X.cols();
  const Eigen::Index n = X.rows();
  Standardization s{Vector::Zero(p), Vector::Ones(p)};
  for (Eigen::Index c = 0; c < p; ++c) {
    const auto col = X.col(c);
    if (n == 0) continue;
    if (col.maxCoeff() == col.minCoeff()) {
      s.mean(c) = col(0); // constant column maps exactly to zero
      continue;
    }
    double sum = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) sum += col(r);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) ss += (col(r) - mean) * (col(r) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    s.mean(c) = mean;
    s.scale(c) = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Matrix Standardization::apply(const Matrix& X) const {
  Matrix Z(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c) Z(r, c) = (X(r, c) - mean(c)) / scale(c);
  return Z;
}

// ---------------------------------------------------------------------------
// FittedModel

FittedModel::FittedModel(LearnerSpec spec, std::size_t feature_count, Standardization standardization, State state,
                         TrainProvenance provenance)
    : spec_(std::move(spec)), feature_count_(feature_count), standardization_(std::move(standardization)),
      state_(std::move(state)), provenance_(std::move(provenance)) {}

FittedModel FittedModel::with_provenance(TrainProvenance provenance) const {
  FittedModel copy = *this;
  copy.provenance_ = std::move(provenance);
  return copy;
}

double RegressionTree::predict(std::span<const double> x) const noexcept {
  std::int32_t i = 0;
  for (;;) {
    const TreeNode& node = nodes[static_cast<std::size_t>(i)];
    if (node.feature < 0) return node.value;
    i = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
  }
}

double rbf_kernel(std::span<const double> x, std::span<const double> z, double sigma) {
  if (x.size() != z.size())
    throw ValidationError("rbf_kernel: length mismatch (" + std::to_string(x.size()) + " vs " +
                          std::to_string(z.size()) + ")");
  if (!(sigma > 0.0)) throw ValidationError("rbf_kernel: sigma must be > 0");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - z[i];
    d2 += d * d;
  }
  return std::exp(-sigma * d2);
}

double FittedModel::predict_row(std::span<const double> x) const {
  const std::size_t p = feature_count_;
  if (const auto* forest = std::get_if<ForestState>(&state_)) {
    double sum = 0.0;
    for (const auto& tree : forest->trees) sum += tree.predict(x);
    const double mean = sum / static_cast<double>(forest->trees.size());
    // averaging leaf means cannot leave the training range except by rounding
    return std::clamp(mean, forest->y_min, forest->y_max);
  }

  std::vector<double> z(p);
  for (std::size_t c = 0; c < p; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    z[c] = (x[c] - standardization_.mean(ci)) / standardization_.scale(ci);
  }
  if (const auto* ridge = std::get_if<RidgeState>(&state_)) {
    double out = ridge->intercept;
    for (std::size_t c = 0; c < p; ++c) out += ridge->coef(static_cast<Eigen::Index>(c)) * z[c];
    return out;
  }
  const auto& svr = std::get<SvrState>(state_);
  double out = svr.bias;
  for (Eigen::Index i = 0; i < svr.train.rows(); ++i) {
    const double coef = svr.alpha(i) - svr.alpha_star(i);
    if (coef == 0.0) continue;
    out += coef * rbf_kernel(std::span<const double>(svr.train.row(i).data(), p), z, svr.sigma);
  }
  return out;
}

Vector predict(const FittedModel& model, const Matrix& X) {
  if (static_cast<std::size_t>(X.cols()) != model.feature_count())
    throw ValidationError("predict: model expects " + std::to_string(model.feature_count()) + " columns, got " +
                          std::to_string(X.cols()));
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c)
      if (!std::isfinite(X(r, c)))
        throw ValidationError("predict: non-finite input at row " + std::to_string(r + 1) + ", column " +
                              std::to_string(c + 1));
  Vector out(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  parallel_for(static_cast<std::size_t>(X.rows()), [&](std::size_t r) {
    const auto ri = static_cast<Eigen::Index>(r);
    out(ri) = model.predict_row(std::span<const double>(X.row(ri).data(), p));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Ridge

namespace {

void check_xy(const Matrix& X, const Vector& y, const char* who, std::size_t min_rows) {
  if (X.rows() != y.size())
    throw ValidationError(std::string(who) + ": dimension mismatch (" + std::to_string(X.rows()) + " rows, " +
                          std::to_string(y.size()) + " targets)");
  if (static_cast<std::size_t>(X.rows()) < min_rows)
    throw ValidationError(std::string(who) + ": need at least " + std::to_string(min_rows) + " rows, got " +
                          std::to_string(X.rows()));
  if (!X.allFinite() || !y.allFinite()) throw ValidationError(std::string(who) + ": non-finite training data");
}

} // namespace

FittedModel fit_ridge(const Matrix& X, const Vector& y, double lambda, bool standardize, bool intercept) {
  check_xy(X, y, "fit_ridge", 2);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("fit_ridge: lambda must be a finite value >= 0");
  const Eigen::Index p = X.cols();
  const auto n = static_cast<double>(X.rows());

  Standardization std_map = standardize ? Standardization::fit(X) : Standardization::identity(static_cast<std::size_t>(p));
  Eigen::MatrixXd Z = std_map.apply(X);
  Eigen::VectorXd target = y;
  Eigen::RowVectorXd z_mean = Eigen::RowVectorXd::Zero(p);
  double y_mean = 0.0;
  if (intercept) {
    z_mean = Z.colwise().sum() / n;
    y_mean = y.sum() / n;
    Z.rowwise() -= z_mean;
    target.array() -= y_mean;
  }

  Vector coef = Vector::Zero(p);
  if (p > 0) {
    if (lambda == 0.0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
      if (qr.rank() < p)
        throw NumericalError("fit_ridge: singular system at lambda = 0 (design rank " + std::to_string(qr.rank()) +
                             " < " + std::to_string(p) + ")");
      coef = qr.solve(target);
    } else {
      Eigen::MatrixXd A = Z.transpose() * Z;
      A.diagonal().array() += lambda;
      Eigen::LLT<Eigen::MatrixXd> llt(A);
      if (llt.info() != Eigen::Success) throw NumericalError("fit_ridge: normal equations are not positive definite");
      coef = llt.solve(Z.transpose() * target);
    }
  }
  if (!coef.allFinite()) throw NumericalError("fit_ridge: non-finite coefficients");

  RidgeState state;
  state.coef = coef;
  state.lambda = lambda;
  state.intercept = intercept ? y_mean - z_mean.dot(coef) : 0.0;
  LearnerSpec spec = LearnerSpec::ridge(lambda);
  spec.hyperparams["standardize"] = standardize ? 1.0 : 0.0;
  spec.hyperparams["intercept"] = intercept ? 1.0 : 0.0;
  return FittedModel(std::move(spec), static_cast<std::size_t>(p), std::move(std_map), std::move(state));
}

FittedModel fit_ridge_cv(const Matrix& X, const Vector& y, const std::vector<double>& lambda_grid, std::size_t k,
                         std::uint64_t seed, bool standardize, bool intercept) {
  check_xy(X, y, "fit_ridge_cv", 2);
  if (lambda_grid.empty()) throw ValidationError("fit_ridge_cv: lambda grid is empty");
  const SplitPlan plan = make_fold_plan(static_cast<std::size_t>(X.rows()), k, seed);
  for (std::size_t f = 0; f < k; ++f)
    if (plan.train_rows(f).size() < 2)
      throw ValidationError("fit_ridge_cv: fold " + std::to_string(f) + " leaves fewer than 2 training rows");

  std::vector<double> scores(lambda_grid.size());
  for (std::size_t g = 0; g < lambda_grid.size(); ++g) {
    double total = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
      const auto train = plan.train_rows(f);
      const auto test = plan.test_rows(f);
      const FittedModel m = fit_ridge(take_rows(X, train), take_rows(y, train), lambda_grid[g], standardize, intercept);
      const Vector pred = predict(m, take_rows(X, test));
      const Vector truth = take_rows(y, test);
      total += std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size()));
    }
    scores[g] = total / static_cast<double>(k);
  }

  std::size_t best = 0;
  for (std::size_t g = 1; g < lambda_grid.size(); ++g) {
    const double diff = scores[g] - scores[best];
    if (diff < -1e-12) best = g;
    else if (std::abs(diff) <= 1e-12 && lambda_grid[g] > lambda_grid[best]) best = g; // tie: larger lambda
  }

  const FittedModel refit = fit_ridge(X, y, lambda_grid[best], standardize, intercept);
  RidgeState state = refit.ridge();
  state.cv_rmse = scores;
  LearnerSpec spec = LearnerSpec::ridge_cv(lambda_grid, k, seed);
  spec.hyperparams["standardize"] = standardize ? 1.0 : 0.0;
  spec.hyperparams["intercept"] = intercept ? 1.0 : 0.0;
  return FittedModel(std::move(spec), refit.feature_count(), refit.standardization(), std::move(state));
}

// ---------------------------------------------------------------------------
// Random forest

namespace {

class TreeBuilder {
public:
  TreeBuilder(const Matrix& X, const Vector& y, std::size_t mtry, std::size_t min_leaf)
      : X_(X), y_(y), mtry_(mtry), min_leaf_(min_leaf), p_(static_cast<std::size_t>(X.cols())) {}

  RegressionTree build(std::vector<std::size_t> samples, Rng& rng) {
    RegressionTree tree;
    samples_ = std::move(samples);
    features_.resize(p_);
    struct Pending {
      std::size_t begin, end;
      std::int32_t node;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, samples_.size(), 0});
    while (!stack.empty()) {
      const Pending job = stack.back();
      stack.pop_back();
      const std::size_t count = job.end - job.begin;

      double sum = 0.0;
      for (std::size_t s = job.begin; s < job.end; ++s) sum += y_(static_cast<Eigen::Index>(samples_[s]));
      const double mean = sum / static_cast<double>(count);
      tree.nodes[static_cast<std::size_t>(job.node)].value = mean;

      Split split;
      if (count >= 2 * min_leaf_ && !is_pure(job.begin, job.end)) split = best_split(job.begin, job.end, sum, rng);
      if (split.feature < 0) continue;

      auto mid = std::partition(samples_.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                samples_.begin() + static_cast<std::ptrdiff_t>(job.end), [&](std::size_t s) {
                                  return X_(static_cast<Eigen::Index>(s), split.feature) <= split.threshold;
                                });
      const auto mid_pos = static_cast<std::size_t>(mid - samples_.begin());

      const auto left = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      const auto right = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[static_cast<std::size_t>(job.node)];
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.left = left;
      node.right = right;
      stack.push_back({mid_pos, job.end, right});
      stack.push_back({job.begin, mid_pos, left});
    }
    return tree;
  }

private:
  struct Split {
    std::int32_t feature = -1;
    double threshold = 0.0;
  };

  bool is_pure(std::size_t begin, std::size_t end) const {
    const double first = y_(static_cast<Eigen::Index>(samples_[begin]));
    for (std::size_t s = begin + 1; s < end; ++s)
      if (y_(static_cast<Eigen::Index>(samples_[s])) != first) return false;
    return true;
  }

  Split best_split(std::size_t begin, std::size_t end, double total, Rng& rng) {
    const std::size_t count = end - begin;
    std::iota(features_.begin(), features_.end(), 0);
    const std::size_t tries = std::min(mtry_, p_);
    // partial Fisher-Yates: first `tries` entries are the candidates
    for (std::size_t i = 0; i < tries; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(p_ - i));
      std::swap(features_[i], features_[j]);
    }

    Split best;
    // maximise sum_L^2/n_L + sum_R^2/n_R; the parent's value is the baseline
    double best_score = total * total / static_cast<double>(count);
    pairs_.resize(count);
    for (std::size_t t = 0; t < tries; ++t) {
      const auto f = static_cast<Eigen::Index>(features_[t]);
      for (std::size_t s = 0; s < count; ++s) {
        const auto row = static_cast<Eigen::Index>(samples_[begin + s]);
        pairs_[s] = {X_(row, f), y_(row)};
      }
      std::sort(pairs_.begin(), pairs_.end());
      if (pairs_.front().first == pairs_.back().first) continue;
      double left_sum = 0.0;
      for (std::size_t s = 0; s + 1 < count; ++s) {
        left_sum += pairs_[s].second;
        const std::size_t n_left = s + 1;
        const std::size_t n_right = count - n_left;
        if (n_left < min_leaf_) continue;
        if (n_right < min_leaf_) break;
        if (pairs_[s].first == pairs_[s + 1].first) continue;
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(n_left) +
                             right_sum * right_sum / static_cast<double>(n_right);
        if (score > best_score) {
          best_score = score;
          best.feature = static_cast<std::int32_t>(f);
          const double lo = pairs_[s].first;
          const double hi = pairs_[s + 1].first;
          const double midpoint = lo + (hi - lo) / 2.0;
          best.threshold = midpoint < hi ? midpoint : lo;
        }
      }
    }
    return best;
  }

  const Matrix& X_;
  const Vector& y_;
  std::size_t mtry_;
  std::size_t min_leaf_;
  std::size_t p_;
  std::vector<std::size_t> samples_;
  std::vector<std::size_t> features_;
  std::vector<std::pair<double, double>> pairs_;
};

} // namespace

FittedModel fit_forest(const Matrix& X, const Vector& y, const ForestParams& params, std::uint64_t seed) {
  if (X.rows() == 0) throw ValidationError("fit_forest: zero rows");
  check_xy(X, y, "fit_forest", 1);
  if (params.trees < 1) throw ValidationError("fit_forest: need at least one tree");
  if (params.min_node_size < 1) throw ValidationError("fit_forest: min_node_size must be >= 1");
  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  if (n < params.min_node_size)
    throw ValidationError("fit_forest: " + std::to_string(n) + " rows is below min_node_size " +
                          std::to_string(params.min_node_size));
  const std::size_t mtry = params.mtry > 0 ? std::min(params.mtry, p) : std::max<std::size_t>(1, (p + 2) / 3);

  ForestState state;
  state.y_min = y.minCoeff();
  state.y_max = y.maxCoeff();
  state.trees.resize(params.trees);
  parallel_for(params.trees, [&](std::size_t t) {
    Rng rng(derive_seed(seed, t));
    std::vector<std::size_t> samples(n);
    if (params.bootstrap) {
      for (auto& s : samples) s = static_cast<std::size_t>(rng.below(n));
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    if (p == 0) {
      RegressionTree leaf;
      double sum = 0.0;
      for (std::size_t s : samples) sum += y(static_cast<Eigen::Index>(s));
      leaf.nodes.push_back(TreeNode{-1, 0.0, -1, -1, sum / static_cast<double>(n)});
      state.trees[t] = std::move(leaf);
      return;
    }
    TreeBuilder builder(X, y, mtry, params.min_node_size);
    state.trees[t] = builder.build(std::move(samples), rng);
  });

  LearnerSpec spec = LearnerSpec::forest(params.trees, seed);
  spec.hyperparams["mtry"] = static_cast<double>(params.mtry);
  spec.hyperparams["min_node_size"] = static_cast<double>(params.min_node_size);
  spec.hyperparams["bootstrap"] = params.bootstrap ? 1.0 : 0.0;
  return FittedModel(std::move(spec), p, Standardization::identity(p), std::move(state));
}

// ---------------------------------------------------------------------------
// Support vector regression (pairwise dual coordinate solver)

FittedModel fit_svr(const Matrix& X, const Vector& y, const SvrParams& params) {
  check_xy(X, y, "fit_svr", 2);
  if (!(params.C > 0.0)) throw ValidationError("fit_svr: C must be > 0");
  if (!(params.epsilon >= 0.0)) throw ValidationError("fit_svr: epsilon must be >= 0");
  if (!(params.sigma > 0.0)) throw ValidationError("fit_svr: sigma must be > 0");
  if (!(params.tol > 0.0)) throw ValidationError("fit_svr: tol must be > 0");

  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  Standardization std_map = params.standardize ? Standardization::fit(X) : Standardization::identity(p);
  Matrix Z = std_map.apply(X);

  Eigen::MatrixXd K(n, n);
  parallel_for(n, [&](std::size_t i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      K(ii, jj) = rbf_kernel(std::span<const double>(Z.row(ii).data(), p), std::span<const double>(Z.row(jj).data(), p),
                             params.sigma);
    }
  });

  // 2n variables: t < n are alpha (sign +1), t >= n are alpha* (sign -1).
  const std::size_t l = 2 * n;
  const double C = params.C;
  std::vector<double> a(l, 0.0), G(l);
  std::vector<int> s(l);
  for (std::size_t t = 0; t < n; ++t) {
    s[t] = 1;
    s[t + n] = -1;
    G[t] = params.epsilon - y(static_cast<Eigen::Index>(t));
    G[t + n] = params.epsilon + y(static_cast<Eigen::Index>(t));
  }
  auto Q = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(s[i] * s[j]) * K(static_cast<Eigen::Index>(i % n), static_cast<Eigen::Index>(j % n));
  };
  auto at_upper = [&](std::size_t t) { return a[t] >= C; };
  auto at_lower = [&](std::size_t t) { return a[t] <= 0.0; };
  constexpr double tau = 1e-12;

  std::size_t iter = 0;
  double violation = std::numeric_limits<double>::infinity();
  for (;;) {
    // maximal violating i, then second-order choice of j
    double g_max = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t i_sel = -1;
    for (std::size_t t = 0; t < l; ++t) {
      if (s[t] == 1) {
        if (!at_upper(t) && -G[t] >= g_max) {
          g_max = -G[t];
          i_sel = static_cast<std::ptrdiff_t>(t);
        }
      } else if (!at_lower(t) && G[t] >= g_max) {
        g_max = G[t];
        i_sel = static_cast<std::ptrdiff_t>(t);
      }
    }
    double g_max2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t j_sel = -1;
    double obj_min = std::numeric_limits<double>::infinity();
    if (i_sel >= 0) {
      const auto i = static_cast<std::size_t>(i_sel);
      for (std::size_t t = 0; t < l; ++t) {
        if (s[t] == 1) {
          if (at_lower(t)) continue;
          const double grad_diff = g_max + G[t];
          g_max2 = std::max(g_max2, G[t]);
          if (grad_diff > 0) {
            double quad = 2.0 - 2.0 * s[i] * Q(i, t);
            if (quad <= 0) quad = tau;
            const double obj = -(grad_diff * grad_diff) / quad;
            if (obj <= obj_min) {
              obj_min = obj;
              j_sel = static_cast<std::ptrdiff_t>(t);
            }
          }
        } else {
          if (at_upper(t)) continue;
          const double grad_diff = g_max - G[t];
          g_max2 = std::max(g_max2, -G[t]);
          if (grad_diff > 0) {
            double quad = 2.0 + 2.0 * s[i] * Q(i, t);
            if (quad <= 0) quad = tau;
            const double obj = -(grad_diff * grad_diff) / quad;
            if (obj <= obj_min) {
              obj_min = obj;
              j_sel = static_cast<std::ptrdiff_t>(t);
            }
          }
        }
      }
    }
    violation = g_max + g_max2;
    if (i_sel < 0 || j_sel < 0 || violation < params.tol) break;
    if (iter >= params.max_iter)
      throw NumericalError("fit_svr: no convergence after " + std::to_string(iter) +
                           " iterations (KKT violation " + std::to_string(violation) + ", tol " +
                           std::to_string(params.tol) + ")");
    ++iter;

    const auto i = static_cast<std::size_t>(i_sel);
    const auto j = static_cast<std::size_t>(j_sel);
    const double old_i = a[i], old_j = a[j];
    const double q_ij = Q(i, j);
    if (s[i] != s[j]) {
      double quad = 2.0 + 2.0 * q_ij;
      if (quad <= 0) quad = tau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0) {
        if (a[j] < 0) { a[j] = 0; a[i] = diff; }
      } else if (a[i] < 0) { a[i] = 0; a[j] = -diff; }
      if (diff > 0) {
        if (a[i] > C) { a[i] = C; a[j] = C - diff; }
      } else if (a[j] > C) { a[j] = C; a[i] = C + diff; }
    } else {
      double quad = 2.0 - 2.0 * q_ij;
      if (quad <= 0) quad = tau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > C) {
        if (a[i] > C) { a[i] = C; a[j] = sum - C; }
      } else if (a[j] < 0) { a[j] = 0; a[i] = sum; }
      if (sum > C) {
        if (a[j] > C) { a[j] = C; a[i] = sum - C; }
      } else if (a[i] < 0) { a[i] = 0; a[j] = sum; }
    }
    const double d_i = a[i] - old_i;
    const double d_j = a[j] - old_j;
    for (std::size_t t = 0; t < l; ++t) G[t] += Q(i, t) * d_i + Q(j, t) * d_j;
  }

  // bias from free variables, else the midpoint of the feasible interval
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < l; ++t) {
    const double yg = s[t] * G[t];
    if (at_upper(t)) {
      if (s[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (at_lower(t)) {
      if (s[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++free_count;
      free_sum += yg;
    }
  }
  const double rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : (ub + lb) / 2.0;

  SvrState state;
  state.train = std::move(Z);
  state.alpha.resize(static_cast<Eigen::Index>(n));
  state.alpha_star.resize(static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < n; ++t) {
    state.alpha(static_cast<Eigen::Index>(t)) = a[t];
    state.alpha_star(static_cast<Eigen::Index>(t)) = a[t + n];
  }
  state.bias = -rho;
  state.sigma = params.sigma;
  state.iterations = iter;
  state.kkt_violation = violation;

  LearnerSpec spec = LearnerSpec::svr(params.C, params.epsilon, params.sigma);
  spec.hyperparams["tol"] = params.tol;
  spec.hyperparams["max_iter"] = static_cast<double>(params.max_iter);
  spec.hyperparams["standardize"] = params.standardize ? 1.0 : 0.0;
  return FittedModel(std::move(spec), p, std::move(std_map), std::move(state));
}

// ---------------------------------------------------------------------------

FittedModel fit(const LearnerSpec& spec, const Matrix& X, const Vector& y) {
  spec.validate();
  auto rebrand = [&](const FittedModel& m) {
    return FittedModel(spec, m.feature_count(), m.standardization(), m.state(), m.provenance());
  };
  switch (spec.kind) {
  case LearnerKind::Ridge:
    return rebrand(fit_ridge(X, y, spec.param("lambda"), spec.param("standardize") != 0.0,
                             spec.param("intercept") != 0.0));
  case LearnerKind::RidgeInternalCV:
    return rebrand(fit_ridge_cv(X, y, spec.lambda_grid, static_cast<std::size_t>(spec.param("folds")), spec.seed,
                                spec.param("standardize") != 0.0, spec.param("intercept") != 0.0));
  case LearnerKind::RandomForest: {
    ForestParams fp;
    fp.trees = static_cast<std::size_t>(spec.param("trees"));
    fp.mtry = static_cast<std::size_t>(spec.param("mtry"));
    fp.min_node_size = static_cast<std::size_t>(spec.param("min_node_size"));
    fp.bootstrap = spec.param("bootstrap") != 0.0;
    return rebrand(fit_forest(X, y, fp, spec.seed));
  }
  case LearnerKind::SvrRbf: {
    SvrParams sp;
    sp.C = spec.param("C");
    sp.epsilon = spec.param("epsilon");
    sp.sigma = spec.param("sigma");
    sp.tol = spec.param("tol");
    sp.max_iter = static_cast<std::size_t>(spec.param("max_iter"));
    sp.standardize = spec.param("standardize") != 0.0;
    return rebrand(fit_svr(X, y, sp));
  }
  }
  throw ValidationError("fit: unknown learner kind");
}

} // namespace tml
