#include "tml/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tml/error.hpp"
#include "tml/rng.hpp"

namespace tml {
namespace fs = std::filesystem;

void SynthSpec::validate() const {
  if (n_tasks < 2) throw ValidationError("synth: need at least 2 tasks");
  if (n_examples_per_task < 2) throw ValidationError("synth: need at least 2 examples per task");
  if (n_features < 1) throw ValidationError("synth: need at least 1 feature");
  if (nonlinearity == Nonlinearity::Nonlinear && n_features < 2)
    throw ValidationError("synth: the nonlinear family needs at least 2 features");
  if (!(relatedness >= 0.0 && relatedness <= 1.0))
    throw ValidationError("synth: relatedness must lie in [0, 1], got " + std::to_string(relatedness));
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw ValidationError("synth: noise_sd must be >= 0");
}

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kSharedFeatures = 1;
constexpr std::uint64_t kSharedFunction = 2;
constexpr std::uint64_t kTaskFeatures = 1'000;
constexpr std::uint64_t kTaskFunction = 2'000'000;
constexpr std::uint64_t kTaskNoise = 3'000'000;

double tail_prob(double t) { return std::erfc(t / std::sqrt(2.0)); } // P(|Z| > t)

/// One random member of the generator family.
class TargetFunction {
public:
  TargetFunction(Nonlinearity kind, std::size_t p, std::uint64_t seed) : kind_(kind) {
    Rng rng(seed);
    if (kind == Nonlinearity::Linear) {
      weights_.resize(p);
      double norm2 = 0.0;
      for (auto& w : weights_) {
        w = rng.normal();
        norm2 += w * w;
      }
      scale_ = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 1.0;
      return;
    }
    for (int m = 0; m < 4; ++m) {
      const auto i = static_cast<std::size_t>(rng.below(p));
      auto j = static_cast<std::size_t>(rng.below(p - 1));
      if (j >= i) ++j;
      products_.push_back({std::min(i, j), std::max(i, j), rng.normal()});
    }
    for (int m = 0; m < 4; ++m) {
      const auto f = static_cast<std::size_t>(rng.below(p));
      const double t = 0.3 + 1.2 * rng.uniform();
      thresholds_.push_back({f, t, rng.normal(), tail_prob(t)});
    }
    // exact variance under x ~ N(0, I): products of distinct pairs and threshold
    // terms are uncorrelated except for repeats of the same pair / feature
    double var = 0.0;
    for (const auto& a : products_)
      for (const auto& b : products_)
        if (a.i == b.i && a.j == b.j) var += a.coef * b.coef;
    for (const auto& a : thresholds_)
      for (const auto& b : thresholds_)
        if (a.feature == b.feature) var += a.coef * b.coef * (tail_prob(std::max(a.t, b.t)) - a.q * b.q);
    scale_ = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  }

  double operator()(const Matrix& X, Eigen::Index r) const {
    double g = 0.0;
    if (kind_ == Nonlinearity::Linear) {
      for (std::size_t c = 0; c < weights_.size(); ++c) g += weights_[c] * X(r, static_cast<Eigen::Index>(c));
      return g * scale_;
    }
    for (const auto& pr : products_)
      g += pr.coef * X(r, static_cast<Eigen::Index>(pr.i)) * X(r, static_cast<Eigen::Index>(pr.j));
    for (const auto& th : thresholds_)
      g += th.coef * ((std::abs(X(r, static_cast<Eigen::Index>(th.feature))) > th.t ? 1.0 : 0.0) - th.q);
    return g * scale_;
  }

private:
  struct Product {
    std::size_t i, j;
    double coef;
  };
  struct Threshold {
    std::size_t feature;
    double t, coef, q;
  };

  Nonlinearity kind_;
  std::vector<double> weights_;
  std::vector<Product> products_;
  std::vector<Threshold> thresholds_;
  double scale_ = 1.0;
};

Matrix draw_features(std::size_t n, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  Matrix X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c) X(r, c) = rng.normal();
  return X;
}

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

} // namespace

TaskCollection generate_collection(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_examples_per_task;
  const std::size_t p = spec.n_features;
  const bool shared = spec.mode == CollectionMode::SharedExamples;

  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < p; ++c) feature_names.push_back(numbered("f", c, 2));

  const TargetFunction g_shared(spec.nonlinearity, p, derive_seed(spec.seed, kSharedFunction));
  const Matrix shared_X = shared ? draw_features(n, p, derive_seed(spec.seed, kSharedFeatures)) : Matrix();

  std::vector<Task> tasks;
  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    const std::string task_id = numbered("task_", t, 2);
    Matrix X = shared ? shared_X : draw_features(n, p, derive_seed(spec.seed, kTaskFeatures + t));
    const TargetFunction g_task(spec.nonlinearity, p, derive_seed(spec.seed, kTaskFunction + t));
    Rng noise(derive_seed(spec.seed, kTaskNoise + t));
    Vector y(static_cast<Eigen::Index>(n));
    std::vector<std::string> ids;
    for (std::size_t r = 0; r < n; ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      y(ri) = spec.relatedness * g_shared(X, ri) + (1.0 - spec.relatedness) * g_task(X, ri) + spec.noise_sd * noise.normal();
      ids.push_back(shared ? numbered("e", r, 4) : numbered((task_id + "_e").c_str(), r, 4));
    }
    tasks.push_back(make_task(task_id, std::move(X), std::move(y), feature_names, std::move(ids)));
  }
  return assemble_collection(std::move(tasks), spec.mode, "synth");
}

fs::path write_collection(const TaskCollection& collection, const fs::path& dir, const std::string& collection_id) {
  fs::create_directories(dir);
  CollectionManifest manifest;
  manifest.collection_id = collection_id;
  manifest.mode = collection.mode;
  manifest.target_column = "y";
  for (const Task& task : collection.tasks) {
    const fs::path file = dir / (task.task_id + ".csv");
    write_task(task, file, "y");
    manifest.tasks.emplace_back(task.task_id, file);
  }
  const fs::path manifest_path = dir / "collection.json";
  write_manifest(manifest, manifest_path);
  return manifest_path;
}

Matrix oracle_extrinsic(const TaskCollection& collection, const ModelBank& bank, const std::string& task_id) {
  const Task& task = collection.task(task_id);
  std::size_t target = bank.size();
  for (std::size_t m = 0; m < bank.size(); ++m)
    if (bank.task_ids[m] == task_id) target = m;
  if (target == bank.size()) throw ValidationError("oracle_extrinsic: task '" + task_id + "' not in bank");

  Matrix out(static_cast<Eigen::Index>(task.rows()), static_cast<Eigen::Index>(bank.size() - 1));
  for (std::size_t i = 0; i < task.rows(); ++i) {
    const Matrix row = task.features.row(static_cast<Eigen::Index>(i));
    std::size_t col = 0;
    for (std::size_t m = 0; m < bank.size(); ++m) {
      if (m == target) continue;
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col)) = predict(bank.models[m], row)(0);
      ++col;
    }
  }
  return out;
}

} // namespace tml
