// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "oracles.hpp"
#include "support.hpp"
#include "tml/error.hpp"
#include "tml/evaluation.hpp"
#include "tml/explain.hpp"
#include "tml/parallel.hpp"
#include "tml/pipeline.hpp"
#include "tml/synth.hpp"

using namespace tml;

namespace {

constexpr int kPropertyCases = 250;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

std::size_t workers() { return std::max<std::size_t>(2, std::min<std::size_t>(8, std::thread::hardware_concurrency())); }

// 1
void improvement_examples(Outcome& o) {
  struct Row {
    double original, tl, expected, tol;
  };
  for (const Row& r : {Row{0.1184, 0.0526, 55.57, 0.01}, Row{0.0694, 0.0664, 4.32, 0.01}, Row{0.0724, 0.0673, 7.04, 0.01},
                       Row{0.1643, 0.1478, 10.05, 0.05}}) {
    const double got = improvement_pct(r.original, r.tl);
    o.require(std::abs(got - r.expected) <= r.tol, "improvement_pct(" + std::to_string(r.original) + ", " +
                                                       std::to_string(r.tl) + ") = " + std::to_string(got));
  }
  if (o.pass) o.detail << "4/4 table rows reproduced";
}

// 2
void transform_oracles(Outcome& o) {
  const TaskCollection c = test::toy_collection(4, 10, 3, 21);
  int checked = 0;
  for (const LearnerSpec& spec : {LearnerSpec::ridge(), LearnerSpec::forest(25, 3), LearnerSpec::svr()}) {
    const ModelBank bank = stage1_train(c, spec, TrainingScope::FullTask);
    const auto views = second_order_transform(c, bank, spec, TransformConfig{});
    for (std::size_t t = 0; t < c.size(); ++t) {
      const Task& task = c.tasks[t];
      o.require(build_extrinsic(task.task_id, bank, task.features).values == oracle::extrinsic(bank, task.task_id, task.features),
                to_string(spec.kind) + " first order, " + task.task_id);
      o.require(views[t].values == oracle::second_order(c, bank, spec, task.task_id),
                to_string(spec.kind) + " second order, " + task.task_id);
      checked += 2;
    }
  }
  if (o.pass) o.detail << checked << " matrices bitwise equal (3 learner kinds, 4 tasks x 10 examples)";
}

// 3
void learner_oracles(Outcome& o) {
  double worst_coef = 0.0, worst_grad = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const Matrix X = test::random_matrix(rng, 5, 3);
    const Vector y = test::random_vector(rng, 5);
    const double lambda = 0.5 + 10.0 * rng.uniform();
    const FittedModel m = fit_ridge(X, y, lambda);
    const Matrix Z = oracle::standardize(X);
    const auto ref = oracle::ridge_gradient_descent(Z, y, lambda);
    worst_coef = std::max({worst_coef, (m.ridge().coef - ref.coef).cwiseAbs().maxCoeff(),
                           std::abs(m.ridge().intercept - ref.intercept)});
    worst_grad = std::max(worst_grad, oracle::ridge_fd_gradient(Z, y, lambda, m.ridge().intercept, m.ridge().coef).norm());
  }
  o.require(worst_coef <= 1e-6, "ridge vs gradient descent " + std::to_string(worst_coef));
  o.require(worst_grad < 1e-6, "ridge finite-difference gradient " + std::to_string(worst_grad));

  Matrix X(6, 1);
  X << -2.0, -1.2, -0.3, 0.4, 1.1, 2.5;
  Vector y(6);
  y << 1.4, 0.3, -0.2, 0.1, 0.9, 2.2;
  SvrParams sp;
  sp.C = 1.0;
  sp.epsilon = 0.1;
  sp.sigma = 0.2;
  sp.tol = 1e-9;
  sp.standardize = false;
  const FittedModel svr = fit_svr(X, y, sp);
  const Matrix K = oracle::rbf_gram(X, sp.sigma);
  const double dual_gap = std::abs(oracle::svr_dual_objective(K, y, sp.epsilon, svr.svr().alpha, svr.svr().alpha_star) -
                                   oracle::svr_projected_gradient(K, y, sp.C, sp.epsilon).objective);
  o.require(dual_gap <= 1e-6, "svr dual gap " + std::to_string(dual_gap));

  Rng rng(99);
  int out_of_range = 0;
  for (int check = 0; check < 1000; ++check) {
    const auto n = static_cast<Eigen::Index>(5 + rng.below(30));
    const auto p = static_cast<Eigen::Index>(1 + rng.below(5));
    const Matrix Xf = test::random_matrix(rng, n, p);
    const Vector yf = test::random_vector(rng, n) * 10.0;
    ForestParams fp;
    fp.trees = 3;
    fp.min_node_size = 1 + rng.below(4);
    fp.bootstrap = rng.below(2) == 0;
    const Vector pred = predict(fit_forest(Xf, yf, fp, rng.next()), test::random_matrix(rng, 5, p) * 5.0);
    out_of_range += pred.minCoeff() < yf.minCoeff() || pred.maxCoeff() > yf.maxCoeff();
  }
  o.require(out_of_range == 0, std::to_string(out_of_range) + " forest checks out of range");
  if (o.pass)
    o.detail << "ridge coef diff " << worst_coef << ", fd grad " << worst_grad << ", svr dual gap " << dual_gap
             << ", forest 1000/1000 in range";
}

struct TransferStats {
  double mean_improvement = 0.0;
  double win_share = 0.0;
};

ExperimentResult nonlinear_run(const TaskCollection& collection, const LearnerSpec& transformer) {
  PipelineConfig config;
  config.transformer_spec = transformer;
  config.final_spec = LearnerSpec::forest(100, 1);
  config.split.k = 5;
  config.seed = 7;
  return run_pipeline(config, collection);
}

TransferStats stats_of(const ExperimentResult& r, const std::string& label) {
  const ComparisonTable table = compare_representations(r.scores);
  const ComparisonRow* row = table.find("RF", label);
  if (!row || !row->improvement || !row->versus_intrinsic) throw Error("no complete " + label + " row");
  return {*row->improvement, static_cast<double>(row->versus_intrinsic->wins) / static_cast<double>(row->task_count)};
}

const TaskCollection& nonlinear_collection() {
  static const TaskCollection c = [] {
    SynthSpec s;
    s.n_tasks = 40;
    s.n_examples_per_task = 200;
    s.n_features = 30;
    s.relatedness = 0.8;
    s.noise_sd = 0.1;
    s.seed = 7;
    s.nonlinearity = Nonlinearity::Nonlinear;
    return generate_collection(s);
  }();
  return c;
}

std::optional<TransferStats> rf_stats;

// 4
void rf_transfer(Outcome& o) {
  rf_stats = stats_of(nonlinear_run(nonlinear_collection(), LearnerSpec::forest(100, 1)), "TL-RF");
  o.require(rf_stats->win_share >= 0.70, "win share " + std::to_string(rf_stats->win_share));
  o.require(rf_stats->mean_improvement >= 3.0, "mean improvement " + std::to_string(rf_stats->mean_improvement));
  o.detail << (o.pass ? "" : " ") << "RF transformer: wins " << rf_stats->win_share * 100.0 << "% of tasks, mean improvement "
           << rf_stats->mean_improvement << "%";
}

// 5
void ridge_transfer(Outcome& o) {
  const TransferStats ridge = stats_of(nonlinear_run(nonlinear_collection(), LearnerSpec::ridge()), "TL-Ridge");
  o.require(ridge.mean_improvement <= 1.0, "ridge mean improvement " + std::to_string(ridge.mean_improvement));
  if (!rf_stats) {
    o.require(false, "RF transformer result unavailable");
  } else {
    o.require(rf_stats->mean_improvement - ridge.mean_improvement >= 2.0,
              "gap to RF " + std::to_string(rf_stats->mean_improvement - ridge.mean_improvement));
  }
  o.detail << (o.pass ? "" : " ") << "Ridge transformer mean improvement " << ridge.mean_improvement << "%";
  if (rf_stats) o.detail << ", " << rf_stats->mean_improvement - ridge.mean_improvement << " points below RF";
}

// 6
void widths(Outcome& o) {
  for (std::size_t n : {10u, 53u}) {
    Rng rng(n);
    std::vector<Task> tasks;
    for (std::size_t t = 0; t < n; ++t)
      tasks.push_back(make_task("task" + std::to_string(t), test::random_matrix(rng, 6, 2), test::random_vector(rng, 6),
                                test::names(2), test::ids("r", 6)));
    const TaskCollection c = assemble_collection(std::move(tasks), CollectionMode::IndependentExamples);
    const ModelBank bank = stage1_train(c, LearnerSpec::ridge(), TrainingScope::FullTask);
    for (const Task& t : c.tasks) {
      const ExtrinsicMatrix e = build_extrinsic(t.task_id, bank, t.features);
      o.require(e.cols() == n - 1 && static_cast<std::size_t>(e.values.cols()) == n - 1,
                "width " + std::to_string(e.cols()) + " for n = " + std::to_string(n));
      for (std::size_t cap : {1u, 5u, 9u, 20u, 52u, 60u}) {
        const std::size_t got = apply_cap(e, TransformConfig{cap, 3}).cols();
        o.require(got == std::min(cap, n - 1), "cap " + std::to_string(cap) + " gave " + std::to_string(got));
      }
    }
  }
  if (o.pass) o.detail << "n-1 columns at n = 10 and 53; caps give min(cap, n-1)";
}

// 7
void determinism_and_leakage(Outcome& o) {
  SynthSpec s;
  s.n_tasks = 8;
  s.n_examples_per_task = 60;
  s.n_features = 6;
  s.seed = 11;
  const TaskCollection c = generate_collection(s);
  PipelineConfig config;
  config.transformer_spec = LearnerSpec::forest(30, 1);
  config.final_spec = LearnerSpec::forest(30, 1);
  config.split.k = 5;
  config.order = 2;
  auto tables = [&](std::size_t w) {
    set_max_workers(w);
    const ExperimentResult r = run_pipeline(config, c);
    return format_scores_tsv(r.scores) + format_table_tsv(compare_representations(r.scores)) + result_to_json(r).dump();
  };
  const std::string reference = tables(1);
  std::size_t runs = 1;
  for (std::size_t w : {std::size_t{1}, std::size_t{2}, workers()}) {
    o.require(tables(w) == reference, "outputs differ at " + std::to_string(w) + " workers");
    ++runs;
  }
  set_max_workers(1);

  SynthSpec shared = s;
  shared.n_tasks = 6;
  shared.mode = CollectionMode::SharedExamples;
  const TaskCollection sc = generate_collection(shared);
  config.order = 1;
  const ExperimentResult audited = run_pipeline(config, sc);
  o.require(audited.scope == TrainingScope::TrainSplitOnly, "shared run did not use train-split scope");
  o.require(audited.leakage_violations.empty(), std::to_string(audited.leakage_violations.size()) + " leakage violations");
  o.require(audited.banks.size() == config.split.k, "expected one bank per round");

  // the audit must catch a bank trained on full tasks
  const SplitPlan plan = make_fold_plan(sc.tasks[0].rows(), 5, config.seed);
  std::vector<std::string> held_out;
  for (auto r : plan.test_rows(0)) held_out.push_back(sc.tasks[0].example_ids[r]);
  o.require(!audit_leakage(stage1_train(sc, LearnerSpec::ridge(), TrainingScope::FullTask), held_out).empty(),
            "audit missed a full-task bank");
  if (o.pass)
    o.detail << runs << " runs byte-identical (workers 1, 1, 2, " << workers() << "); 6-task shared audit clean over "
             << audited.banks.size() << " rounds";
}

// 8
Vector centroid_of(const Matrix& items, const std::vector<std::size_t>& assign, std::size_t c) {
  Vector sum = Vector::Zero(items.cols());
  double count = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i)
    if (assign[i] == c) {
      sum += items.row(static_cast<Eigen::Index>(i)).transpose();
      count += 1.0;
    }
  return count > 0.0 ? Vector(sum / count) : sum;
}

Matrix clustered_items(Rng& rng) {
  const auto n = static_cast<Eigen::Index>(3 + rng.below(40));
  const auto p = static_cast<Eigen::Index>(1 + rng.below(5));
  const auto centres = static_cast<Eigen::Index>(1 + rng.below(4));
  const Matrix c = test::random_matrix(rng, centres, p) * 4.0;
  Matrix items(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    items.row(i) = c.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(centres)))) + test::random_matrix(rng, 1, p);
  return items;
}

void properties(Outcome& o) {
  std::vector<std::pair<std::string, std::function<bool(Rng&)>>> props;
  props.emplace_back("rmse symmetry", [](Rng& rng) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(60));
    const Vector p = test::random_vector(rng, n) * 5.0, t = test::random_vector(rng, n);
    return rmse(p, t) == rmse(t, p);
  });
  props.emplace_back("rmse scaling", [](Rng& rng) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(60));
    const Vector p = test::random_vector(rng, n), t = test::random_vector(rng, n);
    const double c = rng.normal() * std::exp(3.0 * rng.normal());
    const double rhs = std::abs(c) * rmse(p, t);
    return std::abs(rmse(c * p, c * t) - rhs) <= 1e-12 * std::max(1.0, rhs);
  });
  props.emplace_back("improvement scale invariance", [](Rng& rng) {
    const double a = 0.01 + rng.uniform(), b = 2.0 * rng.uniform(), c = std::exp(6.0 * rng.normal());
    return std::abs(improvement_pct(c * a, c * b) - improvement_pct(a, b)) <= 1e-10;
  });
  props.emplace_back("win/loss/tie partition", [](Rng& rng) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<std::pair<std::string, double>> b, c;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = rng.uniform();
      b.emplace_back("t" + std::to_string(t), v);
      c.emplace_back("t" + std::to_string(t), rng.below(3) == 0 ? v : rng.uniform());
    }
    rng.shuffle(c);
    const WinCount w = win_count(b, c);
    return w.wins + w.losses + w.ties == n;
  });
  props.emplace_back("table order independence", [](Rng& rng) {
    std::vector<CvResult> results;
    const std::size_t tasks = 1 + rng.below(10);
    const std::vector<Representation> reps{Representation::intrinsic(), Representation::transformed(LearnerSpec::ridge()),
                                           Representation::transformed(LearnerSpec::forest(10, 1), 2)};
    for (const LearnerSpec& f : {LearnerSpec::forest(10, 1), LearnerSpec::svr()})
      for (const auto& rep : reps)
        for (std::size_t t = 0; t < tasks; ++t) {
          CvResult r;
          r.task_id = "t" + std::to_string(t);
          r.mean_rmse = 0.05 + rng.uniform();
          r.per_fold_rmse = {r.mean_rmse};
          r.final_learner = f;
          r.representation = rep;
          results.push_back(r);
        }
    const std::string before = format_table_tsv(compare_representations(results));
    rng.shuffle(results);
    return format_table_tsv(compare_representations(results)) == before;
  });
  props.emplace_back("centroids are member means", [](Rng& rng) {
    const Matrix items = clustered_items(rng);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(items.rows()));
    const ClusterResult r = kmeans(items, k, rng.next());
    if (!r.converged) return false;
    for (std::size_t c = 0; c < k; ++c)
      if ((r.centroids.row(static_cast<Eigen::Index>(c)).transpose() - centroid_of(items, r.assignments, c)).cwiseAbs().maxCoeff() >
          1e-9)
        return false;
    return true;
  });
  props.emplace_back("nearest-centroid assignment", [](Rng& rng) {
    const Matrix items = clustered_items(rng);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(items.rows()));
    const ClusterResult r = kmeans(items, k, rng.next());
    for (Eigen::Index i = 0; i < items.rows(); ++i) {
      const double mine =
          (items.row(i) - r.centroids.row(static_cast<Eigen::Index>(r.assignments[static_cast<std::size_t>(i)]))).squaredNorm();
      for (Eigen::Index c = 0; c < r.centroids.rows(); ++c)
        if (mine > (items.row(i) - r.centroids.row(c)).squaredNorm()) return false;
    }
    return true;
  });
  props.emplace_back("seeded deterministic init", [](Rng& rng) {
    const Matrix items = clustered_items(rng);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(items.rows()));
    const std::uint64_t seed = rng.next();
    KMeansOptions one;
    one.max_iter = 1;
    const ClusterResult a = kmeans(items, k, seed, one), b = kmeans(items, k, seed, one);
    if (a.centroids != b.centroids) return false;
    std::set<Eigen::Index> used;
    for (Eigen::Index c = 0; c < a.centroids.rows(); ++c) {
      bool found = false;
      for (Eigen::Index i = 0; i < items.rows() && !found; ++i)
        if (!used.count(i) && items.row(i) == a.centroids.row(c)) {
          used.insert(i);
          found = true;
        }
      if (!found) return false;
    }
    return kmeans(items, k, seed).assignments == kmeans(items, k, seed).assignments;
  });
  props.emplace_back("monotone inertia", [](Rng& rng) {
    const Matrix items = clustered_items(rng);
    const std::size_t k = 1 + rng.below(static_cast<std::uint64_t>(items.rows()));
    const ClusterResult r = kmeans(items, k, rng.next());
    for (std::size_t s = 1; s < r.inertia_history.size(); ++s)
      if (r.inertia_history[s] > r.inertia_history[s - 1] + 1e-12 * std::max(1.0, r.inertia_history[s - 1])) return false;
    return r.inertia == r.inertia_history.back();
  });

  std::uint64_t seed = 500;
  for (const auto& [name, prop] : props) {
    Rng rng(seed++);
    int failed = 0;
    for (int i = 0; i < kPropertyCases; ++i) failed += !prop(rng);
    o.require(failed == 0, name + " failed " + std::to_string(failed) + " cases");
  }
  if (o.pass) o.detail << props.size() << " properties x " << kPropertyCases << " cases";
}

} // namespace

int main() {
  const std::vector<std::pair<std::string, void (*)(Outcome&)>> criteria{
      {"1 improvement_pct table values", improvement_examples},
      {"2 transform engine equals naive oracles", transform_oracles},
      {"3 learner correctness oracles", learner_oracles},
      {"4 RF transformer beats intrinsic RF", rf_transfer},
      {"5 ridge transformer shows no nonlinear gain", ridge_transfer},
      {"6 extrinsic widths and descriptor cap", widths},
      {"7 deterministic outputs and leakage audit", determinism_and_leakage},
      {"8 evaluation and clustering properties", properties},
  };
  set_max_workers(workers());
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      check(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    set_max_workers(workers());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  criterion %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
