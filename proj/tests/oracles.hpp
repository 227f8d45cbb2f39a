#pragma once

// Brute-force reference implementations used to check the library. They share
// no code with it beyond the matrix types.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "tml/dataset.hpp"
#include "tml/transform.hpp"

namespace tml::oracle {

// Population-sd standardization; constant columns become zero.
inline Matrix standardize(const Matrix& X) {
  Matrix Z(X.rows(), X.cols());
  const auto n = static_cast<double>(X.rows());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    double mean = 0.0;
    for (Eigen::Index r = 0; r < X.rows(); ++r) mean += X(r, c);
    mean /= n;
    double ss = 0.0;
    for (Eigen::Index r = 0; r < X.rows(); ++r) ss += (X(r, c) - mean) * (X(r, c) - mean);
    const double sd = std::sqrt(ss / n);
    for (Eigen::Index r = 0; r < X.rows(); ++r) Z(r, c) = sd > 0.0 ? (X(r, c) - mean) / sd : 0.0;
  }
  return Z;
}

// sum (y - b - Z beta)^2 + lambda |beta|^2
inline double ridge_objective(const Matrix& Z, const Vector& y, double lambda, double b, const Vector& beta) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    double r = y(i) - b;
    for (Eigen::Index j = 0; j < Z.cols(); ++j) r -= Z(i, j) * beta(j);
    loss += r * r;
  }
  double pen = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) pen += beta(j) * beta(j);
  return loss + lambda * pen;
}

struct RidgeSolution {
  double intercept = 0.0;
  Vector coef;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
};

// Plain gradient descent on (b, beta) with step 1/L.
inline RidgeSolution ridge_gradient_descent(const Matrix& Z, const Vector& y, double lambda,
                                            double tolerance = 1e-10, std::size_t max_iter = 50'000'000) {
  const Eigen::Index n = Z.rows(), p = Z.cols();
  double frob = static_cast<double>(n); // intercept column of ones
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) frob += Z(i, j) * Z(i, j);
  const double step = 1.0 / (2.0 * (frob + lambda));

  RidgeSolution s;
  s.coef = Vector::Zero(p);
  Vector grad(p);
  for (s.iterations = 0; s.iterations < max_iter; ++s.iterations) {
    Vector r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double fit = s.intercept;
      for (Eigen::Index j = 0; j < p; ++j) fit += Z(i, j) * s.coef(j);
      r(i) = y(i) - fit;
    }
    double gb = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) gb -= 2.0 * r(i);
    for (Eigen::Index j = 0; j < p; ++j) {
      double g = 2.0 * lambda * s.coef(j);
      for (Eigen::Index i = 0; i < n; ++i) g -= 2.0 * Z(i, j) * r(i);
      grad(j) = g;
    }
    s.gradient_norm = std::sqrt(gb * gb + grad.squaredNorm());
    if (s.gradient_norm < tolerance) break;
    s.intercept -= step * gb;
    s.coef -= step * grad;
  }
  return s;
}

// Central finite-difference gradient of ridge_objective at (b, beta).
inline Vector ridge_fd_gradient(const Matrix& Z, const Vector& y, double lambda, double b, const Vector& beta,
                                double h = 1e-5) {
  Vector g(beta.size() + 1);
  g(0) = (ridge_objective(Z, y, lambda, b + h, beta) - ridge_objective(Z, y, lambda, b - h, beta)) / (2.0 * h);
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    Vector up = beta, down = beta;
    up(j) += h;
    down(j) -= h;
    g(j + 1) = (ridge_objective(Z, y, lambda, b, up) - ridge_objective(Z, y, lambda, b, down)) / (2.0 * h);
  }
  return g;
}

inline Matrix rbf_gram(const Matrix& X, double sigma) {
  Matrix K(X.rows(), X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.rows(); ++j) K(i, j) = std::exp(-sigma * (X.row(i) - X.row(j)).squaredNorm());
  return K;
}

// epsilon-SVR dual in minimisation form:
//   1/2 (a - a*)' K (a - a*) + eps sum(a + a*) - y'(a - a*)
inline double svr_dual_objective(const Matrix& K, const Vector& y, double eps, const Vector& a, const Vector& a_star) {
  const Vector beta = a - a_star;
  return 0.5 * beta.dot(K * beta) + eps * (a.sum() + a_star.sum()) - y.dot(beta);
}

struct SvrDualSolution {
  Vector alpha, alpha_star;
  double objective = 0.0;
};

// Projection onto {0 <= v <= C, sum(v_up) - sum(v_low) = 0} by bisection on the
// multiplier of the equality constraint.
inline Vector project_box_hyperplane(const Vector& v, double C) {
  const Eigen::Index n = v.size() / 2;
  auto shifted = [&](double mu) {
    Vector out(v.size());
    for (Eigen::Index i = 0; i < n; ++i) out(i) = std::clamp(v(i) - mu, 0.0, C);
    for (Eigen::Index i = n; i < 2 * n; ++i) out(i) = std::clamp(v(i) + mu, 0.0, C);
    return out;
  };
  auto balance = [&](const Vector& w) { return w.head(n).sum() - w.tail(n).sum(); };
  double lo = -v.cwiseAbs().maxCoeff() - C - 1.0, hi = -lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (balance(shifted(mid)) > 0.0) lo = mid;
    else hi = mid;
  }
  return shifted(0.5 * (lo + hi));
}

// Accelerated projected gradient with adaptive restart.
inline SvrDualSolution svr_projected_gradient(const Matrix& K, const Vector& y, double C, double eps,
                                              std::size_t iterations = 200'000) {
  const Eigen::Index n = y.size();
  Eigen::SelfAdjointEigenSolver<Matrix> es(K);
  const double L = 2.0 * es.eigenvalues().maxCoeff();
  const double step = 1.0 / L;

  auto gradient = [&](const Vector& v) {
    const Vector beta = v.head(n) - v.tail(n);
    const Vector kb = K * beta;
    Vector g(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      g(i) = kb(i) + eps - y(i);
      g(n + i) = -kb(i) + eps + y(i);
    }
    return g;
  };
  auto objective = [&](const Vector& v) { return svr_dual_objective(K, y, eps, v.head(n), v.tail(n)); };

  Vector x = Vector::Zero(2 * n), z = x;
  double t = 1.0, fx = objective(x);
  for (std::size_t it = 0; it < iterations; ++it) {
    const Vector next = project_box_hyperplane(z - step * gradient(z), C);
    const double fn = objective(next);
    if (fn > fx) { // restart momentum
      t = 1.0;
      z = x;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = next + ((t - 1.0) / t_next) * (next - x);
    x = next;
    fx = fn;
    t = t_next;
  }
  return {x.head(n), x.tail(n), fx};
}

// Row-by-row extrinsic matrix: for every other model, predict each example on
// its own.
inline Matrix extrinsic(const ModelBank& bank, const std::string& target, const Matrix& X) {
  std::vector<std::size_t> others;
  for (std::size_t m = 0; m < bank.size(); ++m)
    if (bank.task_ids[m] != target) others.push_back(m);
  Matrix out(X.rows(), static_cast<Eigen::Index>(others.size()));
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const Matrix row = X.row(r);
    for (std::size_t c = 0; c < others.size(); ++c)
      out(r, static_cast<Eigen::Index>(c)) = predict(bank.models[others[c]], row)(0);
  }
  return out;
}

// Second-order view computed from scratch: refit every task's stage-2 model on
// its own row-wise extrinsic matrix, then evaluate each other task's stage-2
// model on the target's examples.
inline Matrix second_order(const TaskCollection& collection, const ModelBank& bank, const LearnerSpec& final_spec,
                           const std::string& target) {
  const Task& t = collection.task(target);
  std::vector<FittedModel> stage2;
  for (const Task& task : collection.tasks)
    stage2.push_back(fit(final_spec, extrinsic(bank, task.task_id, task.features), task.targets));
  std::vector<std::size_t> others;
  for (std::size_t m = 0; m < collection.size(); ++m)
    if (collection.tasks[m].task_id != target) others.push_back(m);
  Matrix out(t.features.rows(), static_cast<Eigen::Index>(others.size()));
  for (Eigen::Index r = 0; r < t.features.rows(); ++r) {
    const Matrix row = t.features.row(r);
    for (std::size_t c = 0; c < others.size(); ++c) {
      const std::string& source = collection.tasks[others[c]].task_id;
      const Matrix view = extrinsic(bank, source, row);
      out(r, static_cast<Eigen::Index>(c)) = predict(stage2[others[c]], view)(0);
    }
  }
  return out;
}

} // namespace tml::oracle
