#pragma once

#include <functional>

#include <Eigen/Core>

namespace qf {

struct LbfgsOptions {
  int max_iterations = 1000;
  int history = 10;
  double gradient_tolerance = 1e-9;  // on ||g||_inf / max(1, |f|)
  double function_tolerance = 1e-14;  // relative decrease between iterations
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0;
  int iterations = 0;
  bool converged = false;
};

// Returns f(x) and writes its gradient.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

// Limited-memory BFGS with a backtracking Armijo line search. Intended for
// smooth convex objectives such as regularized logistic regression.
LbfgsResult lbfgs_minimize(const Objective& objective, Eigen::VectorXd x0, const LbfgsOptions& options = {});

}  // namespace qf
