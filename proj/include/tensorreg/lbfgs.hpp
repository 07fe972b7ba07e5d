#pragma once

// Limited-memory BFGS with a strong-Wolfe line search.

#include <functional>

#include <Eigen/Dense>

namespace tensorreg::optim {

/// Returns f(x) and writes the gradient into `grad` (already sized).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int history = 10;
  int max_iters = 500;
  double gtol = 1e-5;  ///< stop when ||grad||_inf < gtol
  double c1 = 1e-4;    ///< sufficient decrease
  double c2 = 0.9;     ///< curvature
  int max_line_search = 40;
};

enum class LbfgsStatus { converged, max_iterations, line_search_failed };

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double initial_value = 0.0;
  double grad_inf_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::max_iterations;
};

/// Minimizes `f` from `x0`. The returned value never exceeds f(x0). Throws
/// NumericalError when f(x0) or its gradient is non-finite.
LbfgsResult minimize_lbfgs(const Objective& f, Eigen::VectorXd x0, const LbfgsOptions& opts = {});

}  // namespace tensorreg::optim
