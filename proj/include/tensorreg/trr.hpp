#pragma once

// Tensor ridge regression: y = <X, W> + b + eps with W a rank-R CP tensor,
// fit by alternating ridge solves over the factor matrices.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tensorreg/batch.hpp"
#include "tensorreg/tensor.hpp"

namespace tensorreg {

struct TrrOptions {
  double tol = 1e-6;  ///< stop when the relative objective decrease of a sweep falls below this
  int max_sweeps = 100;
  std::uint64_t seed = 0;
};

struct TrrReport {
  int sweeps = 0;
  bool converged = false;
  /// Penalized objective after initialization, then after every sweep.
  std::vector<double> objective_trace;
};

struct TrrModel {
  CPFactors weights;
  double bias = 0.0;
  double noise_var = 0.0;
  double reg = 0.0;
  TrrReport report;

  std::size_t rank() const noexcept { return weights.rank(); }
  Dims dims() const { return weights.dims(); }
};

/// <X, W> + b.
double trr_predict(const TrrModel& model, const DenseTensor& x);
Eigen::VectorXd trr_predict(const TrrModel& model, const TensorBatch& x);

/// sum_n w_n (y_n - <X_n, W> - b)^2 + reg * sum_m ||W^(m)||_F^2 on target column 0.
double trr_objective(const TrrModel& model, const RegressionDataset& data);

/// Alternating ridge fit. Modes are updated in ascending order, then the bias
/// (weighted mean residual). Starts from `warm_start` when given, otherwise
/// from seeded normal factors. noise_var is the weighted mean squared residual
/// at the returned parameters.
TrrModel trr_fit(const RegressionDataset& data, std::size_t rank, double reg,
                 const TrrOptions& opts = {}, const TrrModel* warm_start = nullptr);

}  // namespace tensorreg
