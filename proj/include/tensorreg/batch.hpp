#pragma once

// Batches of same-shape tensors stored as the columns of one matrix, and the
// regression dataset built on top of them.

#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "tensorreg/tensor.hpp"

namespace tensorreg {

/// N tensors of identical dims, sample n in column n (flat storage order).
/// Immutable; copies share storage.
class TensorBatch {
 public:
  TensorBatch() = default;
  TensorBatch(Dims dims, Eigen::MatrixXd columns);
  explicit TensorBatch(const std::vector<DenseTensor>& samples);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(data_->cols()); }
  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(data_->rows()); }
  const Eigen::MatrixXd& columns() const noexcept { return *data_; }
  DenseTensor sample(std::size_t n) const;

  /// Same samples reinterpreted with different dims (e.g. flattened to order 1).
  TensorBatch reshaped(Dims dims) const;

  /// X^T X (N x N), computed once and cached.
  const Eigen::MatrixXd& gram() const;

 private:
  struct GramCache;
  Dims dims_;
  std::shared_ptr<const Eigen::MatrixXd> data_ = std::make_shared<Eigen::MatrixXd>();
  std::shared_ptr<GramCache> gram_;
};

/// <X_n, W> for every sample.
Eigen::VectorXd batch_inner(const TensorBatch& x, const CPFactors& w);

/// Design matrix whose row n is design_row(X_n, W, mode); N x (I_mode * R).
Eigen::MatrixXd design_matrix(const TensorBatch& x, const CPFactors& w, std::size_t mode);

/// sum_n c_n X_n as a flat vector.
Eigen::VectorXd weighted_sum(const TensorBatch& x, const Eigen::VectorXd& coeffs);

/// Inputs, targets (N x D) and optional nonnegative per-sample weights.
struct RegressionDataset {
  TensorBatch inputs;
  Eigen::MatrixXd targets;
  std::optional<Eigen::VectorXd> sample_weights;

  RegressionDataset() = default;
  RegressionDataset(TensorBatch inputs, Eigen::MatrixXd targets,
                    std::optional<Eigen::VectorXd> sample_weights = std::nullopt);

  std::size_t size() const noexcept { return inputs.size(); }
  std::size_t outputs() const noexcept { return static_cast<std::size_t>(targets.cols()); }
  const Dims& dims() const noexcept { return inputs.dims(); }
  /// Sample weights, or all ones when absent.
  Eigen::VectorXd weights() const;

  /// Shares the inputs; keeps a single target column and sets weights.
  RegressionDataset select_output(std::size_t d, std::optional<Eigen::VectorXd> weights) const;
};

}  // namespace tensorreg
