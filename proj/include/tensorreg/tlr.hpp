#pragma once

// Tensor logistic regression: C-class softmax over <X, V_i> + a_i with each
// V_i a rank-R CP tensor. Labels may be soft (rows of a stochastic matrix),
// which is how the mixture-of-experts gate is trained.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tensorreg/batch.hpp"
#include "tensorreg/tensor.hpp"

namespace tensorreg {

/// N x C nonnegative matrix with rows summing to one (within 1e-9).
class SoftLabels {
 public:
  SoftLabels() = default;
  explicit SoftLabels(Eigen::MatrixXd probabilities);
  /// One-hot rows from class indices in [0, classes).
  static SoftLabels from_classes(const std::vector<std::size_t>& labels, std::size_t classes);

  const Eigen::MatrixXd& matrix() const noexcept { return p_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(p_.rows()); }
  std::size_t classes() const noexcept { return static_cast<std::size_t>(p_.cols()); }

 private:
  Eigen::MatrixXd p_;
};

struct TlrOptions {
  double gtol = 1e-5;
  int max_iters = 500;
  std::uint64_t seed = 0;
  int lbfgs_history = 10;
};

struct TlrReport {
  int iterations = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double grad_inf_norm = 0.0;
  bool converged = false;
};

struct TlrModel {
  std::vector<CPFactors> weights;  ///< one CP tensor per class
  Eigen::VectorXd biases;
  double reg = 0.0;
  TlrReport report;

  std::size_t classes() const noexcept { return weights.size(); }
  std::size_t rank() const noexcept { return weights.empty() ? 0 : weights.front().rank(); }
  Dims dims() const { return weights.empty() ? Dims{} : weights.front().dims(); }

  /// All-zero weights and biases (uniform posterior).
  static TlrModel zeros(const Dims& dims, std::size_t classes, std::size_t rank, double reg = 0.0);
};

/// Gradient with the same layout as the model parameters.
struct TlrGradient {
  std::vector<std::vector<Eigen::MatrixXd>> weights;  ///< [class][mode], I_m x R
  Eigen::VectorXd biases;
};

struct TlrObjective {
  double value = 0.0;
  TlrGradient gradient;
};

/// Class scores <X, V_i> + a_i, N x C.
Eigen::MatrixXd tlr_scores(const TlrModel& model, const TensorBatch& x);

/// Softmax posterior for one input (length C) or a batch (N x C).
Eigen::VectorXd tlr_posterior(const TlrModel& model, const DenseTensor& x);
Eigen::MatrixXd tlr_posterior(const TlrModel& model, const TensorBatch& x);

/// -sum_n sum_i y_ni log pi_ni + reg * sum_i sum_m ||V_i^(m)||_F^2 and its
/// gradient. Biases are not regularized.
TlrObjective tlr_nll_and_grad(const TlrModel& model, const TensorBatch& x, const SoftLabels& labels);

/// Flat parameter vector: class-major; within a class vec(V_i^(0)), ...,
/// vec(V_i^(M-1)), then a_i.
Eigen::VectorXd tlr_pack(const TlrModel& model);
Eigen::VectorXd tlr_pack(const TlrGradient& grad);
void tlr_unpack(const Eigen::VectorXd& theta, TlrModel& model);

/// Regularized maximum likelihood by L-BFGS. Starts from `warm_start` when
/// given, otherwise from seeded random factors and zero biases.
TlrModel tlr_fit(const TensorBatch& x, const SoftLabels& labels, std::size_t rank, double reg,
                 const TlrOptions& opts = {}, const TlrModel* warm_start = nullptr);

}  // namespace tensorreg
