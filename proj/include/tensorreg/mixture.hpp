#pragma once

// Tensor-variate mixture of experts: a tensor logistic-regression gate over C
// Gaussian experts whose means are CP-structured linear functions of the input,
// one CP tensor per output dimension. Trained by EM.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tensorreg/batch.hpp"
#include "tensorreg/tlr.hpp"
#include "tensorreg/trr.hpp"

namespace tensorreg {

struct Expert {
  std::vector<CPFactors> weights;  ///< one CP tensor per output dimension
  Eigen::VectorXd bias;            ///< length D
  Eigen::MatrixXd cov;             ///< D x D, symmetric positive definite
};

struct TmeReport {
  /// Observed-data log-likelihood at every E-step.
  std::vector<double> loglik_trace;
  int iterations = 0;
  int restarts = 0;
  bool converged = false;
};

struct TmeModel {
  TlrModel gate;
  std::vector<Expert> experts;
  Dims dims;
  std::size_t outputs = 1;
  std::size_t gate_rank = 1;
  std::size_t expert_rank = 1;
  double reg_weights = 0.0;
  double reg_gate = 0.0;
  double cov_floor = 0.0;
  TmeReport report;

  std::size_t components() const noexcept { return experts.size(); }
};

struct TmeOptions {
  double tol = 1e-5;  ///< relative log-likelihood increase that ends EM
  int max_em_iters = 100;
  int max_restarts = 3;
  std::uint64_t seed = 0;
  int trr_sweeps = 20;        ///< ALS sweep budget per expert per M-step
  double trr_tol = 1e-6;
  int init_trr_sweeps = 100;  ///< budget of the global initialization fit
  int gate_iters = 100;       ///< L-BFGS budget per M-step
  double gate_gtol = 1e-5;
  int lbfgs_history = 10;
  double perturbation = 0.01;  ///< symmetry-breaking noise, relative to factor RMS
};

/// Responsibility matrix (N x C, row-stochastic) plus the two likelihoods.
struct EStepResult {
  Eigen::MatrixXd resp;
  double expected_complete_loglik = 0.0;
  double loglik = 0.0;
};

struct MStepResult {
  TmeModel model;
  /// Components whose responsibility mass fell below the floor; their
  /// parameters were left as they were.
  std::vector<std::size_t> degenerate;
};

/// psi_i(X) + b_i for expert `i`.
Eigen::VectorXd expert_mean(const TmeModel& model, std::size_t i, const DenseTensor& x);
/// Expert means for a whole batch, N x D.
Eigen::MatrixXd expert_means(const TmeModel& model, std::size_t i, const TensorBatch& x);

/// Gate probabilities; always 1 for a single-component model.
Eigen::VectorXd gate_posterior(const TmeModel& model, const DenseTensor& x);
Eigen::MatrixXd gate_posterior(const TmeModel& model, const TensorBatch& x);

/// log p(y | X).
double tme_log_density(const TmeModel& model, const DenseTensor& x, const Eigen::VectorXd& y);
/// p(y | X) = sum_i gate_i(X) N(y | mean_i(X), Sigma_i).
double tme_density(const TmeModel& model, const DenseTensor& x, const Eigen::VectorXd& y);

/// E[y | X] = sum_i gate_i(X) mean_i(X).
Eigen::VectorXd tme_predict(const TmeModel& model, const DenseTensor& x);
Eigen::MatrixXd tme_predict(const TmeModel& model, const TensorBatch& x);

EStepResult e_step(const TmeModel& model, const RegressionDataset& data);

/// Minimum responsibility mass below which an expert is not refit.
double responsibility_floor(std::size_t samples, std::size_t outputs);

/// Refits experts (weighted ALS, warm-started), their covariances, then the
/// gate (L-BFGS on the responsibilities, warm-started).
MStepResult m_step(const TmeModel& model, const RegressionDataset& data, const Eigen::MatrixXd& resp,
                   const TmeOptions& opts = {});

/// Model before the first E-step: every expert and every gate class start from
/// a global TRR fit; experts get seeded perturbations when C > 1. `attempt`
/// selects the perturbation stream.
TmeModel tme_initialize(const RegressionDataset& data, std::size_t components, std::size_t gate_rank,
                        std::size_t expert_rank, double reg_weights, double reg_gate, const TmeOptions& opts = {},
                        int attempt = 0);

/// Runs EM from `model` until the relative log-likelihood increase drops
/// below opts.tol. Throws DegenerateComponentError when an expert collapses.
TmeModel tme_run_em(TmeModel model, const RegressionDataset& data, const TmeOptions& opts = {});

/// Full fit: initialization, EM, restarts on degenerate components.
TmeModel tme_fit(const RegressionDataset& data, std::size_t components, std::size_t gate_rank,
                 std::size_t expert_rank, double reg_weights, double reg_gate, const TmeOptions& opts = {});

/// Free parameter count used by bic().
std::size_t tme_parameter_count(const TmeModel& model);

/// -2 log L + k ln N with the unregularized observed log-likelihood.
double bic(const TmeModel& model, const RegressionDataset& data);

/// Checks covariance symmetry/definiteness and component shapes.
void validate_model(const TmeModel& model);

}  // namespace tensorreg
