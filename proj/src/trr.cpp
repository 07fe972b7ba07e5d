#include "tensorreg/trr.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "tensorreg/error.hpp"

namespace tensorreg {

namespace {

constexpr double kSingularRcond = 1e-12;

Eigen::LLT<Eigen::MatrixXd> factor_spd(Eigen::MatrixXd a, double reg) {
  a.diagonal().array() += reg;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success || (reg == 0.0 && llt.rcond() < kSingularRcond))
    throw NumericalError("alternating least-squares system is singular; use reg > 0");
  return llt;
}

// Weighted ridge solve for one factor matrix:
//   min_u sum_n w_n (t_n - phi_n . u)^2 + reg ||u||^2.
// Wide systems (more unknowns than samples) go through the N x N dual form.
Eigen::VectorXd solve_weighted_ridge(const Eigen::MatrixXd& phi, const Eigen::VectorXd& w, double reg,
                                     const Eigen::VectorXd& t) {
  if (phi.cols() > phi.rows() && reg > 0.0) {
    const Eigen::VectorXd sw = w.cwiseSqrt();
    const Eigen::MatrixXd scaled = sw.asDiagonal() * phi;
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(phi.rows(), phi.rows());
    k.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
    k.triangularView<Eigen::StrictlyUpper>() = k.transpose();
    const Eigen::VectorXd alpha = factor_spd(std::move(k), reg).solve(sw.cwiseProduct(t));
    return scaled.transpose() * alpha;
  }
  const Eigen::MatrixXd wphi = w.asDiagonal() * phi;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(phi.cols(), phi.cols());
  a.noalias() = phi.transpose() * wphi;
  const Eigen::VectorXd rhs = wphi.transpose() * t;
  return factor_spd(std::move(a), reg).solve(rhs);
}

// Rescales every CP component so its column norm is the same in all modes. The
// tensor is unchanged and the ridge penalty cannot grow (AM-GM). Any stationary
// point of the penalized objective is balanced, but ALS alone drifts toward
// balance at a rate set by reg, which for small reg takes many thousands of
// sweeps.
void balance_components(CPFactors& w) {
  const std::size_t order = w.order();
  if (order < 2) return;
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(w.rank()); ++r) {
    double log_mean = 0.0;
    bool zero = false;
    for (std::size_t m = 0; m < order; ++m) {
      const double n = w.factor(m).col(r).norm();
      zero = zero || n == 0.0;
      log_mean += std::log(n) / static_cast<double>(order);
    }
    if (zero) continue;
    const double target = std::exp(log_mean);
    for (std::size_t m = 0; m < order; ++m) {
      Eigen::MatrixXd u = w.factor(m);
      u.col(r) *= target / u.col(r).norm();
      w.set_factor(m, u);
    }
  }
}

// For order-1 inputs the design matrix [X^T ... X^T] (R copies) does not depend
// on the weights, so the system is factored once per fit.
class Order1Solver {
 public:
  Order1Solver(const TensorBatch& x, const Eigen::VectorXd& w, double reg, std::size_t rank)
      : x_(x), w_(w), rank_(static_cast<Eigen::Index>(rank)) {
    const Eigen::Index n = static_cast<Eigen::Index>(x.size());
    const Eigen::Index cols = static_cast<Eigen::Index>(x.sample_size()) * rank_;
    dual_ = cols > n && reg > 0.0;
    if (dual_) {
      sw_ = w.cwiseSqrt();
      Eigen::MatrixXd k = static_cast<double>(rank_) * (sw_.asDiagonal() * x.gram() * sw_.asDiagonal());
      llt_ = factor_spd(std::move(k), reg);
    } else {
      const Eigen::MatrixXd& cols_x = x.columns();
      const Eigen::MatrixXd xw = cols_x * w.asDiagonal();
      const Eigen::MatrixXd block = xw * cols_x.transpose();
      const Eigen::Index i = block.rows();
      Eigen::MatrixXd a(i * rank_, i * rank_);
      for (Eigen::Index r = 0; r < rank_; ++r)
        for (Eigen::Index s = 0; s < rank_; ++s) a.block(r * i, s * i, i, i) = block;
      llt_ = factor_spd(std::move(a), reg);
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& t) const {
    if (dual_) {
      const Eigen::VectorXd alpha = llt_.solve(sw_.cwiseProduct(t));
      return tile(x_.columns() * sw_.cwiseProduct(alpha));
    }
    return llt_.solve(tile(x_.columns() * w_.cwiseProduct(t)));
  }

 private:
  Eigen::VectorXd tile(const Eigen::VectorXd& v) const { return v.replicate(rank_, 1); }

  const TensorBatch& x_;
  const Eigen::VectorXd& w_;
  Eigen::Index rank_;
  bool dual_ = false;
  Eigen::VectorXd sw_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

double weighted_mean(const Eigen::VectorXd& v, const Eigen::VectorXd& w, double wsum) {
  return w.dot(v) / wsum;
}

double penalized_sse(const Eigen::VectorXd& resid, const Eigen::VectorXd& w, double reg,
                     const CPFactors& f) {
  return w.dot(resid.cwiseAbs2()) + reg * f.squared_norm();
}

}  // namespace

double trr_predict(const TrrModel& model, const DenseTensor& x) {
  return cp_inner(x, model.weights) + model.bias;
}

Eigen::VectorXd trr_predict(const TrrModel& model, const TensorBatch& x) {
  Eigen::VectorXd s = batch_inner(x, model.weights);
  s.array() += model.bias;
  return s;
}

double trr_objective(const TrrModel& model, const RegressionDataset& data) {
  const Eigen::VectorXd resid = data.targets.col(0) - trr_predict(model, data.inputs);
  return penalized_sse(resid, data.weights(), model.reg, model.weights);
}

TrrModel trr_fit(const RegressionDataset& data, std::size_t rank, double reg, const TrrOptions& opts,
                 const TrrModel* warm_start) {
  if (data.outputs() != 1)
    throw ArgumentError("trr_fit needs exactly one target column, got " + std::to_string(data.outputs()));
  if (rank < 1) throw ArgumentError("trr_fit: rank must be positive");
  if (!(reg >= 0.0) || !std::isfinite(reg)) throw ArgumentError("trr_fit: reg must be finite and >= 0");
  if (opts.max_sweeps < 1) throw ArgumentError("trr_fit: max_sweeps must be positive");

  const Dims& dims = data.dims();
  const Eigen::VectorXd y = data.targets.col(0);
  const Eigen::VectorXd w = data.weights();
  const double wsum = w.sum();

  TrrModel model;
  model.reg = reg;
  if (warm_start) {
    check_compatible(dims, warm_start->weights, "trr_fit warm start");
    if (warm_start->rank() != rank) throw ArgumentError("trr_fit: warm start rank differs from requested rank");
    model.weights = warm_start->weights;
    model.bias = warm_start->bias;
  } else {
    std::mt19937_64 rng(opts.seed);
    model.weights = CPFactors::random(dims, rank, rng);
    model.bias = weighted_mean(y - batch_inner(data.inputs, model.weights), w, wsum);
  }

  Eigen::VectorXd resid = y - trr_predict(model, data.inputs);
  double objective = penalized_sse(resid, w, reg, model.weights);
  model.report.objective_trace.push_back(objective);

  std::optional<Order1Solver> order1;
  if (dims.size() == 1) order1.emplace(data.inputs, w, reg, rank);

  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    for (std::size_t m = 0; m < dims.size(); ++m) {
      Eigen::VectorXd t = y;
      t.array() -= model.bias;
      const Eigen::VectorXd u =
          order1 ? order1->solve(t) : solve_weighted_ridge(design_matrix(data.inputs, model.weights, m), w, reg, t);
      model.weights.set_factor(m, Eigen::Map<const Eigen::MatrixXd>(u.data(), static_cast<Eigen::Index>(dims[m]),
                                                                    static_cast<Eigen::Index>(rank)));
    }
    balance_components(model.weights);
    const Eigen::VectorXd s = batch_inner(data.inputs, model.weights);
    model.bias = weighted_mean(y - s, w, wsum);
    resid = y - s;
    resid.array() -= model.bias;

    const double previous = objective;
    objective = penalized_sse(resid, w, reg, model.weights);
    if (!std::isfinite(objective)) throw NumericalError("trr_fit: objective became non-finite");
    model.report.objective_trace.push_back(objective);
    model.report.sweeps = sweep;
    const double scale = std::max(std::abs(previous), std::numeric_limits<double>::min());
    if ((previous - objective) / scale < opts.tol) {
      model.report.converged = true;
      break;
    }
  }
  model.noise_var = w.dot(resid.cwiseAbs2()) / wsum;
  return model;
}

}  // namespace tensorreg
