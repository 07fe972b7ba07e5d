#include "tensorreg/tlr.hpp"

#include <cmath>
#include <random>

#include "tensorreg/error.hpp"
#include "tensorreg/lbfgs.hpp"

namespace tensorreg {

namespace {

constexpr double kRowSumTol = 1e-9;

void softmax_rows(Eigen::MatrixXd& s) {
  for (Eigen::Index n = 0; n < s.rows(); ++n) {
    const double mx = s.row(n).maxCoeff();
    s.row(n) = (s.row(n).array() - mx).exp();
    s.row(n) /= s.row(n).sum();
  }
}

void check_model(const TlrModel& model) {
  if (model.weights.empty()) throw ArgumentError("logistic model has no classes");
  if (static_cast<std::size_t>(model.biases.size()) != model.weights.size())
    throw ShapeError("logistic model bias count does not match class count");
  const Dims dims = model.weights.front().dims();
  const std::size_t rank = model.weights.front().rank();
  for (const auto& w : model.weights) {
    check_compatible(dims, w, "logistic model");
    if (w.rank() != rank) throw ShapeError("logistic model classes must share the CP rank");
  }
}

}  // namespace

SoftLabels::SoftLabels(Eigen::MatrixXd probabilities) : p_(std::move(probabilities)) {
  if (p_.rows() < 1 || p_.cols() < 1) throw ShapeError("soft labels must be a non-empty matrix");
  if (!p_.allFinite() || (p_.array() < 0.0).any())
    throw DataError("soft labels must be finite and nonnegative");
  for (Eigen::Index n = 0; n < p_.rows(); ++n) {
    const double s = p_.row(n).sum();
    if (std::abs(s - 1.0) > kRowSumTol)
      throw DataError("soft label row " + std::to_string(n) + " sums to " + std::to_string(s));
  }
}

SoftLabels SoftLabels::from_classes(const std::vector<std::size_t>& labels, std::size_t classes) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()),
                                            static_cast<Eigen::Index>(classes));
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] >= classes) throw DataError("class label " + std::to_string(labels[n]) + " out of range");
    p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(labels[n])) = 1.0;
  }
  return SoftLabels(std::move(p));
}

TlrModel TlrModel::zeros(const Dims& dims, std::size_t classes, std::size_t rank, double reg) {
  TlrModel m;
  m.weights.assign(classes, CPFactors::zeros(dims, rank));
  m.biases = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes));
  m.reg = reg;
  return m;
}

Eigen::MatrixXd tlr_scores(const TlrModel& model, const TensorBatch& x) {
  check_model(model);
  // All classes in one product: the batch is streamed from memory once.
  Eigen::MatrixXd full(static_cast<Eigen::Index>(x.sample_size()), static_cast<Eigen::Index>(model.classes()));
  for (std::size_t i = 0; i < model.classes(); ++i) {
    check_compatible(x.dims(), model.weights[i], "tlr_scores");
    full.col(static_cast<Eigen::Index>(i)) = cp_reconstruct_vector(model.weights[i]);
  }
  const Eigen::MatrixXd& cols = x.columns();
  Eigen::MatrixXd s(cols.cols(), full.cols());
  for (Eigen::Index n = 0; n < cols.cols(); ++n) s.row(n).noalias() = cols.col(n).transpose() * full;
  s.rowwise() += model.biases.transpose();
  return s;
}

Eigen::MatrixXd tlr_posterior(const TlrModel& model, const TensorBatch& x) {
  Eigen::MatrixXd s = tlr_scores(model, x);
  softmax_rows(s);
  return s;
}

Eigen::VectorXd tlr_posterior(const TlrModel& model, const DenseTensor& x) {
  check_model(model);
  Eigen::MatrixXd s(1, static_cast<Eigen::Index>(model.classes()));
  for (std::size_t i = 0; i < model.classes(); ++i)
    s(0, static_cast<Eigen::Index>(i)) = cp_inner(x, model.weights[i]) + model.biases(static_cast<Eigen::Index>(i));
  softmax_rows(s);
  return s.row(0).transpose();
}

TlrObjective tlr_nll_and_grad(const TlrModel& model, const TensorBatch& x, const SoftLabels& labels) {
  if (labels.size() != x.size())
    throw ShapeError("label rows (" + std::to_string(labels.size()) + ") do not match inputs (" +
                     std::to_string(x.size()) + ")");
  if (labels.classes() != model.classes()) throw ShapeError("label columns do not match model classes");
  const Eigen::MatrixXd s = tlr_scores(model, x);
  const Eigen::MatrixXd& y = labels.matrix();

  TlrObjective out;
  Eigen::MatrixXd pi(s.rows(), s.cols());
  double nll = 0.0;
  for (Eigen::Index n = 0; n < s.rows(); ++n) {
    const double mx = s.row(n).maxCoeff();
    const Eigen::RowVectorXd e = (s.row(n).array() - mx).exp();
    const double sum = e.sum();
    const double lse = mx + std::log(sum);
    pi.row(n) = e / sum;
    nll += y.row(n).dot((Eigen::RowVectorXd::Constant(s.cols(), lse) - s.row(n)));
  }
  const Eigen::MatrixXd resid = pi - y;

  const Dims dims = model.dims();
  out.gradient.weights.resize(model.classes());
  out.gradient.biases.resize(static_cast<Eigen::Index>(model.classes()));
  // sum_n resid_ni X_n for every class in one pass over the batch
  const Eigen::MatrixXd& cols = x.columns();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(cols.rows(), resid.cols());
  for (Eigen::Index n = 0; n < cols.cols(); ++n) sums.noalias() += cols.col(n) * resid.row(n);
  for (std::size_t i = 0; i < model.classes(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const CPFactors& v = model.weights[i];
    nll += model.reg * v.squared_norm();
    const Eigen::VectorXd g = sums.col(c);
    auto& gw = out.gradient.weights[i];
    gw.reserve(dims.size());
    for (std::size_t m = 0; m < dims.size(); ++m)
      gw.push_back(mttkrp(std::span<const double>(g.data(), static_cast<std::size_t>(g.size())), dims, v, m) +
                   2.0 * model.reg * v.factor(m));
    out.gradient.biases(c) = resid.col(c).sum();
  }
  out.value = nll;
  return out;
}

Eigen::VectorXd tlr_pack(const TlrModel& model) {
  Eigen::Index total = 0;
  for (const auto& w : model.weights) total += static_cast<Eigen::Index>(w.parameter_count()) + 1;
  Eigen::VectorXd theta(total);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    for (const auto& f : model.weights[i].factors()) {
      theta.segment(k, f.size()) = vec_view(f);
      k += f.size();
    }
    theta(k++) = model.biases(static_cast<Eigen::Index>(i));
  }
  return theta;
}

Eigen::VectorXd tlr_pack(const TlrGradient& grad) {
  Eigen::Index total = 0;
  for (const auto& gw : grad.weights) {
    for (const auto& f : gw) total += f.size();
    ++total;
  }
  Eigen::VectorXd theta(total);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < grad.weights.size(); ++i) {
    for (const auto& f : grad.weights[i]) {
      theta.segment(k, f.size()) = vec_view(f);
      k += f.size();
    }
    theta(k++) = grad.biases(static_cast<Eigen::Index>(i));
  }
  return theta;
}

void tlr_unpack(const Eigen::VectorXd& theta, TlrModel& model) {
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    CPFactors& w = model.weights[i];
    for (std::size_t m = 0; m < w.order(); ++m) {
      const auto& f = w.factor(m);
      if (k + f.size() > theta.size()) throw ShapeError("parameter vector too short for logistic model");
      w.set_factor(m, Eigen::Map<const Eigen::MatrixXd>(theta.data() + k, f.rows(), f.cols()));
      k += f.size();
    }
    if (k >= theta.size()) throw ShapeError("parameter vector too short for logistic model");
    model.biases(static_cast<Eigen::Index>(i)) = theta(k++);
  }
  if (k != theta.size()) throw ShapeError("parameter vector length does not match logistic model");
}

TlrModel tlr_fit(const TensorBatch& x, const SoftLabels& labels, std::size_t rank, double reg,
                 const TlrOptions& opts, const TlrModel* warm_start) {
  const std::size_t classes = labels.classes();
  if (classes < 2) throw ArgumentError("tlr_fit needs at least two classes");
  if (labels.size() != x.size()) throw ShapeError("label rows do not match inputs");
  if (x.size() < classes) throw ArgumentError("tlr_fit needs at least as many samples as classes");
  if (rank < 1) throw ArgumentError("tlr_fit: rank must be positive");
  if (!(reg >= 0.0) || !std::isfinite(reg)) throw ArgumentError("tlr_fit: reg must be finite and >= 0");

  TlrModel model;
  if (warm_start) {
    check_model(*warm_start);
    if (warm_start->classes() != classes || warm_start->rank() != rank)
      throw ArgumentError("tlr_fit: warm start has a different class count or rank");
    check_compatible(x.dims(), warm_start->weights.front(), "tlr_fit warm start");
    model.weights = warm_start->weights;
    model.biases = warm_start->biases;
  } else {
    std::mt19937_64 rng(opts.seed);
    for (std::size_t i = 0; i < classes; ++i) model.weights.push_back(CPFactors::random(x.dims(), rank, rng));
    model.biases = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes));
  }
  model.reg = reg;

  TlrModel scratch = model;
  const optim::Objective objective = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    tlr_unpack(theta, scratch);
    TlrObjective r = tlr_nll_and_grad(scratch, x, labels);
    grad = tlr_pack(r.gradient);
    return r.value;
  };

  optim::LbfgsOptions lo;
  lo.history = opts.lbfgs_history;
  lo.max_iters = opts.max_iters;
  lo.gtol = opts.gtol;
  const optim::LbfgsResult res = optim::minimize_lbfgs(objective, tlr_pack(model), lo);
  if (!std::isfinite(res.value)) throw NumericalError("tlr_fit: optimizer diverged");

  tlr_unpack(res.x, model);
  model.report.iterations = res.iterations;
  model.report.initial_objective = res.initial_value;
  model.report.final_objective = res.value;
  model.report.grad_inf_norm = res.grad_inf_norm;
  model.report.converged = res.status == optim::LbfgsStatus::converged;
  return model;
}

}  // namespace tensorreg
