#include "tensorreg/mixture.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "tensorreg/error.hpp"

namespace tensorreg {

namespace {

constexpr double kRespRowTol = 1e-9;

// Cholesky factor of one expert covariance with its log-determinant.
struct GaussianFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;  // -0.5 * (D log 2pi + log det Sigma)
};

GaussianFactor factor_covariance(const Eigen::MatrixXd& cov, std::size_t component) {
  GaussianFactor g;
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if (!cov.allFinite() || (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw ModelIntegrityError("expert " + std::to_string(component) + " covariance is not symmetric");
  g.llt.compute(cov);
  if (g.llt.info() != Eigen::Success)
    throw ModelIntegrityError("expert " + std::to_string(component) + " covariance is not positive definite");
  const Eigen::MatrixXd l = g.llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  g.log_norm = -0.5 * (static_cast<double>(cov.rows()) * std::log(2.0 * std::numbers::pi) + log_det);
  if (!std::isfinite(g.log_norm))
    throw ModelIntegrityError("expert " + std::to_string(component) + " covariance is degenerate");
  return g;
}

// log N(y_n | mean_n, Sigma) for every row.
Eigen::VectorXd gaussian_log_pdf(const Eigen::MatrixXd& y, const Eigen::MatrixXd& mean, const GaussianFactor& g) {
  Eigen::MatrixXd e = (y - mean).transpose();  // D x N
  g.llt.matrixL().solveInPlace(e);
  Eigen::VectorXd out = -0.5 * e.colwise().squaredNorm().transpose();
  out.array() += g.log_norm;
  return out;
}

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

// log gate probabilities, N x C.
Eigen::MatrixXd log_gate(const TmeModel& model, const TensorBatch& x) {
  if (model.components() == 1) return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), 1);
  Eigen::MatrixXd s = tlr_scores(model.gate, x);
  for (Eigen::Index n = 0; n < s.rows(); ++n) s.row(n).array() -= log_sum_exp(s.row(n));
  return s;
}

void check_inputs(const TmeModel& model, const Dims& dims) {
  if (dims != model.dims)
    throw ShapeError("input dims " + dims_to_string(dims) + " do not match model dims " + dims_to_string(model.dims));
}

struct GlobalFit {
  std::vector<TrrModel> per_output;  // rank R_e, one per output dim
  TrrModel gate_seed;                // rank R_g on output 0
  Eigen::MatrixXd residual_cov;
  double cov_floor = 0.0;
};

double covariance_floor(const Eigen::MatrixXd& y) {
  double var = 0.0;
  for (Eigen::Index d = 0; d < y.cols(); ++d) {
    const double mean = y.col(d).mean();
    var = std::max(var, (y.col(d).array() - mean).square().mean());
  }
  return std::max(1e-6 * var, 1e-12);
}

GlobalFit global_fit(const RegressionDataset& data, std::size_t components, std::size_t gate_rank,
                     std::size_t expert_rank, double reg_weights, const TmeOptions& opts) {
  GlobalFit g;
  TrrOptions to;
  to.tol = opts.trr_tol;
  to.max_sweeps = opts.init_trr_sweeps;
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd resid(n, static_cast<Eigen::Index>(data.outputs()));
  for (std::size_t d = 0; d < data.outputs(); ++d) {
    to.seed = opts.seed + d;
    const RegressionDataset one = data.select_output(d, std::nullopt);
    g.per_output.push_back(trr_fit(one, expert_rank, reg_weights, to));
    resid.col(static_cast<Eigen::Index>(d)) = one.targets.col(0) - trr_predict(g.per_output.back(), data.inputs);
  }
  if (components > 1) {
    if (gate_rank == expert_rank) {
      g.gate_seed = g.per_output.front();
    } else {
      to.seed = opts.seed + data.outputs();
      g.gate_seed = trr_fit(data.select_output(0, std::nullopt), gate_rank, reg_weights, to);
    }
  }
  g.cov_floor = covariance_floor(data.targets);
  g.residual_cov = resid.transpose() * resid / static_cast<double>(n);
  g.residual_cov.diagonal().array() += g.cov_floor;
  return g;
}

CPFactors perturb(const CPFactors& w, double relative, std::mt19937_64& rng) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& f : w.factors()) {
    double rms = std::sqrt(f.squaredNorm() / static_cast<double>(f.size()));
    if (rms == 0.0) rms = 1.0 / std::sqrt(static_cast<double>(f.size()));
    std::normal_distribution<double> normal(0.0, relative * rms);
    Eigen::MatrixXd p = f;
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      for (Eigen::Index i = 0; i < p.rows(); ++i) p(i, j) += normal(rng);
    out.push_back(std::move(p));
  }
  return CPFactors(std::move(out));
}

TmeModel build_initial(const GlobalFit& g, const RegressionDataset& data, std::size_t components,
                       std::size_t gate_rank, std::size_t expert_rank, double reg_weights, double reg_gate,
                       const TmeOptions& opts, int attempt) {
  TmeModel m;
  m.dims = data.dims();
  m.outputs = data.outputs();
  m.gate_rank = gate_rank;
  m.expert_rank = expert_rank;
  m.reg_weights = reg_weights;
  m.reg_gate = reg_gate;
  m.cov_floor = g.cov_floor;

  if (components > 1) {
    m.gate.weights.assign(components, g.gate_seed.weights);
    m.gate.biases = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(components));
  } else {
    m.gate = TlrModel::zeros(m.dims, 1, gate_rank);
  }
  m.gate.reg = reg_gate;

  for (std::size_t i = 0; i < components; ++i) {
    Expert e;
    e.bias.resize(static_cast<Eigen::Index>(m.outputs));
    std::seed_seq seq{opts.seed, static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(seq);
    for (std::size_t d = 0; d < m.outputs; ++d) {
      const TrrModel& t = g.per_output[d];
      e.weights.push_back(components > 1 ? perturb(t.weights, opts.perturbation, rng) : t.weights);
      e.bias(static_cast<Eigen::Index>(d)) = t.bias;
    }
    e.cov = g.residual_cov;
    m.experts.push_back(std::move(e));
  }
  return m;
}

void validate_fit_args(const RegressionDataset& data, std::size_t components, std::size_t gate_rank,
                       std::size_t expert_rank, double reg_weights, double reg_gate) {
  if (components < 1) throw ArgumentError("mixture needs at least one component");
  if (data.size() < components) throw ArgumentError("mixture fit needs at least as many samples as components");
  if (gate_rank < 1 || expert_rank < 1) throw ArgumentError("mixture ranks must be positive");
  if (!(reg_weights >= 0.0) || !(reg_gate >= 0.0) || !std::isfinite(reg_weights) || !std::isfinite(reg_gate))
    throw ArgumentError("mixture regularization must be finite and >= 0");
}

}  // namespace

void validate_model(const TmeModel& model) {
  if (model.experts.empty()) throw ModelIntegrityError("mixture has no experts");
  const auto d = static_cast<Eigen::Index>(model.outputs);
  if (model.components() > 1 && model.gate.classes() != model.components())
    throw ModelIntegrityError("gate class count does not match expert count");
  for (std::size_t i = 0; i < model.components(); ++i) {
    const Expert& e = model.experts[i];
    if (e.weights.size() != model.outputs || e.bias.size() != d || e.cov.rows() != d || e.cov.cols() != d)
      throw ModelIntegrityError("expert " + std::to_string(i) + " does not match the output dimension");
    for (const auto& w : e.weights) check_compatible(model.dims, w, "expert weights");
    factor_covariance(e.cov, i);
  }
}

Eigen::MatrixXd expert_means(const TmeModel& model, std::size_t i, const TensorBatch& x) {
  if (i >= model.components()) throw ArgumentError("expert index out of range");
  check_inputs(model, x.dims());
  const Expert& e = model.experts[i];
  Eigen::MatrixXd out(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(model.outputs));
  for (std::size_t d = 0; d < model.outputs; ++d) {
    const auto c = static_cast<Eigen::Index>(d);
    out.col(c) = batch_inner(x, e.weights[d]);
    out.col(c).array() += e.bias(c);
  }
  return out;
}

Eigen::VectorXd expert_mean(const TmeModel& model, std::size_t i, const DenseTensor& x) {
  if (i >= model.components()) throw ArgumentError("expert index out of range");
  check_inputs(model, x.dims());
  const Expert& e = model.experts[i];
  Eigen::VectorXd out(static_cast<Eigen::Index>(model.outputs));
  for (std::size_t d = 0; d < model.outputs; ++d)
    out(static_cast<Eigen::Index>(d)) = cp_inner(x, e.weights[d]) + e.bias(static_cast<Eigen::Index>(d));
  return out;
}

Eigen::MatrixXd gate_posterior(const TmeModel& model, const TensorBatch& x) {
  check_inputs(model, x.dims());
  if (model.components() == 1) return Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(x.size()), 1);
  return tlr_posterior(model.gate, x);
}

Eigen::VectorXd gate_posterior(const TmeModel& model, const DenseTensor& x) {
  check_inputs(model, x.dims());
  if (model.components() == 1) return Eigen::VectorXd::Ones(1);
  return tlr_posterior(model.gate, x);
}

double tme_log_density(const TmeModel& model, const DenseTensor& x, const Eigen::VectorXd& y) {
  check_inputs(model, x.dims());
  if (static_cast<std::size_t>(y.size()) != model.outputs)
    throw ShapeError("output has length " + std::to_string(y.size()) + ", model expects " +
                     std::to_string(model.outputs));
  const Eigen::VectorXd gate = gate_posterior(model, x);
  Eigen::RowVectorXd terms(static_cast<Eigen::Index>(model.components()));
  for (std::size_t i = 0; i < model.components(); ++i) {
    const GaussianFactor g = factor_covariance(model.experts[i].cov, i);
    const Eigen::MatrixXd mean = expert_mean(model, i, x).transpose();
    const auto c = static_cast<Eigen::Index>(i);
    terms(c) = std::log(gate(c)) + gaussian_log_pdf(y.transpose(), mean, g)(0);
  }
  return log_sum_exp(terms);
}

double tme_density(const TmeModel& model, const DenseTensor& x, const Eigen::VectorXd& y) {
  return std::exp(tme_log_density(model, x, y));
}

Eigen::VectorXd tme_predict(const TmeModel& model, const DenseTensor& x) {
  const Eigen::VectorXd gate = gate_posterior(model, x);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.outputs));
  for (std::size_t i = 0; i < model.components(); ++i) y += gate(static_cast<Eigen::Index>(i)) * expert_mean(model, i, x);
  return y;
}

Eigen::MatrixXd tme_predict(const TmeModel& model, const TensorBatch& x) {
  const Eigen::MatrixXd gate = gate_posterior(model, x);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(model.outputs));
  for (std::size_t i = 0; i < model.components(); ++i)
    y += gate.col(static_cast<Eigen::Index>(i)).asDiagonal() * expert_means(model, i, x);
  return y;
}

EStepResult e_step(const TmeModel& model, const RegressionDataset& data) {
  check_inputs(model, data.dims());
  if (data.outputs() != model.outputs) throw ShapeError("dataset output dimension does not match the model");
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto c = static_cast<Eigen::Index>(model.components());

  Eigen::MatrixXd log_rho = log_gate(model, data.inputs);
  for (Eigen::Index i = 0; i < c; ++i) {
    const GaussianFactor g = factor_covariance(model.experts[static_cast<std::size_t>(i)].cov, static_cast<std::size_t>(i));
    log_rho.col(i) += gaussian_log_pdf(data.targets, expert_means(model, static_cast<std::size_t>(i), data.inputs), g);
  }

  EStepResult out;
  out.resp.resize(n, c);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double lse = log_sum_exp(log_rho.row(s));
    if (!std::isfinite(lse))
      throw NumericalError("every component density underflowed for sample " + std::to_string(s));
    out.resp.row(s) = (log_rho.row(s).array() - lse).exp();
    out.loglik += lse;
    for (Eigen::Index i = 0; i < c; ++i)
      if (out.resp(s, i) > 0.0) out.expected_complete_loglik += out.resp(s, i) * log_rho(s, i);
  }
  return out;
}

double responsibility_floor(std::size_t samples, std::size_t outputs) {
  return std::max(static_cast<double>(outputs + 1), 0.001 * static_cast<double>(samples));
}

MStepResult m_step(const TmeModel& model, const RegressionDataset& data, const Eigen::MatrixXd& resp,
                   const TmeOptions& opts) {
  check_inputs(model, data.dims());
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto c = static_cast<Eigen::Index>(model.components());
  if (resp.rows() != n || resp.cols() != c) throw ShapeError("responsibility matrix has the wrong shape");
  if (!resp.allFinite() || (resp.array() < 0.0).any() ||
      ((resp.rowwise().sum().array() - 1.0).abs() > kRespRowTol).any())
    throw DataError("responsibilities must be nonnegative with rows summing to one");

  MStepResult out{model, {}};
  TmeModel& m = out.model;
  const double floor = responsibility_floor(data.size(), data.outputs());
  TrrOptions to;
  to.tol = opts.trr_tol;
  to.max_sweeps = opts.trr_sweeps;
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m.outputs),
                                                             static_cast<Eigen::Index>(m.outputs));

  for (Eigen::Index i = 0; i < c; ++i) {
    Expert& e = m.experts[static_cast<std::size_t>(i)];
    const Eigen::VectorXd r = resp.col(i);
    const double mass = r.sum();
    if (mass < floor) {
      out.degenerate.push_back(static_cast<std::size_t>(i));
      const Eigen::VectorXd diag = e.cov.diagonal();
      if ((diag.array() < m.cov_floor).any()) e.cov += m.cov_floor * identity;
      continue;
    }
    for (std::size_t d = 0; d < m.outputs; ++d) {
      TrrModel warm;
      warm.weights = e.weights[d];
      warm.bias = e.bias(static_cast<Eigen::Index>(d));
      const TrrModel fit = trr_fit(data.select_output(d, r), m.expert_rank, m.reg_weights, to, &warm);
      e.weights[d] = fit.weights;
      e.bias(static_cast<Eigen::Index>(d)) = fit.bias;
    }
    const Eigen::MatrixXd resid = data.targets - expert_means(m, static_cast<std::size_t>(i), data.inputs);
    Eigen::MatrixXd cov = resid.transpose() * r.asDiagonal() * resid / mass;
    cov = 0.5 * (cov + cov.transpose());
    cov += m.cov_floor * identity;
    e.cov = std::move(cov);
  }

  if (c > 1) {
    TlrOptions go;
    go.gtol = opts.gate_gtol;
    go.max_iters = opts.gate_iters;
    go.lbfgs_history = opts.lbfgs_history;
    const TlrModel warm = m.gate;
    m.gate = tlr_fit(data.inputs, SoftLabels(resp), m.gate_rank, m.reg_gate, go, &warm);
  }
  return out;
}

TmeModel tme_initialize(const RegressionDataset& data, std::size_t components, std::size_t gate_rank,
                        std::size_t expert_rank, double reg_weights, double reg_gate, const TmeOptions& opts,
                        int attempt) {
  validate_fit_args(data, components, gate_rank, expert_rank, reg_weights, reg_gate);
  const GlobalFit g = global_fit(data, components, gate_rank, expert_rank, reg_weights, opts);
  return build_initial(g, data, components, gate_rank, expert_rank, reg_weights, reg_gate, opts, attempt);
}

TmeModel tme_run_em(TmeModel model, const RegressionDataset& data, const TmeOptions& opts) {
  validate_model(model);
  model.report = TmeReport{};
  for (int iter = 0;; ++iter) {
    const EStepResult es = e_step(model, data);
    auto& trace = model.report.loglik_trace;
    trace.push_back(es.loglik);
    if (iter > 0) {
      const double prev = trace[trace.size() - 2];
      if (es.loglik - prev < opts.tol * std::abs(prev)) {
        model.report.converged = true;
        break;
      }
    }
    if (iter >= opts.max_em_iters) break;
    MStepResult ms = m_step(model, data, es.resp, opts);
    if (!ms.degenerate.empty())
      throw DegenerateComponentError("component " + std::to_string(ms.degenerate.front()) +
                                         " lost its responsibility mass",
                                     ms.degenerate.front());
    TmeReport report = std::move(model.report);
    model = std::move(ms.model);
    model.report = std::move(report);
    model.report.iterations = iter + 1;
  }
  return model;
}

TmeModel tme_fit(const RegressionDataset& data, std::size_t components, std::size_t gate_rank,
                 std::size_t expert_rank, double reg_weights, double reg_gate, const TmeOptions& opts) {
  validate_fit_args(data, components, gate_rank, expert_rank, reg_weights, reg_gate);
  const GlobalFit g = global_fit(data, components, gate_rank, expert_rank, reg_weights, opts);
  for (int attempt = 0;; ++attempt) {
    try {
      TmeModel m = tme_run_em(
          build_initial(g, data, components, gate_rank, expert_rank, reg_weights, reg_gate, opts, attempt), data, opts);
      m.report.restarts = attempt;
      return m;
    } catch (const DegenerateComponentError&) {
      if (attempt >= opts.max_restarts) throw;
    }
  }
}

std::size_t tme_parameter_count(const TmeModel& model) {
  std::size_t sum_dims = 0;
  for (auto d : model.dims) sum_dims += d;
  const std::size_t c = model.components();
  const std::size_t d = model.outputs;
  const std::size_t gate = c > 1 ? c * (model.gate_rank * sum_dims + 1) : 0;
  return gate + c * d * (model.expert_rank * sum_dims + 1) + c * d * (d + 1) / 2;
}

double bic(const TmeModel& model, const RegressionDataset& data) {
  const double loglik = e_step(model, data).loglik;
  return -2.0 * loglik + static_cast<double>(tme_parameter_count(model)) * std::log(static_cast<double>(data.size()));
}

}  // namespace tensorreg
