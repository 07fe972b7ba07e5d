#include "tensorreg/batch.hpp"

#include <cmath>
#include <mutex>

#include "tensorreg/error.hpp"

namespace tensorreg {

struct TensorBatch::GramCache {
  std::once_flag once;
  Eigen::MatrixXd value;
};

TensorBatch::TensorBatch(Dims dims, Eigen::MatrixXd columns)
    : dims_(std::move(dims)), gram_(std::make_shared<GramCache>()) {
  if (dims_.empty()) throw ShapeError("batch dims must have at least one mode");
  if (static_cast<std::size_t>(columns.rows()) != dims_product(dims_))
    throw ShapeError("batch rows " + std::to_string(columns.rows()) + " do not match dims " +
                     dims_to_string(dims_));
  if (!columns.allFinite()) throw DataError("input tensors contain non-finite values");
  data_ = std::make_shared<const Eigen::MatrixXd>(std::move(columns));
}

TensorBatch::TensorBatch(const std::vector<DenseTensor>& samples) : gram_(std::make_shared<GramCache>()) {
  if (samples.empty()) throw DataError("a batch needs at least one sample");
  dims_ = samples.front().dims();
  Eigen::MatrixXd cols(static_cast<Eigen::Index>(dims_product(dims_)),
                       static_cast<Eigen::Index>(samples.size()));
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (samples[n].dims() != dims_)
      throw ShapeError("sample " + std::to_string(n) + " has dims " + dims_to_string(samples[n].dims()) +
                       ", expected " + dims_to_string(dims_));
    cols.col(static_cast<Eigen::Index>(n)) = vectorize(samples[n]);
  }
  if (!cols.allFinite()) throw DataError("input tensors contain non-finite values");
  data_ = std::make_shared<const Eigen::MatrixXd>(std::move(cols));
}

DenseTensor TensorBatch::sample(std::size_t n) const {
  if (n >= size()) throw ArgumentError("sample index out of range");
  const auto col = data_->col(static_cast<Eigen::Index>(n));
  return DenseTensor(dims_, std::vector<double>(col.data(), col.data() + col.size()));
}

TensorBatch TensorBatch::reshaped(Dims dims) const {
  if (dims_product(dims) != sample_size())
    throw ShapeError("cannot reshape batch of dims " + dims_to_string(dims_) + " to " + dims_to_string(dims));
  TensorBatch out = *this;
  out.dims_ = std::move(dims);
  out.gram_ = gram_;  // same samples, same Gram matrix
  return out;
}

const Eigen::MatrixXd& TensorBatch::gram() const {
  if (!gram_) throw ArgumentError("gram of an empty batch");
  std::call_once(gram_->once, [this] {
    const auto n = data_->cols();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
    g.selfadjointView<Eigen::Lower>().rankUpdate(data_->transpose());
    g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
    gram_->value = std::move(g);
  });
  return gram_->value;
}

Eigen::VectorXd batch_inner(const TensorBatch& x, const CPFactors& w) {
  check_compatible(x.dims(), w, "batch_inner");
  const Eigen::VectorXd full = cp_reconstruct_vector(w);
  return x.columns().transpose() * full;
}

Eigen::VectorXd weighted_sum(const TensorBatch& x, const Eigen::VectorXd& coeffs) {
  if (static_cast<std::size_t>(coeffs.size()) != x.size())
    throw ShapeError("weighted_sum: coefficient count does not match batch size");
  return x.columns() * coeffs;
}

Eigen::MatrixXd design_matrix(const TensorBatch& x, const CPFactors& w, std::size_t mode) {
  const Dims& dims = x.dims();
  check_compatible(dims, w, "design_matrix");
  if (mode >= dims.size())
    throw ArgumentError("design_matrix: mode " + std::to_string(mode) + " out of range");

  const auto n_samples = static_cast<Eigen::Index>(x.size());
  const auto rank = static_cast<Eigen::Index>(w.rank());
  const auto rows = static_cast<Eigen::Index>(dims[mode]);

  // Lower-mode and upper-mode Khatri-Rao chains; U^(-m) = up (.) low.
  Eigen::MatrixXd low = Eigen::MatrixXd::Ones(1, rank);
  for (std::size_t m = 0; m < mode; ++m) low = khatri_rao(w.factor(m), low);
  Eigen::MatrixXd up = Eigen::MatrixXd::Ones(1, rank);
  for (std::size_t m = mode + 1; m < dims.size(); ++m) up = khatri_rao(w.factor(m), up);
  const Eigen::Index lower = low.rows();
  const Eigen::Index upper = up.rows();
  const Eigen::Index block = rows * upper;

  Eigen::MatrixXd phi(n_samples, rows * rank);
  const Eigen::MatrixXd& cols = x.columns();
  if (mode == 0) {
    for (Eigen::Index n = 0; n < n_samples; ++n) {
      Eigen::Map<const Eigen::MatrixXd> xm(cols.col(n).data(), rows, upper);
      Eigen::MatrixXd m = xm * up;
      phi.row(n) = Eigen::Map<const Eigen::RowVectorXd>(m.data(), m.size());
    }
    return phi;
  }
  // One product over the whole batch contracts the lower modes of every sample.
  Eigen::Map<const Eigen::MatrixXd> all(cols.data(), lower, block * n_samples);
  const Eigen::MatrixXd t = all.transpose() * low;  // (block * N) x R
  for (Eigen::Index r = 0; r < rank; ++r) {
    for (Eigen::Index n = 0; n < n_samples; ++n) {
      Eigen::Map<const Eigen::MatrixXd> tn(t.col(r).data() + n * block, rows, upper);
      phi.row(n).segment(r * rows, rows).noalias() = (tn * up.col(r)).transpose();
    }
  }
  return phi;
}

RegressionDataset::RegressionDataset(TensorBatch in, Eigen::MatrixXd y, std::optional<Eigen::VectorXd> w)
    : inputs(std::move(in)), targets(std::move(y)), sample_weights(std::move(w)) {
  if (inputs.size() < 1) throw DataError("dataset needs at least one sample");
  if (static_cast<std::size_t>(targets.rows()) != inputs.size())
    throw ShapeError("targets have " + std::to_string(targets.rows()) + " rows for " +
                     std::to_string(inputs.size()) + " inputs");
  if (targets.cols() < 1) throw ShapeError("targets need at least one column");
  if (!targets.allFinite()) throw DataError("targets contain non-finite values");
  if (sample_weights) {
    const auto& sw = *sample_weights;
    if (static_cast<std::size_t>(sw.size()) != inputs.size())
      throw ShapeError("sample weight count does not match sample count");
    if (!sw.allFinite() || (sw.array() < 0.0).any())
      throw DataError("sample weights must be finite and nonnegative");
    if (!(sw.sum() > 0.0)) throw DataError("sample weights must have a positive sum");
  }
}

Eigen::VectorXd RegressionDataset::weights() const {
  return sample_weights ? *sample_weights : Eigen::VectorXd::Ones(static_cast<Eigen::Index>(size()));
}

RegressionDataset RegressionDataset::select_output(std::size_t d, std::optional<Eigen::VectorXd> w) const {
  if (d >= outputs()) throw ArgumentError("output index out of range");
  return RegressionDataset(inputs, targets.col(static_cast<Eigen::Index>(d)), std::move(w));
}

}  // namespace tensorreg
