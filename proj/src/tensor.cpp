#include "tensorreg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "tensorreg/error.hpp"

namespace tensorreg {

namespace {

void validate_dims(const Dims& dims) {
  if (dims.empty()) throw ShapeError("tensor must have at least one mode");
  for (auto d : dims)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims));
}

// U^(hi-1) (.) ... (.) U^(lo); the 1 x R ones matrix when the range is empty.
Eigen::MatrixXd partial_chain(const CPFactors& w, std::size_t lo, std::size_t hi) {
  const auto rank = static_cast<Eigen::Index>(w.rank());
  if (lo >= hi) return Eigen::MatrixXd::Ones(1, rank);
  Eigen::MatrixXd out = w.factor(lo);
  for (std::size_t m = lo + 1; m < hi; ++m) out = khatri_rao(w.factor(m), out);
  return out;
}

}  // namespace

std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ')';
  return os.str();
}

DenseTensor::DenseTensor(Dims dims) : dims_(std::move(dims)) {
  validate_dims(dims_);
  data_.assign(dims_product(dims_), 0.0);
}

DenseTensor::DenseTensor(Dims dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  validate_dims(dims_);
  if (data_.size() != dims_product(dims_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match dims " + dims_to_string(dims_));
}

DenseTensor DenseTensor::from_matrix(const Eigen::MatrixXd& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return DenseTensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                     std::move(data));
}

DenseTensor DenseTensor::from_vector(const Eigen::VectorXd& v) {
  return DenseTensor({static_cast<std::size_t>(v.size())},
                     std::vector<double>(v.data(), v.data() + v.size()));
}

std::size_t DenseTensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != dims_.size())
    throw ArgumentError("index has " + std::to_string(index.size()) + " entries, tensor has order " +
                        std::to_string(dims_.size()));
  std::size_t flat = 0;
  for (std::size_t k = dims_.size(); k-- > 0;) {
    if (index[k] >= dims_[k]) throw ArgumentError("index out of range in mode " + std::to_string(k));
    flat = flat * dims_[k] + index[k];
  }
  return flat;
}

Eigen::MatrixXd DenseTensor::to_matrix() const {
  if (order() != 2) throw ShapeError("to_matrix needs an order-2 tensor, got " + dims_to_string(dims_));
  return Eigen::Map<const Eigen::MatrixXd>(data_.data(), dims_[0], dims_[1]);
}

DenseTensor DenseTensor::reshaped(Dims dims) const {
  return DenseTensor(std::move(dims), data_);
}

CPFactors::CPFactors(std::vector<Eigen::MatrixXd> factors) : factors_(std::move(factors)) {
  if (factors_.empty()) throw ShapeError("CP factors need at least one mode");
  const auto rank = factors_.front().cols();
  if (rank < 1) throw ShapeError("CP rank must be positive");
  for (const auto& f : factors_) {
    if (f.cols() != rank) throw ShapeError("all CP factor matrices must share the column count");
    if (f.rows() < 1) throw ShapeError("CP factor matrices need at least one row");
  }
}

CPFactors CPFactors::zeros(const Dims& dims, std::size_t rank) {
  validate_dims(dims);
  std::vector<Eigen::MatrixXd> f;
  f.reserve(dims.size());
  for (auto d : dims) f.push_back(Eigen::MatrixXd::Zero(d, rank));
  return CPFactors(std::move(f));
}

CPFactors CPFactors::random(const Dims& dims, std::size_t rank, std::mt19937_64& rng) {
  validate_dims(dims);
  std::vector<Eigen::MatrixXd> f;
  f.reserve(dims.size());
  for (auto d : dims) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d * rank)));
    Eigen::MatrixXd u(d, rank);
    for (Eigen::Index j = 0; j < u.cols(); ++j)
      for (Eigen::Index i = 0; i < u.rows(); ++i) u(i, j) = normal(rng);
    f.push_back(std::move(u));
  }
  return CPFactors(std::move(f));
}

Dims CPFactors::dims() const {
  Dims d;
  d.reserve(factors_.size());
  for (const auto& f : factors_) d.push_back(static_cast<std::size_t>(f.rows()));
  return d;
}

void CPFactors::set_factor(std::size_t mode, Eigen::MatrixXd value) {
  auto& f = factors_.at(mode);
  if (value.rows() != f.rows() || value.cols() != f.cols())
    throw ShapeError("replacement factor for mode " + std::to_string(mode) + " has the wrong shape");
  f = std::move(value);
}

double CPFactors::squared_norm() const {
  double s = 0.0;
  for (const auto& f : factors_) s += f.squaredNorm();
  return s;
}

std::size_t CPFactors::parameter_count() const {
  std::size_t s = 0;
  for (const auto& f : factors_) s += static_cast<std::size_t>(f.size());
  return s;
}

void check_compatible(const Dims& dims, const CPFactors& w, const char* context) {
  const Dims wd = w.dims();
  if (wd != dims)
    throw ShapeError(std::string(context) + ": input dims " + dims_to_string(dims) +
                     " do not match weight dims " + dims_to_string(wd));
}

double inner_product(const DenseTensor& x, const DenseTensor& y) {
  if (x.dims() != y.dims())
    throw ShapeError("inner_product: dims " + dims_to_string(x.dims()) + " and " +
                     dims_to_string(y.dims()) + " differ");
  const auto a = x.data();
  const auto b = y.data();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Eigen::MatrixXd matricize(const DenseTensor& x, std::size_t mode) {
  const auto& dims = x.dims();
  if (mode >= dims.size())
    throw ArgumentError("matricize: mode " + std::to_string(mode) + " out of range for order " +
                        std::to_string(dims.size()));
  std::size_t lower = 1;
  for (std::size_t k = 0; k < mode; ++k) lower *= dims[k];
  const std::size_t rows = dims[mode];
  const std::size_t upper = x.size() / (lower * rows);
  Eigen::MatrixXd out(rows, lower * upper);
  const auto d = x.data();
  // Flat index p + lower*(i + rows*q) maps to row i, column p + lower*q.
  for (std::size_t q = 0; q < upper; ++q)
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t p = 0; p < lower; ++p)
        out(i, p + lower * q) = d[p + lower * (i + rows * q)];
  return out;
}

Eigen::VectorXd vectorize(const DenseTensor& x) {
  const auto d = x.data();
  return Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
}

Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols())
    throw ShapeError("khatri_rao: column counts " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.cols()) + " differ");
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols());
  for (Eigen::Index k = 0; k < a.cols(); ++k)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out.col(k).segment(i * b.rows(), b.rows()) = a(i, k) * b.col(k);
  return out;
}

Eigen::MatrixXd khatri_rao_chain(const CPFactors& w, std::size_t skip) {
  const std::size_t order = w.order();
  if (skip >= order)
    throw ArgumentError("khatri_rao_chain: mode " + std::to_string(skip) + " out of range");
  return khatri_rao(partial_chain(w, skip + 1, order), partial_chain(w, 0, skip));
}

Eigen::VectorXd cp_reconstruct_vector(const CPFactors& w) {
  return partial_chain(w, 0, w.order()).rowwise().sum();
}

DenseTensor cp_reconstruct(const CPFactors& w) {
  const Eigen::VectorXd v = cp_reconstruct_vector(w);
  return DenseTensor(w.dims(), std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::MatrixXd mttkrp(std::span<const double> x, const Dims& dims, const CPFactors& w,
                       std::size_t mode) {
  check_compatible(dims, w, "mttkrp");
  if (mode >= dims.size()) throw ArgumentError("mttkrp: mode " + std::to_string(mode) + " out of range");
  if (x.size() != dims_product(dims)) throw ShapeError("mttkrp: data length does not match dims");

  const auto rank = static_cast<Eigen::Index>(w.rank());
  const auto rows = static_cast<Eigen::Index>(dims[mode]);
  const Eigen::MatrixXd low = partial_chain(w, 0, mode);
  const Eigen::MatrixXd up = partial_chain(w, mode + 1, dims.size());
  const Eigen::Index lower = low.rows();
  const Eigen::Index upper = up.rows();

  Eigen::MatrixXd out(rows, rank);
  if (mode == 0) {
    Eigen::Map<const Eigen::MatrixXd> xm(x.data(), rows, upper);
    out.noalias() = xm * up;
  } else {
    // Contract the lower modes first: T(j, r) = sum_p x[p + lower*j] low(p, r).
    Eigen::Map<const Eigen::MatrixXd> xm(x.data(), lower, rows * upper);
    const Eigen::MatrixXd t = xm.transpose() * low;
    for (Eigen::Index r = 0; r < rank; ++r) {
      Eigen::Map<const Eigen::MatrixXd> tr(t.col(r).data(), rows, upper);
      out.col(r).noalias() = tr * up.col(r);
    }
  }
  return out;
}

Eigen::MatrixXd mttkrp(const DenseTensor& x, const CPFactors& w, std::size_t mode) {
  return mttkrp(x.data(), x.dims(), w, mode);
}

double cp_inner(const DenseTensor& x, const CPFactors& w) {
  const Eigen::MatrixXd m = mttkrp(x, w, 0);
  return m.cwiseProduct(w.factor(0)).sum();
}

Eigen::VectorXd design_row(const DenseTensor& x, const CPFactors& w, std::size_t mode) {
  const Eigen::MatrixXd m = mttkrp(x, w, mode);
  return vec_view(m);
}

}  // namespace tensorreg
