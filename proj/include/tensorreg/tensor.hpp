#pragma once

// Dense tensors and CP-structured weight tensors.
//
// Storage convention used throughout the library:
//   * flat storage is first-index-fastest: entry (i_0, ..., i_{M-1}) lives at
//     i_0 + I_0 * (i_1 + I_1 * (i_2 + ...)).
//   * the mode-m unfolding X_(m) is I_m x prod_{k!=m} I_k; its columns are
//     ordered with the remaining modes in increasing order, lower modes fastest.
//   * kron(a, b) has b's index fastest, so the chain
//     U^(-m) = U^(M-1) (.) ... (.) U^(m+1) (.) U^(m-1) (.) ... (.) U^(0)
//     matches the unfolding column order and X_(m) = U^(m) U^(-m)^T holds for
//     a CP tensor.
// Modes are 0-based in this API.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tensorreg {

using Dims = std::vector<std::size_t>;

std::size_t dims_product(const Dims& dims);
std::string dims_to_string(const Dims& dims);

/// Order-M real array, first index fastest.
class DenseTensor {
 public:
  DenseTensor() = default;
  /// Zero-filled tensor.
  explicit DenseTensor(Dims dims);
  DenseTensor(Dims dims, std::vector<double> data);

  /// Order-2 tensor from a matrix (row index is mode 0).
  static DenseTensor from_matrix(const Eigen::MatrixXd& m);
  /// Order-1 tensor from a vector.
  static DenseTensor from_vector(const Eigen::VectorXd& v);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t order() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }

  std::size_t flat_index(std::span<const std::size_t> index) const;
  double at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }
  double at(std::initializer_list<std::size_t> index) const {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
  }

  /// Copy of an order-2 tensor as a matrix.
  Eigen::MatrixXd to_matrix() const;

  /// Same data viewed with new dims (product must match).
  DenseTensor reshaped(Dims dims) const;

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

/// Rank-R CP representation: M factor matrices U^(m), each I_m x R.
class CPFactors {
 public:
  CPFactors() = default;
  explicit CPFactors(std::vector<Eigen::MatrixXd> factors);

  static CPFactors zeros(const Dims& dims, std::size_t rank);
  /// Entries i.i.d. normal(0, stddev_m) with stddev_m = 1/sqrt(I_m * R).
  static CPFactors random(const Dims& dims, std::size_t rank, std::mt19937_64& rng);

  std::size_t rank() const noexcept { return factors_.empty() ? 0 : factors_.front().cols(); }
  std::size_t order() const noexcept { return factors_.size(); }
  Dims dims() const;

  const Eigen::MatrixXd& factor(std::size_t mode) const { return factors_.at(mode); }
  const std::vector<Eigen::MatrixXd>& factors() const noexcept { return factors_; }
  /// Replaces one factor; shape must be unchanged.
  void set_factor(std::size_t mode, Eigen::MatrixXd value);

  /// Sum of squared Frobenius norms of all factors.
  double squared_norm() const;
  /// Number of free parameters, R * sum(I_m).
  std::size_t parameter_count() const;

 private:
  std::vector<Eigen::MatrixXd> factors_;
};

/// <X, Y>: sum of entrywise products in flat storage order.
double inner_product(const DenseTensor& x, const DenseTensor& y);

/// Mode-m unfolding, I_m x prod_{k!=m} I_k.
Eigen::MatrixXd matricize(const DenseTensor& x, std::size_t mode);

/// vec(X) in flat storage order.
Eigen::VectorXd vectorize(const DenseTensor& x);

/// Columnwise Kronecker product, (I*J) x K.
Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// U^(-m): Khatri-Rao product of all factors except `skip`, highest mode
/// first. For an order-1 tensor this is the 1 x R all-ones matrix.
Eigen::MatrixXd khatri_rao_chain(const CPFactors& w, std::size_t skip);

/// Full tensor sum_r u_r^(0) o ... o u_r^(M-1).
DenseTensor cp_reconstruct(const CPFactors& w);

/// Flat-order reconstruction without the DenseTensor wrapper.
Eigen::VectorXd cp_reconstruct_vector(const CPFactors& w);

/// X_(m) U^(-m) as an I_m x R matrix, computed without unfolding X.
Eigen::MatrixXd mttkrp(std::span<const double> x, const Dims& dims, const CPFactors& w,
                       std::size_t mode);
Eigen::MatrixXd mttkrp(const DenseTensor& x, const CPFactors& w, std::size_t mode);

/// <X, W> for a CP tensor W, via <X_(0) U^(-0), U^(0)>.
double cp_inner(const DenseTensor& x, const CPFactors& w);

/// vec(X_(m) U^(-m)), length I_m * R. Its dot product with vec(U^(m)) is cp_inner(X, W).
Eigen::VectorXd design_row(const DenseTensor& x, const CPFactors& w, std::size_t mode);

/// Throws ShapeError when the factor dims differ from `dims`.
void check_compatible(const Dims& dims, const CPFactors& w, const char* context);

/// Column-major flattening of a factor matrix (vec(U)).
inline Eigen::Map<const Eigen::VectorXd> vec_view(const Eigen::MatrixXd& m) {
  return {m.data(), m.size()};
}

}  // namespace tensorreg
