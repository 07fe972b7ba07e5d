#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "tensorreg/batch.hpp"
#include "tensorreg/tensor.hpp"

namespace testutil {

using tensorreg::CPFactors;
using tensorreg::DenseTensor;
using tensorreg::Dims;

inline DenseTensor random_tensor(const Dims& dims, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(tensorreg::dims_product(dims));
  for (auto& x : v) x = nd(rng);
  return DenseTensor(dims, std::move(v));
}

inline Dims random_dims(std::mt19937_64& rng, std::size_t order) {
  std::uniform_int_distribution<std::size_t> side(1, 5);
  Dims d(order);
  for (auto& v : d) v = side(rng);
  return d;
}

inline CPFactors random_factors(const Dims& dims, std::size_t rank, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<Eigen::MatrixXd> f;
  for (auto d : dims) {
    Eigen::MatrixXd m(d, rank);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
    f.push_back(m);
  }
  return CPFactors(std::move(f));
}

inline tensorreg::TensorBatch random_batch(const Dims& dims, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd cols(tensorreg::dims_product(dims), n);
  for (Eigen::Index k = 0; k < cols.size(); ++k) cols.data()[k] = nd(rng);
  return {dims, cols};
}

// Every index tuple of `dims`, first index fastest, built by counting rather
// than by the library's flat_index arithmetic.
inline std::vector<std::vector<std::size_t>> all_indices(const Dims& dims) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> idx(dims.size(), 0);
  while (true) {
    out.push_back(idx);
    std::size_t k = 0;
    while (k < dims.size() && ++idx[k] == dims[k]) idx[k++] = 0;
    if (k == dims.size()) break;
  }
  return out;
}

// Entry of a CP tensor from the outer-product definition.
inline double cp_entry(const CPFactors& w, const std::vector<std::size_t>& idx) {
  double s = 0.0;
  for (std::size_t r = 0; r < w.rank(); ++r) {
    double p = 1.0;
    for (std::size_t m = 0; m < idx.size(); ++m) p *= w.factor(m)(idx[m], r);
    s += p;
  }
  return s;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace testutil
