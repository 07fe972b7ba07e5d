#pragma once

// Binary 2D shapes used as ground-truth weights, and the two-expert synthetic
// regression problem built from them.

#include <cstddef>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "tensorreg/batch.hpp"
#include "tensorreg/mixture.hpp"

namespace tensorreg {

enum class ShapeKind { cross, disk, tshape };

ShapeKind parse_shape_kind(const std::string& name);
std::string to_string(ShapeKind kind);

/// size x size 0/1 mask. Entry (i, j) sits at flat index i + size * j.
Eigen::MatrixXd make_shape(ShapeKind kind, std::size_t size = 64);

/// Gate weight V and the two expert weights W1, W2.
struct ShapeTruth {
  Eigen::MatrixXd gate;
  Eigen::MatrixXd expert1;
  Eigen::MatrixXd expert2;

  std::size_t size() const noexcept { return static_cast<std::size_t>(gate.rows()); }
  /// cross, disk, tshape.
  static ShapeTruth standard(std::size_t size = 64);
};

struct ShapeDataConfig {
  std::size_t size = 64;
  std::size_t samples = 1000;
  double noise_ratio = 0.1;  ///< noise std as a fraction of std(mean)
};

struct ShapeDataset {
  RegressionDataset data;  ///< size x size inputs, one output
  Eigen::VectorXd mean;    ///< noiseless targets
  ShapeTruth truth;
  double noise_std = 0.0;
};

/// Standard-normal inputs, half of them with <X, V> >= 0, targets
///   s(<X,V>) <X,W1> + (1 - s(<X,V>)) <X,W2> + noise,  s the logistic function.
ShapeDataset gen_shape_dataset(const ShapeDataConfig& config, std::uint64_t seed);
ShapeDataset gen_shape_dataset(const ShapeDataConfig& config, const ShapeTruth& truth, std::uint64_t seed);

/// Noiseless mean for one input.
double shape_mean(const ShapeTruth& truth, const Eigen::VectorXd& x);

/// Model weights aligned with the truth: gate difference V_1 - V_2 and the two
/// expert tensors, each reshaped to size x size, in whichever expert order
/// matches best.
struct RecoveredWeights {
  Eigen::MatrixXd gate;
  Eigen::MatrixXd expert1;
  Eigen::MatrixXd expert2;
  double rmse = 0.0;
};

/// Entrywise RMSE over (V, W1, W2), minimized over the expert permutation
/// (the swapped order negates the gate difference). Accepts models over
/// size x size inputs or flattened size^2 vectors.
double weight_rmse(const ShapeTruth& truth, const TmeModel& model);
RecoveredWeights recover_weights(const ShapeTruth& truth, const TmeModel& model);

}  // namespace tensorreg
