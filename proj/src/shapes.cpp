#include "tensorreg/shapes.hpp"

#include <cmath>
#include <random>

#include "tensorreg/error.hpp"

namespace tensorreg {

namespace {

double logistic(double s) {
  return s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

Eigen::MatrixXd as_square(const Eigen::VectorXd& v, std::size_t size) {
  const auto s = static_cast<Eigen::Index>(size);
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), s, s);
}

double sq_dist(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).squaredNorm(); }

}  // namespace

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "cross") return ShapeKind::cross;
  if (name == "disk") return ShapeKind::disk;
  if (name == "tshape") return ShapeKind::tshape;
  throw ArgumentError("unknown shape '" + name + "' (expected cross, disk or tshape)");
}

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::cross: return "cross";
    case ShapeKind::disk: return "disk";
    case ShapeKind::tshape: return "tshape";
  }
  return "unknown";
}

Eigen::MatrixXd make_shape(ShapeKind kind, std::size_t size) {
  if (size < 8) throw ArgumentError("shape size must be at least 8, got " + std::to_string(size));
  const auto s = static_cast<Eigen::Index>(size);
  const Eigen::Index eighth = s / 8;
  const Eigen::Index band_lo = s / 2 - eighth;
  const Eigen::Index band_hi = s / 2 + eighth;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(s, s);
  switch (kind) {
    case ShapeKind::cross:
      m.middleCols(band_lo, band_hi - band_lo).setOnes();
      m.middleRows(band_lo, band_hi - band_lo).setOnes();
      break;
    case ShapeKind::tshape: {
      const Eigen::Index top_lo = eighth;
      const Eigen::Index top_hi = eighth + s / 4;
      const Eigen::Index stem_end = 7 * s / 8;
      m.middleRows(top_lo, top_hi - top_lo).setOnes();
      m.block(top_hi, band_lo, stem_end - top_hi, band_hi - band_lo).setOnes();
      break;
    }
    case ShapeKind::disk: {
      const double c = (static_cast<double>(s) - 1.0) / 2.0;
      const double r = static_cast<double>(s) / 4.0;
      for (Eigen::Index j = 0; j < s; ++j)
        for (Eigen::Index i = 0; i < s; ++i) {
          const double di = static_cast<double>(i) - c;
          const double dj = static_cast<double>(j) - c;
          if (di * di + dj * dj <= r * r) m(i, j) = 1.0;
        }
      break;
    }
  }
  return m;
}

ShapeTruth ShapeTruth::standard(std::size_t size) {
  return {make_shape(ShapeKind::cross, size), make_shape(ShapeKind::disk, size), make_shape(ShapeKind::tshape, size)};
}

double shape_mean(const ShapeTruth& truth, const Eigen::VectorXd& x) {
  const auto n = truth.gate.size();
  if (x.size() != n) throw ShapeError("input length does not match the shape size");
  const double g = logistic(x.dot(truth.gate.reshaped()));
  return g * x.dot(truth.expert1.reshaped()) + (1.0 - g) * x.dot(truth.expert2.reshaped());
}

ShapeDataset gen_shape_dataset(const ShapeDataConfig& config, std::uint64_t seed) {
  return gen_shape_dataset(config, ShapeTruth::standard(config.size), seed);
}

ShapeDataset gen_shape_dataset(const ShapeDataConfig& config, const ShapeTruth& truth, std::uint64_t seed) {
  if (config.samples < 2) throw ArgumentError("shape dataset needs at least 2 samples");
  if (!(config.noise_ratio >= 0.0) || !std::isfinite(config.noise_ratio))
    throw ArgumentError("noise ratio must be finite and >= 0");
  if (truth.size() != config.size || truth.gate.cols() != truth.gate.rows())
    throw ShapeError("ground-truth shapes do not match the configured size");

  const auto n = static_cast<Eigen::Index>(config.samples);
  const auto p = truth.gate.size();
  const Eigen::Index want_pos = (n + 1) / 2;
  const Eigen::Index want_neg = n - want_pos;
  const Eigen::VectorXd v = truth.gate.reshaped();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(p, n);
  Eigen::VectorXd candidate(p);
  Eigen::Index pos = 0, neg = 0;
  // Rejection keeps the two gate classes equally sized.
  while (pos + neg < n) {
    for (Eigen::Index k = 0; k < p; ++k) candidate(k) = normal(rng);
    const bool positive = candidate.dot(v) >= 0.0;
    if (positive ? pos >= want_pos : neg >= want_neg) continue;
    x.col(pos + neg) = candidate;
    (positive ? pos : neg) += 1;
  }

  ShapeDataset out;
  out.truth = truth;
  out.mean.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) out.mean(k) = shape_mean(truth, x.col(k));
  const double centered = std::sqrt((out.mean.array() - out.mean.mean()).square().mean());
  out.noise_std = config.noise_ratio * centered;
  Eigen::MatrixXd y(n, 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index k = 0; k < n; ++k) y(k, 0) = out.mean(k) + out.noise_std * noise(rng);
  out.data = RegressionDataset(TensorBatch({config.size, config.size}, std::move(x)), std::move(y));
  return out;
}

RecoveredWeights recover_weights(const ShapeTruth& truth, const TmeModel& model) {
  const std::size_t size = truth.size();
  if (model.components() != 2 || model.outputs != 1)
    throw ArgumentError("weight recovery needs a two-expert, single-output mixture");
  if (dims_product(model.dims) != size * size)
    throw ArgumentError("model dims " + dims_to_string(model.dims) + " do not match " + std::to_string(size) + "x" +
                        std::to_string(size) + " shapes");

  const Eigen::MatrixXd gate =
      as_square(cp_reconstruct_vector(model.gate.weights[0]) - cp_reconstruct_vector(model.gate.weights[1]), size);
  const Eigen::MatrixXd e0 = as_square(cp_reconstruct_vector(model.experts[0].weights[0]), size);
  const Eigen::MatrixXd e1 = as_square(cp_reconstruct_vector(model.experts[1].weights[0]), size);

  const double total = 3.0 * static_cast<double>(size * size);
  const double direct = sq_dist(gate, truth.gate) + sq_dist(e0, truth.expert1) + sq_dist(e1, truth.expert2);
  const double swapped = sq_dist(-gate, truth.gate) + sq_dist(e1, truth.expert1) + sq_dist(e0, truth.expert2);
  if (direct <= swapped) return {gate, e0, e1, std::sqrt(direct / total)};
  return {-gate, e1, e0, std::sqrt(swapped / total)};
}

double weight_rmse(const ShapeTruth& truth, const TmeModel& model) { return recover_weights(truth, model).rmse; }

}  // namespace tensorreg
