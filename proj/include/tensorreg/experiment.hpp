#pragma once

// Weight-recovery studies on the shape problem: the rank sweep (tensor
// mixtures at several rank pairs against the flattened vector baseline) and
// the sample-size / noise sweep. Cells are independent and may run on several
// threads; results are always assembled in grid order.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tensorreg/io.hpp"
#include "tensorreg/mixture.hpp"
#include "tensorreg/shapes.hpp"

namespace tensorreg {

using RankPair = std::pair<std::size_t, std::size_t>;  ///< (gate rank, expert rank)

struct ExperimentConfig {
  std::size_t size = 64;
  std::size_t samples = 1000;
  double noise_ratio = 0.1;
  double reg_weights = 0.1;
  double reg_gate = 0.1;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<RankPair> ranks{{2, 1}, {1, 2}, {2, 2}, {3, 3}};
  bool include_baseline = true;  ///< vector mixture on flattened inputs, ranks (1, 1)
  std::vector<std::size_t> sizes{250, 500, 1000, 2000};
  std::vector<double> noise_levels{0.01, 0.1, 0.5};
  RankPair sweep_rank{2, 2};
  TmeOptions fit;     ///< fit.seed is replaced by the run seed
  unsigned jobs = 1;  ///< worker threads

  static ExperimentConfig paper_defaults() { return {}; }
};

struct RunResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double rmse = 0.0;
  double bic = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  int restarts = 0;
  bool converged = false;
  /// E-steps whose log-likelihood fell by more than 1e-8 |L| from the previous one.
  int monotonicity_violations = 0;
};

struct CellResult {
  std::string label;  ///< "ME" or "TME(Rg,Re)"
  bool baseline = false;
  RankPair ranks{1, 1};
  std::size_t samples = 0;
  double noise_ratio = 0.0;
  std::vector<RunResult> runs;  ///< in seed order
  /// Model of the first successful run, kept for weight images.
  std::optional<TmeModel> example_model;

  std::size_t failures() const;
  double rmse_mean() const;
  double rmse_std() const;  ///< sample standard deviation over successful runs
  double bic_mean() const;
  double iterations_mean() const;
};

/// Progress messages (one per finished run); may be called from worker threads
/// but never concurrently.
using ProgressFn = std::function<void(const std::string&)>;

/// Number of log-likelihood decreases beyond the relative slack.
int count_loglik_decreases(const std::vector<double>& trace, double slack = 1e-8);

/// One fit on freshly generated shape data. Baseline runs flatten the inputs.
RunResult run_shape_fit(const ShapeDataConfig& data_config, const ExperimentConfig& config, RankPair ranks,
                        bool baseline, std::uint64_t seed, TmeModel* model_out = nullptr);

/// Baseline row first (when enabled), then config.ranks in order.
std::vector<CellResult> run_rank_sweep(const ExperimentConfig& config, const ProgressFn& progress = {});

/// Rows ordered by noise level, then sample size, all at config.sweep_rank.
std::vector<CellResult> run_size_noise_sweep(const ExperimentConfig& config, const ProgressFn& progress = {});

CsvTable results_table(const std::vector<CellResult>& cells);

/// RMSE against sample size, one line per noise level.
SvgPlot size_noise_plot(const std::vector<CellResult>& cells);

/// Writes <prefix><label>_{gate,expert1,expert2}.pgm for every cell with an
/// example model, aligned to the truth, plus the truth images themselves.
void write_recovered_images(const std::vector<CellResult>& cells, const ShapeTruth& truth,
                            const std::filesystem::path& prefix);

}  // namespace tensorreg
