#include "tensorreg/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <iterator>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

#include "tensorreg/error.hpp"

namespace tensorreg {

namespace {

std::string cell_label(bool baseline, RankPair r) {
  if (baseline) return "ME";
  return "TME(" + std::to_string(r.first) + "," + std::to_string(r.second) + ")";
}

std::string file_label(const CellResult& c) {
  std::string s = c.baseline ? "me" : "tme_" + std::to_string(c.ranks.first) + "_" + std::to_string(c.ranks.second);
  if (c.samples) {
    std::ostringstream o;
    o << "_n" << c.samples << "_noise" << format_double(c.noise_ratio);
    s += o.str();
  }
  return s;
}

template <typename F>
double mean_over_ok(const std::vector<RunResult>& runs, F field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs)
    if (r.ok) sum += field(r), ++n;
  return n ? sum / static_cast<double>(n) : std::nan("");
}

struct Task {
  std::size_t cell;
  std::size_t seed_index;
};

// Runs every (cell, seed) pair; each result lands in its own slot so the
// assembled output does not depend on scheduling.
void run_cells(std::vector<CellResult>& cells, const ExperimentConfig& config, const ProgressFn& progress) {
  if (config.seeds.empty()) throw ArgumentError("experiment needs at least one seed");
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    cells[c].runs.assign(config.seeds.size(), RunResult{});
    for (std::size_t s = 0; s < config.seeds.size(); ++s) tasks.push_back({c, s});
  }
  std::vector<std::optional<TmeModel>> models(tasks.size());

  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      CellResult& cell = cells[tasks[t].cell];
      const std::uint64_t seed = config.seeds[tasks[t].seed_index];
      ShapeDataConfig dc{config.size, cell.samples, cell.noise_ratio};
      TmeModel model;
      RunResult r = run_shape_fit(dc, config, cell.ranks, cell.baseline, seed, &model);
      if (r.ok) models[t] = std::move(model);
      if (progress) {
        std::ostringstream msg;
        msg << cell.label << " n=" << cell.samples << " noise=" << cell.noise_ratio << " seed=" << seed << ": ";
        if (r.ok)
          msg << "rmse " << r.rmse << ", bic " << r.bic << ", " << r.iterations << " iterations";
        else
          msg << "failed: " << r.error;
        std::lock_guard lock(progress_mutex);
        progress(msg.str());
      }
      cell.runs[tasks[t].seed_index] = std::move(r);
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    CellResult& cell = cells[tasks[t].cell];
    if (!cell.example_model && models[t]) cell.example_model = std::move(models[t]);
  }
}

}  // namespace

std::size_t CellResult::failures() const {
  std::size_t n = 0;
  for (const auto& r : runs) n += r.ok ? 0 : 1;
  return n;
}

double CellResult::rmse_mean() const {
  return mean_over_ok(runs, [](const RunResult& r) { return r.rmse; });
}

double CellResult::rmse_std() const {
  const double mean = rmse_mean();
  double ss = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs)
    if (r.ok) ss += (r.rmse - mean) * (r.rmse - mean), ++n;
  return n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
}

double CellResult::bic_mean() const {
  return mean_over_ok(runs, [](const RunResult& r) { return r.bic; });
}

double CellResult::iterations_mean() const {
  return mean_over_ok(runs, [](const RunResult& r) { return static_cast<double>(r.iterations); });
}

int count_loglik_decreases(const std::vector<double>& trace, double slack) {
  int n = 0;
  for (std::size_t t = 1; t < trace.size(); ++t)
    if (trace[t] < trace[t - 1] - slack * std::abs(trace[t - 1])) ++n;
  return n;
}

RunResult run_shape_fit(const ShapeDataConfig& data_config, const ExperimentConfig& config, RankPair ranks,
                        bool baseline, std::uint64_t seed, TmeModel* model_out) {
  RunResult r;
  r.seed = seed;
  try {
    const ShapeDataset ds = gen_shape_dataset(data_config, seed);
    const RegressionDataset data =
        baseline ? RegressionDataset(ds.data.inputs.reshaped({ds.data.inputs.sample_size()}), ds.data.targets)
                 : ds.data;
    const RankPair used = baseline ? RankPair{1, 1} : ranks;
    TmeOptions opts = config.fit;
    opts.seed = seed;
    TmeModel m = tme_fit(data, 2, used.first, used.second, config.reg_weights, config.reg_gate, opts);
    r.rmse = weight_rmse(ds.truth, m);
    const EStepResult es = e_step(m, data);
    r.loglik = es.loglik;
    r.bic = -2.0 * es.loglik +
            static_cast<double>(tme_parameter_count(m)) * std::log(static_cast<double>(data.size()));
    r.iterations = m.report.iterations;
    r.restarts = m.report.restarts;
    r.converged = m.report.converged;
    r.monotonicity_violations = count_loglik_decreases(m.report.loglik_trace);
    r.ok = true;
    if (model_out) *model_out = std::move(m);
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

std::vector<CellResult> run_rank_sweep(const ExperimentConfig& config, const ProgressFn& progress) {
  std::vector<CellResult> cells;
  auto add = [&](bool baseline, RankPair r) {
    CellResult c;
    c.baseline = baseline;
    c.ranks = baseline ? RankPair{1, 1} : r;
    c.label = cell_label(baseline, r);
    c.samples = config.samples;
    c.noise_ratio = config.noise_ratio;
    cells.push_back(std::move(c));
  };
  if (config.include_baseline) add(true, {1, 1});
  for (const auto& r : config.ranks) {
    if (r.first < 1 || r.second < 1) throw ArgumentError("ranks must be positive");
    add(false, r);
  }
  if (cells.empty()) throw ArgumentError("rank sweep has no cells");
  run_cells(cells, config, progress);
  return cells;
}

std::vector<CellResult> run_size_noise_sweep(const ExperimentConfig& config, const ProgressFn& progress) {
  if (config.sizes.empty() || config.noise_levels.empty()) throw ArgumentError("size/noise grid is empty");
  std::vector<CellResult> cells;
  for (double noise : config.noise_levels) {
    for (std::size_t n : config.sizes) {
      if (n < 2) throw ArgumentError("sample sizes must be at least 2");
      CellResult c;
      c.ranks = config.sweep_rank;
      c.label = cell_label(false, c.ranks);
      c.samples = n;
      c.noise_ratio = noise;
      cells.push_back(std::move(c));
    }
  }
  run_cells(cells, config, progress);
  return cells;
}

CsvTable results_table(const std::vector<CellResult>& cells) {
  CsvTable t;
  t.header = {"model",     "gate_rank", "expert_rank", "n",       "noise",        "seeds",       "failures",
              "rmse_mean", "rmse_std",  "bic_mean",    "iters_mean", "restarts", "loglik_decreases",
              "rmse_per_seed"};
  for (const auto& c : cells) {
    int restarts = 0, decreases = 0;
    std::string per_seed;
    for (const auto& r : c.runs) {
      restarts += r.restarts;
      decreases += r.monotonicity_violations;
      per_seed += (per_seed.empty() ? "" : ";") + (r.ok ? format_double(r.rmse) : std::string("nan"));
    }
    t.rows.push_back({c.label, std::to_string(c.ranks.first), std::to_string(c.ranks.second),
                      std::to_string(c.samples), format_double(c.noise_ratio), std::to_string(c.runs.size()),
                      std::to_string(c.failures()), format_double(c.rmse_mean()), format_double(c.rmse_std()),
                      format_double(c.bic_mean()), format_double(c.iterations_mean()), std::to_string(restarts),
                      std::to_string(decreases), per_seed});
  }
  return t;
}

SvgPlot size_noise_plot(const std::vector<CellResult>& cells) {
  SvgPlot plot;
  plot.title = "Weight RMSE against sample size";
  plot.x_label = "sample size N";
  plot.y_label = "weight RMSE";
  plot.log_x = true;
  for (const auto& c : cells) {
    std::ostringstream label;
    label << "noise " << format_double(100.0 * c.noise_ratio) << "%";
    auto it = std::find_if(plot.series.begin(), plot.series.end(),
                           [&](const SvgSeries& s) { return s.label == label.str(); });
    if (it == plot.series.end()) {
      plot.series.push_back({label.str(), {}, {}});
      it = std::prev(plot.series.end());
    }
    it->x.push_back(static_cast<double>(c.samples));
    it->y.push_back(c.rmse_mean());
  }
  return plot;
}

void write_recovered_images(const std::vector<CellResult>& cells, const ShapeTruth& truth,
                            const std::filesystem::path& prefix) {
  const std::string p = prefix.string();
  write_weight_image(truth.gate, p + "truth_gate.pgm");
  write_weight_image(truth.expert1, p + "truth_expert1.pgm");
  write_weight_image(truth.expert2, p + "truth_expert2.pgm");
  for (const auto& c : cells) {
    if (!c.example_model) continue;
    const RecoveredWeights w = recover_weights(truth, *c.example_model);
    const std::string base = p + file_label(c);
    write_weight_image(w.gate, base + "_gate.pgm");
    write_weight_image(w.expert1, base + "_expert1.pgm");
    write_weight_image(w.expert2, base + "_expert2.pgm");
  }
}

}  // namespace tensorreg
