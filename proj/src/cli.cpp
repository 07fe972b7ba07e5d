#include "tensorreg/cli.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "tensorreg/error.hpp"
#include "tensorreg/experiment.hpp"
#include "tensorreg/io.hpp"
#include "tensorreg/shapes.hpp"

namespace tensorreg {

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::optional<double> tol;
  unsigned jobs = 1;
  bool quiet = false;
};

RankPair parse_rank_pair(const std::string& s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto g = std::stoul(s.substr(0, comma), &used);
    if (used != comma) throw std::invalid_argument(s);
    const std::string rest = s.substr(comma + 1);
    const auto e = std::stoul(rest, &used);
    if (used != rest.size() || g == 0 || e == 0) throw std::invalid_argument(s);
    return {g, e};
  } catch (const std::logic_error&) {
    throw ArgumentError("rank pair must look like '2,1', got '" + s + "'");
  }
}

std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < count; ++k) seeds.push_back(first + k);
  return seeds;
}

ShapeTruth shape_config(const std::string& name, std::size_t size) {
  if (name == "default") return ShapeTruth::standard(size);
  // gate,expert1,expert2
  std::vector<std::string> parts;
  std::stringstream ss(name);
  for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
  if (parts.size() != 3)
    throw ArgumentError("shape config must be 'default' or three comma-separated shape names, got '" + name + "'");
  return {make_shape(parse_shape_kind(parts[0]), size), make_shape(parse_shape_kind(parts[1]), size),
          make_shape(parse_shape_kind(parts[2]), size)};
}

RegressionDataset flattened(const RegressionDataset& data) {
  return RegressionDataset(data.inputs.reshaped({data.inputs.sample_size()}), data.targets, data.sample_weights);
}

// Inputs reshaped to the model's dims when only the flattening differs.
TensorBatch inputs_for(const TensorBatch& x, const Dims& dims) {
  if (x.dims() == dims) return x;
  if (dims_product(dims) == x.sample_size()) return x.reshaped(dims);
  throw DataError("data dims " + dims_to_string(x.dims()) + " do not match model dims " + dims_to_string(dims));
}

std::size_t square_side(const Dims& dims) {
  const std::size_t p = dims_product(dims);
  const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p))));
  if (s * s != p) throw ArgumentError("model input size " + std::to_string(p) + " is not a square image");
  return s;
}

SoftLabels labels_from_targets(const Eigen::MatrixXd& y, std::optional<std::size_t> classes) {
  if (y.cols() >= 2) return SoftLabels(y);
  std::vector<std::size_t> labels;
  std::size_t top = 0;
  for (Eigen::Index n = 0; n < y.rows(); ++n) {
    const double v = y(n, 0);
    if (!(v >= 0.0) || v != std::floor(v)) throw DataError("class labels must be nonnegative integers");
    labels.push_back(static_cast<std::size_t>(v));
    top = std::max(top, labels.back());
  }
  return SoftLabels::from_classes(labels, classes ? *classes : top + 1);
}

void say(const Globals& g, std::ostream& out, const std::string& msg) {
  if (!g.quiet) out << msg << "\n";
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tensor-variate regression, classification and mixtures of experts"};
  app.name("tensorreg");
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--tol", g.tol, "Override the convergence tolerance of the fit");
  app.add_option("--jobs", g.jobs, "Worker threads for experiment sweeps")->capture_default_str()->check(
      CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  // gen-shapes
  auto* shapes_cmd = app.add_subcommand("gen-shapes", "Write the cross, disk and t-shape masks as PGM images");
  std::size_t shape_size = 64;
  std::string shape_prefix;
  shapes_cmd->add_option("--size", shape_size, "Image side length")->capture_default_str();
  shapes_cmd->add_option("--out", shape_prefix, "Output path prefix")->required();

  // gen-data
  auto* data_cmd = app.add_subcommand("gen-data", "Generate a two-expert shape regression dataset");
  std::string data_shapes = "default", data_out;
  ShapeDataConfig data_cfg;
  data_cmd->add_option("--shape-config", data_shapes, "'default' or gate,expert1,expert2 shape names")
      ->capture_default_str();
  data_cmd->add_option("--n", data_cfg.samples, "Sample count")->capture_default_str();
  data_cmd->add_option("--noise", data_cfg.noise_ratio, "Noise std as a fraction of std of the mean")
      ->capture_default_str();
  data_cmd->add_option("--size", data_cfg.size, "Image side length")->capture_default_str();
  data_cmd->add_option("--out", data_out, "Dataset file")->required();

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a dataset file");
  std::string fit_kind, fit_data, fit_out;
  std::size_t fit_rank = 2, fit_rg = 2, fit_re = 2, fit_components = 2, fit_output = 0;
  std::optional<std::size_t> fit_classes;
  double fit_reg = 0.1, fit_reg_w = 0.1, fit_reg_g = 0.1;
  std::optional<int> fit_max_iters;
  fit_cmd->add_option("--kind", fit_kind, "Model kind")
      ->required()
      ->check(CLI::IsMember({"trr", "tlr", "tme", "rr", "me"}));
  fit_cmd->add_option("--data", fit_data, "Dataset file")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit_out, "Model file")->required();
  auto* rank_opt = fit_cmd->add_option("--rank", fit_rank, "CP rank (trr, tlr)")->capture_default_str();
  auto* rg_opt = fit_cmd->add_option("--rg", fit_rg, "Gate rank (tme; me defaults to 1)")->capture_default_str();
  auto* re_opt = fit_cmd->add_option("--re", fit_re, "Expert rank (tme; me defaults to 1)")->capture_default_str();
  fit_cmd->add_option("--components", fit_components, "Number of experts (tme, me)")->capture_default_str();
  fit_cmd->add_option("--reg", fit_reg, "Regularization (trr, tlr)")->capture_default_str();
  fit_cmd->add_option("--reg-weights", fit_reg_w, "Expert regularization (tme, me)")->capture_default_str();
  fit_cmd->add_option("--reg-gate", fit_reg_g, "Gate regularization (tme, me)")->capture_default_str();
  fit_cmd->add_option("--output", fit_output, "Target column (trr, rr)")->capture_default_str();
  fit_cmd->add_option("--classes", fit_classes, "Class count for integer labels (tlr)");
  fit_cmd->add_option("--max-iters", fit_max_iters, "Sweep / iteration budget");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Predict a dataset with a saved model");
  std::string pred_model, pred_data, pred_out;
  predict_cmd->add_option("--model", pred_model, "Model file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--data", pred_data, "Dataset file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--out", pred_out, "Prediction CSV")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a saved model against the shape ground truth and/or data");
  std::string eval_model, eval_truth, eval_data, eval_report, eval_images;
  eval_cmd->add_option("--model", eval_model, "Model file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--truth", eval_truth, "Ground truth: 'shapes'")->check(CLI::IsMember({"shapes"}));
  eval_cmd->add_option("--data", eval_data, "Dataset for prediction RMSE and BIC")->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", eval_report, "Report CSV")->required();
  eval_cmd->add_option("--images", eval_images, "Prefix for recovered-weight PGM images");

  // experiments
  ExperimentConfig exp_cfg;
  std::size_t exp_seeds = exp_cfg.seeds.size();
  std::vector<std::string> exp_ranks;
  std::string exp_sweep_rank = "2,2";
  bool paper_defaults = false, no_baseline = false;
  double exp_reg = 0.1;
  std::string exp_out, exp_images, exp_plot;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_flag("--paper-defaults", paper_defaults,
                  "N=1000, noise 0.10, reg 0.1, 5 seeds and the published rank grid; explicit options override");
    cmd->add_option("--n", exp_cfg.samples, "Sample count")->capture_default_str();
    cmd->add_option("--noise", exp_cfg.noise_ratio, "Noise ratio")->capture_default_str();
    cmd->add_option("--size", exp_cfg.size, "Image side length")->capture_default_str();
    cmd->add_option("--seeds", exp_seeds, "Seeds per cell, counting up from --seed")->capture_default_str()->check(
        CLI::PositiveNumber);
    cmd->add_option("--reg", exp_reg, "Regularization of gate and experts")->capture_default_str();
    cmd->add_option("--max-em-iters", exp_cfg.fit.max_em_iters, "EM iteration cap")->capture_default_str();
  };
  auto* rank_cmd = app.add_subcommand("experiment-rank-sweep", "Weight recovery across rank pairs and the baseline");
  add_common(rank_cmd);
  rank_cmd->add_option("--ranks", exp_ranks, "Rank pairs 'Rg,Re' (default 2,1 1,2 2,2 3,3)");
  rank_cmd->add_flag("--no-baseline", no_baseline, "Skip the flattened vector mixture");
  rank_cmd->add_option("--out", exp_out, "Report CSV")->capture_default_str();
  rank_cmd->add_option("--images", exp_images, "Prefix for recovered-weight PGM images");

  auto* size_cmd = app.add_subcommand("experiment-size-noise", "Weight recovery across sample sizes and noise");
  add_common(size_cmd);
  size_cmd->add_option("--sizes", exp_cfg.sizes, "Sample sizes")->capture_default_str();
  size_cmd->add_option("--noises", exp_cfg.noise_levels, "Noise ratios")->capture_default_str();
  size_cmd->add_option("--rank", exp_sweep_rank, "Rank pair 'Rg,Re'")->capture_default_str();
  size_cmd->add_option("--out", exp_out, "Report CSV")->capture_default_str();
  size_cmd->add_option("--plot", exp_plot, "SVG line plot");
  size_cmd->add_option("--images", exp_images, "Prefix for recovered-weight PGM images");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      const CLI::App* shown = &app;
      for (const auto* sub : app.get_subcommands()) shown = sub;
      out << shown->help();
      return 0;
    }
    err << "error: " << e.what() << "\n\n";
    const CLI::App* shown = &app;
    for (const auto* sub : app.get_subcommands()) shown = sub;
    err << shown->help();
    return 1;
  }

  try {
    if (*shapes_cmd) {
      const std::pair<ShapeKind, const char*> kinds[] = {
          {ShapeKind::cross, "cross"}, {ShapeKind::disk, "disk"}, {ShapeKind::tshape, "tshape"}};
      for (const auto& [kind, name] : kinds) {
        const Eigen::MatrixXd m = make_shape(kind, shape_size);
        const std::string path = shape_prefix + name + ".pgm";
        write_weight_image(m, path);
        say(g, out, "wrote " + path + " (" + std::to_string(static_cast<long>(m.sum())) + " ones)");
      }
    } else if (*data_cmd) {
      const ShapeTruth truth = shape_config(data_shapes, data_cfg.size);
      const ShapeDataset ds = gen_shape_dataset(data_cfg, truth, g.seed);
      save_dataset(ds.data, data_out);
      say(g, out, "wrote " + data_out + " (" + std::to_string(ds.data.size()) + " samples, noise std " +
                      format_double(ds.noise_std) + ")");
    } else if (*fit_cmd) {
      RegressionDataset data = load_dataset(fit_data);
      const bool flat = fit_kind == "rr" || fit_kind == "me";
      if (flat) data = flattened(data);
      AnyModel model;
      if (fit_kind == "trr" || fit_kind == "rr") {
        if (fit_output >= data.outputs()) throw ArgumentError("--output is out of range for this dataset");
        TrrOptions o;
        o.seed = g.seed;
        if (g.tol) o.tol = *g.tol;
        if (fit_max_iters) o.max_sweeps = *fit_max_iters;
        model = trr_fit(data.select_output(fit_output, std::nullopt), fit_rank, fit_reg, o);
      } else if (fit_kind == "tlr") {
        TlrOptions o;
        o.seed = g.seed;
        if (g.tol) o.gtol = *g.tol;
        if (fit_max_iters) o.max_iters = *fit_max_iters;
        model = tlr_fit(data.inputs, labels_from_targets(data.targets, fit_classes), fit_rank, fit_reg, o);
      } else {
        TmeOptions o;
        o.seed = g.seed;
        if (g.tol) o.tol = *g.tol;
        if (fit_max_iters) o.max_em_iters = *fit_max_iters;
        const std::size_t rg = fit_kind == "me" && !rg_opt->count() ? 1 : fit_rg;
        const std::size_t re = fit_kind == "me" && !re_opt->count() ? 1 : fit_re;
        model = tme_fit(data, fit_components, rg, re, fit_reg_w, fit_reg_g, o);
      }
      (void)rank_opt;
      save_model(model, fit_out);
      say(g, out, "wrote " + fit_out + " (" + model_kind(model) + ", dims " + dims_to_string(model_dims(model)) + ")");
    } else if (*predict_cmd) {
      const AnyModel model = load_model(pred_model);
      const RegressionDataset data = load_dataset(pred_data);
      const TensorBatch x = inputs_for(data.inputs, model_dims(model));
      CsvTable table;
      Eigen::MatrixXd pred;
      if (const auto* m = std::get_if<TrrModel>(&model)) {
        pred = trr_predict(*m, x);
        table.header = {"y"};
      } else if (const auto* m = std::get_if<TlrModel>(&model)) {
        pred = tlr_posterior(*m, x);
        for (std::size_t c = 0; c < m->classes(); ++c) table.header.push_back("p" + std::to_string(c));
      } else {
        const auto& tm = std::get<TmeModel>(model);
        pred = tme_predict(tm, x);
        for (std::size_t d = 0; d < tm.outputs; ++d) table.header.push_back("y" + std::to_string(d));
      }
      for (Eigen::Index n = 0; n < pred.rows(); ++n) {
        std::vector<std::string> row;
        for (Eigen::Index c = 0; c < pred.cols(); ++c) row.push_back(format_double(pred(n, c)));
        table.rows.push_back(std::move(row));
      }
      write_report_csv(table, pred_out);
      say(g, out, "wrote " + pred_out + " (" + std::to_string(pred.rows()) + " predictions)");
    } else if (*eval_cmd) {
      if (eval_truth.empty() && eval_data.empty()) throw ArgumentError("eval needs --truth and/or --data");
      const AnyModel model = load_model(eval_model);
      CsvTable table;
      table.header = {"model", "kind", "dims", "weight_rmse", "prediction_rmse", "bic"};
      std::vector<std::string> row{eval_model, model_kind(model), dims_to_string(model_dims(model)), "", "", ""};
      if (!eval_truth.empty()) {
        const auto* tm = std::get_if<TmeModel>(&model);
        if (!tm) throw ArgumentError("weight recovery needs a tme model");
        const ShapeTruth truth = ShapeTruth::standard(square_side(tm->dims));
        const RecoveredWeights w = recover_weights(truth, *tm);
        row[3] = format_double(w.rmse);
        if (!eval_images.empty()) {
          write_weight_image(w.gate, eval_images + "gate.pgm");
          write_weight_image(w.expert1, eval_images + "expert1.pgm");
          write_weight_image(w.expert2, eval_images + "expert2.pgm");
        }
      }
      if (!eval_data.empty()) {
        const RegressionDataset raw = load_dataset(eval_data);
        const RegressionDataset data(inputs_for(raw.inputs, model_dims(model)), raw.targets);
        if (const auto* m = std::get_if<TrrModel>(&model)) {
          row[4] = format_double(
              std::sqrt((trr_predict(*m, data.inputs) - data.targets.col(0)).squaredNorm() / double(data.size())));
        } else if (const auto* m = std::get_if<TmeModel>(&model)) {
          row[4] = format_double(std::sqrt((tme_predict(*m, data.inputs) - data.targets).squaredNorm() /
                                           double(data.size() * data.outputs())));
          row[5] = format_double(bic(*m, data));
        } else {
          throw ArgumentError("prediction RMSE is not defined for a classifier");
        }
      }
      table.rows.push_back(std::move(row));
      write_report_csv(table, eval_report);
      say(g, out, format_csv(table));
      say(g, out, "wrote " + eval_report);
    } else if (*rank_cmd || *size_cmd) {
      (void)paper_defaults;  // the defaults already are the published settings
      exp_cfg.seeds = seed_list(g.seed, exp_seeds);
      exp_cfg.reg_weights = exp_cfg.reg_gate = exp_reg;
      exp_cfg.jobs = g.jobs;
      if (g.tol) exp_cfg.fit.tol = *g.tol;
      ProgressFn progress;
      if (!g.quiet) progress = [&err](const std::string& msg) { err << msg << std::endl; };
      std::vector<CellResult> cells;
      if (*rank_cmd) {
        if (!exp_ranks.empty()) {
          exp_cfg.ranks.clear();
          for (const auto& r : exp_ranks) exp_cfg.ranks.push_back(parse_rank_pair(r));
        }
        exp_cfg.include_baseline = !no_baseline;
        if (exp_out.empty()) exp_out = "rank_sweep.csv";
        cells = run_rank_sweep(exp_cfg, progress);
      } else {
        exp_cfg.sweep_rank = parse_rank_pair(exp_sweep_rank);
        if (exp_out.empty()) exp_out = "size_noise.csv";
        cells = run_size_noise_sweep(exp_cfg, progress);
        if (!exp_plot.empty()) {
          write_svg_lines(size_noise_plot(cells), exp_plot);
          say(g, out, "wrote " + exp_plot);
        }
      }
      const CsvTable table = results_table(cells);
      write_report_csv(table, exp_out);
      if (!exp_images.empty()) write_recovered_images(cells, ShapeTruth::standard(exp_cfg.size), exp_images);
      out << format_csv(table);
      say(g, out, "wrote " + exp_out);
    }
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace tensorreg
