#pragma once

// Text serialization of datasets and models, CSV reports, PGM weight images
// and SVG line plots. Every writer goes through a temporary file and a rename,
// so a failed write never leaves a partial file behind.

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "tensorreg/batch.hpp"
#include "tensorreg/mixture.hpp"
#include "tensorreg/tlr.hpp"
#include "tensorreg/trr.hpp"

namespace tensorreg {

/// Writes `content` to a sibling temporary file, then renames it over `path`.
/// Missing parent directories are created.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Dataset file:
//   TDSET 1
//   dims: I_1 ... I_M
//   n: N
//   d: D
//   then N lines of D targets followed by the prod(I_m) input values.
void save_dataset(const RegressionDataset& data, const std::filesystem::path& path);
RegressionDataset load_dataset(const std::filesystem::path& path);
std::string format_dataset(const RegressionDataset& data);
RegressionDataset parse_dataset(const std::string& text);

using AnyModel = std::variant<TrrModel, TlrModel, TmeModel>;

/// "trr", "tlr" or "tme".
std::string model_kind(const AnyModel& model);
Dims model_dims(const AnyModel& model);

/// JSON document with the format version, kind, hyperparameters, every
/// parameter array and the fit report.
void save_model(const AnyModel& model, const std::filesystem::path& path);
AnyModel load_model(const std::filesystem::path& path);
std::string format_model(const AnyModel& model);
AnyModel parse_model(const std::string& text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Fields containing commas, quotes or newlines are quoted.
void write_report_csv(const CsvTable& table, const std::filesystem::path& path);
std::string format_csv(const CsvTable& table);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// 8-bit binary PGM, row i of the matrix is image row i. Values are mapped
/// linearly from [min, max] to [0, 255]; a constant matrix maps to all zeros.
void write_weight_image(const Eigen::MatrixXd& weights, const std::filesystem::path& path);
std::string format_pgm(const Eigen::MatrixXd& weights);

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct SvgPlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  std::vector<SvgSeries> series;
};

/// Self-contained SVG line chart with axes, ticks and a legend.
void write_svg_lines(const SvgPlot& plot, const std::filesystem::path& path);
std::string format_svg(const SvgPlot& plot);

}  // namespace tensorreg
