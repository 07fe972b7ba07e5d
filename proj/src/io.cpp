#include "tensorreg/io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string_view>

#include <unistd.h>

#include <json.hpp>

#include "tensorreg/error.hpp"

namespace tensorreg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kDatasetMagic = "TDSET 1";
constexpr const char* kModelFormat = "tensorreg-model";
constexpr int kModelVersion = 1;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- dataset text ----------------------------------------------------------

void append_g17(std::string& out, double v) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(len));
}

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool next(std::string_view& line) {
    if (pos_ >= text_.size()) return false;
    const std::size_t end = std::min(text_.find('\n', pos_), text_.size());
    line = text_.substr(pos_, end - pos_);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos_ = end + 1;
    ++line_no_;
    return true;
  }
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

bool is_space(char c) { return c == ' ' || c == '\t'; }

// Splits on blanks; returns false on the first token that is not a number.
template <typename T>
bool parse_numbers(std::string_view s, std::vector<T>& out) {
  std::size_t i = 0;
  while (true) {
    while (i < s.size() && is_space(s[i])) ++i;
    if (i == s.size()) return true;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data() + i, s.data() + j, v);
    if (ec != std::errc() || ptr != s.data() + j) return false;
    out.push_back(v);
    i = j;
  }
}

std::size_t header_count(LineReader& reader, const char* key) {
  std::string_view line;
  if (!reader.next(line)) throw ParseError(std::string("missing '") + key + ":' line", reader.line_no() + 1);
  const std::string prefix = std::string(key) + ":";
  if (line.substr(0, prefix.size()) != prefix)
    throw ParseError(std::string("expected '") + key + ":'", reader.line_no());
  std::vector<std::size_t> v;
  if (!parse_numbers(line.substr(prefix.size()), v) || v.size() != 1)
    throw ParseError(std::string("'") + key + ":' needs one nonnegative integer", reader.line_no());
  return v.front();
}

// ---- model JSON --------------------------------------------------------------

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json cp_json(const CPFactors& w) {
  json out = json::array();
  for (const auto& f : w.factors()) out.push_back(matrix_json(f));
  return out;
}

Eigen::MatrixXd matrix_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j.front().size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DataError(what + " has ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + " must be an array");
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

CPFactors cp_from(const json& j, const Dims& dims, const std::string& what) {
  if (!j.is_array()) throw DataError(what + " must be an array of factor matrices");
  std::vector<Eigen::MatrixXd> factors;
  for (std::size_t m = 0; m < j.size(); ++m) factors.push_back(matrix_from(j[m], what + " factor " + std::to_string(m)));
  CPFactors w(std::move(factors));
  if (w.dims() != dims)
    throw DataError(what + " has dims " + dims_to_string(w.dims()) + ", model dims are " + dims_to_string(dims));
  return w;
}

json trr_json(const TrrModel& m) {
  json j;
  j["rank"] = m.rank();
  j["reg"] = m.reg;
  j["bias"] = m.bias;
  j["noise_var"] = m.noise_var;
  j["weights"] = cp_json(m.weights);
  j["report"] = {{"sweeps", m.report.sweeps},
                 {"converged", m.report.converged},
                 {"objective_trace", m.report.objective_trace}};
  return j;
}

json tlr_json(const TlrModel& m) {
  json j;
  j["classes"] = m.classes();
  j["rank"] = m.rank();
  j["reg"] = m.reg;
  json w = json::array();
  for (const auto& v : m.weights) w.push_back(cp_json(v));
  j["weights"] = std::move(w);
  j["biases"] = vector_json(m.biases);
  j["report"] = {{"iterations", m.report.iterations},
                 {"initial_objective", m.report.initial_objective},
                 {"final_objective", m.report.final_objective},
                 {"grad_inf_norm", m.report.grad_inf_norm},
                 {"converged", m.report.converged}};
  return j;
}

json tme_json(const TmeModel& m) {
  json j;
  j["components"] = m.components();
  j["outputs"] = m.outputs;
  j["gate_rank"] = m.gate_rank;
  j["expert_rank"] = m.expert_rank;
  j["reg_weights"] = m.reg_weights;
  j["reg_gate"] = m.reg_gate;
  j["cov_floor"] = m.cov_floor;
  j["gate"] = tlr_json(m.gate);
  json experts = json::array();
  for (const auto& e : m.experts) {
    json w = json::array();
    for (const auto& v : e.weights) w.push_back(cp_json(v));
    experts.push_back({{"weights", std::move(w)}, {"bias", vector_json(e.bias)}, {"cov", matrix_json(e.cov)}});
  }
  j["experts"] = std::move(experts);
  j["report"] = {{"loglik_trace", m.report.loglik_trace},
                 {"iterations", m.report.iterations},
                 {"restarts", m.report.restarts},
                 {"converged", m.report.converged}};
  return j;
}

TrrModel trr_from(const json& j, const Dims& dims) {
  TrrModel m;
  m.weights = cp_from(j.at("weights"), dims, "trr weights");
  if (m.rank() != j.at("rank").get<std::size_t>()) throw DataError("trr rank does not match its factors");
  m.reg = j.at("reg").get<double>();
  m.bias = j.at("bias").get<double>();
  m.noise_var = j.at("noise_var").get<double>();
  const json& r = j.at("report");
  m.report.sweeps = r.at("sweeps").get<int>();
  m.report.converged = r.at("converged").get<bool>();
  m.report.objective_trace = r.at("objective_trace").get<std::vector<double>>();
  return m;
}

TlrModel tlr_from(const json& j, const Dims& dims) {
  TlrModel m;
  const json& w = j.at("weights");
  if (!w.is_array() || w.empty()) throw DataError("tlr weights must be a non-empty array");
  for (std::size_t i = 0; i < w.size(); ++i) m.weights.push_back(cp_from(w[i], dims, "tlr class " + std::to_string(i)));
  m.biases = vector_from(j.at("biases"), "tlr biases");
  if (m.classes() != j.at("classes").get<std::size_t>() || static_cast<std::size_t>(m.biases.size()) != m.classes())
    throw DataError("tlr class count does not match its weights and biases");
  for (const auto& v : m.weights)
    if (v.rank() != j.at("rank").get<std::size_t>()) throw DataError("tlr rank does not match its factors");
  m.reg = j.at("reg").get<double>();
  const json& r = j.at("report");
  m.report.iterations = r.at("iterations").get<int>();
  m.report.initial_objective = r.at("initial_objective").get<double>();
  m.report.final_objective = r.at("final_objective").get<double>();
  m.report.grad_inf_norm = r.at("grad_inf_norm").get<double>();
  m.report.converged = r.at("converged").get<bool>();
  return m;
}

TmeModel tme_from(const json& j, const Dims& dims) {
  TmeModel m;
  m.dims = dims;
  m.outputs = j.at("outputs").get<std::size_t>();
  m.gate_rank = j.at("gate_rank").get<std::size_t>();
  m.expert_rank = j.at("expert_rank").get<std::size_t>();
  m.reg_weights = j.at("reg_weights").get<double>();
  m.reg_gate = j.at("reg_gate").get<double>();
  m.cov_floor = j.at("cov_floor").get<double>();
  m.gate = tlr_from(j.at("gate"), dims);
  const json& experts = j.at("experts");
  if (!experts.is_array()) throw DataError("tme experts must be an array");
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const json& e = experts[i];
    const std::string tag = "expert " + std::to_string(i);
    Expert ex;
    const json& w = e.at("weights");
    if (!w.is_array()) throw DataError(tag + " weights must be an array");
    for (std::size_t d = 0; d < w.size(); ++d) {
      ex.weights.push_back(cp_from(w[d], dims, tag + " output " + std::to_string(d)));
      if (ex.weights.back().rank() != m.expert_rank) throw DataError(tag + " rank does not match expert_rank");
    }
    ex.bias = vector_from(e.at("bias"), tag + " bias");
    ex.cov = matrix_from(e.at("cov"), tag + " covariance");
    m.experts.push_back(std::move(ex));
  }
  if (m.components() != j.at("components").get<std::size_t>())
    throw DataError("tme component count does not match its experts");
  if (m.gate.rank() != m.gate_rank) throw DataError("tme gate rank does not match gate_rank");
  const json& r = j.at("report");
  m.report.loglik_trace = r.at("loglik_trace").get<std::vector<double>>();
  m.report.iterations = r.at("iterations").get<int>();
  m.report.restarts = r.at("restarts").get<int>();
  m.report.converged = r.at("converged").get<bool>();
  try {
    validate_model(m);
  } catch (const ModelIntegrityError& e) {
    throw DataError(std::string("invalid tme model: ") + e.what());
  }
  return m;
}

std::size_t line_of_byte(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

// ---- SVG -----------------------------------------------------------------------

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string tick_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);  // a failure surfaces when opening below
  }
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw DataError("failed writing " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot replace " + path.string());
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// ---- datasets -------------------------------------------------------------------

std::string format_dataset(const RegressionDataset& data) {
  if (data.sample_weights) throw ArgumentError("sample weights are not part of the dataset file format");
  std::string out = std::string(kDatasetMagic) + "\ndims:";
  for (auto d : data.dims()) out += " " + std::to_string(d);
  out += "\nn: " + std::to_string(data.size()) + "\nd: " + std::to_string(data.outputs()) + "\n";
  const Eigen::MatrixXd& x = data.inputs.columns();
  out.reserve(out.size() + data.size() * (data.outputs() + data.inputs.sample_size()) * 24);
  for (Eigen::Index n = 0; n < x.cols(); ++n) {
    bool first = true;
    for (Eigen::Index d = 0; d < data.targets.cols(); ++d) {
      if (!first) out += ' ';
      append_g17(out, data.targets(n, d));
      first = false;
    }
    for (Eigen::Index p = 0; p < x.rows(); ++p) {
      out += ' ';
      append_g17(out, x(p, n));
    }
    out += '\n';
  }
  return out;
}

RegressionDataset parse_dataset(const std::string& text) {
  LineReader reader(text);
  std::string_view line;
  if (!reader.next(line) || line != kDatasetMagic) throw ParseError("expected header 'TDSET 1'", 1);

  if (!reader.next(line) || line.substr(0, 5) != "dims:") throw ParseError("expected 'dims:'", reader.line_no());
  std::vector<std::size_t> dims_v;
  if (!parse_numbers(line.substr(5), dims_v) || dims_v.empty() ||
      std::any_of(dims_v.begin(), dims_v.end(), [](std::size_t d) { return d == 0; }))
    throw ParseError("'dims:' needs one or more positive integers", reader.line_no());
  const Dims dims(dims_v.begin(), dims_v.end());
  const std::size_t n = header_count(reader, "n");
  const std::size_t d = header_count(reader, "d");
  if (n == 0 || d == 0) throw ParseError("dataset needs n >= 1 and d >= 1", reader.line_no());

  const std::size_t p = dims_product(dims);
  const std::size_t width = d + p;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(n));
  Eigen::MatrixXd y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<double> values;
  values.reserve(width);
  for (std::size_t k = 0; k < n; ++k) {
    if (!reader.next(line)) throw ParseError("missing record " + std::to_string(k), reader.line_no() + 1);
    values.clear();
    if (!parse_numbers(line, values))
      throw ParseError("record " + std::to_string(k) + " contains a malformed number", reader.line_no());
    if (values.size() != width)
      throw ParseError("record " + std::to_string(k) + " has " + std::to_string(values.size()) +
                           " values, expected " + std::to_string(width),
                       reader.line_no());
    const auto col = static_cast<Eigen::Index>(k);
    for (std::size_t j = 0; j < d; ++j) y(col, static_cast<Eigen::Index>(j)) = values[j];
    x.col(col) = Eigen::Map<const Eigen::VectorXd>(values.data() + d, static_cast<Eigen::Index>(p));
  }
  while (reader.next(line)) {
    if (line.find_first_not_of(" \t") != std::string_view::npos)
      throw ParseError("unexpected content after " + std::to_string(n) + " records", reader.line_no());
  }
  return RegressionDataset(TensorBatch(dims, std::move(x)), std::move(y));
}

void save_dataset(const RegressionDataset& data, const fs::path& path) {
  write_file_atomic(path, format_dataset(data));
}

RegressionDataset load_dataset(const fs::path& path) { return parse_dataset(read_file(path)); }

// ---- models -------------------------------------------------------------------

std::string model_kind(const AnyModel& model) {
  constexpr const char* names[] = {"trr", "tlr", "tme"};
  return names[model.index()];
}

Dims model_dims(const AnyModel& model) {
  return std::visit(
      [](const auto& m) -> Dims {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TmeModel>)
          return m.dims;
        else
          return m.dims();
      },
      model);
}

std::string format_model(const AnyModel& model) {
  json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["kind"] = model_kind(model);
  j["dims"] = model_dims(model);
  json body = std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TrrModel>) return trr_json(m);
        if constexpr (std::is_same_v<T, TlrModel>) return tlr_json(m);
        if constexpr (std::is_same_v<T, TmeModel>) return tme_json(m);
      },
      model);
  j.update(body);
  return j.dump(1) + "\n";
}

AnyModel parse_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed model file: ") + e.what(), line_of_byte(text, e.byte));
  }
  try {
    if (!j.is_object() || j.value("format", "") != kModelFormat) throw DataError("not a tensorreg model file");
    if (j.at("version").get<int>() != kModelVersion)
      throw DataError("unsupported model file version " + j.at("version").dump());
    const Dims dims = j.at("dims").get<Dims>();
    if (dims.empty() || std::any_of(dims.begin(), dims.end(), [](std::size_t d) { return d == 0; }))
      throw DataError("model dims must be positive");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "trr") return trr_from(j, dims);
    if (kind == "tlr") return tlr_from(j, dims);
    if (kind == "tme") return tme_from(j, dims);
    throw DataError("unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid model file: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("invalid model file: ") + e.what());
  }
}

void save_model(const AnyModel& model, const fs::path& path) { write_file_atomic(path, format_model(model)); }

AnyModel load_model(const fs::path& path) { return parse_model(read_file(path)); }

// ---- reports -------------------------------------------------------------------

std::string format_csv(const CsvTable& table) {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + field(cells[i]);
    return out + "\n";
  };
  std::string out = line(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) throw ArgumentError("csv row width does not match the header");
    out += line(r);
  }
  return out;
}

void write_report_csv(const CsvTable& table, const fs::path& path) { write_file_atomic(path, format_csv(table)); }

std::string format_pgm(const Eigen::MatrixXd& w) {
  if (w.size() == 0) throw ArgumentError("cannot write an empty weight image");
  if (!w.allFinite()) throw DataError("weight image contains non-finite values");
  const double lo = w.minCoeff();
  const double hi = w.maxCoeff();
  std::string out = "P5\n" + std::to_string(w.cols()) + " " + std::to_string(w.rows()) + "\n255\n";
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double t = hi > lo ? (w(i, j) - lo) / (hi - lo) : 0.0;
      out += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t)));
    }
  return out;
}

void write_weight_image(const Eigen::MatrixXd& weights, const fs::path& path) {
  write_file_atomic(path, format_pgm(weights));
}

std::string format_svg(const SvgPlot& plot) {
  constexpr double width = 640, height = 420;
  constexpr double left = 70, right = 170, top = 40, bottom = 60;
  const double pw = width - left - right;
  const double ph = height - top - bottom;

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size()) throw ArgumentError("svg series '" + s.label + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || !std::isfinite(s.x[i])) continue;
      if (plot.log_x && s.x[i] <= 0.0) throw ArgumentError("log-scale x needs positive values");
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5 * std::max(1.0, std::abs(xmin)), xmax += 0.5 * std::max(1.0, std::abs(xmax));
  ymin = std::min(ymin, 0.0);
  if (ymax == ymin) ymax = ymin + 1.0;
  ymax += 0.05 * (ymax - ymin);

  auto tx = [&](double x) {
    const double t = plot.log_x ? (std::log(x) - std::log(xmin)) / (std::log(xmax) - std::log(xmin))
                                : (x - xmin) / (xmax - xmin);
    return left + t * pw;
  };
  auto ty = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  static constexpr const char* colors[] = {"#1f3b8f", "#c0392b", "#d4a017", "#2e8b57", "#7b3f9e", "#555555"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(plot.title)
    << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";

  // x ticks at the data points (sweeps use few distinct x values), y ticks evenly spaced
  std::vector<double> xt;
  for (const auto& s : plot.series) xt.insert(xt.end(), s.x.begin(), s.x.end());
  std::sort(xt.begin(), xt.end());
  xt.erase(std::unique(xt.begin(), xt.end()), xt.end());
  if (xt.size() > 12) xt = {xmin, xmax};
  for (double x : xt) {
    o << "<line x1=\"" << fixed(tx(x)) << "\" y1=\"" << top + ph << "\" x2=\"" << fixed(tx(x)) << "\" y2=\""
      << top + ph + 5 << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << fixed(tx(x)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << tick_label(x)
      << "</text>\n";
  }
  for (int k = 0; k <= 5; ++k) {
    const double y = ymin + (ymax - ymin) * k / 5.0;
    o << "<line x1=\"" << left - 5 << "\" y1=\"" << fixed(ty(y)) << "\" x2=\"" << left + pw << "\" y2=\""
      << fixed(ty(y)) << "\" stroke=\"#dddddd\"/>\n";
    o << "<text x=\"" << left - 8 << "\" y=\"" << fixed(ty(y) + 4) << "\" text-anchor=\"end\">" << tick_label(y)
      << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">"
    << xml_escape(plot.x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(plot.y_label) << "</text>\n";

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const char* color = colors[k % std::size(colors)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts += (pts.empty() ? "" : " ") + fixed(tx(s.x[i])) + "," + fixed(ty(s.y[i]));
      o << "<circle cx=\"" << fixed(tx(s.x[i])) << "\" cy=\"" << fixed(ty(s.y[i])) << "\" r=\"3\" fill=\"" << color
        << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    const double ly = top + 10 + 20.0 * static_cast<double>(k);
    o << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 46 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_svg_lines(const SvgPlot& plot, const fs::path& path) { write_file_atomic(path, format_svg(plot)); }

}  // namespace tensorreg
