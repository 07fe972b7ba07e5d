#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "helpers.hpp"
#include "tensorreg/error.hpp"
#include "tensorreg/io.hpp"

using namespace tensorreg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int k = 0;
    path = fs::temp_directory_path() / ("tensorreg_io_" + std::to_string(::getpid()) + "_" + std::to_string(k++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TmeModel random_tme(std::mt19937_64& rng) {
  TmeModel m;
  m.dims = {4, 3, 2};
  m.outputs = 2;
  m.gate_rank = 2;
  m.expert_rank = 3;
  m.reg_weights = 0.1;
  m.reg_gate = 0.25;
  m.cov_floor = 1e-6;
  for (int i = 0; i < 3; ++i) m.gate.weights.push_back(testutil::random_factors(m.dims, 2, rng));
  m.gate.biases = Eigen::Vector3d::Random();
  m.gate.reg = 0.25;
  for (int i = 0; i < 3; ++i) {
    Expert e;
    for (int d = 0; d < 2; ++d) e.weights.push_back(testutil::random_factors(m.dims, 3, rng));
    e.bias = Eigen::Vector2d::Random();
    const Eigen::Matrix2d a = Eigen::Matrix2d::Random();
    e.cov = a * a.transpose() + Eigen::Matrix2d::Identity() / 3.0;
    m.experts.push_back(e);
  }
  m.report.loglik_trace = {-10.5, -9.25, -9.0 - 1.0 / 3.0};
  m.report.iterations = 2;
  m.report.restarts = 1;
  m.report.converged = true;
  return m;
}

}  // namespace

TEST_CASE("dataset files round-trip bit-exactly") {
  std::mt19937_64 rng(1);
  TensorBatch x = testutil::random_batch({2, 3}, 5, rng);
  Eigen::MatrixXd cols = x.columns();
  cols(0, 0) = 0.1;
  cols(1, 0) = -0.0;
  cols(2, 0) = std::numeric_limits<double>::denorm_min();
  cols(3, 0) = std::numeric_limits<double>::max();
  cols(4, 0) = -1.0 / 3.0;
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(5, 2);
  y(0, 0) = 1e-300;
  const RegressionDataset data(TensorBatch({2, 3}, cols), y);

  TempDir dir;
  save_dataset(data, dir.path / "d.tdset");
  const RegressionDataset back = load_dataset(dir.path / "d.tdset");
  CHECK(back.dims() == data.dims());
  CHECK(std::memcmp(back.inputs.columns().data(), cols.data(), sizeof(double) * cols.size()) == 0);
  CHECK(std::memcmp(back.targets.data(), y.data(), sizeof(double) * y.size()) == 0);
  CHECK(format_dataset(back) == format_dataset(data));

  const std::string text = format_dataset(data);
  CHECK(text.rfind("TDSET 1\ndims: 2 3\nn: 5\nd: 2\n", 0) == 0);

  CHECK_THROWS_AS(save_dataset(RegressionDataset(data.inputs, data.targets, Eigen::VectorXd::Ones(5)), dir.path / "w"),
                  ArgumentError);
  CHECK_THROWS_AS(load_dataset(dir.path / "missing.tdset"), DataError);
}

TEST_CASE("malformed dataset files") {
  try {
    parse_dataset("TDSET 1\ndims: 2 2\nn: 2\nd: 1\n1 2 3 4 5\n1 2 3 4\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 6);
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
  }
  try {
    parse_dataset("TDSET 2\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
  }
  CHECK_THROWS_AS(parse_dataset("TDSET 1\ndims: 2 x\nn: 1\nd: 1\n0 0 0\n"), ParseError);
  CHECK_THROWS_AS(parse_dataset("TDSET 1\ndims: 2\nn: 2\nd: 1\n0 0 0\n"), ParseError);
  CHECK_THROWS_AS(parse_dataset("TDSET 1\ndims: 2\nn: 1\nd: 1\n0 0 abc\n"), ParseError);
}

TEST_CASE("model files round-trip with identical predictions") {
  std::mt19937_64 rng(2);
  const TensorBatch probes = testutil::random_batch({4, 3, 2}, 100, rng);
  TempDir dir;

  SUBCASE("tme") {
    const TmeModel m = random_tme(rng);
    save_model(m, dir.path / "m.json");
    const AnyModel any = load_model(dir.path / "m.json");
    CHECK(model_kind(any) == "tme");
    const auto& back = std::get<TmeModel>(any);
    CHECK(tme_predict(back, probes) == tme_predict(m, probes));
    for (std::size_t n = 0; n < 5; ++n) {
      const Eigen::VectorXd y = Eigen::Vector2d::Random();
      CHECK(tme_log_density(back, probes.sample(n), y) == tme_log_density(m, probes.sample(n), y));
    }
    CHECK(back.report.loglik_trace == m.report.loglik_trace);
    CHECK(back.report.restarts == 1);
    CHECK(back.reg_gate == 0.25);
    CHECK(back.cov_floor == m.cov_floor);
    CHECK(format_model(back) == format_model(m));
  }
  SUBCASE("trr") {
    TrrModel t;
    t.weights = testutil::random_factors({4, 3, 2}, 2, rng);
    t.bias = 0.1;
    t.noise_var = 2.0 / 3.0;
    t.reg = 0.1;
    t.report.objective_trace = {3.0, 2.0};
    save_model(t, dir.path / "t.json");
    const auto back = std::get<TrrModel>(load_model(dir.path / "t.json"));
    CHECK(trr_predict(back, probes) == trr_predict(t, probes));
    CHECK(back.noise_var == t.noise_var);
    CHECK(model_dims(back) == Dims{4, 3, 2});
  }
  SUBCASE("tlr") {
    TlrModel g = TlrModel::zeros({4, 3, 2}, 3, 2, 0.5);
    for (auto& w : g.weights) w = testutil::random_factors({4, 3, 2}, 2, rng);
    g.biases = Eigen::Vector3d::Random();
    save_model(g, dir.path / "g.json");
    const auto back = std::get<TlrModel>(load_model(dir.path / "g.json"));
    CHECK(tlr_posterior(back, probes) == tlr_posterior(g, probes));
  }
}

TEST_CASE("malformed model files") {
  try {
    parse_model("{\n  \"format\": \"tensorreg-model\",\n  \"version\": 1,\n  oops\n}");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
  CHECK_THROWS_AS(parse_model("{\"format\": \"other\"}"), DataError);
  CHECK_THROWS_AS(parse_model("{\"format\": \"tensorreg-model\", \"version\": 9}"), DataError);

  std::mt19937_64 rng(3);
  const std::string good = format_model(random_tme(rng));
  std::string bad_kind = good;
  bad_kind.replace(bad_kind.find("\"tme\""), 5, "\"xyz\"");
  CHECK_THROWS_AS(parse_model(bad_kind), DataError);

  TmeModel broken = random_tme(rng);
  broken.experts[0].cov(0, 0) = -5.0;
  CHECK_THROWS_AS(parse_model(format_model(broken)), DataError);
}

TEST_CASE("csv reports") {
  CsvTable t{{"a", "b"}, {{"1", "x,y"}, {"he said \"hi\"", "line\nbreak"}}};
  CHECK(format_csv(t) == "a,b\n1,\"x,y\"\n\"he said \"\"hi\"\"\",\"line\nbreak\"\n");
  t.rows.push_back({"only one"});
  CHECK_THROWS_AS(format_csv(t), ArgumentError);
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("pgm weight images") {
  Eigen::MatrixXd w(2, 3);
  w << -1, 0, 1, 0.5, -0.5, 1;
  const std::string pgm = format_pgm(w);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(pgm.size() == header.size() + 6);
  CHECK(pgm.substr(0, header.size()) == header);
  const auto* px = reinterpret_cast<const unsigned char*>(pgm.data() + header.size());
  CHECK(px[0] == 0);
  CHECK(px[1] == 128);
  CHECK(px[2] == 255);
  CHECK(px[3] == 191);

  const std::string flat = format_pgm(Eigen::MatrixXd::Constant(4, 4, 7.0));
  for (std::size_t k = flat.size() - 16; k < flat.size(); ++k) CHECK(flat[k] == 0);

  TempDir dir;
  write_weight_image(w, dir.path / "w.pgm");
  CHECK(slurp(dir.path / "w.pgm") == pgm);
}

TEST_CASE("svg line plots") {
  SvgPlot p{"RMSE & size", "N", "rmse", true, {{"noise 1%", {250, 500, 1000}, {0.3, 0.2, 0.1}}, {"noise 50%", {250, 500}, {0.5, 0.4}}}};
  const std::string svg = format_svg(p);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("RMSE &amp; size") != std::string::npos);
  CHECK(svg.find("noise 50%") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  TempDir dir;
  write_svg_lines(p, dir.path / "p.svg");
  CHECK(slurp(dir.path / "p.svg") == svg);
}

TEST_CASE("failed writes leave nothing behind") {
  TempDir dir;
  write_file_atomic(dir.path / "f.txt", "first");
  write_file_atomic(dir.path / "f.txt", "second");
  CHECK(slurp(dir.path / "f.txt") == "second");
  // A regular file where a directory is needed.
  CHECK_THROWS_AS(write_file_atomic(dir.path / "f.txt" / "g.txt", "x"), DataError);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++files;
  CHECK(files == 1);
}

TEST_CASE("writes create missing parent directories") {
  TempDir dir;
  write_file_atomic(dir.path / "a" / "b" / "f.txt", "x");
  CHECK(slurp(dir.path / "a" / "b" / "f.txt") == "x");
}
