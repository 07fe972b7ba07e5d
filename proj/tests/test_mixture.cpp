#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "tensorreg/error.hpp"
#include "tensorreg/mixture.hpp"

using namespace tensorreg;
using testutil::random_batch;
using testutil::random_factors;
using namespace testutil;

namespace {

// Dense multivariate normal density from the textbook formula.
double dense_gaussian(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd e = y - mu;
  const double q = e.dot(cov.inverse() * e);
  return std::exp(-0.5 * q) / std::sqrt(std::pow(2 * std::numbers::pi, static_cast<double>(y.size())) * cov.determinant());
}

int count_if_decreasing(const std::vector<double>& trace) {
  int k = 0;
  for (std::size_t t = 1; t < trace.size(); ++t) k += trace[t] < trace[t - 1] - 1e-8 * std::abs(trace[t - 1]);
  return k;
}

}  // namespace

TEST_CASE("expert_mean") {
  std::mt19937_64 rng(17);
  TmeModel m = hand_model({4, 3}, 2, 2, 1, 2, rng);
  const DenseTensor x = testutil::random_tensor({4, 3}, rng);
  CHECK((expert_mean(m, 1, x) - oracle_mean(m, 1, x)).cwiseAbs().maxCoeff() <= 1e-12);

  TmeModel z = m;
  for (auto& w : z.experts[0].weights) w = CPFactors::zeros({4, 3}, 2);
  CHECK(expert_mean(z, 0, x) == z.experts[0].bias);

  TrrModel t;
  t.weights = m.experts[0].weights[1];
  t.bias = m.experts[0].bias[1];
  CHECK(expert_mean(m, 0, x)[1] == doctest::Approx(trr_predict(t, x)).epsilon(1e-14));
  CHECK_THROWS_AS(expert_mean(m, 2, x), ArgumentError);
  CHECK_THROWS_AS(expert_mean(m, 0, testutil::random_tensor({3, 4}, rng)), ShapeError);
}

TEST_CASE("tme_density") {
  std::mt19937_64 rng(18);
  TmeModel one = hand_model({3}, 1, 1, 1, 1, rng);
  one.experts[0].weights[0] = CPFactors::zeros({3}, 1);
  one.experts[0].bias.setZero();
  one.experts[0].cov = Eigen::MatrixXd::Ones(1, 1);
  const DenseTensor x1 = testutil::random_tensor({3}, rng);
  CHECK(tme_density(one, x1, Eigen::VectorXd::Zero(1)) == doctest::Approx(1 / std::sqrt(2 * std::numbers::pi)).epsilon(1e-14));

  TmeModel m = hand_model({4, 3}, 2, 2, 2, 1, rng);
  const DenseTensor x = testutil::random_tensor({4, 3}, rng);
  const Eigen::VectorXd y = Eigen::VectorXd::Random(2);
  const Eigen::VectorXd g = oracle_gate(m, x);
  const double expected = g[0] * dense_gaussian(y, oracle_mean(m, 0, x), m.experts[0].cov) +
                          g[1] * dense_gaussian(y, oracle_mean(m, 1, x), m.experts[1].cov);
  CHECK(tme_density(m, x, y) == doctest::Approx(expected).epsilon(1e-10));

  TmeModel twin = m;
  twin.experts[1] = twin.experts[0];
  CHECK(tme_density(twin, x, y) == doctest::Approx(dense_gaussian(y, oracle_mean(m, 0, x), m.experts[0].cov)).epsilon(1e-10));

  TmeModel bad = m;
  bad.experts[1].cov(0, 0) = -1.0;
  CHECK_THROWS_AS(tme_density(bad, x, y), ModelIntegrityError);
  bad = m;
  bad.experts[0].cov(0, 1) += 0.5;
  CHECK_THROWS_AS(tme_density(bad, x, y), ModelIntegrityError);
  CHECK_THROWS_AS(tme_density(m, x, Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST_CASE("tme_predict") {
  std::mt19937_64 rng(19);
  const DenseTensor x = testutil::random_tensor({4, 3}, rng);
  const TmeModel one = hand_model({4, 3}, 1, 2, 1, 2, rng);
  CHECK(tme_predict(one, x) == expert_mean(one, 0, x));

  TmeModel sat = hand_model({4, 3}, 3, 1, 1, 1, rng);
  for (auto& w : sat.gate.weights) w = CPFactors::zeros({4, 3}, 1);
  sat.gate.biases << 0.0, 60.0, 0.0;
  CHECK(std::abs(tme_predict(sat, x)[0] - expert_mean(sat, 1, x)[0]) <= 1e-9);

  SUBCASE("property: prediction is the gate-weighted sum of expert means") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 r(seed);
      const TmeModel m = hand_model({3, 2, 2}, 3, 2, 2, 1, r);
      const TensorBatch xs = random_batch({3, 2, 2}, 8, r);
      const Eigen::MatrixXd batch = tme_predict(m, xs);
      for (std::size_t n = 0; n < xs.size(); ++n) {
        const DenseTensor s = xs.sample(n);
        const Eigen::VectorXd g = gate_posterior(m, s);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
        for (std::size_t i = 0; i < 3; ++i) sum += g[static_cast<Eigen::Index>(i)] * expert_mean(m, i, s);
        CHECK((tme_predict(m, s) - sum).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((batch.row(n).transpose() - sum).cwiseAbs().maxCoeff() <= 1e-12);
      }
    }
  }
}

TEST_CASE("e_step") {
  std::mt19937_64 rng(20);
  const TmeModel m = hand_model({4, 3}, 3, 2, 1, 1, rng);
  const RegressionDataset data = sample_from(m, 40, rng);
  const EStepResult es = e_step(m, data);

  double loglik = 0.0, q = 0.0;
  for (std::size_t n = 0; n < 40; ++n) {
    const DenseTensor x = data.inputs.sample(n);
    const Eigen::VectorXd y = data.targets.row(n).transpose();
    const Eigen::VectorXd g = oracle_gate(m, x);
    Eigen::VectorXd joint(3);
    for (std::size_t i = 0; i < 3; ++i) joint[i] = g[i] * dense_gaussian(y, oracle_mean(m, i, x), m.experts[i].cov);
    loglik += std::log(joint.sum());
    const Eigen::VectorXd r = joint / joint.sum();
    CHECK((es.resp.row(n).transpose() - r).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(std::abs(es.resp.row(n).sum() - 1.0) <= 1e-12);
    for (int i = 0; i < 3; ++i) q += r[i] * std::log(joint[i]);
  }
  CHECK(es.loglik == doctest::Approx(loglik).epsilon(1e-10));
  CHECK(es.expected_complete_loglik == doctest::Approx(q).epsilon(1e-10));
  CHECK(es.loglik >= es.expected_complete_loglik);

  SUBCASE("identical experts give the gate posterior") {
    TmeModel twin = m;
    twin.experts[1] = twin.experts[2] = twin.experts[0];
    const EStepResult t = e_step(twin, data);
    CHECK((t.resp - gate_posterior(twin, data.inputs)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("a far better expert takes the whole sample") {
    TmeModel two = hand_model({4, 3}, 2, 1, 1, 1, rng);
    const DenseTensor x = data.inputs.sample(0);
    Eigen::MatrixXd y(1, 1);
    y(0, 0) = expert_mean(two, 0, x)[0];
    two.experts[0].cov(0, 0) = 1e-6;
    two.experts[1].bias[0] += 50.0;
    two.experts[1].cov(0, 0) = 1e-2;
    const EStepResult t = e_step(two, RegressionDataset(TensorBatch(std::vector<DenseTensor>{x}), y));
    CHECK(t.resp(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("property: responsibilities ignore a common gate bias shift") {
    TmeModel s = m;
    s.gate.biases.array() += 123.0;
    const EStepResult t = e_step(s, data);
    for (Eigen::Index n = 0; n < t.resp.rows(); ++n) {
      Eigen::Index a, b;
      es.resp.row(n).maxCoeff(&a);
      t.resp.row(n).maxCoeff(&b);
      CHECK(a == b);
    }
  }
  SUBCASE("underflow names the sample") {
    TmeModel tiny = hand_model({4, 3}, 2, 1, 1, 1, rng);
    for (auto& e : tiny.experts) e.cov(0, 0) = 1e-300;
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 1);
    for (Eigen::Index n = 0; n < 3; ++n)
      y(n, 0) = expert_mean(tiny, 0, data.inputs.sample(static_cast<std::size_t>(n)))[0];
    y(2, 0) = 1e160;
    std::vector<DenseTensor> xs;
    for (std::size_t n = 0; n < 3; ++n) xs.push_back(data.inputs.sample(n));
    try {
      e_step(tiny, RegressionDataset(TensorBatch(xs), y));
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("sample 2") != std::string::npos);
    }
  }
}

TEST_CASE("m_step reductions") {
  std::mt19937_64 rng(22);
  TmeModel truth = hand_model({4, 3}, 2, 1, 1, 1, rng);
  std::vector<std::size_t> z;
  const RegressionDataset data = sample_from(truth, 200, rng, &z);
  TmeModel start = hand_model({4, 3}, 2, 1, 1, 1, rng);
  TmeOptions o;

  SUBCASE("all mass on one expert is a plain weighted TRR refit") {
    Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(200, 2);
    resp.col(0).setOnes();
    const MStepResult ms = m_step(start, data, resp, o);
    TrrModel warm;
    warm.weights = start.experts[0].weights[0];
    warm.bias = start.experts[0].bias[0];
    TrrOptions to;
    to.tol = o.trr_tol;
    to.max_sweeps = o.trr_sweeps;
    const TrrModel ref = trr_fit(data, 1, start.reg_weights, to, &warm);
    CHECK((trr_predict(ref, data.inputs) - expert_means(ms.model, 0, data.inputs).col(0)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(ms.model.experts[1].weights[0].factors() == start.experts[1].weights[0].factors());
    CHECK(ms.model.experts[1].bias == start.experts[1].bias);
    REQUIRE(ms.degenerate.size() == 1);
    CHECK(ms.degenerate[0] == 1);
  }

  SUBCASE("hard labels give per-class TRR fits") {
    Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(200, 2);
    for (std::size_t n = 0; n < 200; ++n) resp(n, z[n]) = 1.0;
    const MStepResult ms = m_step(start, data, resp, o);
    CHECK(ms.degenerate.empty());
    for (std::size_t i = 0; i < 2; ++i) {
      std::vector<DenseTensor> xs;
      std::vector<double> ys;
      for (std::size_t n = 0; n < 200; ++n)
        if (z[n] == i) xs.push_back(data.inputs.sample(n)), ys.push_back(data.targets(n, 0));
      const RegressionDataset sub(TensorBatch(xs), Eigen::Map<Eigen::VectorXd>(ys.data(), ys.size()));
      TrrModel warm;
      warm.weights = start.experts[i].weights[0];
      warm.bias = start.experts[i].bias[0];
      TrrOptions to;
      to.tol = o.trr_tol;
      to.max_sweeps = o.trr_sweeps;
      const TrrModel ref = trr_fit(sub, 1, start.reg_weights, to, &warm);
      CHECK((trr_predict(ref, data.inputs) - expert_means(ms.model, i, data.inputs).col(0)).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }

  SUBCASE("uniform responsibilities fit identical experts") {
    TmeModel two = hand_model({4, 3}, 2, 2, 1, 1, rng);
    two.experts[1] = two.experts[0];
    const RegressionDataset d2 = sample_from(hand_model({4, 3}, 2, 2, 1, 1, rng), 150, rng);
    const MStepResult ms = m_step(two, d2, Eigen::MatrixXd::Constant(150, 2, 0.5), o);
    CHECK(expert_means(ms.model, 0, d2.inputs) == expert_means(ms.model, 1, d2.inputs));
    // Half weights on every sample equal full weights at twice the penalty.
    for (std::size_t d = 0; d < 2; ++d) {
      TrrModel warm;
      warm.weights = two.experts[0].weights[d];
      warm.bias = two.experts[0].bias[d];
      TrrOptions to;
      to.tol = o.trr_tol;
      to.max_sweeps = o.trr_sweeps;
      const TrrModel ref = trr_fit(d2.select_output(d, std::nullopt), 1, 2 * two.reg_weights, to, &warm);
      CHECK((trr_predict(ref, d2.inputs) - expert_means(ms.model, 0, d2.inputs).col(d)).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }

  SUBCASE("covariances stay above the floor") {
    const MStepResult ms = m_step(start, data, e_step(start, data).resp, o);
    for (const auto& e : ms.model.experts) {
      CHECK((e.cov - e.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e.cov).eigenvalues().minCoeff() >= start.cov_floor);
    }
  }

  SUBCASE("rejects responsibilities that are not row-stochastic") {
    CHECK_THROWS_AS(m_step(start, data, Eigen::MatrixXd::Constant(200, 2, 0.6), o), DataError);
    CHECK_THROWS_AS(m_step(start, data, Eigen::MatrixXd::Constant(200, 3, 1.0 / 3), o), ShapeError);
  }
}

TEST_CASE("property: EM keeps responsibilities stochastic, covariances SPD and the likelihood increasing") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(100 + seed);
    // One output: with D > 1 and a non-spherical covariance the per-output
    // expert refits are not an exact ascent step, and tiny dips can occur.
    const TmeModel truth = hand_model({5, 4}, 2, 1, 1, 1, rng);
    const RegressionDataset data = sample_from(truth, 300, rng);
    TmeOptions o;
    o.seed = seed;
    TmeModel m = tme_initialize(data, 2, 1, 2, 0.1, 0.1, o);
    double prev = -INFINITY;
    for (int it = 0; it < 15; ++it) {
      const EStepResult es = e_step(m, data);
      CHECK((es.resp.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
      CHECK(es.loglik >= prev - 1e-8 * std::abs(prev));
      prev = es.loglik;
      const MStepResult ms = m_step(m, data, es.resp, o);
      REQUIRE(ms.degenerate.empty());
      m = ms.model;
      for (const auto& e : m.experts)
        CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e.cov).eigenvalues().minCoeff() >= m.cov_floor);
    }
  }
}

TEST_CASE("tme_initialize follows the global TRR fit") {
  std::mt19937_64 rng(23);
  const RegressionDataset data = sample_from(hand_model({4, 3}, 2, 1, 2, 2, rng), 120, rng);
  TmeOptions o;
  const TmeModel a = tme_initialize(data, 3, 2, 2, 0.1, 0.1, o, 0);
  const TmeModel b = tme_initialize(data, 3, 2, 2, 0.1, 0.1, o, 0);
  const TmeModel c = tme_initialize(data, 3, 2, 2, 0.1, 0.1, o, 1);
  CHECK(a.experts[0].weights[0].factors() == b.experts[0].weights[0].factors());
  CHECK(a.experts[0].weights[0].factors() != c.experts[0].weights[0].factors());
  CHECK(a.experts[0].weights[0].factors() != a.experts[1].weights[0].factors());
  for (std::size_t i = 1; i < 3; ++i) CHECK(a.gate.weights[i].factors() == a.gate.weights[0].factors());
  CHECK(a.gate.biases.isZero());
  CHECK(a.experts[0].cov == a.experts[2].cov);
  CHECK(a.cov_floor > 0.0);
}

TEST_CASE("single-component tme_fit equals per-output TRR") {
  std::mt19937_64 rng(24);
  TmeModel truth = hand_model({5, 4}, 1, 2, 1, 1, rng);
  // Rank one with low noise is well determined, so ALS converges fully.
  truth.experts[0].cov = 0.01 * Eigen::MatrixXd::Identity(2, 2);
  const RegressionDataset data = sample_from(truth, 150, rng);
  TmeOptions o;
  o.seed = 3;
  o.tol = 1e-12;
  o.trr_tol = 1e-14;
  o.init_trr_sweeps = 3000;
  o.trr_sweeps = 200;
  const TmeModel m = tme_fit(data, 1, 1, 1, 0.1, 0.1, o);
  const Eigen::MatrixXd pred = tme_predict(m, data.inputs);
  for (std::size_t d = 0; d < 2; ++d) {
    TrrOptions to;
    to.seed = o.seed + d;
    to.tol = 0.0;
    to.max_sweeps = 100000;  // ALS crawls here; EM got many more warm-started sweeps
    const TrrModel ref = trr_fit(data.select_output(d, std::nullopt), 1, 0.1, to);
    CHECK((pred.col(d) - trr_predict(ref, data.inputs)).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("tme_fit recovers component assignments of a well-separated mixture") {
  std::mt19937_64 rng(25);
  TmeModel truth = hand_model({4, 4}, 2, 1, 1, 1, rng);
  truth.gate.weights[0] = CPFactors({4.0 * truth.gate.weights[0].factor(0), truth.gate.weights[0].factor(1)});
  truth.gate.weights[1] = CPFactors::zeros({4, 4}, 1);
  truth.gate.biases.setZero();
  truth.experts[0].bias[0] = 1.0;
  truth.experts[1].bias[0] = -1.0;
  for (auto& e : truth.experts) e.cov = 0.01 * Eigen::MatrixXd::Identity(1, 1);
  std::vector<std::size_t> z;
  const RegressionDataset data = sample_from(truth, 500, rng, &z);

  TmeOptions o;
  const TmeModel m = tme_fit(data, 2, 1, 1, 0.1, 0.1, o);
  const Eigen::MatrixXd r = e_step(m, data).resp;
  std::size_t direct = 0;
  for (std::size_t n = 0; n < z.size(); ++n) direct += (r(n, 0) > 0.5 ? 0u : 1u) == z[n];
  const std::size_t agree = std::max(direct, z.size() - direct);
  CHECK(agree >= 0.95 * z.size());
  CHECK(count_if_decreasing(m.report.loglik_trace) == 0);
}

TEST_CASE("order-1 tme_fit reproduces an independently coded vector mixture of experts") {
  std::mt19937_64 rng(26);
  const std::size_t p = 5, n = 400;
  TmeModel truth = hand_model({p}, 2, 1, 1, 1, rng);
  truth.gate.weights[0] = CPFactors({3.0 * truth.gate.weights[0].factor(0)});
  for (auto& e : truth.experts) e.cov = 0.05 * Eigen::MatrixXd::Identity(1, 1);
  const RegressionDataset data = sample_from(truth, n, rng);

  TmeOptions o;
  o.tol = 1e-11;
  o.max_em_iters = 500;
  o.trr_sweeps = 500;
  o.trr_tol = 1e-15;
  o.gate_iters = 2000;
  o.gate_gtol = 1e-9;
  const TmeModel init = tme_initialize(data, 2, 1, 1, 0.1, 0.1, o);
  const TmeModel m = tme_run_em(init, data, o);

  const Eigen::VectorXd oracle = vector_me_predictions(init, data, 0.1, 0.1);
  const Eigen::VectorXd pred = tme_predict(m, data.inputs).col(0);
  CHECK(std::sqrt((pred - oracle).squaredNorm() / n) <= 1e-3);
}

TEST_CASE("bic parameter count") {
  std::mt19937_64 rng(27);
  TmeModel a = hand_model({4, 3}, 2, 2, 1, 1, rng);
  const RegressionDataset data = sample_from(a, 50, rng);
  // Same model with an extra all-zero CP component in every expert tensor.
  TmeModel b = a;
  b.expert_rank = 2;
  for (auto& e : b.experts)
    for (auto& w : e.weights) {
      std::vector<Eigen::MatrixXd> f;
      for (const auto& u : w.factors()) {
        Eigen::MatrixXd v(u.rows(), 2);
        v << u, Eigen::VectorXd::Zero(u.rows());
        f.push_back(v);
      }
      w = CPFactors(f);
    }
  CHECK(e_step(a, data).loglik == e_step(b, data).loglik);
  CHECK(bic(b, data) - bic(a, data) == doctest::Approx(2.0 * 2.0 * 7.0 * std::log(50.0)).epsilon(1e-12));

  TmeModel one = hand_model({6}, 1, 1, 1, 1, rng);
  CHECK(tme_parameter_count(one) == 6 + 1 + 1);
  CHECK(tme_parameter_count(a) == 2 * (7 + 1) + 2 * 2 * (7 + 1) + 2 * 3);
  const double ll = e_step(a, data).loglik;
  CHECK(bic(a, data) == doctest::Approx(-2 * ll + tme_parameter_count(a) * std::log(50.0)).epsilon(1e-14));
}

TEST_CASE("collapsed components") {
  std::mt19937_64 rng(28);
  TmeModel m = hand_model({4, 3}, 2, 1, 1, 1, rng);
  const RegressionDataset data = sample_from(m, 100, rng);
  CHECK(responsibility_floor(100, 1) == 2.0);
  CHECK(responsibility_floor(10000, 1) == 10.0);
  for (auto& w : m.gate.weights) w = CPFactors::zeros({4, 3}, 1);
  m.gate.biases << 0.0, -800.0;
  CHECK_THROWS_AS(tme_run_em(m, data), DegenerateComponentError);
  try {
    tme_run_em(m, data);
  } catch (const DegenerateComponentError& e) {
    CHECK(e.component() == 1);
  }
}

TEST_CASE("tme_fit argument checks") {
  std::mt19937_64 rng(29);
  const RegressionDataset data = sample_from(hand_model({3}, 1, 1, 1, 1, rng), 3, rng);
  CHECK_THROWS_AS(tme_fit(data, 4, 1, 1, 0.1, 0.1), ArgumentError);
  CHECK_THROWS_AS(tme_fit(data, 0, 1, 1, 0.1, 0.1), ArgumentError);
  CHECK_THROWS_AS(tme_fit(data, 2, 0, 1, 0.1, 0.1), ArgumentError);
  CHECK_THROWS_AS(tme_fit(data, 2, 1, 1, -0.1, 0.1), ArgumentError);
}
