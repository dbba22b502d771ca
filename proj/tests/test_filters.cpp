#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "scoutpf/filters.hpp"

using namespace scoutpf;
using namespace scoutpf::filters;
using scoutpf::models::make_discrete_dynamics;
using scoutpf::models::make_measurement;
using scoutpf::models::make_static_dynamics;
using scoutpf::stochastic::GaussianDensity;
using scoutpf::stochastic::RngStream;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Eigen::MatrixXd diag(std::initializer_list<double> v) {
  Eigen::VectorXd d = vec(v);
  return d.asDiagonal();
}

models::MeasurementModel identity_measurement(int n) {
  return make_measurement("identity", n, n, {}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>(x.begin(), x.end());
  });
}

models::MeasurementModel range_angle_measurement() {
  return make_measurement("range-angle", 2, 2, {1}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    using std::atan2;
    using std::sqrt;
    T r = sqrt(x[0] * x[0] + x[1] * x[1]);
    T a = atan2(x[1], x[0]);
    return std::vector<T>{r, a};
  });
}

models::MeasurementModel range_measurement() {
  return make_measurement("range", 2, 1, {}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    using std::sqrt;
    return std::vector<T>{sqrt(x[0] * x[0] + x[1] * x[1])};
  });
}

models::MeasurementModel angle_measurement() {
  return make_measurement("angle", 2, 1, {0}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    using std::atan2;
    return std::vector<T>{atan2(x[1], x[0])};
  });
}

ModelSet static_models(models::MeasurementModel h, Eigen::MatrixXd r, int n) {
  const Eigen::Index m = r.rows();
  return ModelSet{make_static_dynamics(n),
                  std::move(h),
                  std::nullopt,
                  GaussianDensity(Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n)),
                  GaussianDensity(Eigen::VectorXd::Zero(m), std::move(r))};
}

FilterConfig small_config() {
  FilterConfig cfg;
  cfg.n_predict = 500;
  cfg.n_update = 500;
  cfg.n_scout = 50;
  cfg.order = 3;
  return cfg;
}

}  // namespace

TEST_CASE("predict: linear dynamics expansion is the transition matrix") {
  // constant-velocity 2-state model with additive noise
  const double dt = 0.5;
  auto dyn = make_discrete_dynamics(2, 2, [dt](const auto& x, const auto& nu, int) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0] + x[1] * dt + nu[0], x[1] + nu[1]};
  });
  GaussianDensity q(Eigen::VectorXd::Zero(2), diag({0.01, 0.01}));
  GaussianDensity prior(vec({1.0, 2.0}), diag({0.1, 0.1}));
  FilterConfig cfg = small_config();
  RngStream rng(1);
  Prediction pred = predict(Prior(prior), dyn, q, cfg, 0, 0.0, dt, rng);

  Eigen::MatrixXd lin = pred.pstm.linear_part();
  Eigen::MatrixXd expect(2, 4);
  expect << 1.0, dt, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0;
  CHECK((lin - expect).cwiseAbs().maxCoeff() == 0.0);

  // polynomial evaluation equals matrix-vector propagation
  RngStream rng2(2);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd d(4);
    for (int j = 0; j < 4; ++j) d[j] = rng2.normal();
    Eigen::VectorXd via_poly = pred.pstm.center_out() + pred.pstm.evaluate(d);
    Eigen::VectorXd x = prior.mean() + d.head(2);
    Eigen::VectorXd direct(2);
    direct << x[0] + x[1] * dt + d[2], x[1] + d[3];
    CHECK((via_poly - direct).cwiseAbs().maxCoeff() <= 1e-12);
  }

  // degree >= 2 coefficients all vanish for linear dynamics
  for (const auto& comp : pred.pstm.components())
    CHECK(comp.effective_degree() <= 1);
}

TEST_CASE("predict: delta prior and zero noise propagate deterministically") {
  auto dyn = make_discrete_dynamics(1, 1, [](const auto& x, const auto& nu, int) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0] * 0.9 + x[0] * x[0] * 0.1 + nu[0]};
  });
  GaussianDensity q(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(1, 1));
  GaussianDensity prior(vec({2.0}), Eigen::MatrixXd::Zero(1, 1));
  FilterConfig cfg = small_config();
  RngStream rng(3);
  Prediction pred = predict(Prior(prior), dyn, q, cfg, 0, 0.0, 1.0, rng);
  const double expect = 2.0 * 0.9 + 4.0 * 0.1;
  for (const auto& p : pred.ensemble.particles) CHECK(p[0] == doctest::Approx(expect).epsilon(1e-15));
  CHECK(pred.mean[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("build_measurement_map: square range-angle case") {
  ModelSet ms = static_models(range_angle_measurement(), diag({1e-4, 1e-4}), 2);
  MeasurementMaps maps =
      build_measurement_map(vec({0.3, 0.4}), diag({0.01, 0.02}), ms.measurement, nullptr, 3);
  CHECK(!maps.augmented);
  CHECK(maps.square.dim_out() == 2);
  CHECK(maps.full.center_out()[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(maps.full.center_out()[1] == doctest::Approx(std::atan2(0.4, 0.3)).epsilon(1e-14));
  Eigen::MatrixXd expect(2, 2);
  expect << 0.6, 0.8, -1.6, 1.2;
  CHECK((maps.full.linear_part() - expect).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("build_measurement_map: identity measurement gives the identity map") {
  ModelSet ms = static_models(identity_measurement(2), diag({1.0, 1.0}), 2);
  MeasurementMaps maps =
      build_measurement_map(vec({1.0, -1.0}), diag({1.0, 1.0}), ms.measurement, nullptr, 3);
  CHECK(maps.square.linear_part().isIdentity(0.0));
  for (const auto& c : maps.square.components()) CHECK(c.effective_degree() == 1);
}

TEST_CASE("build_measurement_map: range-only augmented with the angle") {
  const Eigen::VectorXd center = vec({0.2, 0.4});
  const Eigen::MatrixXd p = diag({0.01, 0.02});
  auto range = range_measurement();
  auto angle = angle_measurement();
  MeasurementMaps maps = build_measurement_map(center, p, range, &angle, 3);
  CHECK(maps.augmented);
  CHECK(maps.square.dim_out() == 2);
  CHECK(maps.true_rows_in_square == 1);
  CHECK(maps.square_angle_rows == std::vector<int>{1});

  // the augmented square map equals the range-angle map built directly
  auto both = range_angle_measurement();
  MeasurementMaps direct = build_measurement_map(center, p, both, nullptr, 3);
  for (int i = 0; i < 2; ++i) {
    const auto& a = maps.square.component(i);
    const auto& b = direct.square.component(i);
    for (int pos = 0; pos < a.algebra()->size(); ++pos)
      CHECK(a.coefficient_at(pos) == doctest::Approx(b.coefficient_at(pos)).epsilon(1e-14));
  }

  // p_q from the angle Jacobian: [-x2, x1]/r^2 * P * transpose
  const double r2 = 0.2 * 0.2 + 0.4 * 0.4;
  Eigen::RowVector2d jac(-0.4 / r2, 0.2 / r2);
  const double expect_pq = (jac * p * jac.transpose())(0, 0);
  CHECK((*maps.p_q)(0, 0) == doctest::Approx(expect_pq).epsilon(1e-12));
}

TEST_CASE("build_measurement_map: identity augmentation picks the unobserved component") {
  // measurement sees only x0; x1 must get the fictitious identity row
  auto h = make_measurement("first", 2, 1, {}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0]};
  });
  MeasurementMaps maps =
      build_measurement_map(vec({1.0, 2.0}), diag({0.5, 2.5}), h, nullptr, 2);
  CHECK(maps.augmented);
  Eigen::MatrixXd lin = maps.square.linear_part();
  CHECK(lin(1, 0) == 0.0);
  CHECK(lin(1, 1) == 1.0);
  CHECK((*maps.p_q)(0, 0) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("build_measurement_map: m > n selects a well-conditioned row subset") {
  // three measurements of a 2-state: the first is nearly parallel to the
  // second; the selector must prefer the orthogonal pair {1, 2}
  auto h = make_measurement("three", 2, 3, {}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0] + x[1] * 1.01, x[0] + x[1], x[0] - x[1]};
  });
  MeasurementMaps maps =
      build_measurement_map(vec({0.0, 0.0}), diag({1.0, 1.0}), h, nullptr, 2);
  CHECK(!maps.augmented);
  CHECK(maps.full.dim_out() == 3);
  CHECK(maps.square.dim_out() == 2);
  // greedy: row 0 has the largest single-row norm, then row 2 is the
  // best-conditioned partner (row 1 is nearly parallel to row 0)
  CHECK(maps.square_row_sources == std::vector<int>{0, 2});
}

TEST_CASE("scout: zero noise at the predicted measurement keeps scouts at the center") {
  ModelSet ms = static_models(range_angle_measurement(), diag({0.0, 0.0}), 2);
  const Eigen::VectorXd center = vec({0.3, 0.4});
  MeasurementMaps maps =
      build_measurement_map(center, diag({0.01, 0.02}), ms.measurement, nullptr, 3);
  // observation exactly at the map center
  RngStream rng(5);
  ScoutSet s = scout(maps, maps.full.center_out(), ms.meas_noise, 20, 1e12, rng);
  CHECK((s.mean - center).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(s.cov.cwiseAbs().maxCoeff() <= 1e-28);
}

TEST_CASE("scout: linear measurement pushes noise through the inverse") {
  Eigen::MatrixXd a(2, 2);
  a << 2.0, 0.3, -0.4, 1.5;
  auto h = make_measurement("linear", 2, 2, {}, [a](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    std::vector<T> out{x[0] * a(0, 0) + x[1] * a(0, 1), x[0] * a(1, 0) + x[1] * a(1, 1)};
    return out;
  });
  Eigen::MatrixXd r = diag({0.04, 0.09});
  ModelSet ms = static_models(h, r, 2);
  const Eigen::VectorXd center = vec({1.0, -1.0});
  MeasurementMaps maps = build_measurement_map(center, diag({1.0, 1.0}), ms.measurement,
                                               nullptr, 3);
  const Eigen::VectorXd y_obs = maps.full.center_out() + vec({0.5, -0.2});
  RngStream rng(6);
  ScoutSet s = scout(maps, y_obs, ms.meas_noise, 20000, 1e12, rng);
  const Eigen::MatrixXd ainv = a.inverse();
  const Eigen::VectorXd expect_mean = center + ainv * vec({0.5, -0.2});
  const Eigen::MatrixXd expect_cov = ainv * r * ainv.transpose();
  CHECK((s.mean - expect_mean).cwiseAbs().maxCoeff() < 0.01);
  CHECK((s.cov - expect_cov).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("scout locality: shrinking noise and innovation collapse onto the linear solve") {
  ModelSet ms = static_models(range_angle_measurement(), diag({1.0, 1.0}), 2);
  const Eigen::VectorXd center = vec({0.3, 0.4});
  MeasurementMaps maps =
      build_measurement_map(center, diag({0.01, 0.02}), ms.measurement, nullptr, 3);
  const Eigen::MatrixXd jinv = maps.square.linear_part().inverse();
  const Eigen::VectorXd dir = vec({0.7, -0.4});
  double prev = 1e300;
  for (double s : {1e-1, 1e-2, 1e-3, 1e-4}) {
    GaussianDensity noise(Eigen::VectorXd::Zero(2),
                          (s * s * diag({1e-4, 1e-4})).eval());
    const Eigen::VectorXd y_obs = maps.full.center_out() + s * dir;
    RngStream rng(7);
    ScoutSet sc = scout(maps, y_obs, noise, 50, 1e12, rng);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Eigen::VectorXd lin = center + jinv * (s * dir);
      worst = std::max(worst, (sc.scout_states.col(i) - lin).norm());
    }
    CHECK(worst < prev);
    prev = worst;
  }
  CHECK(prev <= 1e-5);
}

TEST_CASE("scout rejects tiny scout counts") {
  ModelSet ms = static_models(range_angle_measurement(), diag({1e-4, 1e-4}), 2);
  MeasurementMaps maps =
      build_measurement_map(vec({0.3, 0.4}), diag({0.01, 0.02}), ms.measurement, nullptr, 3);
  RngStream rng(8);
  CHECK_THROWS_AS(scout(maps, vec({0.2, 0.0}), ms.meas_noise, 2, 1e12, rng), ConfigError);
}

TEST_CASE("importance_sample: uniform box gives equal weights inside the box") {
  ScoutSet s;
  s.mean = vec({1.0, -2.0});
  s.cov = diag({0.04, 0.09});
  RngStream rng(9);
  ImportanceSample imp =
      importance_sample(s, SpfVariant::UniformBox, BoxRule::PerAxis, 200, diag({1.0, 1.0}), rng);
  for (double lw : imp.log_sis) CHECK(lw == imp.log_sis[0]);
  for (const auto& p : imp.particles) {
    CHECK(std::abs(p[0] - 1.0) <= 3.0 * 0.2 + 1e-12);
    CHECK(std::abs(p[1] + 2.0) <= 3.0 * 0.3 + 1e-12);
  }
  // after normalization every weight is 1/N
  auto w = stochastic::normalize_logweights(imp.log_sis);
  for (double v : w) CHECK(v == doctest::Approx(1.0 / 200).epsilon(1e-12));
}

TEST_CASE("importance_sample: scalar-trace box rule uses one width everywhere") {
  ScoutSet s;
  s.mean = vec({0.0, 0.0});
  s.cov = diag({0.01, 1.0});
  RngStream rng(10);
  ImportanceSample imp = importance_sample(s, SpfVariant::UniformBox, BoxRule::ScalarTrace,
                                           4000, diag({1.0, 1.0}), rng);
  const double width = 3.0 * (0.1 + 1.0);  // trace of the Cholesky factor
  double max0 = 0.0;
  for (const auto& p : imp.particles) {
    CHECK(std::abs(p[0]) <= width + 1e-12);
    CHECK(std::abs(p[1]) <= width + 1e-12);
    max0 = std::max(max0, std::abs(p[0]));
  }
  CHECK(max0 > 3.0 * 0.1);  // wider than the per-axis rule would allow
}

TEST_CASE("importance_sample: gaussian variant log-density at the scout mean") {
  ScoutSet s;
  s.mean = vec({0.5, 0.5});
  s.cov = Eigen::MatrixXd::Identity(2, 2);
  RngStream rng(11);
  ImportanceSample imp =
      importance_sample(s, SpfVariant::Gaussian, BoxRule::PerAxis, 10, diag({1.0, 1.0}), rng);
  GaussianDensity g(s.mean, s.cov);
  CHECK(g.logpdf(s.mean) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  for (std::size_t i = 0; i < imp.particles.size(); ++i)
    CHECK(imp.log_sis[i] == doctest::Approx(g.logpdf(imp.particles[i])).epsilon(1e-13));
}

TEST_CASE("importance_sample: degenerate scout covariance inflates, then falls back") {
  ScoutSet s;
  s.mean = vec({0.0, 0.0});
  s.cov = Eigen::MatrixXd::Zero(2, 2);
  RngStream rng(12);
  ImportanceSample imp =
      importance_sample(s, SpfVariant::Gaussian, BoxRule::PerAxis, 10, diag({1.0, 1.0}), rng);
  CHECK(imp.scout_cov_inflated);

  // inflation scale keyed to a zero predicted covariance cannot help
  CHECK_THROWS_AS(importance_sample(s, SpfVariant::Gaussian, BoxRule::PerAxis, 10,
                                    Eigen::MatrixXd::Zero(2, 2), rng),
                  DegeneracyError);
}

TEST_CASE("correct: identity measurement with tiny noise pins the posterior to the observation") {
  ModelSet ms = static_models(identity_measurement(2), diag({1e-10, 1e-10}), 2);
  const Eigen::VectorXd x_pred = vec({0.0, 0.0});
  const Eigen::MatrixXd p_pred = diag({1.0, 1.0});
  MeasurementMaps maps = build_measurement_map(x_pred, p_pred, ms.measurement, nullptr, 2);
  const Eigen::VectorXd y = vec({0.3, -0.2});
  RngStream rng(13);
  ImportanceSample imp = importance_from_gaussian(GaussianDensity(y, 1e-6 * Eigen::MatrixXd::Identity(2, 2)), 3000, rng);
  FilterOutput out = correct(imp, maps, ms.measurement, y, ms.meas_noise, x_pred, p_pred);
  CHECK((out.mean - y).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("correct: scalar conjugate case recovers the exact posterior") {
  // x ~ N(0,1), y = x + v, v ~ N(0,1), observation 1 -> posterior N(0.5, 0.5)
  ModelSet ms = static_models(identity_measurement(1), diag({1.0}), 1);
  const Eigen::VectorXd x_pred = vec({0.0});
  const Eigen::MatrixXd p_pred = diag({1.0});
  MeasurementMaps maps = build_measurement_map(x_pred, p_pred, ms.measurement, nullptr, 2);
  RngStream rng(14);
  const int n = 10000;
  ImportanceSample imp =
      importance_from_gaussian(GaussianDensity(vec({0.8}), diag({1.0})), n, rng);
  FilterOutput out = correct(imp, maps, ms.measurement, vec({1.0}), ms.meas_noise, x_pred,
                             p_pred);
  // weighted standard error of the mean from the realized weights
  double se2 = 0.0;
  for (std::size_t i = 0; i < imp.particles.size(); ++i) {
    const double d = imp.particles[i][0] - out.mean[0];
    se2 += out.ensemble.weights[i] * out.ensemble.weights[i] * d * d;
  }
  const double se = std::sqrt(se2);
  CHECK(std::abs(out.mean[0] - 0.5) <= 3.0 * se);
  CHECK(out.cov(0, 0) == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("correct: posterior log-weights differ from lik+pre-sis by a constant") {
  ModelSet ms = static_models(range_angle_measurement(), diag({0.01, 0.04}), 2);
  const Eigen::VectorXd x_pred = vec({0.3, 0.4});
  const Eigen::MatrixXd p_pred = diag({0.01, 0.02});
  MeasurementMaps maps = build_measurement_map(x_pred, p_pred, ms.measurement, nullptr, 3);
  RngStream rng(15);
  GaussianDensity imp_density(x_pred, (4.0 * p_pred).eval());
  ImportanceSample imp = importance_from_gaussian(imp_density, 300, rng);
  const Eigen::VectorXd y = vec({0.45, 0.8});
  FilterOutput out = correct(imp, maps, ms.measurement, y, ms.meas_noise, x_pred, p_pred);

  const GaussianDensity prior(x_pred, p_pred);
  std::optional<double> offset;
  for (std::size_t i = 0; i < imp.particles.size(); ++i) {
    Eigen::VectorXd residual =
        maps.full.evaluate_absolute(imp.particles[i]) - y;
    models::wrap_residual(ms.measurement, residual);
    const double raw = ms.meas_noise.logpdf_residual(residual) +
                       prior.logpdf(imp.particles[i]) - imp.log_sis[i];
    const double norm = std::log(out.ensemble.weights[i]);
    if (!offset) offset = norm - raw;
    CHECK(norm - raw == doctest::Approx(*offset).epsilon(1e-9));
  }
}

TEST_CASE("correct: posterior covariance stays symmetric PSD") {
  ModelSet ms = static_models(range_angle_measurement(), diag({0.01, 0.04}), 2);
  const Eigen::VectorXd x_pred = vec({0.3, 0.4});
  const Eigen::MatrixXd p_pred = diag({0.01, 0.02});
  MeasurementMaps maps = build_measurement_map(x_pred, p_pred, ms.measurement, nullptr, 3);
  RngStream rng(16);
  ImportanceSample imp =
      importance_from_gaussian(GaussianDensity(x_pred, p_pred), 64, rng);
  FilterOutput out = correct(imp, maps, ms.measurement, vec({0.2, 0.0}), ms.meas_noise, x_pred,
                             p_pred);
  CHECK((out.cov - out.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.cov);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10 * out.cov.trace());
}

TEST_CASE("select_update compares Frobenius norms") {
  CHECK(select_update(Eigen::MatrixXd::Identity(2, 2), 0.1 * Eigen::MatrixXd::Identity(2, 2)) ==
        UpdateKind::Scout);
  CHECK(select_update(0.1 * Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)) ==
        UpdateKind::Gpf);
}

TEST_CASE("select_update is scale monotone") {
  RngStream rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd a(2, 2), b(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        a(i, j) = rng.normal();
        b(i, j) = rng.normal();
      }
    const Eigen::MatrixXd p_pred = a * a.transpose();
    const Eigen::MatrixXd p_scout = b * b.transpose();
    if (select_update(p_pred, p_scout) == UpdateKind::Gpf) {
      const double c = 1.0 + 9.0 * rng.uniform01();
      CHECK(select_update(p_pred, (c * p_scout).eval()) == UpdateKind::Gpf);
    }
  }
}

TEST_CASE("resample: uniform weights with ESS trigger stay untouched") {
  Ensemble e;
  for (int i = 0; i < 8; ++i) e.particles.push_back(vec({static_cast<double>(i)}));
  e.weights.assign(8, 1.0 / 8.0);
  RngStream rng(18);
  Ensemble r = resample(e, ResamplingPolicy::EssThreshold, 0.5, rng);
  CHECK(r.particles == e.particles);
}

TEST_CASE("resample: multinomial duplicates in proportion to weight") {
  Ensemble e;
  e.particles = {vec({0.0}), vec({1.0})};
  e.weights = {0.9, 0.1};
  RngStream rng(19);
  int zeros = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Ensemble r = resample(e, ResamplingPolicy::EssThreshold, 0.99, rng);
    for (const auto& p : r.particles) {
      if (p[0] == 0.0) ++zeros;
      CHECK((p[0] == 0.0 || p[0] == 1.0));
    }
    for (double w : r.weights) CHECK(w == 0.5);
  }
  const double frac = static_cast<double>(zeros) / (2.0 * trials);
  CHECK(frac == doctest::Approx(0.9).epsilon(0.05));
}

TEST_CASE("resample: gaussian redraw matches the fitted moments") {
  Ensemble e;
  e.particles = {vec({1.0}), vec({-1.0})};
  e.weights = {0.5, 0.5};
  RngStream rng(20);
  Ensemble r = resample(e, ResamplingPolicy::GpfGaussian, 0.5, rng);
  CHECK(r.size() == 2);
  for (double w : r.weights) CHECK(w == 0.5);
  // moments of many redraws approach the fit N(0, 1)
  Ensemble big = e;
  big.particles.clear();
  big.weights.clear();
  double acc = 0.0, acc2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n / 2; ++i) {
    Ensemble rr = resample(e, ResamplingPolicy::GpfGaussian, 0.5, rng);
    for (const auto& p : rr.particles) {
      acc += p[0];
      acc2 += p[0] * p[0];
    }
  }
  CHECK(std::abs(acc / n) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(acc2 / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("repair_psd clips negative eigenvalues only") {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 0.0, 0.0, -0.5;
  Eigen::MatrixXd r = repair_psd(m);
  CHECK(r(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r(1, 1) == doctest::Approx(0.0).epsilon(1e-12));
  Eigen::MatrixXd good = diag({2.0, 3.0});
  CHECK((repair_psd(good) - good).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("scout filter: bimodal map keeps scouts on the prior branch, correction keeps both modes") {
  auto h = make_measurement("quadratic", 1, 1, {}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0] * x[0] / 20.0};
  });
  // scouts about a confident positive center stay positive (local inversion)
  {
    MeasurementMaps maps = build_measurement_map(vec({5.0}), diag({4.0}), h, nullptr, 3);
    GaussianDensity r(Eigen::VectorXd::Zero(1), diag({0.25}));
    RngStream rng(21);
    ScoutSet s = scout(maps, vec({1.25}), r, 200, 1e12, rng);
    CHECK(s.scout_states.minCoeff() > 0.0);
  }
  // a wide importance support lets the prior weight resurrect the mirror mode
  {
    const Eigen::VectorXd x_pred = vec({0.5});
    const Eigen::MatrixXd p_pred = diag({25.0});
    MeasurementMaps maps = build_measurement_map(x_pred, p_pred, h, nullptr, 3);
    GaussianDensity r(Eigen::VectorXd::Zero(1), diag({1.0}));
    RngStream rng(22);
    stochastic::UniformBoxDensity wide(vec({0.0}), vec({10.0}));
    ImportanceSample imp;
    for (int i = 0; i < 4000; ++i) {
      imp.particles.push_back(wide.sample(rng));
      imp.log_sis.push_back(wide.logpdf(imp.particles.back()));
    }
    FilterOutput out = correct(imp, maps, h, vec({1.25}), r, x_pred, p_pred);
    double pos = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < imp.particles.size(); ++i)
      (imp.particles[i][0] > 0.0 ? pos : neg) += out.ensemble.weights[i];
    CHECK(pos >= 0.2);
    CHECK(neg >= 0.2);
  }
}

TEST_CASE("scout filter: singular linear part falls back to the gpf update") {
  auto h = make_measurement("quadratic", 1, 1, {}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0] * x[0] / 20.0};
  });
  ModelSet ms{make_static_dynamics(1), h, std::nullopt,
              GaussianDensity(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(1, 1)),
              GaussianDensity(Eigen::VectorXd::Zero(1), diag({1.0}))};
  FilterConfig cfg = small_config();
  ScoutParticleFilter f("spf2", ms, cfg);
  // predicted mean exactly zero: d(x^2/20)/dx = 0, the map cannot be inverted
  f.initialize(GaussianDensity(vec({0.0}), diag({4.0})));
  RngStream rng(23);
  FilterOutput out = f.step(0, 0.0, 0.0, vec({0.45}), rng);
  CHECK(out.update_kind == UpdateKind::Gpf);
  CHECK(out.diag.inversion_failed);
  CHECK(out.diag.fell_back_to_gpf);
}

TEST_CASE("filters are deterministic under identical seeds") {
  ModelSet ms = static_models(range_angle_measurement(), diag({0.015 * 0.015, 0.1218}), 2);
  FilterConfig cfg = small_config();
  for (const char* name : {"spf1", "spf2", "bpf", "sis-ekf", "sis-ukf", "gpf"}) {
    auto f1 = make_filter(name, ms, cfg);
    auto f2 = make_filter(name, ms, cfg);
    GaussianDensity prior(vec({0.3, 0.4}), diag({0.01, 0.02}));
    f1->initialize(prior);
    f2->initialize(prior);
    RngStream r1(99, 1), r2(99, 1);
    FilterOutput o1 = f1->step(0, 0.0, 0.0, vec({0.2, 0.0}), r1);
    FilterOutput o2 = f2->step(0, 0.0, 0.0, vec({0.2, 0.0}), r2);
    CHECK(o1.mean == o2.mean);
    CHECK(o1.cov == o2.cov);
    CHECK(o1.n_eff == o2.n_eff);
  }
}

TEST_CASE("sis-ekf matches the exact Kalman posterior on the linear case") {
  ModelSet ms = static_models(identity_measurement(1), diag({1.0}), 1);
  FilterConfig cfg = small_config();
  cfg.n_update = 10000;
  BaselineFilter f("sis-ekf", BaselineKind::SisEkf, ms, cfg);
  f.initialize(GaussianDensity(vec({0.0}), diag({1.0})));
  RngStream rng(24);
  FilterOutput out = f.step(0, 0.0, 0.0, vec({1.0}), rng);
  CHECK(out.mean[0] == doctest::Approx(0.5).epsilon(0.05));
  CHECK(out.cov(0, 0) == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("apf refuses zero process noise") {
  auto dyn = make_discrete_dynamics(1, 1, [](const auto& x, const auto& nu, int) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0] + nu[0]};
  });
  ModelSet ms{dyn, identity_measurement(1), std::nullopt,
              GaussianDensity(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(1, 1)),
              GaussianDensity(Eigen::VectorXd::Zero(1), diag({1.0}))};
  BaselineFilter f("apf", BaselineKind::Apf, ms, small_config());
  f.initialize(GaussianDensity(vec({0.0}), diag({1.0})));
  RngStream rng(25);
  CHECK_THROWS_AS(f.step(0, 0.0, 1.0, vec({0.5}), rng), DegeneracyError);
}

TEST_CASE("bpf collapses under zero process noise and a sharp likelihood") {
  auto dyn = make_discrete_dynamics(1, 1, [](const auto& x, const auto&, int) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0]};
  });
  ModelSet ms{dyn, identity_measurement(1), std::nullopt,
              GaussianDensity(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(1, 1)),
              GaussianDensity(Eigen::VectorXd::Zero(1), diag({1e-12}))};
  FilterConfig cfg = small_config();
  BaselineFilter f("bpf", BaselineKind::Bpf, ms, cfg);
  f.initialize(GaussianDensity(vec({0.0}), diag({1.0})));
  RngStream rng(26);
  bool collapsed = false;
  try {
    for (int k = 0; k < 10; ++k) f.step(k, k, k + 1.0, vec({0.1}), rng);
  } catch (const DegeneracyError&) {
    collapsed = true;
  }
  CHECK(collapsed);
}

TEST_CASE("unknown filter name lists the known ones") {
  ModelSet ms = static_models(identity_measurement(1), diag({1.0}), 1);
  try {
    make_filter("nope", ms, small_config());
    CHECK(false);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("spf1") != std::string::npos);
    CHECK(msg.find("bpf") != std::string::npos);
  }
}
