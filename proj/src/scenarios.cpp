#include "scoutpf/scenarios.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace scoutpf::scenarios {

namespace {

using nlohmann::json;

// Unqualified math that resolves for doubles and truncated polynomials alike.
namespace gmath {
using std::atan2;
using std::cos;
using std::sin;
using std::sqrt;
inline double reciprocal(double v) { return 1.0 / v; }
inline double asin(double v) { return std::asin(v); }
using polyalg::asin;
using polyalg::atan2;
using polyalg::cos;
using polyalg::reciprocal;
using polyalg::sin;
using polyalg::sqrt;
}  // namespace gmath

constexpr double kEarthRotationRate = 7.2921158553e-5;  // rad/s, sidereal

// ---------------------------------------------------------------------------
// measurement models

MeasurementModel measurement_range_angle_2d() {
  return models::make_measurement("range_angle_2d", 2, 2, {1}, [](const auto& x) {
    using namespace gmath;
    using T = std::decay_t<decltype(x[0])>;
    T r = sqrt(x[0] * x[0] + x[1] * x[1]);
    T a = atan2(x[1], x[0]);
    return std::vector<T>{r, a};
  });
}

MeasurementModel measurement_range_2d() {
  return models::make_measurement("range_2d", 2, 1, {}, [](const auto& x) {
    using namespace gmath;
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{sqrt(x[0] * x[0] + x[1] * x[1])};
  });
}

MeasurementModel measurement_angle_2d() {
  return models::make_measurement("angle_2d", 2, 1, {0}, [](const auto& x) {
    using namespace gmath;
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{atan2(x[1], x[0])};
  });
}

MeasurementModel measurement_range_bearing_4d() {
  return models::make_measurement("range_bearing_4d", 4, 2, {1}, [](const auto& x) {
    using namespace gmath;
    using T = std::decay_t<decltype(x[0])>;
    T r = sqrt(x[0] * x[0] + x[1] * x[1]);
    T a = atan2(x[1], x[0]);
    return std::vector<T>{r, a};
  });
}

MeasurementModel measurement_range_az_el_3d() {
  return models::make_measurement("range_az_el_3d", 6, 3, {1, 2}, [](const auto& x) {
    using namespace gmath;
    using T = std::decay_t<decltype(x[0])>;
    T r = sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    T az = atan2(x[1], x[0]);
    T el = asin(x[2] * reciprocal(r));
    return std::vector<T>{r, az, el};
  });
}

MeasurementModel measurement_quadratic_scaled() {
  return models::make_measurement("quadratic_scaled", 1, 1, {}, [](const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0] * x[0] * (1.0 / 20.0)};
  });
}

MeasurementModel make_measurement_model(const std::string& name) {
  if (name == "range_angle_2d") return measurement_range_angle_2d();
  if (name == "range_2d") return measurement_range_2d();
  if (name == "angle_2d") return measurement_angle_2d();
  if (name == "range_bearing_4d") return measurement_range_bearing_4d();
  if (name == "range_az_el_3d") return measurement_range_az_el_3d();
  if (name == "quadratic_scaled") return measurement_quadratic_scaled();
  throw ConfigError("unknown measurement model '" + name + "'");
}

// ---------------------------------------------------------------------------
// dynamics models

DynamicsModel dynamics_projectile(double dt, double g) {
  return models::make_discrete_dynamics(4, 4, [dt, g](const auto& x, const auto& nu, int) {
    using T = std::decay_t<decltype(x[0])>;
    return std::vector<T>{x[0] + x[2] * dt + nu[0],
                          x[1] + x[3] * dt - 0.5 * g * dt * dt + nu[1],
                          x[2] + nu[2],
                          x[3] - g * dt + nu[3]};
  });
}

DynamicsModel dynamics_ungm() {
  return models::make_discrete_dynamics(1, 1, [](const auto& x, const auto& nu, int k) {
    using namespace gmath;
    using T = std::decay_t<decltype(x[0])>;
    T denom = reciprocal(1.0 + x[0] * x[0]);
    T next = x[0] * 0.5 + x[0] * denom * 25.0 + 8.0 * std::cos(1.2 * k) + nu[0];
    return std::vector<T>{next};
  });
}

// Gravity gradient of mu/r plus the stated zonal perturbation potentials
// (phi is the latitude, s = sin(phi) = z/r):
//   U_J2 = c2 (s^2 - 1/3)^2 / r^3,        c2 = -(3/2) J2 mu Re^2
//   U_J3 = c3 (5 s^3 - 3 s)^2 / r^4,      c3 = -(1/2) J3 mu Re^3
template <class T>
std::vector<T> orbit_acceleration(double mu, double c2, double c3, const std::vector<T>& pos) {
  using namespace gmath;
  const T& x = pos[0];
  const T& y = pos[1];
  const T& z = pos[2];
  T r2 = x * x + y * y + z * z;
  T ir2 = reciprocal(r2);
  T ir = sqrt(ir2);
  T ir3 = ir2 * ir;
  T ir5 = ir3 * ir2;
  T ir6 = ir5 * ir;
  T ir7 = ir6 * ir;
  T s = z * ir;
  T s2 = s * s;
  T a = s2 - (1.0 / 3.0);
  T b = s * (s2 * 5.0 - 3.0);
  T bp = s2 * 15.0 - 3.0;
  // radial part shared by all three axes, plus the latitude coupling
  T gc = (-mu) * ir3 - 3.0 * c2 * (a * a) * ir5 - 4.0 * c3 * (b * b) * ir6;
  T gz = 4.0 * c2 * (a * s) * ir6 + 2.0 * c3 * (b * bp) * ir7;
  T ax = x * (gc - gz * z);
  T ay = y * (gc - gz * z);
  T az = z * gc + (r2 - z * z) * gz;
  return {ax, ay, az};
}

DynamicsModel dynamics_orbit(double mu, double re, double j2, double j3, double dt_arc,
                             double dt_gap, double long_interval) {
  const double c2 = -1.5 * j2 * mu * re * re;
  const double c3 = -0.5 * j3 * mu * re * re * re;
  DynamicsModel d = models::make_continuous_dynamics(6, [mu, c2, c3](double, const auto& x) {
    using T = std::decay_t<decltype(x[0])>;
    const std::vector<T> pos{x[0], x[1], x[2]};
    std::vector<T> acc = orbit_acceleration(mu, c2, c3, pos);
    return std::vector<T>{x[3], x[4], x[5], acc[0], acc[1], acc[2]};
  });
  d.dt_short = dt_arc;
  d.dt_long = dt_gap;
  d.long_interval = long_interval;
  return d;
}

DynamicsModel make_dynamics_model(const ScenarioSpec& spec) {
  const std::string& name = spec.dynamics_model;
  if (name == "static") return models::make_static_dynamics(spec.state_dim);
  if (name == "projectile") return dynamics_projectile(spec.param("dt"), spec.param("g"));
  if (name == "ungm") return dynamics_ungm();
  if (name == "orbit_j2j3")
    return dynamics_orbit(spec.param("mu"), spec.param("re"), spec.param("j2"),
                          spec.param("j3"), spec.param("dt_arc"), spec.param("dt_gap"),
                          spec.param("long_interval"));
  throw ConfigError("unknown dynamics model '" + name + "'");
}

}  // namespace

double ScenarioSpec::param(const std::string& key) const {
  const auto it = params.find(key);
  if (it == params.end())
    throw ConfigError("scenario '" + name + "' is missing parameter '" + key + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// schedules

std::vector<double> Schedule::candidate_times() const {
  switch (kind) {
    case Kind::Times:
      return times;
    case Kind::Pattern: {
      std::vector<double> out;
      double t = pattern.first_obs;
      for (int b = 0; b < pattern.bursts; ++b) {
        for (int i = 0; i < pattern.obs_per_burst; ++i) {
          out.push_back(t);
          if (i + 1 < pattern.obs_per_burst) t += pattern.obs_spacing;
        }
        t += pattern.gap;
      }
      return out;
    }
    case Kind::Station: {
      std::vector<double> out;
      for (double t = station.scan_interval; t <= station.horizon + 1e-9;
           t += station.scan_interval)
        out.push_back(t);
      return out;
    }
  }
  throw ConfigError("unknown schedule kind");
}

// ---------------------------------------------------------------------------
// scenario builders

ScenarioSpec scenario_range_angle() {
  ScenarioSpec s;
  s.name = "range_angle";
  s.state_dim = 2;
  s.meas_dim = 2;
  s.dynamics_model = "static";
  s.measurement_model = "range_angle_2d";
  s.initial_mean = (Eigen::VectorXd(2) << 0.3, 0.4).finished();
  s.initial_cov = (Eigen::VectorXd(2) << 0.01, 0.02).finished().asDiagonal();
  s.process_noise = Eigen::MatrixXd::Zero(2, 2);
  const double sigma_angle = 20.0 * std::numbers::pi / 180.0;
  s.meas_noise =
      (Eigen::VectorXd(2) << 0.015 * 0.015, sigma_angle * sigma_angle).finished().asDiagonal();
  s.schedule.kind = Schedule::Kind::Times;
  s.schedule.times = {0.0};
  s.truth.kind = TruthRule::Kind::FixedObservation;
  s.truth.observation = (Eigen::VectorXd(2) << 0.2, 0.0).finished();
  s.filter_defaults.n_predict = 1000;
  s.filter_defaults.n_update = 1000;
  s.filter_defaults.n_scout = 50;
  s.filter_defaults.order = 3;
  return s;
}

ScenarioSpec scenario_range_only() {
  ScenarioSpec s = scenario_range_angle();
  s.name = "range_only";
  s.meas_dim = 1;
  s.measurement_model = "range_2d";
  s.augmentation_model = "angle_2d";
  s.initial_mean = (Eigen::VectorXd(2) << 0.2, 0.4).finished();
  s.meas_noise = (Eigen::MatrixXd(1, 1) << 0.015 * 0.015).finished();
  s.truth.observation = (Eigen::VectorXd(1) << 0.1).finished();
  return s;
}

ScenarioSpec scenario_projectile() {
  ScenarioSpec s;
  s.name = "projectile";
  s.state_dim = 4;
  s.meas_dim = 2;
  s.dynamics_model = "projectile";
  s.measurement_model = "range_bearing_4d";
  s.params["dt"] = 0.2;
  s.params["g"] = 9.81;
  s.initial_mean = (Eigen::VectorXd(4) << 0.0, 0.0, 1.0, 12.0).finished();
  s.initial_cov = 0.01 * Eigen::MatrixXd::Identity(4, 4);
  s.process_noise =
      (Eigen::VectorXd(4) << 0.0005, 0.0005, 0.0025, 0.0025).finished().asDiagonal();
  s.meas_noise = (Eigen::VectorXd(2) << 1e-5, 1e-6).finished().asDiagonal();
  s.schedule.kind = Schedule::Kind::Times;
  for (int k = 1; k <= 12; ++k) s.schedule.times.push_back(0.2 * k);
  s.truth.kind = TruthRule::Kind::Simulate;
  s.truth.sample_initial = true;
  s.filter_defaults.n_predict = 1000;
  s.filter_defaults.n_update = 1000;
  s.filter_defaults.n_scout = 100;
  s.filter_defaults.order = 3;
  return s;
}

ScenarioSpec scenario_orbit() {
  ScenarioSpec s;
  s.name = "orbit";
  s.state_dim = 6;
  s.meas_dim = 3;
  s.dynamics_model = "orbit_j2j3";
  s.measurement_model = "range_az_el_3d";
  s.params["mu"] = 398600.4418;  // km^3/s^2
  s.params["re"] = 6378.137;     // km
  s.params["j2"] = 0.0010826267;
  s.params["j3"] = -0.0000025327;
  s.params["dt_arc"] = 10.0;
  s.params["dt_gap"] = 60.0;
  s.params["long_interval"] = 600.0;
  s.initial_mean = (Eigen::VectorXd(6) << -2012.151, -381.450, 6316.615, 5.400366, -5.916814,
                    1.362965)
                       .finished();
  Eigen::VectorXd p0(6);
  p0 << 30.0, 30.0, 30.0, 0.01, 0.01, 0.01;
  s.initial_cov = p0.asDiagonal();
  s.process_noise = Eigen::MatrixXd::Zero(6, 6);
  const double arcsec = std::numbers::pi / (180.0 * 3600.0);
  Eigen::VectorXd r(3);
  r << 1.0, arcsec * arcsec, arcsec * arcsec;
  r[0] = 1.0;  // km^2
  s.meas_noise = r.asDiagonal();
  s.schedule.kind = Schedule::Kind::Pattern;
  s.schedule.pattern.bursts = 3;
  s.schedule.pattern.obs_per_burst = 6;
  s.schedule.pattern.obs_spacing = 120.0;
  s.schedule.pattern.gap = 43200.0;
  s.schedule.pattern.first_obs = 120.0;
  s.schedule.station.latitude_deg = 42.0;
  s.schedule.station.longitude_deg = -93.6;
  s.schedule.station.elevation_mask_deg = 10.0;
  s.schedule.station.scan_interval = 120.0;
  s.schedule.station.horizon = 2.0 * 86400.0;
  s.truth.kind = TruthRule::Kind::Simulate;
  s.truth.sample_initial = true;
  s.filter_defaults.n_predict = 1000;
  s.filter_defaults.n_update = 1000;
  s.filter_defaults.n_scout = 100;
  s.filter_defaults.order = 3;
  s.filter_defaults.selector = filters::UpdateSelector::CompareScoutCov;
  return s;
}

ScenarioSpec scenario_bimodal() {
  ScenarioSpec s;
  s.name = "bimodal";
  s.state_dim = 1;
  s.meas_dim = 1;
  s.dynamics_model = "ungm";
  s.measurement_model = "quadratic_scaled";
  s.initial_mean = (Eigen::VectorXd(1) << 0.0).finished();
  s.initial_cov = (Eigen::MatrixXd(1, 1) << 2.0).finished();
  s.process_noise = (Eigen::MatrixXd(1, 1) << 10.0).finished();
  s.meas_noise = (Eigen::MatrixXd(1, 1) << 1.0).finished();
  s.schedule.kind = Schedule::Kind::Times;
  for (int k = 1; k <= 25; ++k) s.schedule.times.push_back(static_cast<double>(k));
  s.truth.kind = TruthRule::Kind::Simulate;
  s.truth.sample_initial = true;
  s.filter_defaults.n_predict = 50;
  s.filter_defaults.n_update = 50;
  s.filter_defaults.n_scout = 20;
  s.filter_defaults.order = 3;
  s.filter_defaults.selector = filters::UpdateSelector::CompareScoutCov;
  return s;
}

std::vector<std::string> scenario_names() {
  return {"range_angle", "range_only", "projectile", "orbit", "bimodal"};
}

ScenarioSpec make_scenario(const std::string& name) {
  if (name == "range_angle") return scenario_range_angle();
  if (name == "range_only") return scenario_range_only();
  if (name == "projectile") return scenario_projectile();
  if (name == "orbit") return scenario_orbit();
  if (name == "bimodal") return scenario_bimodal();
  std::string known;
  for (const auto& n : scenario_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown scenario '" + name + "'; known scenarios: " + known);
}

filters::ModelSet build_models(const ScenarioSpec& spec) {
  MeasurementModel measurement = make_measurement_model(spec.measurement_model);
  if (measurement.state_dim != spec.state_dim || measurement.meas_dim != spec.meas_dim)
    throw ConfigError("scenario dimensions do not match the measurement model");
  std::optional<MeasurementModel> augmentation;
  if (!spec.augmentation_model.empty())
    augmentation = make_measurement_model(spec.augmentation_model);
  return filters::ModelSet{
      make_dynamics_model(spec), std::move(measurement), std::move(augmentation),
      GaussianDensity(Eigen::VectorXd::Zero(spec.process_noise.rows()), spec.process_noise),
      GaussianDensity(Eigen::VectorXd::Zero(spec.meas_noise.rows()), spec.meas_noise)};
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd mat_from_json(const json& rows) {
  const auto nr = static_cast<Eigen::Index>(rows.size());
  const auto nc = nr > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  Eigen::MatrixXd m(nr, nc);
  for (Eigen::Index r = 0; r < nr; ++r)
    for (Eigen::Index c = 0; c < nc; ++c)
      m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  return m;
}

std::string variant_name(filters::SpfVariant v) {
  return v == filters::SpfVariant::UniformBox ? "uniform-box" : "gaussian";
}
filters::SpfVariant variant_from(const std::string& s) {
  if (s == "uniform-box") return filters::SpfVariant::UniformBox;
  if (s == "gaussian") return filters::SpfVariant::Gaussian;
  throw ConfigError("unknown spf variant '" + s + "'");
}

std::string box_rule_name(filters::BoxRule b) {
  return b == filters::BoxRule::PerAxis ? "per-axis" : "scalar-trace";
}
filters::BoxRule box_rule_from(const std::string& s) {
  if (s == "per-axis") return filters::BoxRule::PerAxis;
  if (s == "scalar-trace") return filters::BoxRule::ScalarTrace;
  throw ConfigError("unknown box rule '" + s + "'");
}

std::string resampling_name(filters::ResamplingPolicy r) {
  return r == filters::ResamplingPolicy::GpfGaussian ? "gpf-gaussian" : "ess-threshold";
}
filters::ResamplingPolicy resampling_from(const std::string& s) {
  if (s == "gpf-gaussian") return filters::ResamplingPolicy::GpfGaussian;
  if (s == "ess-threshold") return filters::ResamplingPolicy::EssThreshold;
  throw ConfigError("unknown resampling policy '" + s + "'");
}

std::string selector_name(filters::UpdateSelector u) {
  switch (u) {
    case filters::UpdateSelector::AlwaysScout:
      return "always-scout";
    case filters::UpdateSelector::CompareScoutCov:
      return "frobenius-select";
    case filters::UpdateSelector::CompareFictitiousCov:
      return "frobenius-select-pq";
  }
  return "always-scout";
}
filters::UpdateSelector selector_from(const std::string& s) {
  if (s == "always-scout") return filters::UpdateSelector::AlwaysScout;
  if (s == "frobenius-select") return filters::UpdateSelector::CompareScoutCov;
  if (s == "frobenius-select-pq") return filters::UpdateSelector::CompareFictitiousCov;
  throw ConfigError("unknown update selector '" + s + "'");
}

json config_to_json(const filters::FilterConfig& c) {
  return json{{"particles", c.n_update},
              {"predict_particles", c.n_predict},
              {"scouts", c.n_scout},
              {"order", c.order},
              {"variant", variant_name(c.variant)},
              {"box_rule", box_rule_name(c.box_rule)},
              {"resampling", resampling_name(c.resampling)},
              {"ess_threshold", c.ess_threshold},
              {"selector", selector_name(c.selector)},
              {"condition_threshold", c.condition_threshold}};
}

filters::FilterConfig config_from_json(const json& j) {
  filters::FilterConfig c;
  c.n_update = j.value("particles", c.n_update);
  c.n_predict = j.value("predict_particles", c.n_predict);
  c.n_scout = j.value("scouts", c.n_scout);
  c.order = j.value("order", c.order);
  if (j.contains("variant")) c.variant = variant_from(j["variant"].get<std::string>());
  if (j.contains("box_rule")) c.box_rule = box_rule_from(j["box_rule"].get<std::string>());
  if (j.contains("resampling"))
    c.resampling = resampling_from(j["resampling"].get<std::string>());
  c.ess_threshold = j.value("ess_threshold", c.ess_threshold);
  if (j.contains("selector")) c.selector = selector_from(j["selector"].get<std::string>());
  c.condition_threshold = j.value("condition_threshold", c.condition_threshold);
  return c;
}

json schedule_to_json(const Schedule& s) {
  switch (s.kind) {
    case Schedule::Kind::Times:
      return json{{"kind", "times"}, {"times", s.times}};
    case Schedule::Kind::Pattern:
      return json{{"kind", "pattern"},
                  {"bursts", s.pattern.bursts},
                  {"obs_per_burst", s.pattern.obs_per_burst},
                  {"obs_spacing", s.pattern.obs_spacing},
                  {"gap", s.pattern.gap},
                  {"first_obs", s.pattern.first_obs}};
    case Schedule::Kind::Station:
      return json{{"kind", "station"},
                  {"latitude_deg", s.station.latitude_deg},
                  {"longitude_deg", s.station.longitude_deg},
                  {"elevation_mask_deg", s.station.elevation_mask_deg},
                  {"scan_interval", s.station.scan_interval},
                  {"horizon", s.station.horizon}};
  }
  throw ConfigError("unknown schedule kind");
}

Schedule schedule_from_json(const json& j) {
  Schedule s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "times") {
    s.kind = Schedule::Kind::Times;
    s.times = j.at("times").get<std::vector<double>>();
  } else if (kind == "pattern") {
    s.kind = Schedule::Kind::Pattern;
    s.pattern.bursts = j.at("bursts").get<int>();
    s.pattern.obs_per_burst = j.at("obs_per_burst").get<int>();
    s.pattern.obs_spacing = j.at("obs_spacing").get<double>();
    s.pattern.gap = j.at("gap").get<double>();
    s.pattern.first_obs = j.at("first_obs").get<double>();
  } else if (kind == "station") {
    s.kind = Schedule::Kind::Station;
    s.station.latitude_deg = j.at("latitude_deg").get<double>();
    s.station.longitude_deg = j.at("longitude_deg").get<double>();
    s.station.elevation_mask_deg = j.at("elevation_mask_deg").get<double>();
    s.station.scan_interval = j.at("scan_interval").get<double>();
    s.station.horizon = j.at("horizon").get<double>();
  } else {
    throw ConfigError("unknown schedule kind '" + kind + "'");
  }
  return s;
}

json spec_to_json(const ScenarioSpec& s) {
  json j;
  j["schema_version"] = 1;
  j["name"] = s.name;
  j["state_dim"] = s.state_dim;
  j["meas_dim"] = s.meas_dim;
  j["dynamics_model"] = s.dynamics_model;
  j["measurement_model"] = s.measurement_model;
  j["augmentation_model"] = s.augmentation_model;
  j["params"] = s.params;
  j["process_noise"] = mat_to_json(s.process_noise);
  j["meas_noise"] = mat_to_json(s.meas_noise);
  j["initial_mean"] = vec_to_json(s.initial_mean);
  j["initial_cov"] = mat_to_json(s.initial_cov);
  j["schedule"] = schedule_to_json(s.schedule);
  j["truth"] = s.truth.kind == TruthRule::Kind::FixedObservation
                   ? json{{"kind", "fixed_observation"},
                          {"observation", vec_to_json(s.truth.observation)}}
                   : json{{"kind", "simulate"}, {"sample_initial", s.truth.sample_initial}};
  j["filter_defaults"] = config_to_json(s.filter_defaults);
  return j;
}

ScenarioSpec spec_from_json(const json& j) {
  ScenarioSpec s;
  s.name = j.at("name").get<std::string>();
  s.state_dim = j.at("state_dim").get<int>();
  s.meas_dim = j.at("meas_dim").get<int>();
  s.dynamics_model = j.at("dynamics_model").get<std::string>();
  s.measurement_model = j.at("measurement_model").get<std::string>();
  s.augmentation_model = j.value("augmentation_model", std::string());
  if (j.contains("params")) s.params = j["params"].get<std::map<std::string, double>>();
  s.process_noise = mat_from_json(j.at("process_noise"));
  s.meas_noise = mat_from_json(j.at("meas_noise"));
  s.initial_mean = vec_from_json(j.at("initial_mean"));
  s.initial_cov = mat_from_json(j.at("initial_cov"));
  s.schedule = schedule_from_json(j.at("schedule"));
  const auto& t = j.at("truth");
  if (t.at("kind").get<std::string>() == "fixed_observation") {
    s.truth.kind = TruthRule::Kind::FixedObservation;
    s.truth.observation = vec_from_json(t.at("observation"));
  } else {
    s.truth.kind = TruthRule::Kind::Simulate;
    s.truth.sample_initial = t.value("sample_initial", true);
  }
  if (j.contains("filter_defaults")) s.filter_defaults = config_from_json(j["filter_defaults"]);
  return s;
}

}  // namespace

std::string to_json_string(const ScenarioSpec& spec, int indent) {
  return spec_to_json(spec).dump(indent);
}

ScenarioSpec from_json_string(const std::string& text) {
  return spec_from_json(json::parse(text));
}

ScenarioSpec load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("cannot parse scenario file '" + path + "': " + e.what());
  }
  return spec_from_json(j);
}

void save_scenario_file(const ScenarioSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scenario file '" + path + "'");
  out << to_json_string(spec) << '\n';
}

// ---------------------------------------------------------------------------
// truth simulation

namespace {

bool station_visible(const GroundStation& st, double re, double t,
                     const Eigen::VectorXd& state) {
  const double lat = st.latitude_deg * std::numbers::pi / 180.0;
  const double lon = st.longitude_deg * std::numbers::pi / 180.0 + kEarthRotationRate * t;
  Eigen::Vector3d up(std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon),
                     std::sin(lat));
  const Eigen::Vector3d station = re * up;
  const Eigen::Vector3d d = state.head(3) - station;
  const double elevation = std::asin(up.dot(d) / d.norm());
  return elevation > st.elevation_mask_deg * std::numbers::pi / 180.0;
}

}  // namespace

TruthSimulation simulate_truth(const ScenarioSpec& spec, RngStream& rng) {
  TruthSimulation sim;
  sim.times = spec.schedule.candidate_times();

  if (spec.truth.kind == TruthRule::Kind::FixedObservation) {
    sim.initial_state = spec.initial_mean;
    for (std::size_t k = 0; k < sim.times.size(); ++k) {
      sim.states.push_back(spec.initial_mean);
      sim.records.push_back(
          ObservationRecord{static_cast<int>(k) + 1, sim.times[k], spec.truth.observation, true});
    }
    return sim;
  }

  const filters::ModelSet models = build_models(spec);
  const GaussianDensity initial(spec.initial_mean, spec.initial_cov);
  sim.initial_state = spec.truth.sample_initial ? initial.sample(rng) : spec.initial_mean;

  const bool noise_free = models.process_noise.is_zero();
  Eigen::VectorXd x = sim.initial_state;
  double t_prev = 0.0;
  for (std::size_t k = 0; k < sim.times.size(); ++k) {
    const double t = sim.times[k];
    const Eigen::VectorXd nu = noise_free
                                   ? Eigen::VectorXd::Zero(models.process_noise.dim())
                                   : Eigen::VectorXd(models.process_noise.sample(rng));
    x = models::propagate_numeric(models.dynamics, x, nu, static_cast<int>(k), t_prev, t);
    sim.states.push_back(x);

    ObservationRecord rec;
    rec.step = static_cast<int>(k) + 1;
    rec.time = t;
    rec.visible = spec.schedule.kind != Schedule::Kind::Station ||
                  station_visible(spec.schedule.station, spec.param("re"), t, x);
    if (rec.visible)
      rec.measurement = models.measurement.eval(x) + models.meas_noise.sample(rng);
    sim.records.push_back(std::move(rec));
    t_prev = t;
  }
  return sim;
}

// ---------------------------------------------------------------------------
// references

Eigen::VectorXd reference_posterior_mean(const ScenarioSpec& spec) {
  if (spec.truth.kind != TruthRule::Kind::FixedObservation)
    throw ConfigError("reference posterior mean is defined for fixed-observation scenarios");
  if (spec.state_dim > 2)
    throw ConfigError("reference quadrature supports one or two state dimensions");

  const filters::ModelSet models = build_models(spec);
  const GaussianDensity prior(spec.initial_mean, spec.initial_cov);
  const Eigen::VectorXd& y = spec.truth.observation;

  const Eigen::VectorXd sigma = spec.initial_cov.diagonal().cwiseSqrt();
  const double span = 8.0;
  const int npts = spec.state_dim == 1 ? 40001 : 701;

  std::vector<double> logpost;
  std::vector<Eigen::VectorXd> points;
  auto visit = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd residual = models.measurement.eval(x) - y;
    models::wrap_residual(models.measurement, residual);
    logpost.push_back(prior.logpdf(x) + models.meas_noise.logpdf_residual(residual));
    points.push_back(x);
  };
  if (spec.state_dim == 1) {
    for (int i = 0; i < npts; ++i) {
      const double a = -span + 2.0 * span * i / (npts - 1.0);
      visit(spec.initial_mean + a * sigma);
    }
  } else {
    for (int i = 0; i < npts; ++i) {
      for (int j = 0; j < npts; ++j) {
        Eigen::VectorXd x = spec.initial_mean;
        x[0] += (-span + 2.0 * span * i / (npts - 1.0)) * sigma[0];
        x[1] += (-span + 2.0 * span * j / (npts - 1.0)) * sigma[1];
        visit(x);
      }
    }
  }
  const std::vector<double> w = stochastic::normalize_logweights(logpost);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(spec.state_dim);
  for (std::size_t i = 0; i < w.size(); ++i) mean += w[i] * points[i];
  return mean;
}

double orbit_energy(const ScenarioSpec& spec, const Eigen::VectorXd& state) {
  const double mu = spec.param("mu");
  const double re = spec.param("re");
  const double j2 = spec.param("j2");
  const double j3 = spec.param("j3");
  const double c2 = -1.5 * j2 * mu * re * re;
  const double c3 = -0.5 * j3 * mu * re * re * re;
  const double r = state.head(3).norm();
  const double s = state[2] / r;
  const double a = s * s - 1.0 / 3.0;
  const double b = s * (5.0 * s * s - 3.0);
  const double u = mu / r + c2 * a * a / (r * r * r) + c3 * b * b / (r * r * r * r);
  return 0.5 * state.tail(3).squaredNorm() - u;
}

}  // namespace scoutpf::scenarios
