#pragma once

// The benchmark estimation problems as data-driven scenario specifications:
// dynamics, measurement geometry, noise levels, observation schedules, and
// truth simulation.

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scoutpf/filters.hpp"
#include "scoutpf/models.hpp"
#include "scoutpf/stochastic.hpp"

namespace scoutpf::scenarios {

using models::DynamicsModel;
using models::MeasurementModel;
using models::PolyMap;
using stochastic::GaussianDensity;
using stochastic::RngStream;

struct SchedulePattern {
  int bursts = 1;
  int obs_per_burst = 1;
  double obs_spacing = 0.0;
  double gap = 0.0;  // last observation of a burst to the first of the next
  double first_obs = 0.0;
};

/// Single ground station on a rotating spherical Earth; drives visibility
/// when a geometry-based schedule is requested.
struct GroundStation {
  double latitude_deg = 0.0;
  double longitude_deg = 0.0;
  double elevation_mask_deg = 10.0;
  double scan_interval = 120.0;
  double horizon = 86400.0;  // total scan span
};

struct Schedule {
  enum class Kind { Times, Pattern, Station };
  Kind kind = Kind::Times;
  std::vector<double> times;
  SchedulePattern pattern;
  GroundStation station;

  /// Candidate observation times (visibility applied later for Station).
  std::vector<double> candidate_times() const;
};

struct TruthRule {
  enum class Kind { FixedObservation, Simulate };
  Kind kind = Kind::Simulate;
  Eigen::VectorXd observation;  // FixedObservation only
  bool sample_initial = true;   // Simulate: draw x0 from the initial density
};

struct ScenarioSpec {
  std::string name;
  int state_dim = 0;
  int meas_dim = 0;
  std::string dynamics_model;      // static | projectile | orbit_j2j3 | ungm
  std::string measurement_model;   // range_angle_2d | range_2d | range_bearing_4d |
                                   // range_az_el_3d | quadratic_scaled
  std::string augmentation_model;  // empty | angle_2d
  std::map<std::string, double> params;

  Eigen::MatrixXd process_noise;  // Q
  Eigen::MatrixXd meas_noise;    // R
  Eigen::VectorXd initial_mean;  // x0 estimate
  Eigen::MatrixXd initial_cov;   // P0

  Schedule schedule;
  TruthRule truth;
  filters::FilterConfig filter_defaults;

  double param(const std::string& key) const;
};

/// Known scenario names: range_angle, range_only, projectile, orbit, bimodal.
std::vector<std::string> scenario_names();
ScenarioSpec make_scenario(const std::string& name);

ScenarioSpec scenario_range_angle();
ScenarioSpec scenario_range_only();
ScenarioSpec scenario_projectile();
ScenarioSpec scenario_orbit();
ScenarioSpec scenario_bimodal();

/// Dynamics/measurement/augmentation models and noise densities of a spec.
filters::ModelSet build_models(const ScenarioSpec& spec);

/// JSON round trip; numeric fields survive exactly.
std::string to_json_string(const ScenarioSpec& spec, int indent = 2);
ScenarioSpec from_json_string(const std::string& text);
ScenarioSpec load_scenario_file(const std::string& path);
void save_scenario_file(const ScenarioSpec& spec, const std::string& path);

struct ObservationRecord {
  int step = 0;
  double time = 0.0;
  Eigen::VectorXd measurement;  // empty when not visible
  bool visible = true;
};

struct TruthSimulation {
  Eigen::VectorXd initial_state;
  std::vector<double> times;               // candidate times
  std::vector<Eigen::VectorXd> states;     // truth at each candidate time
  std::vector<ObservationRecord> records;  // one per candidate time
};

/// Samples the initial state, propagates it with process noise through the
/// schedule, and generates noisy observations wherever the target is visible.
TruthSimulation simulate_truth(const ScenarioSpec& spec, RngStream& rng);

/// Taylor expansion of a continuous flow over [t0, t1], re-exported next to
/// the scenario dynamics that rely on it.
using models::jet_integrate;

/// Posterior mean of a static scenario by dense quadrature over the prior
/// support (the error reference for single-update benchmarks). Supports
/// state dimension 1 and 2.
Eigen::VectorXd reference_posterior_mean(const ScenarioSpec& spec);

/// Specific energy of the perturbed two-body scenario state (kinetic minus
/// force potential); conserved along noise-free trajectories.
double orbit_energy(const ScenarioSpec& spec, const Eigen::VectorXd& state);

}  // namespace scoutpf::scenarios
