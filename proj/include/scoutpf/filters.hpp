#pragma once

// Scout particle filter: measurement-space sampling mapped back through the
// inverted measurement polynomial map to place the importance distribution,
// with sequential-importance-sampling weight correction. Also the baseline
// particle filters used for comparisons.

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "scoutpf/models.hpp"
#include "scoutpf/stochastic.hpp"

namespace scoutpf::filters {

using models::DynamicsModel;
using models::MeasurementModel;
using models::PolyMap;
using stochastic::GaussianDensity;
using stochastic::RngStream;

/// Weighted particle set; weights are kept normalized.
struct Ensemble {
  std::vector<Eigen::VectorXd> particles;
  std::vector<double> weights;

  int size() const { return static_cast<int>(particles.size()); }
  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
  Eigen::MatrixXd covariance(const Eigen::VectorXd& mean) const;
};

enum class SpfVariant { UniformBox, Gaussian };
enum class BoxRule { PerAxis, ScalarTrace };
enum class ResamplingPolicy { GpfGaussian, EssThreshold };
enum class UpdateSelector { AlwaysScout, CompareScoutCov, CompareFictitiousCov };
enum class UpdateKind { Scout, Gpf };

struct FilterConfig {
  int n_predict = 1000;
  int n_update = 1000;
  int n_scout = 100;
  int order = 3;
  SpfVariant variant = SpfVariant::Gaussian;
  BoxRule box_rule = BoxRule::PerAxis;
  ResamplingPolicy resampling = ResamplingPolicy::GpfGaussian;
  double ess_threshold = 0.5;
  UpdateSelector selector = UpdateSelector::AlwaysScout;
  double condition_threshold = 1e12;

  void validate() const;
};

struct Diagnostics {
  double map_condition = 0.0;
  bool augmented = false;
  bool inversion_failed = false;
  bool scout_cov_inflated = false;
  bool fell_back_to_gpf = false;
};

struct FilterOutput {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Ensemble ensemble;
  double n_eff = 0.0;
  double psi = 0.0;
  UpdateKind update_kind = UpdateKind::Gpf;
  Diagnostics diag;
};

/// Models and noise levels a filter operates on.
struct ModelSet {
  DynamicsModel dynamics;
  MeasurementModel measurement;
  std::optional<MeasurementModel> augmentation;  // scenario-specific fictitious rows
  GaussianDensity process_noise;                 // zero covariance = noise-free
  GaussianDensity meas_noise;
};

using Prior = std::variant<GaussianDensity, Ensemble>;

struct Prediction {
  Ensemble ensemble;     // propagated particle cloud (empty for static models)
  Eigen::VectorXd mean;  // predicted mean
  Eigen::MatrixXd cov;   // predicted covariance
  PolyMap pstm;          // state transition expansion over (dx, dnu)
  int noise_vars = 0;
};

/// Prediction step: expands the dynamics flow about the prior center as a
/// polynomial state transition map, then evaluates it at sampled state and
/// process-noise deviations. Static models pass the prior through exactly.
Prediction predict(const Prior& prior, const DynamicsModel& dynamics,
                   const GaussianDensity& process_noise, const FilterConfig& cfg,
                   int step_index, double t_from, double t_to, RngStream& rng);

/// Measurement expansion at the predicted mean, plus the square map used for
/// inversion: fictitious rows appended when m < n, a best-conditioned row
/// subset selected when m > n.
struct MeasurementMaps {
  PolyMap full;    // every true measurement row
  PolyMap square;  // rows used for inversion
  std::optional<Eigen::MatrixXd> p_q;  // spread of the fictitious rows
  bool augmented = false;
  int true_rows_in_square = 0;
  std::vector<int> square_row_sources;  // full-row index, or -1 for fictitious
  std::vector<int> square_angle_rows;
};

MeasurementMaps build_measurement_map(const Eigen::VectorXd& x_pred,
                                      const Eigen::MatrixXd& p_pred,
                                      const MeasurementModel& measurement,
                                      const MeasurementModel* augmentation, int order);

/// Scout particles: N_s samples of the measurement noise centered at the
/// received observation (fictitious coordinates drawn from their predicted
/// spread), mapped into state space through the inverted square map.
struct ScoutSet {
  Eigen::MatrixXd scout_measurements;  // square-space samples, one per column
  Eigen::MatrixXd scout_states;        // mapped states, one per column
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

ScoutSet scout(const MeasurementMaps& maps, const Eigen::VectorXd& observation,
               const GaussianDensity& meas_noise, int n_scout, double condition_threshold,
               RngStream& rng);

struct ImportanceSample {
  std::vector<Eigen::VectorXd> particles;
  std::vector<double> log_sis;  // importance log-density at each particle
  bool scout_cov_inflated = false;
};

/// Draws update particles from the scout statistics: a uniform box over the
/// 3-sigma support (variant 1) or the fitted Gaussian (variant 2).
ImportanceSample importance_sample(const ScoutSet& scouts, SpfVariant variant, BoxRule box_rule,
                                   int n_update, const Eigen::MatrixXd& p_pred, RngStream& rng);

/// Importance sampling from an explicit Gaussian (the GPF update and the
/// SIS-EKF / SIS-UKF posteriors).
ImportanceSample importance_from_gaussian(const GaussianDensity& density, int n_update,
                                          RngStream& rng);

/// Weight correction w = lik * prior / importance in log domain, evaluated
/// with polynomial measurement predictions, followed by normalization and
/// weighted moment extraction.
FilterOutput correct(const ImportanceSample& importance, const MeasurementMaps& maps,
                     const MeasurementModel& measurement, const Eigen::VectorXd& observation,
                     const GaussianDensity& meas_noise, const Eigen::VectorXd& x_pred,
                     const Eigen::MatrixXd& p_pred);

/// Chooses the scout update when the scout covariance is tighter (smaller
/// Frobenius norm) than the predicted covariance.
UpdateKind select_update(const Eigen::MatrixXd& p_pred, const Eigen::MatrixXd& p_scout);

/// Gaussian-redraw or threshold-triggered multinomial resampling.
Ensemble resample(const Ensemble& ensemble, ResamplingPolicy policy, double ess_threshold,
                  RngStream& rng);

/// Clips negative eigenvalues to zero (weighted covariances of small particle
/// sets can come out slightly indefinite).
Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& m);

/// Stateful one-step interface driven by the campaign runner.
class Filter {
 public:
  virtual ~Filter() = default;
  virtual const std::string& name() const = 0;
  virtual void initialize(const GaussianDensity& prior) = 0;
  virtual FilterOutput step(int step_index, double t_from, double t_to,
                            const Eigen::VectorXd& observation, RngStream& rng) = 0;
};

class ScoutParticleFilter : public Filter {
 public:
  ScoutParticleFilter(std::string name, ModelSet models, FilterConfig cfg);

  const std::string& name() const override { return name_; }
  void initialize(const GaussianDensity& prior) override;
  FilterOutput step(int step_index, double t_from, double t_to,
                    const Eigen::VectorXd& observation, RngStream& rng) override;

 private:
  std::string name_;
  ModelSet models_;
  FilterConfig cfg_;
  std::optional<Prior> state_;
};

enum class BaselineKind { Bpf, SisEkf, SisUkf, Gpf, Apf };

class BaselineFilter : public Filter {
 public:
  BaselineFilter(std::string name, BaselineKind kind, ModelSet models, FilterConfig cfg);

  const std::string& name() const override { return name_; }
  void initialize(const GaussianDensity& prior) override;
  FilterOutput step(int step_index, double t_from, double t_to,
                    const Eigen::VectorXd& observation, RngStream& rng) override;

 private:
  FilterOutput step_bpf(int step_index, double t_from, double t_to,
                        const Eigen::VectorXd& observation, RngStream& rng);
  FilterOutput step_apf(int step_index, double t_from, double t_to,
                        const Eigen::VectorXd& observation, RngStream& rng);
  FilterOutput step_sis(int step_index, double t_from, double t_to,
                        const Eigen::VectorXd& observation, RngStream& rng);

  std::string name_;
  BaselineKind kind_;
  ModelSet models_;
  FilterConfig cfg_;
  std::optional<Prior> state_;
};

/// Known filter names: spf1, spf2, bpf, sis-ekf, sis-ukf, gpf, apf.
std::vector<std::string> filter_names();
std::unique_ptr<Filter> make_filter(const std::string& name, ModelSet models, FilterConfig cfg);

}  // namespace scoutpf::filters
