#include <algorithm>
#include <cmath>
#include <numeric>

#include "scoutpf/filters.hpp"

namespace scoutpf::filters {

namespace {

bool all_particles_identical(const Ensemble& e) {
  for (std::size_t i = 1; i < e.particles.size(); ++i)
    if (e.particles[i] != e.particles[0]) return false;
  return true;
}

Ensemble ensemble_from_gaussian(const GaussianDensity& g, int count, RngStream& rng) {
  Ensemble e;
  e.particles.resize(static_cast<std::size_t>(count));
  e.weights.assign(static_cast<std::size_t>(count), 1.0 / count);
  for (int i = 0; i < count; ++i) e.particles[static_cast<std::size_t>(i)] = g.sample(rng);
  return e;
}

FilterOutput output_from_ensemble(const Ensemble& e) {
  FilterOutput out;
  out.ensemble = e;
  out.mean = e.mean();
  out.cov = e.covariance(out.mean);
  const auto ess = stochastic::effective_sample_size(e.weights);
  out.n_eff = ess.n_eff;
  out.psi = ess.psi;
  out.update_kind = UpdateKind::Gpf;
  return out;
}

double log_likelihood(const ModelSet& models, const Eigen::VectorXd& y_pred,
                      const Eigen::VectorXd& observation) {
  Eigen::VectorXd residual = y_pred - observation;
  models::wrap_residual(models.measurement, residual);
  return models.meas_noise.logpdf_residual(residual);
}

std::vector<int> multinomial_indices(const std::vector<double>& weights, int count,
                                     RngStream& rng) {
  std::vector<double> cumulative(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cumulative.begin());
  cumulative.back() = 1.0;
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double u = rng.uniform01();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    idx[static_cast<std::size_t>(i)] = static_cast<int>(
        std::min(static_cast<std::size_t>(std::distance(cumulative.begin(), it)),
                 weights.size() - 1));
  }
  return idx;
}

// Scaled unscented transform weights (alpha, beta, kappa defaults).
struct UtWeights {
  double lambda;
  std::vector<double> wm, wc;
};

UtWeights ut_weights(int n, double alpha = 1e-3, double beta = 2.0, double kappa = 0.0) {
  UtWeights w;
  w.lambda = alpha * alpha * (n + kappa) - n;
  const double denom = n + w.lambda;
  w.wm.assign(static_cast<std::size_t>(2 * n + 1), 1.0 / (2.0 * denom));
  w.wc = w.wm;
  w.wm[0] = w.lambda / denom;
  w.wc[0] = w.lambda / denom + (1.0 - alpha * alpha + beta);
  return w;
}

std::vector<Eigen::VectorXd> sigma_points(const Eigen::VectorXd& mean,
                                          const Eigen::MatrixXd& cov, double lambda) {
  const int n = static_cast<int>(mean.size());
  Eigen::LLT<Eigen::MatrixXd> llt(cov + 1e-14 * cov.trace() *
                                            Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd scaled;
  if (llt.info() == Eigen::Success) {
    scaled = std::sqrt(n + lambda) * Eigen::MatrixXd(llt.matrixL());
  } else {
    const GaussianDensity g(mean, repair_psd(cov));  // PSD factor fallback
    scaled = std::sqrt(n + lambda) * g.factor();
  }
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(static_cast<std::size_t>(2 * n + 1));
  pts.push_back(mean);
  for (int i = 0; i < n; ++i) pts.push_back(mean + scaled.col(i));
  for (int i = 0; i < n; ++i) pts.push_back(mean - scaled.col(i));
  return pts;
}

}  // namespace

BaselineFilter::BaselineFilter(std::string name, BaselineKind kind, ModelSet models,
                               FilterConfig cfg)
    : name_(std::move(name)), kind_(kind), models_(std::move(models)), cfg_(cfg) {
  cfg_.validate();
}

void BaselineFilter::initialize(const GaussianDensity& prior) { state_ = Prior(prior); }

FilterOutput BaselineFilter::step(int step_index, double t_from, double t_to,
                                  const Eigen::VectorXd& observation, RngStream& rng) {
  if (!state_) throw ConfigError("filter used before initialize()");
  switch (kind_) {
    case BaselineKind::Bpf:
      return step_bpf(step_index, t_from, t_to, observation, rng);
    case BaselineKind::Apf:
      return step_apf(step_index, t_from, t_to, observation, rng);
    default:
      return step_sis(step_index, t_from, t_to, observation, rng);
  }
}

// Bootstrap: importance distribution is the propagated prior itself, weights
// multiply by the likelihood, multinomial resampling on the ESS trigger.
FilterOutput BaselineFilter::step_bpf(int step_index, double t_from, double t_to,
                                      const Eigen::VectorXd& observation, RngStream& rng) {
  const bool noise_free = models_.process_noise.is_zero();
  Ensemble ensemble;
  if (std::holds_alternative<GaussianDensity>(*state_)) {
    ensemble = ensemble_from_gaussian(std::get<GaussianDensity>(*state_), cfg_.n_update, rng);
  } else {
    ensemble = std::get<Ensemble>(*state_);
  }
  if (noise_free && ensemble.size() > 1 && all_particles_identical(ensemble))
    throw DegeneracyError(
        "bootstrap particle cloud collapsed; zero process noise cannot restore spread");

  const Eigen::VectorXd zero_noise = Eigen::VectorXd::Zero(
      std::max(models_.dynamics.noise_dim, models_.process_noise.dim()));
  std::vector<double> logw(static_cast<std::size_t>(ensemble.size()));
  for (int i = 0; i < ensemble.size(); ++i) {
    auto& x = ensemble.particles[static_cast<std::size_t>(i)];
    const Eigen::VectorXd nu =
        noise_free ? zero_noise : Eigen::VectorXd(models_.process_noise.sample(rng));
    x = models::propagate_numeric(models_.dynamics, x, nu, step_index, t_from, t_to);
    logw[static_cast<std::size_t>(i)] =
        std::log(ensemble.weights[static_cast<std::size_t>(i)]) +
        log_likelihood(models_, models_.measurement.eval(x), observation);
  }
  ensemble.weights = stochastic::normalize_logweights(logw);

  FilterOutput out = output_from_ensemble(ensemble);
  Ensemble next = resample(ensemble, ResamplingPolicy::EssThreshold, cfg_.ess_threshold, rng);
  if (noise_free && next.size() > 1 && all_particles_identical(next))
    throw DegeneracyError(
        "bootstrap particle cloud collapsed; zero process noise cannot restore spread");
  state_ = Prior(std::move(next));
  return out;
}

// Auxiliary PF: first-stage weights from the zero-noise predicted likelihood
// select parents, second stage reweights by the likelihood ratio.
FilterOutput BaselineFilter::step_apf(int step_index, double t_from, double t_to,
                                      const Eigen::VectorXd& observation, RngStream& rng) {
  if (models_.process_noise.is_zero())
    throw DegeneracyError("auxiliary particle filter is not applicable without process noise");
  Ensemble prior;
  if (std::holds_alternative<GaussianDensity>(*state_)) {
    prior = ensemble_from_gaussian(std::get<GaussianDensity>(*state_), cfg_.n_update, rng);
  } else {
    prior = std::get<Ensemble>(*state_);
  }
  const int count = prior.size();
  const Eigen::VectorXd zero_noise = Eigen::VectorXd::Zero(models_.process_noise.dim());

  std::vector<Eigen::VectorXd> mu(static_cast<std::size_t>(count));
  std::vector<double> log_mu_lik(static_cast<std::size_t>(count));
  std::vector<double> log_stage1(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    mu[static_cast<std::size_t>(i)] =
        models::propagate_numeric(models_.dynamics, prior.particles[static_cast<std::size_t>(i)],
                                  zero_noise, step_index, t_from, t_to);
    log_mu_lik[static_cast<std::size_t>(i)] =
        log_likelihood(models_, models_.measurement.eval(mu[static_cast<std::size_t>(i)]),
                       observation);
    log_stage1[static_cast<std::size_t>(i)] =
        std::log(prior.weights[static_cast<std::size_t>(i)]) +
        log_mu_lik[static_cast<std::size_t>(i)];
  }
  const std::vector<double> stage1 = stochastic::normalize_logweights(log_stage1);
  const std::vector<int> parents = multinomial_indices(stage1, count, rng);

  Ensemble posterior;
  posterior.particles.resize(static_cast<std::size_t>(count));
  std::vector<double> logw(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int p = parents[static_cast<std::size_t>(i)];
    const Eigen::VectorXd nu = models_.process_noise.sample(rng);
    const Eigen::VectorXd x = models::propagate_numeric(
        models_.dynamics, prior.particles[static_cast<std::size_t>(p)], nu, step_index, t_from,
        t_to);
    posterior.particles[static_cast<std::size_t>(i)] = x;
    logw[static_cast<std::size_t>(i)] =
        log_likelihood(models_, models_.measurement.eval(x), observation) -
        log_mu_lik[static_cast<std::size_t>(p)];
  }
  posterior.weights = stochastic::normalize_logweights(logw);

  FilterOutput out = output_from_ensemble(posterior);
  state_ = Prior(resample(posterior, ResamplingPolicy::EssThreshold, cfg_.ess_threshold, rng));
  return out;
}

// SIS over a Gaussian importance distribution supplied by an EKF or UKF
// update (or by the predicted prior itself for the GPF).
FilterOutput BaselineFilter::step_sis(int step_index, double t_from, double t_to,
                                      const Eigen::VectorXd& observation, RngStream& rng) {
  const GaussianDensity prior_gauss = std::holds_alternative<GaussianDensity>(*state_)
                                          ? std::get<GaussianDensity>(*state_)
                                          : GaussianDensity(std::get<Ensemble>(*state_).mean(),
                                                            repair_psd(std::get<Ensemble>(*state_)
                                                                           .covariance()));

  Eigen::VectorXd x_pred;
  Eigen::MatrixXd p_pred;
  PolyMap pstm;
  const bool has_noise = models_.dynamics.kind == models::DynamicsKind::Discrete &&
                         !models_.process_noise.is_zero();
  const int noise_vars = has_noise ? models_.process_noise.dim() : 0;

  if (models_.dynamics.kind == models::DynamicsKind::Static) {
    x_pred = prior_gauss.mean();
    p_pred = prior_gauss.cov();
    pstm = PolyMap::identity(static_cast<int>(x_pred.size()), cfg_.order, x_pred);
  } else if (kind_ == BaselineKind::Gpf) {
    // Monte Carlo moment prediction through the transition expansion.
    const Prediction pred = predict(Prior(prior_gauss), models_.dynamics,
                                    models_.process_noise, cfg_, step_index, t_from, t_to, rng);
    x_pred = pred.mean;
    p_pred = pred.cov;
    pstm = pred.pstm;
  } else {
    pstm = models::propagate_map(models_.dynamics, prior_gauss.mean(), cfg_.order, noise_vars,
                                 step_index, t_from, t_to);
    const int n = models_.dynamics.state_dim;
    const Eigen::MatrixXd lin = pstm.linear_part();
    const Eigen::MatrixXd fx = lin.leftCols(n);
    x_pred = pstm.center_out();
    if (kind_ == BaselineKind::SisEkf) {
      p_pred = fx * prior_gauss.cov() * fx.transpose();
    } else {
      // unscented moment propagation via the transition expansion
      const UtWeights w = ut_weights(n);
      const auto pts = sigma_points(prior_gauss.mean(), prior_gauss.cov(), w.lambda);
      std::vector<Eigen::VectorXd> prop(pts.size());
      Eigen::VectorXd dev(n + noise_vars);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        dev.head(n) = pts[i] - prior_gauss.mean();
        dev.tail(noise_vars).setZero();
        prop[i] = pstm.center_out() + pstm.evaluate(dev);
      }
      x_pred = Eigen::VectorXd::Zero(n);
      for (std::size_t i = 0; i < pts.size(); ++i) x_pred += w.wm[i] * prop[i];
      p_pred = Eigen::MatrixXd::Zero(n, n);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const Eigen::VectorXd d = prop[i] - x_pred;
        p_pred.noalias() += w.wc[i] * d * d.transpose();
      }
    }
    if (noise_vars > 0) {
      const Eigen::MatrixXd fnu = lin.rightCols(noise_vars);
      p_pred += fnu * models_.process_noise.cov() * fnu.transpose();
    }
    p_pred = 0.5 * (p_pred + p_pred.transpose());
  }

  MeasurementMaps maps = build_measurement_map(
      x_pred, p_pred, models_.measurement,
      models_.augmentation ? &*models_.augmentation : nullptr, cfg_.order);

  GaussianDensity importance_density(x_pred, repair_psd(p_pred));
  if (kind_ == BaselineKind::SisEkf) {
    const Eigen::MatrixXd h = maps.full.linear_part();
    const Eigen::MatrixXd r = models_.meas_noise.cov();
    const Eigen::MatrixXd s = h * p_pred * h.transpose() + r;
    const Eigen::MatrixXd k = p_pred * h.transpose() * s.inverse();
    Eigen::VectorXd innovation = observation - maps.full.center_out();
    models::wrap_residual(models_.measurement, innovation);
    const Eigen::VectorXd x_upd = x_pred + k * innovation;
    const Eigen::MatrixXd ikh =
        Eigen::MatrixXd::Identity(p_pred.rows(), p_pred.cols()) - k * h;
    const Eigen::MatrixXd p_upd = ikh * p_pred * ikh.transpose() + k * r * k.transpose();
    importance_density = GaussianDensity(x_upd, repair_psd(p_upd));
  } else if (kind_ == BaselineKind::SisUkf) {
    const int n = static_cast<int>(x_pred.size());
    const UtWeights w = ut_weights(n);
    const auto pts = sigma_points(x_pred, p_pred, w.lambda);
    std::vector<Eigen::VectorXd> ys(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) ys[i] = models_.measurement.eval(pts[i]);
    // angle rows averaged as wrapped offsets from the first sigma image
    Eigen::VectorXd y_mean = Eigen::VectorXd::Zero(ys[0].size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Eigen::VectorXd d = ys[i] - ys[0];
      models::wrap_residual(models_.measurement, d);
      y_mean += w.wm[i] * d;
    }
    y_mean += ys[0];
    Eigen::MatrixXd s = models_.meas_noise.cov();
    Eigen::MatrixXd cxy = Eigen::MatrixXd::Zero(n, ys[0].size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Eigen::VectorXd dy = ys[i] - y_mean;
      models::wrap_residual(models_.measurement, dy);
      const Eigen::VectorXd dx = pts[i] - x_pred;
      s.noalias() += w.wc[i] * dy * dy.transpose();
      cxy.noalias() += w.wc[i] * dx * dy.transpose();
    }
    const Eigen::MatrixXd k = cxy * s.inverse();
    Eigen::VectorXd innovation = observation - y_mean;
    models::wrap_residual(models_.measurement, innovation);
    const Eigen::VectorXd x_upd = x_pred + k * innovation;
    const Eigen::MatrixXd p_upd = p_pred - k * s * k.transpose();
    importance_density = GaussianDensity(x_upd, repair_psd(p_upd));
  }

  const ImportanceSample importance =
      importance_from_gaussian(importance_density, cfg_.n_update, rng);
  FilterOutput out = correct(importance, maps, models_.measurement, observation,
                             models_.meas_noise, x_pred, p_pred);
  out.diag.map_condition = polyalg::linear_condition(maps.square);
  out.diag.augmented = maps.augmented;

  if (cfg_.resampling == ResamplingPolicy::GpfGaussian) {
    state_ = Prior(GaussianDensity(out.mean, repair_psd(out.cov)));
  } else {
    state_ = Prior(resample(out.ensemble, ResamplingPolicy::EssThreshold, cfg_.ess_threshold,
                            rng));
  }
  return out;
}

std::vector<std::string> filter_names() {
  return {"spf1", "spf2", "bpf", "sis-ekf", "sis-ukf", "gpf", "apf"};
}

std::unique_ptr<Filter> make_filter(const std::string& name, ModelSet models, FilterConfig cfg) {
  if (name == "spf1") {
    cfg.variant = SpfVariant::UniformBox;
    return std::make_unique<ScoutParticleFilter>(name, std::move(models), cfg);
  }
  if (name == "spf2") {
    cfg.variant = SpfVariant::Gaussian;
    return std::make_unique<ScoutParticleFilter>(name, std::move(models), cfg);
  }
  if (name == "spf") return std::make_unique<ScoutParticleFilter>(name, std::move(models), cfg);
  if (name == "bpf")
    return std::make_unique<BaselineFilter>(name, BaselineKind::Bpf, std::move(models), cfg);
  if (name == "sis-ekf")
    return std::make_unique<BaselineFilter>(name, BaselineKind::SisEkf, std::move(models), cfg);
  if (name == "sis-ukf")
    return std::make_unique<BaselineFilter>(name, BaselineKind::SisUkf, std::move(models), cfg);
  if (name == "gpf")
    return std::make_unique<BaselineFilter>(name, BaselineKind::Gpf, std::move(models), cfg);
  if (name == "apf")
    return std::make_unique<BaselineFilter>(name, BaselineKind::Apf, std::move(models), cfg);
  std::string known;
  for (const auto& f : filter_names()) known += (known.empty() ? "" : ", ") + f;
  throw ConfigError("unknown filter '" + name + "'; known filters: " + known);
}

}  // namespace scoutpf::filters
