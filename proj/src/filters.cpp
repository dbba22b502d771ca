#include "scoutpf/filters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace scoutpf::filters {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd weighted_mean(const std::vector<Eigen::VectorXd>& xs,
                              const std::vector<double>& w) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(xs[0].size());
  for (std::size_t i = 0; i < xs.size(); ++i) m += w[i] * xs[i];
  return m;
}

Eigen::MatrixXd weighted_cov(const std::vector<Eigen::VectorXd>& xs,
                             const std::vector<double>& w, const Eigen::VectorXd& mean) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(mean.size(), mean.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Eigen::VectorXd d = xs[i] - mean;
    c.noalias() += w[i] * d * d.transpose();
  }
  return 0.5 * (c + c.transpose());
}

}  // namespace

Eigen::VectorXd Ensemble::mean() const { return weighted_mean(particles, weights); }

Eigen::MatrixXd Ensemble::covariance() const { return covariance(mean()); }

Eigen::MatrixXd Ensemble::covariance(const Eigen::VectorXd& m) const {
  return weighted_cov(particles, weights, m);
}

void FilterConfig::validate() const {
  if (n_predict < 1 || n_update < 1 || n_scout < 1)
    throw ConfigError("particle counts must be >= 1");
  if (order < 1) throw ConfigError("truncation order must be >= 1");
  if (!(ess_threshold > 0.0 && ess_threshold <= 1.0))
    throw ConfigError("ess threshold must lie in (0, 1]");
  if (!(condition_threshold > 1.0))
    throw ConfigError("condition threshold must exceed 1");
}

// ---------------------------------------------------------------------------
// prediction

Prediction predict(const Prior& prior, const DynamicsModel& dynamics,
                   const GaussianDensity& process_noise, const FilterConfig& cfg,
                   int step_index, double t_from, double t_to, RngStream& rng) {
  cfg.validate();
  Prediction out;

  if (dynamics.kind == models::DynamicsKind::Static) {
    // No flow to expand: the prior moments pass through unchanged.
    if (std::holds_alternative<GaussianDensity>(prior)) {
      const auto& g = std::get<GaussianDensity>(prior);
      out.mean = g.mean();
      out.cov = g.cov();
    } else {
      const auto& e = std::get<Ensemble>(prior);
      out.mean = e.mean();
      out.cov = e.covariance(out.mean);
    }
    out.pstm = PolyMap::identity(static_cast<int>(out.mean.size()), cfg.order, out.mean);
    return out;
  }

  const bool has_noise =
      dynamics.kind == models::DynamicsKind::Discrete && !process_noise.is_zero();
  const int noise_vars = has_noise ? process_noise.dim() : 0;
  out.noise_vars = noise_vars;

  Eigen::VectorXd center;
  int count = cfg.n_predict;
  const Ensemble* prior_particles = nullptr;
  if (std::holds_alternative<GaussianDensity>(prior)) {
    center = std::get<GaussianDensity>(prior).mean();
  } else {
    prior_particles = &std::get<Ensemble>(prior);
    if (prior_particles->size() < 1) throw DegeneracyError("empty prior ensemble");
    center = prior_particles->mean();
    count = prior_particles->size();
  }

  out.pstm = models::propagate_map(dynamics, center, cfg.order, noise_vars, step_index,
                                   t_from, t_to);

  const int n = dynamics.state_dim;
  Eigen::MatrixXd devs(n + noise_vars, count);
  out.ensemble.weights.assign(static_cast<std::size_t>(count), 1.0 / count);
  if (prior_particles) {
    for (int i = 0; i < count; ++i)
      devs.col(i).head(n) = prior_particles->particles[static_cast<std::size_t>(i)] - center;
    out.ensemble.weights = prior_particles->weights;
  } else {
    const auto& g = std::get<GaussianDensity>(prior);
    for (int i = 0; i < count; ++i) devs.col(i).head(n) = g.sample(rng) - center;
  }
  if (noise_vars > 0) {
    for (int i = 0; i < count; ++i) devs.col(i).tail(noise_vars) = process_noise.sample(rng);
  }

  const Eigen::MatrixXd propagated = out.pstm.evaluate_batch(devs);
  out.ensemble.particles.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.ensemble.particles[static_cast<std::size_t>(i)] =
        out.pstm.center_out() + propagated.col(i);

  out.mean = out.ensemble.mean();
  out.cov = out.ensemble.covariance(out.mean);
  return out;
}

// ---------------------------------------------------------------------------
// measurement maps

namespace {

// Greedy subset of `take` rows maximizing the smallest singular value of the
// chosen Jacobian block; deterministic tie-break on row index.
std::vector<int> select_rows_by_conditioning(const Eigen::MatrixXd& jac, int take) {
  std::vector<int> chosen;
  std::vector<int> remaining(static_cast<std::size_t>(jac.rows()));
  std::iota(remaining.begin(), remaining.end(), 0);
  while (static_cast<int>(chosen.size()) < take) {
    int best_row = -1;
    double best_score = -1.0;
    for (int r : remaining) {
      Eigen::MatrixXd sub(static_cast<Eigen::Index>(chosen.size()) + 1, jac.cols());
      for (std::size_t i = 0; i < chosen.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = jac.row(chosen[i]);
      sub.row(static_cast<Eigen::Index>(chosen.size())) = jac.row(r);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(sub);
      const double score = svd.singularValues().minCoeff();
      if (score > best_score + 1e-15) {
        best_score = score;
        best_row = r;
      }
    }
    chosen.push_back(best_row);
    remaining.erase(std::find(remaining.begin(), remaining.end(), best_row));
  }
  return chosen;
}

// State components least represented in the row space of the measurement
// Jacobian; these get identity fictitious rows by default.
std::vector<int> least_observed_components(const Eigen::MatrixXd& jac, int take) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double tol = 1e-12 * std::max(1.0, sv.size() > 0 ? sv[0] : 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > tol) ++rank;
  const Eigen::MatrixXd vr = svd.matrixV().leftCols(rank);  // row-space basis
  std::vector<std::pair<double, int>> scored;
  for (int j = 0; j < jac.cols(); ++j)
    scored.emplace_back(vr.row(j).norm(), j);
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int> out;
  for (int i = 0; i < take; ++i) out.push_back(scored[static_cast<std::size_t>(i)].second);
  std::sort(out.begin(), out.end());
  return out;
}

MeasurementModel identity_rows_model(int state_dim, std::vector<int> components) {
  return models::make_measurement(
      "identity-rows", state_dim, static_cast<int>(components.size()), {},
      [components](const auto& x) {
        using T = std::decay_t<decltype(x[0])>;
        std::vector<T> out;
        out.reserve(components.size());
        for (int c : components) out.push_back(x[static_cast<std::size_t>(c)]);
        return out;
      });
}

}  // namespace

MeasurementMaps build_measurement_map(const Eigen::VectorXd& x_pred,
                                      const Eigen::MatrixXd& p_pred,
                                      const MeasurementModel& measurement,
                                      const MeasurementModel* augmentation, int order) {
  const int n = static_cast<int>(x_pred.size());
  const int m = measurement.meas_dim;
  MeasurementMaps out;
  out.full = measurement.expansion(x_pred, order);

  if (m == n) {
    out.square = out.full;
    out.true_rows_in_square = m;
    out.square_row_sources.resize(static_cast<std::size_t>(m));
    std::iota(out.square_row_sources.begin(), out.square_row_sources.end(), 0);
    out.square_angle_rows = measurement.angle_rows;
    return out;
  }

  if (m > n) {
    const std::vector<int> rows = select_rows_by_conditioning(out.full.linear_part(), n);
    out.square = out.full.rows(rows);
    out.true_rows_in_square = n;
    out.square_row_sources = rows;
    for (int i = 0; i < n; ++i)
      if (std::find(measurement.angle_rows.begin(), measurement.angle_rows.end(), rows[static_cast<std::size_t>(i)]) !=
          measurement.angle_rows.end())
        out.square_angle_rows.push_back(i);
    return out;
  }

  // m < n: append fictitious rows so the map becomes square.
  MeasurementModel fict =
      augmentation ? *augmentation
                   : identity_rows_model(n, least_observed_components(out.full.linear_part(),
                                                                      n - m));
  if (fict.meas_dim != n - m)
    throw ShapeError("augmentation must supply exactly n - m fictitious rows");
  const PolyMap fict_map = fict.expansion(x_pred, order);
  const Eigen::MatrixXd h_q = fict_map.linear_part();
  out.p_q = (h_q * p_pred * h_q.transpose()).eval();
  out.square = PolyMap::stack(out.full, fict_map);
  out.augmented = true;
  out.true_rows_in_square = m;
  out.square_row_sources.resize(static_cast<std::size_t>(n));
  std::iota(out.square_row_sources.begin(), out.square_row_sources.begin() + m, 0);
  std::fill(out.square_row_sources.begin() + m, out.square_row_sources.end(), -1);
  out.square_angle_rows = measurement.angle_rows;
  for (int r : fict.angle_rows) out.square_angle_rows.push_back(m + r);
  return out;
}

// ---------------------------------------------------------------------------
// scouting

ScoutSet scout(const MeasurementMaps& maps, const Eigen::VectorXd& observation,
               const GaussianDensity& meas_noise, int n_scout, double condition_threshold,
               RngStream& rng) {
  const int n = maps.square.nvars();
  if (n_scout < n + 1)
    throw ConfigError("scout count must be at least the state dimension + 1");
  const PolyMap w = polyalg::invert(maps.square, condition_threshold);

  const int mt = maps.true_rows_in_square;
  // Deviation of the received observation from the map center, true rows only.
  Eigen::VectorXd base(n);
  for (int r = 0; r < mt; ++r) {
    const int src = maps.square_row_sources[static_cast<std::size_t>(r)];
    base[r] = observation[src] - maps.square.center_out()[r];
  }
  base.tail(n - mt).setZero();  // fictitious rows sampled about their own center
  for (int r : maps.square_angle_rows)
    if (r < mt) base[r] = models::wrap_angle(base[r]);

  // Noise factors: measurement noise on the true rows, predicted fictitious
  // spread on the appended rows.
  Eigen::MatrixXd r_sel(mt, mt);
  for (int a = 0; a < mt; ++a)
    for (int b = 0; b < mt; ++b)
      r_sel(a, b) = meas_noise.cov()(maps.square_row_sources[static_cast<std::size_t>(a)],
                                     maps.square_row_sources[static_cast<std::size_t>(b)]);
  const GaussianDensity true_noise(Eigen::VectorXd::Zero(mt), r_sel);
  std::optional<GaussianDensity> fict_noise;
  if (n > mt) fict_noise.emplace(Eigen::VectorXd::Zero(n - mt), *maps.p_q);

  ScoutSet out;
  out.scout_measurements.resize(n, n_scout);
  for (int i = 0; i < n_scout; ++i) {
    Eigen::VectorXd dy = base;
    dy.head(mt) += true_noise.sample(rng);
    if (fict_noise) dy.tail(n - mt) += fict_noise->sample(rng);
    out.scout_measurements.col(i) = dy;
  }
  const Eigen::MatrixXd dx = w.evaluate_batch(out.scout_measurements);
  out.scout_states.resize(n, n_scout);
  for (int i = 0; i < n_scout; ++i)
    out.scout_states.col(i) = maps.square.center_in() + dx.col(i);

  out.mean = out.scout_states.rowwise().mean();
  Eigen::MatrixXd centered = out.scout_states.colwise() - out.mean;
  out.cov = (centered * centered.transpose()) / static_cast<double>(n_scout);
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

// ---------------------------------------------------------------------------
// importance sampling

namespace {

Eigen::MatrixXd inflate_once(const Eigen::MatrixXd& cov, const Eigen::MatrixXd& p_pred) {
  const double bump = 1e-10 * p_pred.trace();
  if (!(bump > 0.0))
    throw DegeneracyError("scout covariance degenerate and the predicted covariance "
                          "provides no inflation scale");
  return cov + bump * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
}

}  // namespace

ImportanceSample importance_sample(const ScoutSet& scouts, SpfVariant variant, BoxRule box_rule,
                                   int n_update, const Eigen::MatrixXd& p_pred, RngStream& rng) {
  if (n_update < 1) throw ConfigError("update particle count must be >= 1");
  ImportanceSample out;
  out.particles.reserve(static_cast<std::size_t>(n_update));
  out.log_sis.reserve(static_cast<std::size_t>(n_update));

  if (variant == SpfVariant::UniformBox) {
    Eigen::VectorXd half;
    if (box_rule == BoxRule::PerAxis) {
      Eigen::VectorXd var = scouts.cov.diagonal();
      if ((var.array() <= 0.0).any()) {
        var = inflate_once(scouts.cov, p_pred).diagonal();
        out.scout_cov_inflated = true;
      }
      if ((var.array() <= 0.0).any())
        throw DegeneracyError("scout covariance collapsed; uniform box undefined");
      half = 3.0 * var.cwiseSqrt();
    } else {
      // literal reading: one scalar half width, 3 * trace of the Cholesky factor
      Eigen::MatrixXd cov = scouts.cov;
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() != Eigen::Success) {
        cov = inflate_once(cov, p_pred);
        out.scout_cov_inflated = true;
        llt.compute(cov);
        if (llt.info() != Eigen::Success)
          throw DegeneracyError("scout covariance is not positive definite");
      }
      const double width = 3.0 * Eigen::MatrixXd(llt.matrixL()).trace();
      if (!(width > 0.0)) throw DegeneracyError("scout covariance collapsed");
      half = Eigen::VectorXd::Constant(scouts.mean.size(), width);
    }
    const stochastic::UniformBoxDensity box(scouts.mean, half);
    for (int i = 0; i < n_update; ++i) {
      out.particles.push_back(box.sample(rng));
      out.log_sis.push_back(box.logpdf(out.particles.back()));
    }
    return out;
  }

  Eigen::MatrixXd cov = scouts.cov;
  for (int attempt = 0;; ++attempt) {
    try {
      const GaussianDensity g(scouts.mean, cov);
      if (!g.invertible()) throw ShapeError("singular scout covariance");
      ImportanceSample sampled = importance_from_gaussian(g, n_update, rng);
      sampled.scout_cov_inflated = out.scout_cov_inflated;
      return sampled;
    } catch (const ShapeError&) {
      if (attempt >= 1)
        throw DegeneracyError("scout covariance is degenerate even after inflation");
      cov = inflate_once(cov, p_pred);
      out.scout_cov_inflated = true;
    }
  }
}

ImportanceSample importance_from_gaussian(const GaussianDensity& density, int n_update,
                                          RngStream& rng) {
  if (n_update < 1) throw ConfigError("update particle count must be >= 1");
  if (!density.invertible())
    throw DegeneracyError("importance Gaussian must be nonsingular");
  ImportanceSample out;
  out.particles.reserve(static_cast<std::size_t>(n_update));
  out.log_sis.reserve(static_cast<std::size_t>(n_update));
  for (int i = 0; i < n_update; ++i) {
    out.particles.push_back(density.sample(rng));
    out.log_sis.push_back(density.logpdf(out.particles.back()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// correction

FilterOutput correct(const ImportanceSample& importance, const MeasurementMaps& maps,
                     const MeasurementModel& measurement, const Eigen::VectorXd& observation,
                     const GaussianDensity& meas_noise, const Eigen::VectorXd& x_pred,
                     const Eigen::MatrixXd& p_pred) {
  const int count = static_cast<int>(importance.particles.size());
  if (count < 1) throw DegeneracyError("no importance particles");
  const GaussianDensity prior(x_pred, p_pred);
  if (!prior.invertible())
    throw DegeneracyError("predicted covariance is singular; prior weights undefined");

  Eigen::MatrixXd devs(x_pred.size(), count);
  for (int i = 0; i < count; ++i) devs.col(i) = importance.particles[static_cast<std::size_t>(i)] - x_pred;
  const Eigen::MatrixXd y_dev = maps.full.evaluate_batch(devs);

  std::vector<double> logw(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd residual = maps.full.center_out() + y_dev.col(i) - observation;
    models::wrap_residual(measurement, residual);
    const double log_lik = meas_noise.logpdf_residual(residual);
    const double log_pre = prior.logpdf(importance.particles[static_cast<std::size_t>(i)]);
    logw[static_cast<std::size_t>(i)] =
        log_lik + log_pre - importance.log_sis[static_cast<std::size_t>(i)];
  }

  FilterOutput out;
  out.ensemble.particles = importance.particles;
  out.ensemble.weights = stochastic::normalize_logweights(logw);
  out.mean = out.ensemble.mean();
  out.cov = out.ensemble.covariance(out.mean);
  const auto ess = stochastic::effective_sample_size(out.ensemble.weights);
  out.n_eff = ess.n_eff;
  out.psi = ess.psi;
  out.diag.scout_cov_inflated = importance.scout_cov_inflated;
  return out;
}

UpdateKind select_update(const Eigen::MatrixXd& p_pred, const Eigen::MatrixXd& p_scout) {
  return p_scout.norm() < p_pred.norm() ? UpdateKind::Scout : UpdateKind::Gpf;
}

// ---------------------------------------------------------------------------
// resampling

Eigen::MatrixXd repair_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Ensemble resample(const Ensemble& ensemble, ResamplingPolicy policy, double ess_threshold,
                  RngStream& rng) {
  const int count = ensemble.size();
  if (count < 1) throw DegeneracyError("cannot resample an empty ensemble");

  if (policy == ResamplingPolicy::GpfGaussian) {
    const Eigen::VectorXd mean = ensemble.mean();
    const GaussianDensity g(mean, repair_psd(ensemble.covariance(mean)));
    Ensemble out;
    out.particles.resize(static_cast<std::size_t>(count));
    out.weights.assign(static_cast<std::size_t>(count), 1.0 / count);
    for (int i = 0; i < count; ++i) out.particles[static_cast<std::size_t>(i)] = g.sample(rng);
    return out;
  }

  const auto ess = stochastic::effective_sample_size(ensemble.weights);
  if (ess.n_eff / count >= ess_threshold) return ensemble;

  std::vector<double> cumulative(ensemble.weights.size());
  std::partial_sum(ensemble.weights.begin(), ensemble.weights.end(), cumulative.begin());
  cumulative.back() = 1.0;
  Ensemble out;
  out.particles.resize(static_cast<std::size_t>(count));
  out.weights.assign(static_cast<std::size_t>(count), 1.0 / count);
  for (int i = 0; i < count; ++i) {
    const double u = rng.uniform01();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const auto idx = static_cast<std::size_t>(std::distance(cumulative.begin(), it));
    out.particles[static_cast<std::size_t>(i)] =
        ensemble.particles[std::min(idx, ensemble.particles.size() - 1)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// scout particle filter

ScoutParticleFilter::ScoutParticleFilter(std::string name, ModelSet models, FilterConfig cfg)
    : name_(std::move(name)), models_(std::move(models)), cfg_(cfg) {
  cfg_.validate();
}

void ScoutParticleFilter::initialize(const GaussianDensity& prior) { state_ = Prior(prior); }

FilterOutput ScoutParticleFilter::step(int step_index, double t_from, double t_to,
                                       const Eigen::VectorXd& observation, RngStream& rng) {
  if (!state_) throw ConfigError("filter used before initialize()");

  const Prediction pred = predict(*state_, models_.dynamics, models_.process_noise, cfg_,
                                  step_index, t_from, t_to, rng);
  MeasurementMaps maps = build_measurement_map(
      pred.mean, pred.cov, models_.measurement,
      models_.augmentation ? &*models_.augmentation : nullptr, cfg_.order);

  Diagnostics diag;
  diag.augmented = maps.augmented;
  diag.map_condition = polyalg::linear_condition(maps.square);

  UpdateKind kind = UpdateKind::Scout;
  std::optional<ScoutSet> scouts;
  if (cfg_.selector == UpdateSelector::CompareFictitiousCov && maps.p_q) {
    kind = select_update(pred.cov, *maps.p_q);
  }
  if (kind == UpdateKind::Scout) {
    try {
      scouts = scout(maps, observation, models_.meas_noise, cfg_.n_scout,
                     cfg_.condition_threshold, rng);
      if (cfg_.selector == UpdateSelector::CompareScoutCov ||
          (cfg_.selector == UpdateSelector::CompareFictitiousCov && !maps.p_q)) {
        kind = select_update(pred.cov, scouts->cov);
      }
    } catch (const SingularMapError&) {
      kind = UpdateKind::Gpf;
      diag.inversion_failed = true;
      diag.fell_back_to_gpf = true;
    }
  }

  ImportanceSample importance;
  if (kind == UpdateKind::Scout) {
    try {
      importance = importance_sample(*scouts, cfg_.variant, cfg_.box_rule, cfg_.n_update,
                                     pred.cov, rng);
    } catch (const DegeneracyError&) {
      kind = UpdateKind::Gpf;
      diag.fell_back_to_gpf = true;
    }
  }
  if (kind == UpdateKind::Gpf) {
    importance = importance_from_gaussian(GaussianDensity(pred.mean, repair_psd(pred.cov)),
                                          cfg_.n_update, rng);
  }

  FilterOutput out = correct(importance, maps, models_.measurement, observation,
                             models_.meas_noise, pred.mean, pred.cov);
  out.update_kind = kind;
  diag.scout_cov_inflated = out.diag.scout_cov_inflated;
  out.diag = diag;

  if (cfg_.resampling == ResamplingPolicy::GpfGaussian) {
    state_ = Prior(GaussianDensity(out.mean, repair_psd(out.cov)));
  } else {
    state_ = Prior(resample(out.ensemble, ResamplingPolicy::EssThreshold, cfg_.ess_threshold,
                            rng));
  }
  return out;
}

}  // namespace scoutpf::filters
