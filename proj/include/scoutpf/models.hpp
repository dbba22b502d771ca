#pragma once

// Dynamics and measurement models written once over a generic scalar type
// and instantiated both for plain numbers and for truncated polynomials, so
// the same model code drives numeric propagation and jet transport.

#include <Eigen/Dense>

#include <functional>
#include <vector>

#include "scoutpf/errors.hpp"
#include "scoutpf/polyalg.hpp"

namespace scoutpf::models {

using polyalg::Poly;
using polyalg::PolyMap;

enum class DynamicsKind { Static, Discrete, Continuous };

struct DynamicsModel {
  DynamicsKind kind = DynamicsKind::Static;
  int state_dim = 0;
  int noise_dim = 0;  // discrete maps only; 0 means noise-free dynamics

  // x_{k+1} = f(x_k, nu_k, k)
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&, int)> discrete;
  std::function<std::vector<Poly>(const std::vector<Poly>&, const std::vector<Poly>&, int)>
      discrete_jet;

  // dx/dt = f(t, x)
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> ode;
  std::function<std::vector<Poly>(double, const std::vector<Poly>&)> ode_jet;

  // fixed-step policy: short steps inside short intervals, long steps across
  // gaps (scalar-norm step controllers do not carry over to polynomial state)
  double dt_short = 10.0;
  double dt_long = 60.0;
  double long_interval = 600.0;

  double step_size(double t0, double t1) const {
    return (t1 - t0) <= long_interval ? dt_short : dt_long;
  }
};

struct MeasurementModel {
  std::string name;
  int state_dim = 0;
  int meas_dim = 0;
  std::vector<int> angle_rows;  // rows whose residuals wrap to (-pi, pi]

  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eval;
  std::function<std::vector<Poly>(const std::vector<Poly>&)> eval_jet;

  /// Taylor expansion of the model around `center` as a deviation map.
  PolyMap expansion(const Eigen::VectorXd& center, int order) const;
};

namespace detail {

template <class F, class T>
std::vector<T> call_on_vector(const F& f, const std::vector<T>& x) {
  return f(x);
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

/// Builds a MeasurementModel from one generic functor
/// f(const std::vector<T>&) -> std::vector<T>.
template <class F>
MeasurementModel make_measurement(std::string name, int state_dim, int meas_dim,
                                  std::vector<int> angle_rows, F f) {
  MeasurementModel m;
  m.name = std::move(name);
  m.state_dim = state_dim;
  m.meas_dim = meas_dim;
  m.angle_rows = std::move(angle_rows);
  m.eval = [f](const Eigen::VectorXd& x) {
    return detail::to_eigen(f(detail::to_std(x)));
  };
  m.eval_jet = [f](const std::vector<Poly>& x) { return f(x); };
  return m;
}

/// Builds a discrete DynamicsModel from one generic functor
/// f(const std::vector<T>& x, const std::vector<T>& nu, int k) -> std::vector<T>.
template <class F>
DynamicsModel make_discrete_dynamics(int state_dim, int noise_dim, F f) {
  DynamicsModel d;
  d.kind = DynamicsKind::Discrete;
  d.state_dim = state_dim;
  d.noise_dim = noise_dim;
  d.discrete = [f](const Eigen::VectorXd& x, const Eigen::VectorXd& nu, int k) {
    return detail::to_eigen(f(detail::to_std(x), detail::to_std(nu), k));
  };
  d.discrete_jet = [f](const std::vector<Poly>& x, const std::vector<Poly>& nu, int k) {
    return f(x, nu, k);
  };
  return d;
}

/// Builds a continuous DynamicsModel from one generic functor
/// f(double t, const std::vector<T>& x) -> std::vector<T>.
template <class F>
DynamicsModel make_continuous_dynamics(int state_dim, F f) {
  DynamicsModel d;
  d.kind = DynamicsKind::Continuous;
  d.state_dim = state_dim;
  d.ode = [f](double t, const Eigen::VectorXd& x) {
    return detail::to_eigen(f(t, detail::to_std(x)));
  };
  d.ode_jet = [f](double t, const std::vector<Poly>& x) { return f(t, x); };
  return d;
}

inline DynamicsModel make_static_dynamics(int state_dim) {
  DynamicsModel d;
  d.kind = DynamicsKind::Static;
  d.state_dim = state_dim;
  return d;
}

/// One classic fourth-order Runge-Kutta step over a generic state vector.
template <class T, class Rhs>
std::vector<T> rk4_step(const Rhs& f, const std::vector<T>& x, double t, double h) {
  const std::size_t n = x.size();
  auto blend = [n](const std::vector<T>& base, const std::vector<T>& k, double c) {
    std::vector<T> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(base[i] + k[i] * c);
    return out;
  };
  const std::vector<T> k1 = f(t, x);
  const std::vector<T> k2 = f(t + 0.5 * h, blend(x, k1, 0.5 * h));
  const std::vector<T> k3 = f(t + 0.5 * h, blend(x, k2, 0.5 * h));
  const std::vector<T> k4 = f(t + h, blend(x, k3, h));
  std::vector<T> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(x[i] + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0));
  return out;
}

/// Integrates a continuous model with polynomial-valued state from t0 to t1.
/// x0 is the expansion of the initial state (typically the identity deviation
/// map about the current estimate); the result maps the same deviations to
/// the state at t1. Throws on coefficient blow-up.
PolyMap jet_integrate(const DynamicsModel& dynamics, const PolyMap& x0, double t0, double t1);

/// Numeric flow of a continuous model, same step policy as jet_integrate.
Eigen::VectorXd flow(const DynamicsModel& dynamics, const Eigen::VectorXd& x0, double t0,
                     double t1);

/// Taylor expansion of one propagation interval as a deviation map over
/// state deviations plus `noise_vars` trailing process-noise deviations:
/// the polynomial state transition map of the step.
PolyMap propagate_map(const DynamicsModel& dynamics, const Eigen::VectorXd& center, int order,
                      int noise_vars, int step_index, double t0, double t1);

/// Numeric one-step propagation matching propagate_map's conventions.
Eigen::VectorXd propagate_numeric(const DynamicsModel& dynamics, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& nu, int step_index, double t0, double t1);

/// Wraps an angle difference into (-pi, pi].
double wrap_angle(double a);

/// Wraps the configured angle rows of a residual vector in place.
void wrap_residual(const MeasurementModel& model, Eigen::VectorXd& residual);

}  // namespace scoutpf::models
