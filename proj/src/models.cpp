#include "scoutpf/models.hpp"

#include <cmath>
#include <numbers>

namespace scoutpf::models {

namespace {

std::vector<Poly> state_polys(const Eigen::VectorXd& center,
                              const std::shared_ptr<const polyalg::Algebra>& alg,
                              int offset, int count, bool with_center) {
  std::vector<Poly> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Poly p = Poly::variable(offset + i, alg);
    if (with_center) p = p + center[i];
    out.push_back(std::move(p));
  }
  return out;
}

void require_finite(const std::vector<Poly>& comps) {
  for (const Poly& c : comps) {
    const auto alg = c.algebra();
    for (int pos = 0; pos < alg->size(); ++pos)
      if (!std::isfinite(c.coefficient_at(pos)))
        throw Error("polynomial state diverged during integration");
  }
}

}  // namespace

PolyMap MeasurementModel::expansion(const Eigen::VectorXd& center, int order) const {
  if (center.size() != state_dim)
    throw ShapeError("expansion center does not match the model state dimension");
  auto alg = polyalg::Algebra::get(state_dim, order);
  std::vector<Poly> x = state_polys(center, alg, 0, state_dim, true);
  std::vector<Poly> y = eval_jet(x);
  if (static_cast<int>(y.size()) != meas_dim)
    throw ShapeError("measurement model produced the wrong output dimension");
  return PolyMap::from_raw(center, std::move(y));
}

PolyMap jet_integrate(const DynamicsModel& dynamics, const PolyMap& x0, double t0, double t1) {
  if (dynamics.kind != DynamicsKind::Continuous)
    throw ConfigError("jet_integrate requires a continuous dynamics model");
  if (x0.dim_out() != dynamics.state_dim)
    throw ShapeError("initial map dimension does not match the dynamics");
  std::vector<Poly> state;
  state.reserve(static_cast<std::size_t>(x0.dim_out()));
  for (int i = 0; i < x0.dim_out(); ++i)
    state.push_back(x0.component(i) + x0.center_out()[i]);

  const double dt = dynamics.step_size(t0, t1);
  const int nsteps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / dt - 1e-9)));
  const double h = (t1 - t0) / nsteps;
  auto rhs = [&](double t, const std::vector<Poly>& x) { return dynamics.ode_jet(t, x); };
  double t = t0;
  for (int s = 0; s < nsteps; ++s, t += h) {
    state = rk4_step(rhs, state, t, h);
    require_finite(state);
  }
  return PolyMap::from_raw(x0.center_in(), std::move(state));
}

Eigen::VectorXd flow(const DynamicsModel& dynamics, const Eigen::VectorXd& x0, double t0,
                     double t1) {
  if (dynamics.kind != DynamicsKind::Continuous)
    throw ConfigError("flow requires a continuous dynamics model");
  const double dt = dynamics.step_size(t0, t1);
  const int nsteps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / dt - 1e-9)));
  const double h = (t1 - t0) / nsteps;
  auto rhs = [&](double t, const std::vector<double>& x) {
    const Eigen::VectorXd dx = dynamics.ode(t, detail::to_eigen(x));
    return detail::to_std(dx);
  };
  std::vector<double> state = detail::to_std(x0);
  double t = t0;
  for (int s = 0; s < nsteps; ++s, t += h) state = rk4_step(rhs, state, t, h);
  return detail::to_eigen(state);
}

PolyMap propagate_map(const DynamicsModel& dynamics, const Eigen::VectorXd& center, int order,
                      int noise_vars, int step_index, double t0, double t1) {
  const int n = dynamics.state_dim;
  if (center.size() != n) throw ShapeError("propagation center dimension mismatch");
  const int nvars = n + noise_vars;
  auto alg = polyalg::Algebra::get(nvars, order);

  switch (dynamics.kind) {
    case DynamicsKind::Static: {
      std::vector<Poly> comps = state_polys(center, alg, 0, n, false);
      return PolyMap(Eigen::VectorXd::Zero(nvars), center, std::move(comps));
    }
    case DynamicsKind::Discrete: {
      std::vector<Poly> x = state_polys(center, alg, 0, n, true);
      std::vector<Poly> nu;
      if (noise_vars > 0) {
        nu = state_polys(Eigen::VectorXd::Zero(noise_vars), alg, n, noise_vars, false);
      } else {
        nu.assign(static_cast<std::size_t>(std::max(dynamics.noise_dim, 0)),
                  Poly::zero(alg));
      }
      std::vector<Poly> next = dynamics.discrete_jet(x, nu, step_index);
      if (static_cast<int>(next.size()) != n)
        throw ShapeError("dynamics produced the wrong state dimension");
      require_finite(next);
      return PolyMap::from_raw(Eigen::VectorXd::Zero(nvars), std::move(next));
    }
    case DynamicsKind::Continuous: {
      if (noise_vars > 0)
        throw ConfigError("continuous dynamics carry no process-noise variables");
      std::vector<Poly> comps = state_polys(center, alg, 0, n, false);
      PolyMap x0(Eigen::VectorXd::Zero(n), center, std::move(comps));
      return jet_integrate(dynamics, x0, t0, t1);
    }
  }
  throw ConfigError("unknown dynamics kind");
}

Eigen::VectorXd propagate_numeric(const DynamicsModel& dynamics, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& nu, int step_index, double t0,
                                  double t1) {
  switch (dynamics.kind) {
    case DynamicsKind::Static:
      return x;
    case DynamicsKind::Discrete:
      return dynamics.discrete(x, nu, step_index);
    case DynamicsKind::Continuous:
      return flow(dynamics, x, t0, t1);
  }
  throw ConfigError("unknown dynamics kind");
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

void wrap_residual(const MeasurementModel& model, Eigen::VectorXd& residual) {
  for (int row : model.angle_rows) residual[row] = wrap_angle(residual[row]);
}

}  // namespace scoutpf::models
