#pragma once

// Densities, seeded sampling, log-domain weight arithmetic, and
// sample-degeneracy diagnostics.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "scoutpf/errors.hpp"

namespace scoutpf::stochastic {

/// Deterministic counter-seeded random stream. Identical (seed, stream)
/// pairs reproduce the identical draw sequence; distinct stream ids give
/// independent sequences, so parallel workers can draw without coordination.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1), 53-bit resolution.
  double uniform01();
  /// Uniform in (0, 1].
  double uniform01_open_low();
  /// Standard normal draw (Box-Muller, spare cached).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t seed_ = 0, stream_ = 0;
  std::uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Order-free 64-bit mix of a seed with ids, used to derive per-run and
/// per-site seeds that are stable across platforms and execution order.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t id);
std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag);

/// Gaussian with cached lower-triangular factor (cov = factor factor^T).
/// Positive semi-definite covariances are accepted; the log-density is only
/// defined when the covariance is nonsingular.
class GaussianDensity {
 public:
  GaussianDensity(Eigen::VectorXd mean, Eigen::MatrixXd cov);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  const Eigen::MatrixXd& factor() const { return factor_; }
  bool invertible() const { return invertible_; }
  bool is_zero() const { return zero_cov_; }

  Eigen::VectorXd sample(RngStream& rng) const;
  /// n draws, one per column.
  Eigen::MatrixXd sample_n(int n, RngStream& rng) const;

  double logpdf(const Eigen::VectorXd& x) const;
  /// log N(r | 0, cov) for a residual already reduced to deviation form.
  double logpdf_residual(const Eigen::VectorXd& r) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd factor_;
  double log_norm_ = 0.0;
  bool invertible_ = false;
  bool zero_cov_ = false;
};

/// Axis-aligned box with per-axis half widths, all positive.
class UniformBoxDensity {
 public:
  UniformBoxDensity(Eigen::VectorXd center, Eigen::VectorXd half_widths);

  int dim() const { return static_cast<int>(center_.size()); }
  const Eigen::VectorXd& center() const { return center_; }
  const Eigen::VectorXd& half_widths() const { return half_widths_; }

  Eigen::VectorXd sample(RngStream& rng) const;
  Eigen::MatrixXd sample_n(int n, RngStream& rng) const;
  bool contains(const Eigen::VectorXd& x) const;
  /// -sum log(2 hw) inside the box, -inf outside.
  double logpdf(const Eigen::VectorXd& x) const;

 private:
  Eigen::VectorXd center_, half_widths_;
  double log_inside_ = 0.0;
};

/// Normalizes unnormalized log-weights b_i into weights summing to one,
/// working purely with differences of the b_i so that a common large offset
/// (particles deep in low-density regions) cannot underflow every weight.
/// Throws DegeneracyError when no finite b_i remains.
std::vector<double> normalize_logweights(const std::vector<double>& logw);

struct EffectiveSampleSize {
  double n_eff = 0.0;  // 1 / sum w^2
  double psi = 0.0;    // 100 * n_eff / N
};

/// Degeneracy diagnostic of a normalized weight vector.
EffectiveSampleSize effective_sample_size(const std::vector<double>& weights);

}  // namespace scoutpf::stochastic
