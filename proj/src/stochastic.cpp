#include "scoutpf/stochastic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace scoutpf::stochastic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t id) {
  std::uint64_t state = seed ^ (0x94d049bb133111ebULL * (id + 1));
  splitmix64(state);
  return splitmix64(state);
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag bytes
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(seed, h);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
  std::uint64_t state = mix_seed(seed, stream);
  for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t RngStream::next_u64() {
  // xoshiro256++
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngStream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform01_open_low() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform01_open_low();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  // rejection sampling over the top bits, bias-free
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

// ---------------------------------------------------------------------------
// GaussianDensity

GaussianDensity::GaussianDensity(Eigen::VectorXd mean, Eigen::MatrixXd cov)
    : mean_(std::move(mean)), cov_(std::move(cov)) {
  const int n = static_cast<int>(mean_.size());
  if (cov_.rows() != n || cov_.cols() != n)
    throw ShapeError("covariance dimensions do not match the mean");
  const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ShapeError("covariance is not symmetric");
  cov_ = 0.5 * (cov_ + cov_.transpose());
  zero_cov_ = cov_.cwiseAbs().maxCoeff() == 0.0;

  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  if (llt.info() == Eigen::Success && !zero_cov_) {
    factor_ = llt.matrixL();
    invertible_ = true;
  } else {
    // Semi-definite path: clip tiny negative eigenvalues, then fold the
    // symmetric square root into a lower-triangular factor via QR.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov_);
    Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-10 * std::max(1e-300, cov_.trace());
    for (int i = 0; i < n; ++i) {
      if (ev[i] < -tol)
        throw ShapeError("covariance has a significantly negative eigenvalue");
      ev[i] = std::max(ev[i], 0.0);
    }
    const Eigen::MatrixXd s =
        es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(s.transpose());
    factor_ = Eigen::MatrixXd(qr.matrixQR().triangularView<Eigen::Upper>()).transpose();
    invertible_ = false;
  }
  if (invertible_) {
    double logdet_half = 0.0;
    for (int i = 0; i < n; ++i) logdet_half += std::log(factor_(i, i));
    log_norm_ = -0.5 * n * std::log(2.0 * std::numbers::pi) - logdet_half;
  }
}

Eigen::VectorXd GaussianDensity::sample(RngStream& rng) const {
  Eigen::VectorXd z(dim());
  for (int i = 0; i < dim(); ++i) z[i] = rng.normal();
  return mean_ + factor_ * z;
}

Eigen::MatrixXd GaussianDensity::sample_n(int n, RngStream& rng) const {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  Eigen::MatrixXd out(dim(), n);
  for (int c = 0; c < n; ++c) out.col(c) = sample(rng);
  return out;
}

double GaussianDensity::logpdf(const Eigen::VectorXd& x) const {
  if (x.size() != mean_.size()) throw ShapeError("log-density point dimension mismatch");
  return logpdf_residual(x - mean_);
}

double GaussianDensity::logpdf_residual(const Eigen::VectorXd& r) const {
  if (!invertible_)
    throw ShapeError("log-density of a singular Gaussian is undefined");
  const Eigen::VectorXd z =
      factor_.triangularView<Eigen::Lower>().solve(r);
  return log_norm_ - 0.5 * z.squaredNorm();
}

// ---------------------------------------------------------------------------
// UniformBoxDensity

UniformBoxDensity::UniformBoxDensity(Eigen::VectorXd center, Eigen::VectorXd half_widths)
    : center_(std::move(center)), half_widths_(std::move(half_widths)) {
  if (center_.size() != half_widths_.size())
    throw ShapeError("box center and half-width dimensions differ");
  if ((half_widths_.array() <= 0.0).any())
    throw ConfigError("box half widths must be positive");
  log_inside_ = 0.0;
  for (int i = 0; i < dim(); ++i) log_inside_ -= std::log(2.0 * half_widths_[i]);
}

Eigen::VectorXd UniformBoxDensity::sample(RngStream& rng) const {
  Eigen::VectorXd x(dim());
  for (int i = 0; i < dim(); ++i)
    x[i] = center_[i] + (2.0 * rng.uniform01() - 1.0) * half_widths_[i];
  return x;
}

Eigen::MatrixXd UniformBoxDensity::sample_n(int n, RngStream& rng) const {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  Eigen::MatrixXd out(dim(), n);
  for (int c = 0; c < n; ++c) out.col(c) = sample(rng);
  return out;
}

bool UniformBoxDensity::contains(const Eigen::VectorXd& x) const {
  return ((x - center_).cwiseAbs().array() <= half_widths_.array()).all();
}

double UniformBoxDensity::logpdf(const Eigen::VectorXd& x) const {
  if (x.size() != center_.size()) throw ShapeError("log-density point dimension mismatch");
  return contains(x) ? log_inside_ : -kInf;
}

// ---------------------------------------------------------------------------
// weights

std::vector<double> normalize_logweights(const std::vector<double>& logw) {
  if (logw.empty()) throw DegeneracyError("no weights to normalize");
  double bmax = -kInf;
  for (double b : logw) {
    if (std::isnan(b)) throw DegeneracyError("log-weight is NaN");
    bmax = std::max(bmax, b);
  }
  if (bmax == -kInf)
    throw DegeneracyError("all log-weights are -inf (total degeneracy)");
  // w_i = 1 / sum_j exp(b_j - b_i); shared factor exp(b_i - bmax) keeps the
  // computation in differences only.
  double total = 0.0;
  std::vector<double> w(logw.size());
  for (std::size_t i = 0; i < logw.size(); ++i) {
    w[i] = std::exp(logw[i] - bmax);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

EffectiveSampleSize effective_sample_size(const std::vector<double>& weights) {
  double sumsq = 0.0;
  for (double w : weights) sumsq += w * w;
  EffectiveSampleSize out;
  out.n_eff = sumsq > 0.0 ? 1.0 / sumsq : 0.0;
  out.psi = weights.empty() ? 0.0 : 100.0 * out.n_eff / static_cast<double>(weights.size());
  return out;
}

}  // namespace scoutpf::stochastic
