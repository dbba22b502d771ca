#include "scoutpf/polyalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>

namespace scoutpf::polyalg {

namespace {

constexpr int kBitsPerVar = 5;  // exponents up to 31, 12 vars fit in 64 bits

void append_monomials(int nvars, int degree, std::vector<int>& current,
                      std::vector<int>& out) {
  // Enumeration of exponent tuples with a fixed total degree, earlier
  // variables carrying the larger exponents first; (1,0,..) precedes (0,1,..).
  const int var = static_cast<int>(current.size());
  if (var == nvars - 1) {
    current.push_back(degree);
    out.insert(out.end(), current.begin(), current.end());
    current.pop_back();
    return;
  }
  for (int e = degree; e >= 0; --e) {
    current.push_back(e);
    append_monomials(nvars, degree - e, current, out);
    current.pop_back();
  }
}

}  // namespace

int MultiIndex::degree() const {
  int d = 0;
  for (int e : exponents) d += e;
  return d;
}

std::size_t Algebra::PackedHash::operator()(std::uint64_t k) const noexcept {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  return static_cast<std::size_t>(k);
}

std::uint64_t Algebra::pack(std::span<const int> exps) {
  std::uint64_t key = 0;
  for (std::size_t v = 0; v < exps.size(); ++v)
    key |= static_cast<std::uint64_t>(exps[v]) << (kBitsPerVar * v);
  return key;
}

Algebra::Algebra(int nvars, int order) : nvars_(nvars), order_(order) {
  degree_end_.resize(order + 2, 0);
  std::vector<int> current;
  for (int d = 0; d <= order; ++d) append_monomials(nvars, d, current, exps_);
  const int n = static_cast<int>(exps_.size()) / nvars;
  degrees_.resize(n);
  packed_.resize(n);
  split_var_.resize(n, -1);
  split_rest_.resize(n, -1);
  index_.reserve(static_cast<std::size_t>(n) * 2);
  for (int p = 0; p < n; ++p) {
    auto e = exponents_of(p);
    int deg = 0;
    for (int v = 0; v < nvars; ++v) deg += e[v];
    degrees_[p] = deg;
    packed_[p] = pack(e);
    index_.emplace(packed_[p], p);
  }
  for (int d = 0; d <= order + 1; ++d) {
    degree_end_[d] = static_cast<int>(
        std::upper_bound(degrees_.begin(), degrees_.end(), d) - degrees_.begin());
  }
  for (int p = 1; p < n; ++p) {
    auto e = exponents_of(p);
    for (int v = 0; v < nvars; ++v) {
      if (e[v] > 0) {
        split_var_[p] = v;
        std::uint64_t rest = packed_[p] - (1ULL << (kBitsPerVar * v));
        split_rest_[p] = index_.at(rest);
        break;
      }
    }
  }
  // Pairwise product table, built only while it stays small.
  if (static_cast<std::int64_t>(n) * n <= 8'000'000) {
    prod_.assign(static_cast<std::size_t>(n) * n, -1);
    for (int i = 0; i < n; ++i) {
      if (degrees_[i] > order) continue;
      const int jmax = degree_end_[order - degrees_[i]];
      for (int j = 0; j < jmax; ++j)
        prod_[static_cast<std::size_t>(i) * n + j] = index_.at(packed_[i] + packed_[j]);
    }
  }
}

int Algebra::product_position_slow(int i, int j) const {
  return index_.at(packed_[i] + packed_[j]);
}

int Algebra::position_of(std::span<const int> exps) const {
  if (static_cast<int>(exps.size()) != nvars_)
    throw ShapeError("multi-index length does not match variable count");
  int deg = 0;
  for (int e : exps) {
    if (e < 0) throw ShapeError("negative exponent in multi-index");
    deg += e;
  }
  if (deg > order_) return -1;
  return index_.at(pack(exps));
}

std::shared_ptr<const Algebra> Algebra::get(int nvars, int order) {
  if (nvars < 1 || nvars > kMaxVars)
    throw ShapeError("variable count must be in [1, " + std::to_string(kMaxVars) + "]");
  if (order < 1 || order > kMaxOrder)
    throw ShapeError("truncation order must be in [1, " + std::to_string(kMaxOrder) + "]");
  static std::mutex mutex;
  static std::unordered_map<int, std::shared_ptr<const Algebra>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  const int key = nvars * 64 + order;
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto alg = std::shared_ptr<const Algebra>(new Algebra(nvars, order));
  cache.emplace(key, alg);
  return alg;
}

// ---------------------------------------------------------------------------
// Poly

Poly::Poly(std::shared_ptr<const Algebra> alg) : alg_(std::move(alg)) {
  c_.assign(alg_->size(), 0.0);
}

Poly Poly::zero(std::shared_ptr<const Algebra> alg) { return Poly(std::move(alg)); }

Poly Poly::constant(std::shared_ptr<const Algebra> alg, double value) {
  Poly p(std::move(alg));
  p.c_[0] = value;
  return p;
}

Poly Poly::variable(int index, int nvars, int order) {
  return variable(index, Algebra::get(nvars, order));
}

Poly Poly::variable(int index, const std::shared_ptr<const Algebra>& alg) {
  if (index < 0 || index >= alg->nvars())
    throw ShapeError("variable index out of range");
  Poly p(alg);
  p.c_[alg->unit_position(index)] = 1.0;
  return p;
}

void Poly::require_valid() const {
  if (!alg_) throw ShapeError("operation on a default-constructed polynomial");
}

void Poly::require_same_algebra(const Poly& a, const Poly& b) {
  a.require_valid();
  b.require_valid();
  if (a.alg_ != b.alg_ &&
      (a.alg_->nvars() != b.alg_->nvars() || a.alg_->order() != b.alg_->order()))
    throw ShapeError("polynomial operands differ in variable count or order");
}

int Poly::nvars() const {
  require_valid();
  return alg_->nvars();
}

int Poly::order() const {
  require_valid();
  return alg_->order();
}

double Poly::constant_part() const {
  require_valid();
  return c_[0];
}

double Poly::coefficient(const MultiIndex& mi) const {
  require_valid();
  const int pos = alg_->position_of(mi.exponents);
  return pos < 0 ? 0.0 : c_[pos];
}

int Poly::effective_degree() const {
  require_valid();
  for (int p = static_cast<int>(c_.size()) - 1; p >= 0; --p)
    if (c_[p] != 0.0) return alg_->degree_of(p);
  return -1;
}

Poly Poly::truncated(int new_order) const {
  require_valid();
  Poly out(Algebra::get(alg_->nvars(), new_order));
  const int keep = std::min(new_order, alg_->order());
  const int end = alg_->degree_end(keep);
  // Both enumerations are graded-lex, so shared-degree prefixes line up.
  std::copy(c_.begin(), c_.begin() + end, out.c_.begin());
  return out;
}

double Poly::evaluate(std::span<const double> dx) const {
  require_valid();
  if (static_cast<int>(dx.size()) != alg_->nvars())
    throw ShapeError("evaluation point length does not match variable count");
  const int n = alg_->size();
  // Monomial values built incrementally from the split factorization.
  thread_local std::vector<double> vals;
  vals.resize(n);
  vals[0] = 1.0;
  double acc = c_[0];
  for (int p = 1; p < n; ++p) {
    vals[p] = vals[alg_->split_rest(p)] * dx[alg_->split_var(p)];
    acc += c_[p] * vals[p];
  }
  return acc;
}

double Poly::evaluate(const Eigen::VectorXd& dx) const {
  return evaluate(std::span<const double>(dx.data(), static_cast<std::size_t>(dx.size())));
}

Poly Poly::operator-() const {
  require_valid();
  Poly out = *this;
  for (double& v : out.c_) v = -v;
  return out;
}

Poly operator+(const Poly& a, const Poly& b) {
  Poly::require_same_algebra(a, b);
  Poly out = a;
  for (std::size_t i = 0; i < out.c_.size(); ++i) out.c_[i] += b.c_[i];
  return out;
}

Poly operator-(const Poly& a, const Poly& b) {
  Poly::require_same_algebra(a, b);
  Poly out = a;
  for (std::size_t i = 0; i < out.c_.size(); ++i) out.c_[i] -= b.c_[i];
  return out;
}

Poly operator*(const Poly& a, const Poly& b) {
  Poly::require_same_algebra(a, b);
  const Algebra& alg = *a.alg_;
  const int order = alg.order();
  Poly out = Poly::zero(a.alg_);
  for (int i = 0; i < alg.size(); ++i) {
    const double ai = a.c_[i];
    if (ai == 0.0) continue;
    const int jmax = alg.degree_end(order - alg.degree_of(i));
    for (int j = 0; j < jmax; ++j) {
      const double bj = b.c_[j];
      if (bj != 0.0) out.c_[alg.product_position(i, j)] += ai * bj;
    }
  }
  return out;
}

Poly operator+(const Poly& a, double s) {
  a.require_valid();
  Poly out = a;
  out.c_[0] += s;
  return out;
}
Poly operator+(double s, const Poly& a) { return a + s; }
Poly operator-(const Poly& a, double s) { return a + (-s); }
Poly operator-(double s, const Poly& a) { return (-a) + s; }

Poly operator*(const Poly& a, double s) {
  a.require_valid();
  Poly out = a;
  for (double& v : out.c_) v *= s;
  return out;
}
Poly operator*(double s, const Poly& a) { return a * s; }
Poly operator/(const Poly& a, double s) { return a * (1.0 / s); }
Poly operator/(const Poly& a, const Poly& b) { return a * reciprocal(b); }
Poly operator/(double s, const Poly& b) { return reciprocal(b) * s; }

Poly poly_from_taylor_table(std::span<const double> table, const Poly& p) {
  p.require_valid();
  // Horner over the zero-constant part of p; that part is nilpotent under
  // truncation, so the table only needs order+1 entries.
  Poly dp = p;
  dp.c_[0] = 0.0;
  Poly acc = Poly::constant(p.alg_, table[table.size() - 1]);
  for (int j = static_cast<int>(table.size()) - 2; j >= 0; --j)
    acc = acc * dp + table[static_cast<std::size_t>(j)];
  return acc;
}

namespace {

std::vector<double> taylor_exp(double c, int k) {
  std::vector<double> t(k + 1);
  t[0] = std::exp(c);
  for (int j = 0; j < k; ++j) t[j + 1] = t[j] / (j + 1);
  return t;
}

std::vector<double> taylor_log(double c, int k) {
  if (c <= 0.0) throw DomainError("log expanded at a non-positive constant part");
  std::vector<double> t(k + 1);
  t[0] = std::log(c);
  if (k >= 1) t[1] = 1.0 / c;
  for (int j = 1; j < k; ++j)
    t[j + 1] = -t[j] * static_cast<double>(j) / ((j + 1) * c);
  return t;
}

std::vector<double> taylor_sqrt(double c, int k) {
  if (c <= 0.0) throw DomainError("sqrt expanded at a non-positive constant part");
  std::vector<double> t(k + 1);
  t[0] = std::sqrt(c);
  for (int j = 0; j < k; ++j) t[j + 1] = t[j] * (0.5 - j) / ((j + 1) * c);
  return t;
}

std::vector<double> taylor_reciprocal(double c, int k) {
  if (c == 0.0) throw DomainError("reciprocal expanded at a zero constant part");
  std::vector<double> t(k + 1);
  t[0] = 1.0 / c;
  for (int j = 0; j < k; ++j) t[j + 1] = -t[j] / c;
  return t;
}

std::vector<double> taylor_sin(double c, int k) {
  std::vector<double> t(k + 1);
  const double table[4] = {std::sin(c), std::cos(c), -std::sin(c), -std::cos(c)};
  double fact = 1.0;
  for (int j = 0; j <= k; ++j) {
    if (j > 0) fact *= j;
    t[j] = table[j % 4] / fact;
  }
  return t;
}

std::vector<double> taylor_cos(double c, int k) {
  std::vector<double> t(k + 1);
  const double table[4] = {std::cos(c), -std::sin(c), -std::cos(c), std::sin(c)};
  double fact = 1.0;
  for (int j = 0; j <= k; ++j) {
    if (j > 0) fact *= j;
    t[j] = table[j % 4] / fact;
  }
  return t;
}

// Normalized Taylor coefficients of atan at c from the ODE (1+x^2) y' = 1:
// (1+c^2)(j+1) a_{j+1} + 2cj a_j + (j-1) a_{j-1} = 0.
std::vector<double> taylor_atan(double c, int k) {
  std::vector<double> a(k + 1);
  const double d = 1.0 + c * c;
  a[0] = std::atan(c);
  if (k >= 1) a[1] = 1.0 / d;
  for (int j = 1; j < k; ++j)
    a[j + 1] = -(2.0 * c * j * a[j] + (j - 1) * a[j - 1]) / (d * (j + 1));
  return a;
}

// Normalized Taylor coefficients of asin at c from (1-x^2) y'' = x y':
// (1-c^2)(j+2)(j+1) a_{j+2} = c (j+1)(2j+1) a_{j+1} + j^2 a_j.
std::vector<double> taylor_asin(double c, int k) {
  if (!(std::abs(c) < 1.0))
    throw DomainError("asin expanded at a constant part with |c| >= 1");
  std::vector<double> a(k + 1);
  const double d = 1.0 - c * c;
  a[0] = std::asin(c);
  if (k >= 1) a[1] = 1.0 / std::sqrt(d);
  for (int j = 0; j + 2 <= k; ++j)
    a[j + 2] = (c * (j + 1) * (2 * j + 1) * a[j + 1] + static_cast<double>(j) * j * a[j]) /
               (d * (j + 2) * (j + 1));
  return a;
}

}  // namespace

Poly sin(const Poly& p) { return poly_from_taylor_table(taylor_sin(p.constant_part(), p.order()), p); }
Poly cos(const Poly& p) { return poly_from_taylor_table(taylor_cos(p.constant_part(), p.order()), p); }
Poly exp(const Poly& p) { return poly_from_taylor_table(taylor_exp(p.constant_part(), p.order()), p); }
Poly log(const Poly& p) { return poly_from_taylor_table(taylor_log(p.constant_part(), p.order()), p); }
Poly sqrt(const Poly& p) { return poly_from_taylor_table(taylor_sqrt(p.constant_part(), p.order()), p); }
Poly atan(const Poly& p) { return poly_from_taylor_table(taylor_atan(p.constant_part(), p.order()), p); }
Poly asin(const Poly& p) { return poly_from_taylor_table(taylor_asin(p.constant_part(), p.order()), p); }
Poly reciprocal(const Poly& p) {
  return poly_from_taylor_table(taylor_reciprocal(p.constant_part(), p.order()), p);
}

Poly atan2(const Poly& y, const Poly& x) {
  Poly::require_same_algebra(y, x);
  const double cy = y.constant_part();
  const double cx = x.constant_part();
  const double r2 = cx * cx + cy * cy;
  if (r2 == 0.0) throw DomainError("atan2 expanded at the origin");
  // atan2(y,x) = atan2(cy,cx) + atan(u) with u = (y*cx - x*cy)/(x*cx + y*cy);
  // u has zero constant part and the denominator constant part is r2 > 0.
  const Poly num = y * cx - x * cy;
  const Poly den = x * cx + y * cy;
  return atan(num * reciprocal(den)) + std::atan2(cy, cx);
}

void Poly::dump(std::ostream& os) const {
  require_valid();
  char buf[64];
  for (int p = 0; p < static_cast<int>(c_.size()); ++p) {
    if (c_[p] == 0.0) continue;
    auto e = alg_->exponents_of(p);
    for (int v = 0; v < alg_->nvars(); ++v) {
      if (v) os << ' ';
      os << e[v];
    }
    std::snprintf(buf, sizeof(buf), "%.17g", c_[p]);
    os << ": " << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// PolyMap

PolyMap::PolyMap(Eigen::VectorXd center_in, Eigen::VectorXd center_out,
                 std::vector<Poly> components)
    : center_in_(std::move(center_in)),
      center_out_(std::move(center_out)),
      comps_(std::move(components)) {
  if (comps_.empty()) throw ShapeError("polynomial map needs at least one component");
  for (const Poly& c : comps_) {
    c.require_valid();
    if (c.algebra() != comps_[0].algebra())
      throw ShapeError("map components must share one algebra");
  }
  if (center_in_.size() == 0) center_in_ = Eigen::VectorXd::Zero(comps_[0].nvars());
  if (center_out_.size() == 0) center_out_ = Eigen::VectorXd::Zero(dim_out());
  if (center_in_.size() != comps_[0].nvars())
    throw ShapeError("center_in length does not match variable count");
  if (center_out_.size() != dim_out())
    throw ShapeError("center_out length does not match component count");
}

PolyMap PolyMap::identity(int nvars, int order, Eigen::VectorXd center) {
  auto alg = Algebra::get(nvars, order);
  std::vector<Poly> comps;
  comps.reserve(nvars);
  for (int v = 0; v < nvars; ++v) comps.push_back(Poly::variable(v, alg));
  if (center.size() == 0) center = Eigen::VectorXd::Zero(nvars);
  return PolyMap(center, center, std::move(comps));
}

PolyMap PolyMap::from_raw(Eigen::VectorXd center_in, std::vector<Poly> components) {
  Eigen::VectorXd center_out(static_cast<Eigen::Index>(components.size()));
  for (std::size_t i = 0; i < components.size(); ++i) {
    center_out[static_cast<Eigen::Index>(i)] = components[i].constant_part();
    components[i].c_[0] = 0.0;
  }
  return PolyMap(std::move(center_in), std::move(center_out), std::move(components));
}

int PolyMap::nvars() const { return comps_.at(0).nvars(); }
int PolyMap::order() const { return comps_.at(0).order(); }

bool PolyMap::is_deviation() const {
  for (const Poly& c : comps_)
    if (c.constant_part() != 0.0) return false;
  return true;
}

Eigen::VectorXd PolyMap::evaluate(const Eigen::VectorXd& dx) const {
  Eigen::VectorXd out(dim_out());
  for (int i = 0; i < dim_out(); ++i) out[i] = comps_[i].evaluate(dx);
  return out;
}

Eigen::VectorXd PolyMap::evaluate_absolute(const Eigen::VectorXd& x) const {
  return center_out_ + evaluate(x - center_in_);
}

Eigen::MatrixXd PolyMap::evaluate_batch(const Eigen::MatrixXd& dxs) const {
  if (dxs.rows() != nvars()) throw ShapeError("batch point dimension mismatch");
  const Algebra& alg = *comps_[0].algebra();
  const int nm = alg.size();
  Eigen::MatrixXd out(dim_out(), dxs.cols());
  std::vector<double> vals(static_cast<std::size_t>(nm));
  for (Eigen::Index col = 0; col < dxs.cols(); ++col) {
    vals[0] = 1.0;
    for (int p = 1; p < nm; ++p)
      vals[p] = vals[alg.split_rest(p)] * dxs(alg.split_var(p), col);
    for (int i = 0; i < dim_out(); ++i) {
      double acc = 0.0;
      for (int p = 0; p < nm; ++p) acc += comps_[i].coefficient_at(p) * vals[p];
      out(i, col) = acc;
    }
  }
  return out;
}

Eigen::MatrixXd PolyMap::linear_part() const {
  Eigen::MatrixXd jac(dim_out(), nvars());
  const Algebra& alg = *comps_[0].algebra();
  for (int i = 0; i < dim_out(); ++i)
    for (int v = 0; v < nvars(); ++v)
      jac(i, v) = comps_[i].coefficient_at(alg.unit_position(v));
  return jac;
}

PolyMap PolyMap::rows(std::span<const int> indices) const {
  std::vector<Poly> comps;
  Eigen::VectorXd center_out(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    comps.push_back(comps_.at(static_cast<std::size_t>(indices[i])));
    center_out[static_cast<Eigen::Index>(i)] = center_out_[indices[i]];
  }
  return PolyMap(center_in_, std::move(center_out), std::move(comps));
}

PolyMap PolyMap::stack(const PolyMap& top, const PolyMap& bottom) {
  if (top.nvars() != bottom.nvars() || top.order() != bottom.order())
    throw ShapeError("stacked maps must share variables and order");
  std::vector<Poly> comps = top.comps_;
  comps.insert(comps.end(), bottom.comps_.begin(), bottom.comps_.end());
  Eigen::VectorXd center_out(top.dim_out() + bottom.dim_out());
  center_out << top.center_out_, bottom.center_out_;
  return PolyMap(top.center_in_, std::move(center_out), std::move(comps));
}

void PolyMap::dump(std::ostream& os) const {
  for (int i = 0; i < dim_out(); ++i) {
    os << "# component " << i << '\n';
    comps_[i].dump(os);
  }
}

std::string PolyMap::dump_string() const {
  std::ostringstream oss;
  dump(oss);
  return oss.str();
}

std::vector<Poly> compose_components(std::span<const Poly> outer,
                                     std::span<const Poly> inner) {
  const Algebra& oalg = *outer[0].algebra();
  const auto ialg = inner[0].algebra();
  // Power products of the inner components, one per outer monomial, built
  // incrementally from the split factorization.
  std::vector<Poly> pp(static_cast<std::size_t>(oalg.size()));
  pp[0] = Poly::constant(ialg, 1.0);
  for (int p = 1; p < oalg.size(); ++p)
    pp[p] = pp[oalg.split_rest(p)] * inner[static_cast<std::size_t>(oalg.split_var(p))];
  std::vector<Poly> out;
  out.reserve(outer.size());
  for (const Poly& comp : outer) {
    Poly acc = Poly::zero(ialg);
    for (int p = 0; p < oalg.size(); ++p) {
      const double c = comp.coefficient_at(p);
      if (c == 0.0) continue;
      for (std::size_t q = 0; q < acc.c_.size(); ++q) acc.c_[q] += c * pp[p].c_[q];
    }
    out.push_back(std::move(acc));
  }
  return out;
}

PolyMap compose(const PolyMap& outer, const PolyMap& inner) {
  if (outer.nvars() != inner.dim_out())
    throw ShapeError("composition dimension mismatch: outer takes " +
                     std::to_string(outer.nvars()) + " variables, inner yields " +
                     std::to_string(inner.dim_out()));
  if (outer.order() != inner.order())
    throw ShapeError("composition requires matching truncation orders");
  if (!inner.is_deviation())
    throw ShapeError("inner map of a composition must have zero constant parts");
  auto comps = compose_components(outer.components(), inner.components());
  return PolyMap(inner.center_in(), outer.center_out(), std::move(comps));
}

double linear_condition(const PolyMap& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.linear_part());
  const auto& sv = svd.singularValues();
  const double smin = sv[sv.size() - 1];
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return sv[0] / smin;
}

PolyMap invert(const PolyMap& m, double condition_threshold) {
  const int n = m.nvars();
  if (m.dim_out() != n)
    throw SingularMapError("only square maps are invertible (dim_out=" +
                           std::to_string(m.dim_out()) + ", nvars=" + std::to_string(n) + ")");
  if (!m.is_deviation())
    throw SingularMapError("map inversion requires a deviation map");
  const Eigen::MatrixXd lin = m.linear_part();
  const double cond = linear_condition(m);
  if (!(cond < condition_threshold))
    throw SingularMapError("linear part is singular or ill-conditioned (condition estimate " +
                           std::to_string(cond) + ")");
  const Eigen::MatrixXd linv = lin.inverse();
  const int order = m.order();
  auto alg = m.components()[0].algebra();

  // Higher-order remainder N = M - L.
  std::vector<Poly> nonlin = m.components();
  for (int i = 0; i < n; ++i) {
    Poly& c = nonlin[static_cast<std::size_t>(i)];
    Poly stripped = c;
    for (int v = 0; v < n; ++v) {
      const int up = alg->unit_position(v);
      Poly unit = Poly::variable(v, alg);
      stripped = stripped - unit * c.coefficient_at(up);
    }
    c = stripped;
  }
  const PolyMap nmap(Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), nonlin);

  auto apply_linv = [&](const std::vector<Poly>& comps) {
    std::vector<Poly> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Poly acc = Poly::zero(alg);
      for (int j = 0; j < n; ++j)
        acc = acc + comps[static_cast<std::size_t>(j)] * linv(i, j);
      out.push_back(std::move(acc));
    }
    return out;
  };

  const PolyMap ident = PolyMap::identity(n, order);
  std::vector<Poly> ident_comps = ident.components();
  // W <- Linv (I - N o W); each pass extends validity by one degree.
  PolyMap w(m.center_out(), m.center_in(), apply_linv(ident_comps));
  for (int pass = 0; pass < order; ++pass) {
    const PolyMap nw = compose(nmap, w);
    std::vector<Poly> rhs(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      rhs[static_cast<std::size_t>(i)] = ident_comps[static_cast<std::size_t>(i)] -
                                         nw.components()[static_cast<std::size_t>(i)];
    w = PolyMap(m.center_out(), m.center_in(), apply_linv(rhs));
  }
  return w;
}

}  // namespace scoutpf::polyalg
