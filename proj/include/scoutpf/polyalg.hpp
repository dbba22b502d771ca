#pragma once

// Truncated multivariate Taylor polynomial arithmetic and polynomial maps:
// expansion of smooth functions around a center point, closed under
// add/mul/compose and elementary functions, with map inversion up to the
// truncation order.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scoutpf/errors.hpp"

namespace scoutpf::polyalg {

/// Exponent tuple of one monomial. Ordering is graded lexicographic:
/// lower total degree first, ties broken by comparing exponents from the
/// first variable on. This ordering is the canonical iteration order of
/// every coefficient table in the module.
struct MultiIndex {
  std::vector<int> exponents;

  int degree() const;
  bool operator==(const MultiIndex&) const = default;
};

/// Shared descriptor for all polynomials with a given (nvars, order):
/// the canonical monomial enumeration, position lookup, and the pairwise
/// product table used by truncated multiplication. Instances are built
/// once per (nvars, order) and cached; they are immutable and safe to
/// share across threads.
class Algebra {
 public:
  static constexpr int kMaxVars = 12;
  static constexpr int kMaxOrder = 10;

  static std::shared_ptr<const Algebra> get(int nvars, int order);

  int nvars() const { return nvars_; }
  int order() const { return order_; }
  /// Number of monomials of degree <= order.
  int size() const { return static_cast<int>(degrees_.size()); }

  int degree_of(int pos) const { return degrees_[pos]; }
  std::span<const int> exponents_of(int pos) const {
    return {exps_.data() + static_cast<std::size_t>(pos) * nvars_,
            static_cast<std::size_t>(nvars_)};
  }
  /// Position of an exponent tuple, or -1 when its degree exceeds the order.
  int position_of(std::span<const int> exps) const;
  int unit_position(int var) const { return 1 + var; }

  /// Position of monomial i * monomial j; caller guarantees the degree sum
  /// stays within the order.
  int product_position(int i, int j) const {
    if (!prod_.empty()) return prod_[static_cast<std::size_t>(i) * degrees_.size() + j];
    return product_position_slow(i, j);
  }
  /// One past the last position with degree <= d.
  int degree_end(int d) const { return degree_end_[d]; }

  // Monomial factorization used by evaluation and composition:
  // monomial[pos] = variable(split_var_[pos]) * monomial[split_rest_[pos]]
  // for every pos > 0.
  int split_var(int pos) const { return split_var_[pos]; }
  int split_rest(int pos) const { return split_rest_[pos]; }

 private:
  Algebra(int nvars, int order);
  int product_position_slow(int i, int j) const;
  static std::uint64_t pack(std::span<const int> exps);

  int nvars_ = 0;
  int order_ = 0;
  std::vector<int> exps_;        // size() * nvars, canonical order
  std::vector<int> degrees_;     // per position
  std::vector<int> degree_end_;  // order + 2 entries
  std::vector<int> split_var_;
  std::vector<int> split_rest_;
  std::vector<std::uint64_t> packed_;
  std::vector<int> prod_;  // size()^2 when small enough, else empty
  struct PackedHash {
    std::size_t operator()(std::uint64_t k) const noexcept;
  };
  std::unordered_map<std::uint64_t, int, PackedHash> index_;
};

/// One component of a truncated Taylor expansion: a polynomial in `nvars`
/// deviation variables with all terms of degree > `order` discarded.
/// Values are immutable once returned from an operation; all operations are
/// pure functions of their inputs.
class Poly {
 public:
  Poly() = default;  // invalid placeholder; any operation on it throws

  static Poly zero(std::shared_ptr<const Algebra> alg);
  static Poly constant(std::shared_ptr<const Algebra> alg, double value);
  /// The deviation variable `index` (coefficient 1 at the unit monomial).
  static Poly variable(int index, int nvars, int order);
  static Poly variable(int index, const std::shared_ptr<const Algebra>& alg);

  bool valid() const { return alg_ != nullptr; }
  int nvars() const;
  int order() const;
  const std::shared_ptr<const Algebra>& algebra() const { return alg_; }

  double constant_part() const;
  double coefficient(const MultiIndex& mi) const;
  double coefficient_at(int pos) const { return c_[pos]; }
  /// Largest degree with a nonzero coefficient (-1 for the zero polynomial).
  int effective_degree() const;
  /// Re-truncates to a (usually lower) order.
  Poly truncated(int new_order) const;

  double evaluate(std::span<const double> dx) const;
  double evaluate(const Eigen::VectorXd& dx) const;

  /// Calls fn(MultiIndex, coeff) for every nonzero coefficient in canonical
  /// graded-lex order.
  template <class Fn>
  void for_each_term(Fn&& fn) const {
    for (int p = 0; p < static_cast<int>(c_.size()); ++p) {
      if (c_[p] != 0.0) {
        auto e = alg_->exponents_of(p);
        fn(MultiIndex{std::vector<int>(e.begin(), e.end())}, c_[p]);
      }
    }
  }

  /// Plain-text coefficient dump, one "e0 e1 ... : value" line per nonzero
  /// coefficient, canonical order, 17 significant digits.
  void dump(std::ostream& os) const;

  Poly operator-() const;
  friend Poly operator+(const Poly& a, const Poly& b);
  friend Poly operator-(const Poly& a, const Poly& b);
  friend Poly operator*(const Poly& a, const Poly& b);
  friend Poly operator+(const Poly& a, double s);
  friend Poly operator+(double s, const Poly& a);
  friend Poly operator-(const Poly& a, double s);
  friend Poly operator-(double s, const Poly& a);
  friend Poly operator*(const Poly& a, double s);
  friend Poly operator*(double s, const Poly& a);
  friend Poly operator/(const Poly& a, double s);
  friend Poly operator/(const Poly& a, const Poly& b);
  friend Poly operator/(double s, const Poly& b);

  friend Poly sin(const Poly& p);
  friend Poly cos(const Poly& p);
  friend Poly exp(const Poly& p);
  friend Poly log(const Poly& p);
  friend Poly sqrt(const Poly& p);
  friend Poly atan(const Poly& p);
  friend Poly asin(const Poly& p);
  friend Poly reciprocal(const Poly& p);
  friend Poly atan2(const Poly& y, const Poly& x);

  friend class PolyMap;
  friend Poly poly_from_taylor_table(std::span<const double> table, const Poly& p);
  friend std::vector<Poly> compose_components(std::span<const Poly> outer,
                                              std::span<const Poly> inner);

 private:
  explicit Poly(std::shared_ptr<const Algebra> alg);
  void require_valid() const;
  static void require_same_algebra(const Poly& a, const Poly& b);

  std::shared_ptr<const Algebra> alg_;
  std::vector<double> c_;
};

// Namespace-scope declarations of the elementary expansions (the in-class
// friend declarations alone are only reachable through argument lookup).
Poly sin(const Poly& p);
Poly cos(const Poly& p);
Poly exp(const Poly& p);
Poly log(const Poly& p);
Poly sqrt(const Poly& p);
Poly atan(const Poly& p);
Poly asin(const Poly& p);
Poly reciprocal(const Poly& p);
Poly atan2(const Poly& y, const Poly& x);

/// Horner-style composition of a univariate Taylor table with the
/// zero-constant part of p: table[0] + table[1]*(p-c) + ... Used by all
/// elementary function expansions.
Poly poly_from_taylor_table(std::span<const double> table, const Poly& p);

/// A vector of truncated polynomials sharing variables and order, plus the
/// expansion centers on both sides: deviations dx from center_in map to
/// deviations dy from center_out. A "deviation map" carries no constant
/// terms; the offsets live entirely in the centers.
class PolyMap {
 public:
  PolyMap() = default;
  PolyMap(Eigen::VectorXd center_in, Eigen::VectorXd center_out,
          std::vector<Poly> components);

  /// Identity deviation map on `nvars` variables (center_in = center_out =
  /// `center`, which defaults to zero).
  static PolyMap identity(int nvars, int order, Eigen::VectorXd center = {});
  /// Builds a deviation map from raw polynomials by stripping their constant
  /// parts into center_out.
  static PolyMap from_raw(Eigen::VectorXd center_in, std::vector<Poly> components);

  bool valid() const { return !comps_.empty(); }
  int nvars() const;
  int order() const;
  int dim_out() const { return static_cast<int>(comps_.size()); }
  bool is_deviation() const;

  const Eigen::VectorXd& center_in() const { return center_in_; }
  const Eigen::VectorXd& center_out() const { return center_out_; }
  const std::vector<Poly>& components() const { return comps_; }
  const Poly& component(int i) const { return comps_[i]; }

  /// Deviation-in, deviation-out evaluation.
  Eigen::VectorXd evaluate(const Eigen::VectorXd& dx) const;
  /// Absolute evaluation: center_out + M(x - center_in).
  Eigen::VectorXd evaluate_absolute(const Eigen::VectorXd& x) const;
  /// Batch deviation evaluation, one column per point.
  Eigen::MatrixXd evaluate_batch(const Eigen::MatrixXd& dxs) const;

  /// Matrix of first-order coefficients (dim_out x nvars); the Jacobian of
  /// the map at its center.
  Eigen::MatrixXd linear_part() const;

  /// Map with a subset of the components (same centers on the input side).
  PolyMap rows(std::span<const int> indices) const;
  /// Stacks two maps over the same input variables.
  static PolyMap stack(const PolyMap& top, const PolyMap& bottom);

  void dump(std::ostream& os) const;
  std::string dump_string() const;

 private:
  Eigen::VectorXd center_in_, center_out_;
  std::vector<Poly> comps_;
};

/// Truncated Taylor expansion of outer(inner(.)): inner must be a deviation
/// map feeding exactly outer.nvars variables at the same order.
PolyMap compose(const PolyMap& outer, const PolyMap& inner);

/// Inverse of a square deviation map through the truncation order, via the
/// fixed-point iteration W <- Linv (I - N o W) with M = L + N split into
/// linear and higher-order parts. The linear part must be invertible with a
/// condition number below `condition_threshold`.
PolyMap invert(const PolyMap& m, double condition_threshold = 1e12);

/// 2-norm condition number of the linear part of a square deviation map.
double linear_condition(const PolyMap& m);

}  // namespace scoutpf::polyalg
