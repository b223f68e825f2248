#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace homog {

/// Maps x to the representative of its class modulo the lattice tau*Z^d in
/// the half-open cell [0,tau_1) x ... x [0,tau_d). Works in place.
void wrap_torus_inplace(std::span<double> x, std::span<const double> tau);
std::vector<double> wrap_torus(std::span<const double> x, std::span<const double> tau);

/// Real trigonometric polynomial, tau-periodic in every coordinate:
///   c0 + sum_k [ a_k cos(2 pi <k, x/tau>) + b_k sin(2 pi <k, x/tau>) ].
class TrigPolynomial {
 public:
  struct Term {
    std::vector<int> k;
    double cos_coef = 0.0;
    double sin_coef = 0.0;
  };

  TrigPolynomial() = default;
  TrigPolynomial(double constant, std::vector<Term> terms, std::span<const double> tau);
  static TrigPolynomial constant(double value);

  double operator()(std::span<const double> x) const;

  double constant_term() const { return constant_; }
  const std::vector<Term>& terms() const { return terms_; }
  bool is_zero() const;
  bool is_constant() const;
  /// Largest |k_dim| appearing with a nonzero coefficient.
  int max_frequency(std::size_t dim) const;

 private:
  double constant_ = 0.0;
  std::vector<Term> terms_;
  std::vector<double> wavevectors_;  // 2 pi k_j / tau_j, flattened per term
};

/// A tau-periodic field R^d x [n] -> R^dim. Either a table of trigonometric
/// polynomials per regime and component, or a user callback registered in code.
class PeriodicField {
 public:
  using Callback = std::function<void(std::span<const double> x, int regime, std::span<double> out)>;

  PeriodicField() = default;
  static PeriodicField zero(int dim, int regimes);
  static PeriodicField constant(std::vector<std::vector<double>> per_regime);
  /// per_regime[i][component]
  static PeriodicField trig(int dim, std::vector<std::vector<TrigPolynomial>> per_regime);
  /// User-supplied field. max_frequency is the Fourier content used by the grid
  /// resolution check; x_independent lets solvers take exact shortcuts.
  static PeriodicField custom(int dim, int regimes, Callback fn, int max_frequency,
                              bool x_independent = false);

  void eval(std::span<const double> x, int regime, std::span<double> out) const;
  double eval_scalar(std::span<const double> x, int regime) const;

  int dim() const { return dim_; }
  int regimes() const { return regimes_; }
  bool is_zero() const { return zero_; }
  bool is_x_independent() const { return x_independent_; }
  int max_frequency(std::size_t axis) const;
  const std::vector<std::vector<TrigPolynomial>>& table() const { return table_; }
  bool is_custom() const { return static_cast<bool>(callback_); }

 private:
  int dim_ = 0;
  int regimes_ = 0;
  bool zero_ = true;
  bool x_independent_ = true;
  int custom_max_freq_ = 0;
  std::vector<std::vector<TrigPolynomial>> table_;
  Callback callback_;
};

/// Scalar function on R^d with gradient: a multivariate polynomial or a user
/// callback. Used for f, g and the level-set function of the domain.
class ScalarFunction {
 public:
  struct Monomial {
    double coef = 0.0;
    std::vector<int> powers;
  };
  using Callback = std::function<double(std::span<const double>)>;
  using GradCallback = std::function<void(std::span<const double>, std::span<double>)>;

  ScalarFunction() = default;
  static ScalarFunction constant(int d, double value);
  static ScalarFunction polynomial(int d, std::vector<Monomial> terms);
  /// |x - center|^2 - radius^2
  static ScalarFunction ball(std::span<const double> center, double radius);
  static ScalarFunction custom(int d, Callback fn, GradCallback grad = {});

  double operator()(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  int dim() const { return d_; }
  bool is_constant() const;
  const std::vector<Monomial>& monomials() const { return terms_; }

 private:
  int d_ = 0;
  std::vector<Monomial> terms_;
  Callback fn_;
  GradCallback grad_;
};

struct BoundingBox {
  std::vector<double> lo;
  std::vector<double> hi;
};

/// D = { x : d(x) < 0 }, bounded and contained in bbox, with |grad d| >= delta on the boundary.
struct LevelSetDomain {
  ScalarFunction level;
  double delta = 0.0;
  BoundingBox bbox;

  bool contains(std::span<const double> x) const { return level(x) < 0.0; }
  /// First-order distance to the boundary, -d(x)/|grad d(x)| (positive inside).
  double boundary_distance(std::span<const double> x, std::span<double> normal_out) const;
  /// Newton projection onto {d = 0} along the gradient.
  void project_to_boundary(std::span<double> x) const;
};

/// Declared polynomial growth of f and g: |f| + |g| <= K (1 + |x|^kappa).
struct Growth {
  double K = 1.0;
  double kappa = 0.0;
};

/// Full description of one homogenization problem.
struct ProblemSpec {
  std::string name;
  int d = 1;
  int m = 1;
  int n = 1;
  std::vector<double> tau;
  PeriodicField drift_b;    // dim d
  PeriodicField drift_c;    // dim d
  PeriodicField sigma;      // dim d*m, row-major
  PeriodicField killing_e;  // dim 1
  Eigen::MatrixXd q_matrix;
  std::optional<LevelSetDomain> domain;
  std::optional<ScalarFunction> source_f;
  std::optional<ScalarFunction> boundary_g;
  std::optional<Growth> growth;

  /// Throws SpecError on dimension mismatches; replaces Q by the 1x1 zero
  /// matrix when n == 1.
  void finalize();

  bool is_elliptic() const { return domain.has_value(); }
  bool is_parabolic() const { return growth.has_value(); }
};

/// Coefficient values at one (x, regime) pair.
struct LocalCoefficients {
  std::vector<double> b, c, sigma, a;  // a = sigma sigma^T, d x d row-major
  double e = 0.0;
};
void eval_local(const ProblemSpec& spec, std::span<const double> x, int regime,
                LocalCoefficients& out);

struct ValidationCheck {
  std::string name;
  bool passed = false;
  std::string detail;
  double measured = 0.0;
  std::vector<double> witness_x;  // empty when the check has no witness
  int witness_regime = -1;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  bool passed() const;
  const ValidationCheck* find(const std::string& name) const;
};

struct ValidationOptions {
  std::size_t samples = 10000;
  std::uint64_t seed = 0;
  double ellipticity_floor = 1e-10;
  double periodicity_tol = 1e-9;
  double q_tol = 1e-12;
};

/// Irreducibility of the switching chain: strong connectivity of i -> j for q_ij > 0.
bool q_irreducible(const Eigen::MatrixXd& q);

/// Numerically checkable parts of the standing assumptions, witnessed by sampling.
ValidationReport validate_spec(const ProblemSpec& spec, const ValidationOptions& opts);

/// Sampled lower estimate of -sup e over the torus (alpha in e <= -alpha);
/// also returns the witness of the supremum.
struct KillingSup {
  double sup_e = 0.0;
  std::vector<double> witness_x;
  int witness_regime = 0;
};
KillingSup sample_killing_sup(const ProblemSpec& spec, std::size_t samples, std::uint64_t seed);

}  // namespace homog
