#pragma once

#include "homog/model.hpp"

#include <Eigen/Sparse>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace homog {

/// Uniform grid on [0,tau_1) x ... x [0,tau_d) times the regimes. Unknowns are
/// numbered spatial * n + regime, with the first coordinate fastest in the
/// spatial index.
class TorusGrid {
 public:
  TorusGrid() = default;
  TorusGrid(std::vector<int> cells, std::vector<double> tau, int regimes);

  int dim() const { return static_cast<int>(cells_.size()); }
  int regimes() const { return n_; }
  const std::vector<int>& cells() const { return cells_; }
  const std::vector<double>& tau() const { return tau_; }
  double spacing(int k) const { return tau_[k] / cells_[k]; }
  std::size_t points() const { return points_; }
  std::size_t unknowns() const { return points_ * static_cast<std::size_t>(n_); }

  std::size_t index(std::size_t spatial, int regime) const {
    return spatial * static_cast<std::size_t>(n_) + static_cast<std::size_t>(regime);
  }
  std::size_t spatial_of(std::size_t index) const { return index / static_cast<std::size_t>(n_); }
  int regime_of(std::size_t index) const { return static_cast<int>(index % static_cast<std::size_t>(n_)); }

  std::vector<int> multi_index(std::size_t spatial) const;
  std::size_t spatial_index(std::span<const int> multi) const;
  /// Spatial index of the neighbour at offset `delta` (periodic wrap).
  std::size_t shifted(std::size_t spatial, int axis, int delta) const;
  std::vector<double> point(std::size_t spatial) const;

  bool operator==(const TorusGrid& o) const {
    return cells_ == o.cells_ && tau_ == o.tau_ && n_ == o.n_;
  }

 private:
  std::vector<int> cells_;
  std::vector<double> tau_;
  int n_ = 1;
  std::size_t points_ = 0;
};

enum class DriftScheme { Upwind, Central, ExponentialFitted };
const char* to_string(DriftScheme s);
DriftScheme drift_scheme_from_string(const std::string& s);

struct GeneratorOptions {
  DriftScheme scheme = DriftScheme::ExponentialFitted;
  /// Off-diagonal entries below -sign_tolerance abort the assembly.
  double sign_tolerance = 1e-12;
  /// Require cells_k > 2 * (largest Fourier index along axis k) for every field.
  bool check_resolution = true;
};

struct GeneratorMatrix {
  TorusGrid grid;
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix;
  DriftScheme scheme = DriftScheme::ExponentialFitted;
  double eps = 0.0;
  double max_row_sum = 0.0;    // max |row sum|
  double min_off_diagonal = 0.0;
};

/// Finite-difference generator of the torus process with drift b + eps c:
/// central second differences for 1/2 Tr(a D^2) (7-point cross stencil for the
/// mixed term), the chosen drift scheme, and the Q coupling at each point.
GeneratorMatrix discretize_generator(const ProblemSpec& spec, const TorusGrid& grid, double eps,
                                     const GeneratorOptions& opts = {});

/// Probability weights on the grid unknowns.
struct InvariantMeasure {
  TorusGrid grid;
  std::vector<double> weights;
  double eps = 0.0;
  double residual = 0.0;  // ||pi^T G||_inf
  std::vector<std::string> warnings;

  double integrate(std::span<const double> field) const;
  /// Mass per regime.
  std::vector<double> regime_marginal() const;
};

struct StationaryOptions {
  /// Entries below -negative_tolerance abort; smaller negatives are clipped.
  double negative_tolerance = 1e-10;
  double residual_tolerance = 1e-8;
};

InvariantMeasure stationary_measure(const GeneratorMatrix& G, const StationaryOptions& opts = {});

/// Grid values of a vector field (dim components per unknown).
std::vector<double> sample_field(const PeriodicField& f, const TorusGrid& grid);

struct Corrector {
  TorusGrid grid;
  DriftScheme scheme = DriftScheme::ExponentialFitted;
  int d = 1;
  std::vector<double> beta;       // unknowns x d
  std::vector<double> jacobian;   // unknowns x d x d, entry [k][l] = d beta_k / d x_l
  std::vector<double> pi_b;       // pi0(b), d entries
  std::vector<double> normalization;  // pi0(beta_k)
  std::vector<double> residual;       // ||G beta_k - (b_k - pi0(b_k))||_inf

  double value(std::size_t unknown, int k) const { return beta[unknown * d + k]; }
  double jac(std::size_t unknown, int k, int l) const {
    return jacobian[(unknown * d + k) * d + l];
  }
};

struct CorrectorOptions {
  double centering_tolerance = 1e-10;
  /// Bound on ||pi0^T G||_inf.
  double invariance_tolerance = 1e-8;
  /// Relative residual ||G beta - rhs|| / (||G|| ||beta|| + ||rhs||).
  double residual_tolerance = 1e-9;
};

/// Solves G beta_k = b_k - pi0(b_k) with pi0(beta_k) = 0 through the bordered
/// system [G 1; pi^T 0]; G must be built with eps = 0.
Corrector solve_corrector(const GeneratorMatrix& G0, const ProblemSpec& spec, const InvariantMeasure& pi0,
                          const CorrectorOptions& opts = {});

struct MixingEstimate {
  double gamma = 0.0;        // fitted decay rate
  double prefactor = 0.0;    // fitted Gamma (relative to sup |f|)
  double t_star = 0.0;       // truncation horizon for tolerance `tol`
  double tol = 1e-3;
  std::size_t fit_points = 0;
  std::vector<double> times;
  std::vector<double> sup_values;  // sup over start points of |P_t f| (max over probes)
  std::vector<double> sup_errors;  // standard error at the argmax

  /// Gamma * scale * e^{-gamma T} / gamma.
  double truncation_bound(double scale, double T) const;
};

struct MixingOptions {
  int starts_per_axis = 8;
  int time_points = 60;
  double dt = 1e-3;
  double tol = 1e-3;
  /// Fit window: S(t) above snr * SE.
  double snr = 8.0;
  std::uint64_t seed_salt = 0x4D49;
};

/// Fits log sup_start |P_t f| ~ log Gamma - gamma t on the tail of [0, horizon]
/// for scalar probes f (dim 1, centered under pi0) on the eps = 0 process.
MixingEstimate estimate_mixing(const ProblemSpec& spec, const std::vector<PeriodicField>& probes,
                               double horizon, std::size_t n_paths, std::uint64_t master_seed,
                               const MixingOptions& opts = {});

struct OracleEstimate {
  std::vector<double> value;      // d entries
  std::vector<double> std_error;  // d entries
  double truncation_bound = 0.0;
};

struct ProbePoint {
  std::vector<double> x;
  int regime = 0;
};

/// beta(x,i) ~ -int_0^T* E[(b - pi0(b))(Xbar0(t), L(t))] dt with trapezoidal
/// time integration along each path.
std::vector<OracleEstimate> corrector_mc_oracle(const ProblemSpec& spec, const std::vector<ProbePoint>& points,
                                                const MixingEstimate& mixing, std::size_t n_paths,
                                                double dt, std::uint64_t master_seed,
                                                std::span<const double> pi_b);

struct ConvergenceRow {
  double eps = 0.0;
  double tv = 0.0;
};

/// 1/2 sum |pi^eps - pi^0| on the grid for each eps.
std::vector<ConvergenceRow> measure_convergence(const ProblemSpec& spec, std::span<const double> eps_list,
                                                const TorusGrid& grid, const GeneratorOptions& opts = {});

/// One row per unknown: multi-index, regime, coordinates, then values.
void write_measure_csv(const InvariantMeasure& pi, std::ostream& out);
void write_corrector_csv(const Corrector& corr, std::ostream& out);
/// "row col value" lines.
void write_matrix_coo(const GeneratorMatrix& G, std::ostream& out);

}  // namespace homog
