#pragma once

#include "homog/effective.hpp"
#include "homog/model.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace homog {

struct FkEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
  /// Elliptic paths stopped at the horizon cap before leaving the domain.
  std::size_t capped = 0;
  double dt = 0.0;
  double eps = 0.0;  // 0 for the homogenized process
  bool elliptic = true;
  double t = 0.0;  // parabolic time
  /// Truncation bias bound from the horizon cap (elliptic only).
  double bias_bound = 0.0;
  double mean_exit_time = 0.0;
  std::uint64_t steps = 0;
};

/// Covariance a (with a factor L, L L^T = a), drift b and killing rate e_bar of
/// the limit process.
struct LimitProcessParams {
  Eigen::MatrixXd a;
  Eigen::MatrixXd factor;
  Eigen::VectorXd b;
  double e_bar = 0.0;

  static LimitProcessParams from(const EffectiveCoefficients& ec);
  int dim() const { return static_cast<int>(b.size()); }
};

enum class ExitDetection { Endpoint, BrownianBridge };

struct FkOptions {
  std::size_t n_paths = 10000;
  /// Step on the clock of the solved equation.
  double dt = 1e-3;
  /// Elliptic paths stop here (time on the same clock).
  double horizon_cap = 50.0;
  /// Endpoint detection checks d(X) >= 0 after each step. The bridge variant
  /// also exits with the probability that a Brownian bridge with the local
  /// normal diffusivity crossed the tangent plane during the step, and scores
  /// g at the projection of the exit point onto the boundary.
  ExitDetection exit = ExitDetection::BrownianBridge;
  /// Require declared growth with kappa < 2 for parabolic problems.
  bool check_growth = true;
  /// pi0(b) for centering; computed on a grid when absent.
  std::optional<std::vector<double>> pi0_b;
  double centering_tolerance = 1e-8;
  /// Samples for the killing and sup-norm checks.
  std::size_t samples = 4096;
};

/// Returns spec with b replaced by b - shift.
ProblemSpec shift_drift(const ProblemSpec& spec, std::span<const double> shift);

/// pi0(b) on a default grid (256 cells in 1-d, 48 per axis in 2-d, 16 otherwise).
std::vector<double> grid_pi0_b(const ProblemSpec& spec);

FkEstimate solve_elliptic_eps(const ProblemSpec& spec, std::span<const double> x, int i, double eps,
                              const FkOptions& opts, std::uint64_t master_seed);

FkEstimate solve_elliptic_hom(const LimitProcessParams& params, const LevelSetDomain& domain,
                              const std::optional<ScalarFunction>& f, const std::optional<ScalarFunction>& g,
                              std::span<const double> x, const FkOptions& opts, std::uint64_t master_seed);

FkEstimate solve_parabolic_eps(const ProblemSpec& spec, double t, std::span<const double> x, int i, double eps,
                               const FkOptions& opts, std::uint64_t master_seed);

/// With f absent the end point is drawn exactly in one Gaussian step.
FkEstimate solve_parabolic_hom(const LimitProcessParams& params, const std::optional<ScalarFunction>& f,
                               const std::optional<ScalarFunction>& g, double t, std::span<const double> x,
                               const FkOptions& opts, std::uint64_t master_seed);

struct StudyPoint {
  std::vector<double> x;
  int regime = 0;
  std::optional<double> t;  // set for parabolic points
};

struct StudyOptions {
  std::size_t n_paths = 10000;
  /// eps-process step: dt_factor * eps^2, capped at dt_max.
  double dt_factor = 0.02;
  double dt_max = 1e-3;
  /// Step for the homogenized process.
  double dt_hom = 1e-3;
  double horizon_cap = 50.0;
  ExitDetection exit = ExitDetection::BrownianBridge;
  bool check_growth = true;
  /// Total Euler steps across all solves; 0 disables the limit.
  double step_budget = 0.0;
  double tolerance = 0.02;
};

struct StudyRow {
  std::size_t point_id = 0;
  int regime = 0;
  double eps = 0.0;
  FkEstimate u_eps;
  FkEstimate u_hom;
  double gap = 0.0;
  double combined_se = 0.0;
};

struct StudyReport {
  std::vector<StudyRow> rows;
  bool budget_exhausted = false;
  /// Gap at the smallest eps within 3 combined SE + tolerance at every point.
  bool final_close = false;
  /// Gap non-increasing as eps decreases at every point (soft).
  bool gaps_decrease = false;
  /// Points sharing x (and t) agree across regimes at the smallest eps.
  bool regimes_agree = false;
  double tolerance = 0.0;
  std::uint64_t steps = 0;
};

StudyReport convergence_study(const ProblemSpec& spec, const EffectiveCoefficients& ec,
                              const std::vector<StudyPoint>& points, std::span<const double> eps_list,
                              const StudyOptions& opts, std::uint64_t master_seed);

/// Columns: point_id,i,eps,u_eps,u_hom,gap,combined_se
void write_study_csv(const StudyReport& report, std::ostream& out);
nlohmann::json to_json(const FkEstimate& e);
nlohmann::json to_json(const StudyReport& report);

}  // namespace homog
