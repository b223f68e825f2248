#pragma once

#include "homog/model.hpp"
#include "homog/rng.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

namespace homog {

/// Sample path of the switching chain on [0, horizon].
struct ChainPath {
  int initial_state = 0;
  double horizon = 0.0;
  std::vector<double> jump_times;  // strictly increasing, <= horizon
  std::vector<int> states;         // state entered at jump_times[k]

  int state_at(double t) const;
  /// Time spent in `state` during [0, horizon].
  double occupation(int state) const;
};

/// Exp(-q_ii) holding time (infinite for absorbing rows) and the next state,
/// chosen with probability q_ij / (-q_ii).
double draw_holding(const Eigen::MatrixXd& q, int state, Rng& rng);
int draw_next_state(const Eigen::MatrixXd& q, int state, Rng& rng);

ChainPath simulate_chain(const Eigen::MatrixXd& q, int i0, double horizon, Rng& rng);

/// Euler-Maruyama stepper for the fast-clock process
///   dX = (b + eps c)(X, L) dt + sigma(X, L) dB
/// with coefficients evaluated at the torus projection of X. Steps stop at
/// the base grid k*dt, at every chain jump and at caller-supplied stop times,
/// so the regime is constant over each step.
class PathSimulator {
 public:
  PathSimulator(const ProblemSpec& spec, double eps, double dt);

  /// Resets to (x0, i0) at time 0 with the streams of path `index`.
  void start(std::span<const double> x0, int i0, std::uint64_t master_seed, std::uint64_t index);

  /// One step, ending no later than t_stop (> time()).
  void step(double t_stop);
  /// Steps until time() == t_stop.
  void advance_to(double t_stop);

  double time() const { return t_; }
  std::span<const double> x() const { return x_; }
  std::span<const double> x_prev() const { return x_prev_; }
  int regime() const { return regime_; }
  /// Regime in force during the step just taken.
  int step_regime() const { return step_regime_; }
  double last_dt() const { return last_h_; }
  double next_jump() const { return next_jump_; }
  std::uint64_t steps() const { return steps_; }
  double dt() const { return dt_; }
  double eps() const { return eps_; }
  Rng& aux_rng() { return aux_; }

 private:
  const ProblemSpec& spec_;
  double eps_;
  double dt_;
  bool use_c_;
  Rng chain_{0};
  Rng brownian_{0};
  Rng aux_{0};
  double t_ = 0.0;
  std::uint64_t k_ = 0;
  std::uint64_t steps_ = 0;
  double next_jump_ = std::numeric_limits<double>::infinity();
  double last_h_ = 0.0;
  int regime_ = 0;
  int step_regime_ = 0;
  std::vector<double> x_, x_prev_, xw_, b_, c_, sigma_, dw_;
};

enum class Clock { Bar, Eps };

struct PathRecord {
  std::vector<double> t;
  std::vector<double> x;  // t.size() * d, row-major
  std::vector<int> regime;

  std::size_t size() const { return t.size(); }
  std::span<const double> point(std::size_t k, int d) const {
    return {x.data() + k * static_cast<std::size_t>(d), static_cast<std::size_t>(d)};
  }
};

struct PathBundle {
  int d = 1;
  int n = 1;
  double eps = 0.0;
  double dt = 0.0;
  Clock clock = Clock::Bar;
  std::uint64_t master_seed = 0;
  std::vector<PathRecord> paths;

  std::size_t size() const { return paths.size(); }
  /// X of every path at its last record, row-major N x d.
  std::vector<double> terminal_values() const;
  /// X of every path at the record with time t (must be an observation time).
  std::vector<double> values_at(double t) const;
};

struct PathOptions {
  /// Extra grid points (on the clock of the call). 0 and the horizon are always recorded.
  std::vector<double> observe;
  /// Record every step (needed by killing_integral) or only observation times.
  bool record_all = true;
  /// Warn when n_paths * horizon / dt exceeds this many steps.
  double step_budget = 2e9;
};

PathBundle simulate_bar_paths(const ProblemSpec& spec, double eps, std::span<const double> x0, int i0,
                              double horizon, double dt, std::size_t n_paths,
                              std::uint64_t master_seed, const PathOptions& opts = {});

/// X^eps(t) = eps * Xbar^eps(x0/eps, i0; t/eps^2). horizon and dt are on the eps-clock.
PathBundle simulate_eps_paths(const ProblemSpec& spec, double eps, std::span<const double> x0, int i0,
                              double horizon, double dt, std::size_t n_paths,
                              std::uint64_t master_seed, const PathOptions& opts = {});

/// Trapezoidal integral of e along each recorded path, zeta(0) = 0. For an
/// eps-clock bundle the integrand is e(X/eps, regime); the regime of the left
/// endpoint is used over each step.
std::vector<std::vector<double>> killing_integral(const PathBundle& bundle, const ProblemSpec& spec);

void write_bundle(const PathBundle& bundle, std::ostream& out);
PathBundle read_bundle(std::istream& in);
/// Columns: path, t, x0..x{d-1}, regime.
void write_bundle_csv(const PathBundle& bundle, std::ostream& out, std::span<const std::size_t> which);

}  // namespace homog
