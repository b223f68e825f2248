#pragma once

#include "homog/effective.hpp"
#include "homog/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace homog {

struct CltOptions {
  std::vector<double> eps_list;
  std::vector<double> t_list;
  std::size_t n_paths = 10000;
  /// dt = dt_factor * eps^2 on the eps-clock.
  double dt_factor = 1.0 / 50.0;
  std::vector<double> x0;  // default: origin
  int i0 = 0;
  std::size_t batches = 20;
  double z_threshold = 3.0;
};

/// Moments of Y = X^eps(t) - x - pi0(b) t / eps at one (eps, t).
struct CltMoments {
  double eps = 0.0;
  double t = 0.0;
  double dt = 0.0;
  std::size_t n_paths = 0;
  Eigen::VectorXd mean, mean_se, mean_ref, mean_z;
  Eigen::MatrixXd cov, cov_se, cov_ref, cov_z;
  double cov_min_eigenvalue = 0.0;
  /// max |cov - a t|
  double cov_error = 0.0;
};

/// Normality of each standardized coordinate of Y at the largest t.
struct Normality {
  double eps = 0.0;
  double t = 0.0;
  std::vector<double> skewness, excess_kurtosis, ks_statistic;
  double ks_critical = 0.0;  // 5% level, 1.36 / sqrt(N)
};

struct CltReport {
  std::vector<CltMoments> moments;  // eps-major, then t
  std::vector<Normality> normality;  // one per eps
  double z_threshold = 3.0;
  double smallest_eps = 0.0;
  double max_z_smallest_eps = 0.0;
  bool passed = false;
  /// Covariance error non-increasing as eps decreases (soft).
  bool cov_error_monotone = true;
  std::uint64_t master_seed = 0;
};

CltReport run_clt(const ProblemSpec& spec, const EffectiveCoefficients& ec, std::span<const double> pi0_b,
                  const CltOptions& opts, std::uint64_t master_seed);

struct DriftRow {
  double eps = 0.0;
  double t = 0.0;
  Eigen::VectorXd drift, std_error, reference;
};

/// Empirical mean of (X^eps(t) - x - pi0(b) t / eps) / t against b.
std::vector<DriftRow> drift_check(const ProblemSpec& spec, const EffectiveCoefficients& ec,
                                  std::span<const double> pi0_b, std::span<const double> eps_list, double t,
                                  std::size_t n_paths, std::uint64_t master_seed, double dt_factor = 1.0 / 50.0);

/// Rows: eps,t,statistic,i,j,value,reference,std_error,z
void write_clt_csv(const CltReport& report, std::ostream& out);
nlohmann::json to_json(const CltReport& report);

/// Sample skewness and excess kurtosis.
std::pair<double, double> shape_statistics(std::span<const double> values);
/// Kolmogorov-Smirnov distance of the standardized sample to N(0,1).
double ks_normal(std::span<const double> values);

}  // namespace homog
