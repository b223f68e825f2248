#pragma once

#include "homog/cell.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <string>
#include <vector>

namespace homog {

struct EffectiveProvenance {
  std::vector<int> cells;
  std::string scheme;
  double stationary_residual = 0.0;
  std::vector<double> corrector_residual;
  /// max |A - A^T| / max |A| before symmetrization.
  double asymmetry = 0.0;
};

/// Coefficients of the limit Brownian motion with covariance a and drift b,
/// plus the averaged killing rate.
struct EffectiveCoefficients {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  double e_bar = 0.0;
  double min_eigenvalue = 0.0;
  /// pi0(sum_j q_ij (beta_j - beta_i)(beta_j - beta_i)^T): covariance carried by
  /// the jumps of beta at regime switches. Not part of a unless requested.
  Eigen::MatrixXd a_switching;
  std::vector<double> pi_b;  // pi0(b), empty when built by hand
  EffectiveProvenance provenance;

  int dim() const { return static_cast<int>(b.size()); }
};

struct EffectiveOptions {
  double asymmetry_tolerance = 1e-8;
  /// Add a_switching to a.
  bool include_switching = false;
};

/// a = pi0((I - Dbeta) sigma sigma^T (I - Dbeta)^T), b = pi0((I - Dbeta) c), e_bar = pi0(e).
EffectiveCoefficients effective_coefficients(const InvariantMeasure& pi0, const Corrector& corr,
                                             const ProblemSpec& spec, const EffectiveOptions& opts = {});

/// Builds coefficients from a given matrix (symmetrized) and drift.
EffectiveCoefficients make_effective(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double e_bar);

struct SpdCertificate {
  bool passed = false;
  double min_eigenvalue = 0.0;
  Eigen::VectorXd witness;  // unit eigenvector of the smallest eigenvalue
};

SpdCertificate assert_spd(const EffectiveCoefficients& ec, double floor);

nlohmann::json to_json(const EffectiveCoefficients& ec);
/// Reads {a_matrix, b_vector, e_bar}; other keys are ignored.
EffectiveCoefficients effective_from_json(const nlohmann::json& doc);

}  // namespace homog
