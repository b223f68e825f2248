#pragma once

#include "homog/model.hpp"
#include "homog/problem_json.hpp"

#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <string>

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  const char* dir = std::getenv("HOMOG_FIXTURES");
  return std::filesystem::path(dir ? dir : "fixtures") / name;
}

inline homog::ProblemSpec load(const std::string& name) { return homog::load_problem(fixture(name)); }

/// Spec with x-independent coefficients: b, c per regime (d-vectors), sigma
/// per regime (d x m row-major), e per regime.
inline homog::ProblemSpec constant_spec(int d, int m, int n, std::vector<std::vector<double>> b,
                                        std::vector<std::vector<double>> c,
                                        std::vector<std::vector<double>> sigma,
                                        std::vector<double> e, Eigen::MatrixXd q) {
  homog::ProblemSpec s;
  s.d = d;
  s.m = m;
  s.n = n;
  s.tau.assign(d, 1.0);
  s.drift_b = homog::PeriodicField::constant(std::move(b));
  s.drift_c = homog::PeriodicField::constant(std::move(c));
  s.sigma = homog::PeriodicField::constant(std::move(sigma));
  std::vector<std::vector<double>> ee;
  for (double v : e) ee.push_back({v});
  s.killing_e = homog::PeriodicField::constant(std::move(ee));
  s.q_matrix = std::move(q);
  s.finalize();
  return s;
}

/// d = 1, n = 1, sigma = 1, drift amp*sin(2 pi x) (+ c constant).
inline homog::ProblemSpec sine_spec(double amp, double c = 0.0, double sigma = 1.0) {
  homog::ProblemSpec s;
  s.d = 1;
  s.m = 1;
  s.n = 1;
  s.tau = {1.0};
  const std::vector<double> tau{1.0};
  s.drift_b = homog::PeriodicField::trig(
      1, {{homog::TrigPolynomial(0.0, {{{1}, 0.0, amp}}, tau)}});
  s.drift_c = homog::PeriodicField::constant({{c}});
  s.sigma = homog::PeriodicField::constant({{sigma}});
  s.killing_e = homog::PeriodicField::zero(1, 1);
  s.finalize();
  return s;
}

inline Eigen::MatrixXd q2(double a, double b) {
  Eigen::MatrixXd q(2, 2);
  q << -a, a, b, -b;
  return q;
}

}  // namespace testing
