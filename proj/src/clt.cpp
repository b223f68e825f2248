#include "homog/clt.hpp"

#include "homog/error.hpp"
#include "homog/parallel.hpp"
#include "homog/sde.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace homog {

namespace {

constexpr std::uint64_t kCltSalt = 0x434C54;

double z_score(double value, double ref, double se) {
  const double diff = value - ref;
  if (se > 0.0) return diff / se;
  return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

// Covariance of rows [lo, hi) of an N x d row-major sample.
Eigen::MatrixXd covariance(const std::vector<double>& y, int d, std::size_t lo, std::size_t hi,
                           Eigen::VectorXd* mean_out = nullptr) {
  const auto n = static_cast<double>(hi - lo);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (std::size_t p = lo; p < hi; ++p)
    for (int k = 0; k < d; ++k) mean[k] += y[p * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)];
  mean /= n;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t p = lo; p < hi; ++p)
    for (int k = 0; k < d; ++k) {
      const double yk = y[p * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)] - mean[k];
      for (int l = 0; l <= k; ++l)
        cov(k, l) += yk * (y[p * static_cast<std::size_t>(d) + static_cast<std::size_t>(l)] - mean[l]);
    }
  cov /= (n - 1.0);
  for (int k = 0; k < d; ++k)
    for (int l = k + 1; l < d; ++l) cov(k, l) = cov(l, k);
  if (mean_out) *mean_out = mean;
  return cov;
}

std::vector<double> centered_values(const PathBundle& bundle, double t, std::span<const double> x0,
                                    std::span<const double> pi0_b, double eps) {
  auto y = bundle.values_at(t);
  const auto d = static_cast<std::size_t>(bundle.d);
  for (std::size_t p = 0; p < bundle.size(); ++p)
    for (std::size_t k = 0; k < d; ++k) y[p * d + k] -= x0[k] + pi0_b[k] * t / eps;
  return y;
}

void check_inputs(const ProblemSpec& spec, const EffectiveCoefficients& ec, std::span<const double> pi0_b) {
  if (ec.dim() != spec.d || static_cast<int>(pi0_b.size()) != spec.d)
    throw PreconditionError("clt: effective coefficients and pi0(b) must match the problem dimension");
}

}  // namespace

std::pair<double, double> shape_statistics(std::span<const double> v) {
  const auto n = static_cast<double>(v.size());
  if (v.size() < 4) throw PreconditionError("shape statistics need at least 4 values");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double c = x - mean;
    const double c2 = c * c;
    m2 += c2;
    m3 += c2 * c;
    m4 += c2 * c2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 == 0.0) return {0.0, 0.0};
  return {m3 / std::pow(m2, 1.5), m4 / (m2 * m2) - 3.0};
}

double ks_normal(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n < 2) throw PreconditionError("KS statistic needs at least 2 values");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(n - 1));
  if (sd == 0.0) return 1.0;
  std::vector<double> z(n);
  for (std::size_t k = 0; k < n; ++k) z[k] = (v[k] - mean) / sd;
  std::sort(z.begin(), z.end());
  double D = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double F = 0.5 * std::erfc(-z[k] / std::sqrt(2.0));
    D = std::max({D, static_cast<double>(k + 1) / n - F, F - static_cast<double>(k) / n});
  }
  return D;
}

CltReport run_clt(const ProblemSpec& spec, const EffectiveCoefficients& ec, std::span<const double> pi0_b,
                  const CltOptions& opts, std::uint64_t master_seed) {
  check_inputs(spec, ec, pi0_b);
  if (opts.eps_list.empty() || opts.t_list.empty()) throw PreconditionError("clt: empty eps or t list");
  if (opts.n_paths < 2 * opts.batches || opts.batches < 2)
    throw PreconditionError("clt: need at least two paths per batch and two batches");
  for (double e : opts.eps_list)
    if (!(e > 0.0)) throw PreconditionError("clt: eps values must be positive");
  for (double t : opts.t_list)
    if (!(t > 0.0)) throw PreconditionError("clt: observation times must be positive");

  const int d = spec.d;
  std::vector<double> x0 = opts.x0.empty() ? std::vector<double>(static_cast<std::size_t>(d), 0.0) : opts.x0;
  if (static_cast<int>(x0.size()) != d) throw PreconditionError("clt: start point has the wrong dimension");
  std::vector<double> times = opts.t_list;
  std::sort(times.begin(), times.end());
  const double horizon = times.back();

  CltReport rep;
  rep.z_threshold = opts.z_threshold;
  rep.master_seed = master_seed;
  rep.smallest_eps = *std::min_element(opts.eps_list.begin(), opts.eps_list.end());

  const std::size_t N = opts.n_paths;
  const std::size_t B = opts.batches;
  for (std::size_t e = 0; e < opts.eps_list.size(); ++e) {
    const double eps = opts.eps_list[e];
    const double dt = opts.dt_factor * eps * eps;
    PathOptions po;
    po.observe = times;
    po.record_all = false;
    const auto bundle = simulate_eps_paths(spec, eps, x0, opts.i0, horizon, dt, N,
                                           derive_seed(master_seed, e, kCltSalt), po);
    for (double t : times) {
      const auto y = centered_values(bundle, t, x0, pi0_b, eps);
      CltMoments m;
      m.eps = eps;
      m.t = t;
      m.dt = dt;
      m.n_paths = N;
      m.cov = covariance(y, d, 0, N, &m.mean);
      m.mean_se = (m.cov.diagonal() / static_cast<double>(N)).cwiseSqrt();
      m.mean_ref = ec.b * t;
      m.cov_ref = ec.a * t;
      // batch standard errors of the covariance entries
      std::vector<Eigen::MatrixXd> bc;
      for (std::size_t b = 0; b < B; ++b) bc.push_back(covariance(y, d, b * N / B, (b + 1) * N / B));
      m.cov_se = Eigen::MatrixXd::Zero(d, d);
      m.cov_z = Eigen::MatrixXd::Zero(d, d);
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) {
          double mu = 0.0, s2 = 0.0;
          for (const auto& c : bc) mu += c(k, l);
          mu /= static_cast<double>(B);
          for (const auto& c : bc) s2 += (c(k, l) - mu) * (c(k, l) - mu);
          m.cov_se(k, l) = std::sqrt(s2 / static_cast<double>(B - 1) / static_cast<double>(B));
          m.cov_z(k, l) = z_score(m.cov(k, l), m.cov_ref(k, l), m.cov_se(k, l));
        }
      m.mean_z.resize(d);
      for (int k = 0; k < d; ++k) m.mean_z[k] = z_score(m.mean[k], m.mean_ref[k], m.mean_se[k]);
      m.cov_min_eigenvalue = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m.cov).eigenvalues()[0];
      m.cov_error = (m.cov - m.cov_ref).cwiseAbs().maxCoeff();
      rep.moments.push_back(std::move(m));
    }
    const auto y = centered_values(bundle, horizon, x0, pi0_b, eps);
    Normality nm;
    nm.eps = eps;
    nm.t = horizon;
    nm.ks_critical = 1.36 / std::sqrt(static_cast<double>(N));
    std::vector<double> col(N);
    for (int k = 0; k < d; ++k) {
      for (std::size_t p = 0; p < N; ++p) col[p] = y[p * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)];
      const auto [s, kurt] = shape_statistics(col);
      nm.skewness.push_back(s);
      nm.excess_kurtosis.push_back(kurt);
      nm.ks_statistic.push_back(ks_normal(col));
    }
    rep.normality.push_back(std::move(nm));
  }

  rep.passed = true;
  for (const auto& m : rep.moments) {
    if (m.eps != rep.smallest_eps) continue;
    const double z = std::max(m.mean_z.cwiseAbs().maxCoeff(), m.cov_z.cwiseAbs().maxCoeff());
    rep.max_z_smallest_eps = std::max(rep.max_z_smallest_eps, z);
    if (!(z <= opts.z_threshold)) rep.passed = false;
  }

  // soft check at the largest t
  std::vector<std::pair<double, double>> err;
  for (const auto& m : rep.moments)
    if (m.t == horizon) err.emplace_back(m.eps, m.cov_error);
  std::sort(err.begin(), err.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t k = 1; k < err.size(); ++k)
    if (err[k].second > err[k - 1].second) rep.cov_error_monotone = false;
  return rep;
}

std::vector<DriftRow> drift_check(const ProblemSpec& spec, const EffectiveCoefficients& ec,
                                  std::span<const double> pi0_b, std::span<const double> eps_list, double t,
                                  std::size_t n_paths, std::uint64_t master_seed, double dt_factor) {
  check_inputs(spec, ec, pi0_b);
  if (!(t > 0.0) || n_paths < 2) throw PreconditionError("drift check: need t > 0 and at least 2 paths");
  const int d = spec.d;
  const std::vector<double> x0(static_cast<std::size_t>(d), 0.0);
  std::vector<DriftRow> rows;
  for (std::size_t e = 0; e < eps_list.size(); ++e) {
    const double eps = eps_list[e];
    PathOptions po;
    po.record_all = false;
    const auto bundle = simulate_eps_paths(spec, eps, x0, 0, t, dt_factor * eps * eps, n_paths,
                                           derive_seed(master_seed, e, kCltSalt + 1), po);
    auto y = centered_values(bundle, t, x0, pi0_b, eps);
    DriftRow r;
    r.eps = eps;
    r.t = t;
    r.drift.resize(d);
    r.std_error.resize(d);
    r.reference = ec.b;
    std::vector<double> col(n_paths);
    for (int k = 0; k < d; ++k) {
      for (std::size_t p = 0; p < n_paths; ++p)
        col[p] = y[p * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)] / t;
      const auto st = sample_stats(col);
      r.drift[k] = st.mean;
      r.std_error[k] = st.std_error;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_clt_csv(const CltReport& report, std::ostream& out) {
  out << "eps,t,statistic,i,j,value,reference,std_error,z\n";
  char buf[256];
  auto row = [&](const CltMoments& m, const char* stat, int i, int j, double v, double ref, double se, double z) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%s,%d,%d,%.17g,%.17g,%.17g,%.17g\n", m.eps, m.t, stat, i, j, v, ref,
                  se, z);
    out << buf;
  };
  for (const auto& m : report.moments) {
    const auto d = static_cast<int>(m.mean.size());
    for (int k = 0; k < d; ++k) row(m, "mean", k, -1, m.mean[k], m.mean_ref[k], m.mean_se[k], m.mean_z[k]);
    for (int k = 0; k < d; ++k)
      for (int l = k; l < d; ++l) row(m, "cov", k, l, m.cov(k, l), m.cov_ref(k, l), m.cov_se(k, l), m.cov_z(k, l));
  }
}

nlohmann::json to_json(const CltReport& report) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto mat = [&](const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index k = 0; k < m.rows(); ++k) rows.push_back(vec(m.row(k).transpose()));
    return rows;
  };
  json j;
  j["passed"] = report.passed;
  j["z_threshold"] = report.z_threshold;
  j["smallest_eps"] = report.smallest_eps;
  j["max_z_smallest_eps"] = report.max_z_smallest_eps;
  j["cov_error_monotone"] = report.cov_error_monotone;
  j["master_seed"] = report.master_seed;
  j["moments"] = json::array();
  for (const auto& m : report.moments)
    j["moments"].push_back({{"eps", m.eps},
                            {"t", m.t},
                            {"dt", m.dt},
                            {"n_paths", m.n_paths},
                            {"mean", vec(m.mean)},
                            {"mean_se", vec(m.mean_se)},
                            {"mean_ref", vec(m.mean_ref)},
                            {"cov", mat(m.cov)},
                            {"cov_se", mat(m.cov_se)},
                            {"cov_ref", mat(m.cov_ref)},
                            {"cov_min_eigenvalue", m.cov_min_eigenvalue},
                            {"cov_error", m.cov_error}});
  j["normality"] = json::array();
  for (const auto& n : report.normality)
    j["normality"].push_back({{"eps", n.eps},
                              {"t", n.t},
                              {"skewness", n.skewness},
                              {"excess_kurtosis", n.excess_kurtosis},
                              {"ks_statistic", n.ks_statistic},
                              {"ks_critical", n.ks_critical}});
  return j;
}

}  // namespace homog
