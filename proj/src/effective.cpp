#include "homog/effective.hpp"

#include "homog/error.hpp"
#include "homog/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace homog {

namespace {

double smallest_eigenvalue(const Eigen::MatrixXd& a, Eigen::VectorXd* vec = nullptr) {
  if (a.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw SolverError("effective: eigensolve failed");
  if (vec) *vec = es.eigenvectors().col(0);
  return es.eigenvalues()[0];
}

}  // namespace

EffectiveCoefficients effective_coefficients(const InvariantMeasure& pi0, const Corrector& corr,
                                             const ProblemSpec& spec, const EffectiveOptions& opts) {
  if (!(pi0.grid == corr.grid)) throw PreconditionError("effective: measure and corrector grids differ");
  if (pi0.eps != 0.0) throw PreconditionError("effective: the measure must come from the eps = 0 generator");
  if (corr.d != spec.d || pi0.grid.dim() != spec.d || pi0.grid.regimes() != spec.n)
    throw PreconditionError("effective: grid does not match the problem");

  const auto& grid = pi0.grid;
  const int d = spec.d;
  const std::size_t N = grid.unknowns();
  const auto dd = static_cast<std::size_t>(d * d);

  // Per-unknown contributions, summed afterwards in index order.
  std::vector<double> a_terms(N * dd), s_terms(N * dd), b_terms(N * static_cast<std::size_t>(d)), e_terms(N);
  parallel_for(grid.points(), [&](std::size_t s) {
    LocalCoefficients loc;
    const auto x = grid.point(s);
    Eigen::MatrixXd M(d, d), A(d, d);
    Eigen::VectorXd c(d);
    for (int i = 0; i < spec.n; ++i) {
      eval_local(spec, x, i, loc);
      const std::size_t u = grid.index(s, i);
      const double w = pi0.weights[u];
      for (int k = 0; k < d; ++k) {
        c[k] = loc.c[static_cast<std::size_t>(k)];
        for (int l = 0; l < d; ++l) {
          M(k, l) = (k == l ? 1.0 : 0.0) - corr.jac(u, k, l);
          A(k, l) = loc.a[static_cast<std::size_t>(k * d + l)];
        }
      }
      const Eigen::MatrixXd cov = M * A * M.transpose();
      const Eigen::VectorXd drift = M * c;
      for (int k = 0; k < d; ++k) {
        b_terms[u * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)] = w * drift[k];
        for (int l = 0; l < d; ++l) a_terms[u * dd + static_cast<std::size_t>(k * d + l)] = w * cov(k, l);
      }
      e_terms[u] = w * loc.e;
      for (int j = 0; j < spec.n; ++j) {
        if (j == i || spec.q_matrix(i, j) == 0.0) continue;
        const std::size_t v = grid.index(s, j);
        for (int k = 0; k < d; ++k)
          for (int l = 0; l < d; ++l)
            s_terms[u * dd + static_cast<std::size_t>(k * d + l)] +=
                w * spec.q_matrix(i, j) * (corr.value(v, k) - corr.value(u, k)) * (corr.value(v, l) - corr.value(u, l));
      }
    }
  });

  std::vector<double> buf(N);
  auto sum_strided = [&](const std::vector<double>& v, std::size_t stride, std::size_t offset) {
    for (std::size_t u = 0; u < N; ++u) buf[u] = v[u * stride + offset];
    return compensated_sum(buf);
  };

  Eigen::MatrixXd A(d, d), S(d, d);
  Eigen::VectorXd b(d);
  for (int k = 0; k < d; ++k) {
    b[k] = sum_strided(b_terms, static_cast<std::size_t>(d), static_cast<std::size_t>(k));
    for (int l = 0; l < d; ++l) {
      A(k, l) = sum_strided(a_terms, dd, static_cast<std::size_t>(k * d + l));
      S(k, l) = sum_strided(s_terms, dd, static_cast<std::size_t>(k * d + l));
    }
  }

  const double scale = A.cwiseAbs().maxCoeff();
  const double asym = scale > 0.0 ? (A - A.transpose()).cwiseAbs().maxCoeff() / scale : 0.0;
  if (asym > opts.asymmetry_tolerance)
    throw SolverError("effective: assembled covariance is asymmetric (relative " + std::to_string(asym) + ")");

  S = 0.5 * (S + S.transpose());
  EffectiveCoefficients ec = make_effective(opts.include_switching ? Eigen::MatrixXd(A + S) : A, b,
                                            compensated_sum(e_terms));
  ec.a_switching = S;
  ec.pi_b = corr.pi_b;
  ec.provenance.cells = grid.cells();
  ec.provenance.scheme = to_string(corr.scheme);
  ec.provenance.stationary_residual = pi0.residual;
  ec.provenance.corrector_residual = corr.residual;
  ec.provenance.asymmetry = asym;
  return ec;
}

EffectiveCoefficients make_effective(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double e_bar) {
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw PreconditionError("effective: a must be square and match the length of b");
  EffectiveCoefficients ec;
  ec.a = 0.5 * (a + a.transpose());
  ec.b = b;
  ec.e_bar = e_bar;
  ec.a_switching = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  ec.min_eigenvalue = smallest_eigenvalue(ec.a);
  return ec;
}

SpdCertificate assert_spd(const EffectiveCoefficients& ec, double floor) {
  SpdCertificate cert;
  cert.min_eigenvalue = smallest_eigenvalue(ec.a, &cert.witness);
  cert.passed = cert.min_eigenvalue >= floor;
  // fix the sign so the witness is reproducible
  if (cert.witness.size() > 0) {
    Eigen::Index arg = 0;
    cert.witness.cwiseAbs().maxCoeff(&arg);
    if (cert.witness[arg] < 0.0) cert.witness = -cert.witness;
  }
  return cert;
}

nlohmann::json to_json(const EffectiveCoefficients& ec) {
  nlohmann::json j;
  const int d = ec.dim();
  auto& a = j["a_matrix"] = nlohmann::json::array();
  for (int k = 0; k < d; ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (int l = 0; l < d; ++l) row.push_back(ec.a(k, l));
    a.push_back(row);
  }
  j["b_vector"] = std::vector<double>(ec.b.data(), ec.b.data() + d);
  j["e_bar"] = ec.e_bar;
  j["min_eigenvalue"] = ec.min_eigenvalue;
  auto& sw = j["a_switching"] = nlohmann::json::array();
  for (int k = 0; k < d; ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (int l = 0; l < d; ++l) row.push_back(ec.a_switching.size() ? ec.a_switching(k, l) : 0.0);
    sw.push_back(row);
  }
  if (!ec.pi_b.empty()) j["pi0_b"] = ec.pi_b;
  j["provenance"] = {{"cells", ec.provenance.cells},
                     {"scheme", ec.provenance.scheme},
                     {"stationary_residual", ec.provenance.stationary_residual},
                     {"corrector_residual", ec.provenance.corrector_residual},
                     {"asymmetry", ec.provenance.asymmetry}};
  return j;
}

EffectiveCoefficients effective_from_json(const nlohmann::json& doc) {
  try {
    const auto& rows = doc.at("a_matrix");
    const auto d = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
      const auto& row = rows.at(static_cast<std::size_t>(k));
      if (static_cast<Eigen::Index>(row.size()) != d) throw SpecError("a_matrix must be square");
      for (Eigen::Index l = 0; l < d; ++l) a(k, l) = row.at(static_cast<std::size_t>(l)).get<double>();
    }
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    if (doc.contains("b_vector")) {
      const auto v = doc["b_vector"].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(v.size()) != d) throw SpecError("b_vector length must match a_matrix");
      for (Eigen::Index k = 0; k < d; ++k) b[k] = v[static_cast<std::size_t>(k)];
    }
    auto ec = make_effective(a, b, doc.value("e_bar", 0.0));
    if (doc.contains("a_switching"))
      for (Eigen::Index k = 0; k < d; ++k)
        for (Eigen::Index l = 0; l < d; ++l)
          ec.a_switching(k, l) = doc["a_switching"].at(static_cast<std::size_t>(k)).at(static_cast<std::size_t>(l)).get<double>();
    if (doc.contains("pi0_b")) ec.pi_b = doc["pi0_b"].get<std::vector<double>>();
    return ec;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("effective coefficients: ") + e.what());
  }
}

}  // namespace homog
