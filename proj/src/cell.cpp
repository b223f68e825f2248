#include "homog/cell.hpp"

#include "homog/error.hpp"
#include "homog/log.hpp"
#include "homog/parallel.hpp"
#include "homog/sde.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

namespace homog {

// ---------------------------------------------------------------------------
// TorusGrid

TorusGrid::TorusGrid(std::vector<int> cells, std::vector<double> tau, int regimes)
    : cells_(std::move(cells)), tau_(std::move(tau)), n_(regimes) {
  if (cells_.empty() || cells_.size() != tau_.size())
    throw PreconditionError("grid: cells and tau must have the same nonzero length");
  if (n_ < 1) throw PreconditionError("grid: regime count must be positive");
  points_ = 1;
  for (int c : cells_) {
    if (c < 3) throw PreconditionError("grid: at least 3 cells per axis are required");
    points_ *= static_cast<std::size_t>(c);
  }
}

std::vector<int> TorusGrid::multi_index(std::size_t spatial) const {
  std::vector<int> m(cells_.size());
  for (std::size_t k = 0; k < cells_.size(); ++k) {
    m[k] = static_cast<int>(spatial % static_cast<std::size_t>(cells_[k]));
    spatial /= static_cast<std::size_t>(cells_[k]);
  }
  return m;
}

std::size_t TorusGrid::spatial_index(std::span<const int> multi) const {
  std::size_t idx = 0;
  for (std::size_t k = cells_.size(); k-- > 0;) idx = idx * static_cast<std::size_t>(cells_[k]) + multi[k];
  return idx;
}

std::size_t TorusGrid::shifted(std::size_t spatial, int axis, int delta) const {
  std::size_t stride = 1;
  for (int k = 0; k < axis; ++k) stride *= static_cast<std::size_t>(cells_[k]);
  const auto c = static_cast<long long>(cells_[axis]);
  const auto j = static_cast<long long>((spatial / stride) % static_cast<std::size_t>(c));
  const long long jn = ((j + delta) % c + c) % c;
  return spatial + static_cast<std::size_t>((jn - j) * static_cast<long long>(stride));
}

std::vector<double> TorusGrid::point(std::size_t spatial) const {
  const auto m = multi_index(spatial);
  std::vector<double> x(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) x[k] = m[k] * spacing(static_cast<int>(k));
  return x;
}

const char* to_string(DriftScheme s) {
  switch (s) {
    case DriftScheme::Upwind: return "upwind";
    case DriftScheme::Central: return "central";
    case DriftScheme::ExponentialFitted: return "exponential-fitted";
  }
  return "?";
}

DriftScheme drift_scheme_from_string(const std::string& s) {
  if (s == "upwind") return DriftScheme::Upwind;
  if (s == "central") return DriftScheme::Central;
  if (s == "exponential-fitted" || s == "sg") return DriftScheme::ExponentialFitted;
  throw SpecError("unknown drift scheme '" + s + "' (upwind, central, exponential-fitted)");
}

// ---------------------------------------------------------------------------
// Generator assembly

namespace {

// Bernoulli function z / (e^z - 1).
double bernoulli(double z) {
  if (std::abs(z) < 1e-8) return 1.0 - 0.5 * z;
  return z / std::expm1(z);
}

std::string describe_unknown(const TorusGrid& grid, std::size_t unknown) {
  std::ostringstream os;
  const auto m = grid.multi_index(grid.spatial_of(unknown));
  os << "(";
  for (std::size_t k = 0; k < m.size(); ++k) os << (k ? "," : "") << m[k];
  os << "; regime " << grid.regime_of(unknown) << ")";
  return os.str();
}

void check_resolution(const ProblemSpec& spec, const TorusGrid& grid) {
  for (int k = 0; k < spec.d; ++k) {
    const auto axis = static_cast<std::size_t>(k);
    const int kmax = std::max({spec.drift_b.max_frequency(axis), spec.drift_c.max_frequency(axis),
                               spec.sigma.max_frequency(axis), spec.killing_e.max_frequency(axis)});
    if (grid.cells()[axis] <= 2 * kmax)
      throw PreconditionError("grid: " + std::to_string(grid.cells()[axis]) + " cells on axis " +
                              std::to_string(k) + " cannot resolve Fourier index " + std::to_string(kmax) +
                              " (need more than " + std::to_string(2 * kmax) + ")");
  }
}

}  // namespace

GeneratorMatrix discretize_generator(const ProblemSpec& spec, const TorusGrid& grid, double eps,
                                     const GeneratorOptions& opts) {
  if (grid.dim() != spec.d || grid.regimes() != spec.n || grid.tau() != spec.tau)
    throw PreconditionError("grid does not match the problem dimensions or periods");
  if (eps < 0.0) throw PreconditionError("eps must be nonnegative");
  if (opts.check_resolution) check_resolution(spec, grid);

  using Triplet = Eigen::Triplet<double>;
  const int d = spec.d;
  const int n = spec.n;
  const std::size_t P = grid.points();
  std::vector<std::vector<Triplet>> rows(P);

  parallel_for(P, [&](std::size_t s) {
    LocalCoefficients loc;
    const auto x = grid.point(s);
    auto& out = rows[s];
    for (int i = 0; i < n; ++i) {
      eval_local(spec, x, i, loc);
      const auto row = static_cast<int>(grid.index(s, i));
      std::vector<Triplet> entries;
      auto add = [&](std::size_t spatial, int regime, double v) {
        entries.emplace_back(row, static_cast<int>(grid.index(spatial, regime)), v);
      };
      for (int k = 0; k < d; ++k) {
        const double h = grid.spacing(k);
        const double D = 0.5 * loc.a[static_cast<std::size_t>(k * d + k)];
        const double v = loc.b[k] + eps * loc.c[k];
        double up = 0.0, down = 0.0;
        const auto scheme = (opts.scheme == DriftScheme::ExponentialFitted && !(D > 0.0))
                                ? DriftScheme::Upwind
                                : opts.scheme;
        switch (scheme) {
          case DriftScheme::Upwind:
            up = D / (h * h) + std::max(v, 0.0) / h;
            down = D / (h * h) + std::max(-v, 0.0) / h;
            break;
          case DriftScheme::Central:
            up = D / (h * h) + v / (2.0 * h);
            down = D / (h * h) - v / (2.0 * h);
            break;
          case DriftScheme::ExponentialFitted: {
            const double P = v * h / D;
            up = D / (h * h) * bernoulli(-P);
            down = D / (h * h) * bernoulli(P);
            break;
          }
        }
        add(grid.shifted(s, k, +1), i, up);
        add(grid.shifted(s, k, -1), i, down);
      }
      for (int k = 0; k < d; ++k)
        for (int l = k + 1; l < d; ++l) {
          const double akl = loc.a[static_cast<std::size_t>(k * d + l)];
          if (akl == 0.0) continue;
          const double w = std::abs(akl) / (2.0 * grid.spacing(k) * grid.spacing(l));
          const int sl = akl > 0.0 ? 1 : -1;
          add(grid.shifted(grid.shifted(s, k, +1), l, sl), i, w);
          add(grid.shifted(grid.shifted(s, k, -1), l, -sl), i, w);
          add(grid.shifted(s, k, +1), i, -w);
          add(grid.shifted(s, k, -1), i, -w);
          add(grid.shifted(s, l, +1), i, -w);
          add(grid.shifted(s, l, -1), i, -w);
        }
      for (int j = 0; j < n; ++j)
        if (j != i && spec.q_matrix(i, j) != 0.0) add(s, j, spec.q_matrix(i, j));
      std::vector<double> vals;
      vals.reserve(entries.size());
      for (const auto& t : entries) vals.push_back(t.value());
      entries.emplace_back(row, row, -compensated_sum(vals));
      out.insert(out.end(), entries.begin(), entries.end());
    }
  });

  std::vector<Triplet> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  GeneratorMatrix G;
  G.grid = grid;
  G.scheme = opts.scheme;
  G.eps = eps;
  const auto N = static_cast<Eigen::Index>(grid.unknowns());
  G.matrix.resize(N, N);
  G.matrix.setFromTriplets(all.begin(), all.end());
  G.matrix.makeCompressed();

  G.min_off_diagonal = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < N; ++r) {
    double sum = 0.0;
    for (decltype(G.matrix)::InnerIterator it(G.matrix, r); it; ++it) {
      sum += it.value();
      if (it.col() == r) continue;
      G.min_off_diagonal = std::min(G.min_off_diagonal, it.value());
      if (it.value() < -opts.sign_tolerance) {
        std::ostringstream os;
        os << "generator sign condition violated: entry " << it.value() << " from "
           << describe_unknown(grid, static_cast<std::size_t>(r)) << " to "
           << describe_unknown(grid, static_cast<std::size_t>(it.col())) << " with the "
           << to_string(opts.scheme) << " drift scheme and the cross-derivative stencil; "
           << "refine the grid or use the Monte Carlo path";
        throw SolverError(os.str());
      }
    }
    G.max_row_sum = std::max(G.max_row_sum, std::abs(sum));
  }
  return G;
}

// ---------------------------------------------------------------------------
// Stationary measure

double InvariantMeasure::integrate(std::span<const double> field) const {
  if (field.size() != weights.size()) throw PreconditionError("integrate: field size mismatch");
  std::vector<double> prod(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) prod[k] = weights[k] * field[k];
  return compensated_sum(prod);
}

std::vector<double> InvariantMeasure::regime_marginal() const {
  std::vector<double> m(static_cast<std::size_t>(grid.regimes()), 0.0);
  for (std::size_t k = 0; k < weights.size(); ++k) m[static_cast<std::size_t>(grid.regime_of(k))] += weights[k];
  return m;
}

namespace {

// Number of closed communicating classes of the chain with rates G (edges at
// nonzero off-diagonal entries), by Kosaraju's algorithm.
std::size_t closed_classes(const Eigen::SparseMatrix<double, Eigen::RowMajor>& G) {
  const auto N = static_cast<std::size_t>(G.rows());
  std::vector<std::vector<std::size_t>> fwd(N), bwd(N);
  for (Eigen::Index i = 0; i < G.rows(); ++i)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(G, i); it; ++it)
      if (it.col() != i && it.value() != 0.0) {
        fwd[static_cast<std::size_t>(i)].push_back(static_cast<std::size_t>(it.col()));
        bwd[static_cast<std::size_t>(it.col())].push_back(static_cast<std::size_t>(i));
      }
  std::vector<std::size_t> order;
  order.reserve(N);
  std::vector<char> seen(N, 0);
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t root = 0; root < N; ++root) {
    if (seen[root]) continue;
    seen[root] = 1;
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      if (next < fwd[v].size()) {
        const std::size_t w = fwd[v][next++];
        if (!seen[w]) {
          seen[w] = 1;
          stack.emplace_back(w, 0);
        }
      } else {
        order.push_back(v);
        stack.pop_back();
      }
    }
  }
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> comp(N, kNone);
  std::size_t ncomp = 0;
  std::vector<std::size_t> todo;
  for (std::size_t k = N; k-- > 0;) {
    const std::size_t root = order[k];
    if (comp[root] != kNone) continue;
    comp[root] = ncomp;
    todo.push_back(root);
    while (!todo.empty()) {
      const std::size_t v = todo.back();
      todo.pop_back();
      for (std::size_t w : bwd[v])
        if (comp[w] == kNone) {
          comp[w] = ncomp;
          todo.push_back(w);
        }
    }
    ++ncomp;
  }
  std::vector<char> leaves(ncomp, 1);
  for (std::size_t v = 0; v < N; ++v)
    for (std::size_t w : fwd[v])
      if (comp[w] != comp[v]) leaves[comp[v]] = 0;
  return static_cast<std::size_t>(std::count(leaves.begin(), leaves.end(), 1));
}

}  // namespace

InvariantMeasure stationary_measure(const GeneratorMatrix& G, const StationaryOptions& opts) {
  if (const auto classes = closed_classes(G.matrix); classes != 1)
    throw SolverError("stationary measure: the discrete chain has " + std::to_string(classes) +
                      " closed classes, so the generator is singular beyond rank one");
  using Triplet = Eigen::Triplet<double>;
  const Eigen::Index N = G.matrix.rows();
  const Eigen::Index r = N - 1;
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(G.matrix.nonZeros() + N));
  for (Eigen::Index i = 0; i < N; ++i)
    for (decltype(G.matrix)::InnerIterator it(G.matrix, i); it; ++it)
      if (it.col() != r) trips.emplace_back(static_cast<int>(it.col()), static_cast<int>(i), it.value());
  for (Eigen::Index k = 0; k < N; ++k) trips.emplace_back(static_cast<int>(r), static_cast<int>(k), 1.0);
  Eigen::SparseMatrix<double> A(N, N);
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();

  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success)
    throw SolverError("stationary measure: generator is singular beyond rank one (" + lu.lastErrorMessage() +
                      "); the discrete chain is not irreducible");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
  rhs[r] = 1.0;
  Eigen::VectorXd pi = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !pi.allFinite())
    throw SolverError("stationary measure: null-space solve failed; generator is singular beyond rank one");

  InvariantMeasure m;
  m.grid = G.grid;
  m.eps = G.eps;
  const double most_negative = pi.minCoeff();
  if (most_negative < -opts.negative_tolerance)
    throw SolverError("stationary measure: weight " + std::to_string(most_negative) +
                      " is negative beyond tolerance; the generator is not a valid rate matrix");
  if (most_negative < 0.0) {
    const std::string msg = "stationary measure: clipped negative weights down to " +
                            std::to_string(most_negative) + " and renormalized";
    warn(msg);
    m.warnings.push_back(msg);
    pi = pi.cwiseMax(0.0);
  }
  m.weights.assign(pi.data(), pi.data() + N);
  const double total = compensated_sum(m.weights);
  for (auto& w : m.weights) w /= total;
  const Eigen::Map<const Eigen::VectorXd> pv(m.weights.data(), N);
  m.residual = (G.matrix.transpose() * pv).cwiseAbs().maxCoeff();
  if (m.residual > opts.residual_tolerance)
    throw SolverError("stationary measure: residual ||pi^T G|| = " + std::to_string(m.residual) +
                      " exceeds " + std::to_string(opts.residual_tolerance));
  return m;
}

std::vector<double> sample_field(const PeriodicField& f, const TorusGrid& grid) {
  const auto dim = static_cast<std::size_t>(f.dim());
  std::vector<double> out(grid.unknowns() * dim);
  parallel_for(grid.points(), [&](std::size_t s) {
    const auto x = grid.point(s);
    for (int i = 0; i < grid.regimes(); ++i)
      f.eval(x, i, std::span<double>(out.data() + grid.index(s, i) * dim, dim));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Corrector

Corrector solve_corrector(const GeneratorMatrix& G0, const ProblemSpec& spec, const InvariantMeasure& pi0,
                          const CorrectorOptions& opts) {
  if (G0.eps != 0.0) throw PreconditionError("solve_corrector: generator must be built with eps = 0");
  if (!(G0.grid == pi0.grid)) throw PreconditionError("solve_corrector: measure and generator grids differ");
  const int d = spec.d;
  const auto& grid = G0.grid;
  const std::size_t N = grid.unknowns();
  const auto b = sample_field(spec.drift_b, grid);

  Corrector corr;
  corr.grid = grid;
  corr.scheme = G0.scheme;
  corr.d = d;
  corr.beta.assign(N * static_cast<std::size_t>(d), 0.0);
  corr.pi_b.assign(static_cast<std::size_t>(d), 0.0);
  corr.normalization.assign(static_cast<std::size_t>(d), 0.0);
  corr.residual.assign(static_cast<std::size_t>(d), 0.0);

  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(G0.matrix.nonZeros()) + 2 * N);
  for (Eigen::Index i = 0; i < G0.matrix.rows(); ++i)
    for (decltype(G0.matrix)::InnerIterator it(G0.matrix, i); it; ++it)
      trips.emplace_back(static_cast<int>(i), static_cast<int>(it.col()), it.value());
  const auto Ni = static_cast<int>(N);
  for (int i = 0; i < Ni; ++i) {
    trips.emplace_back(i, Ni, 1.0);
    trips.emplace_back(Ni, i, pi0.weights[static_cast<std::size_t>(i)]);
  }
  Eigen::SparseMatrix<double> A(Ni + 1, Ni + 1);
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success)
    throw SolverError("corrector: bordered system is singular (" + lu.lastErrorMessage() + ")");

  const double g_norm = [&] {
    double m = 0.0;
    for (Eigen::Index i = 0; i < G0.matrix.rows(); ++i) {
      double s = 0.0;
      for (decltype(G0.matrix)::InnerIterator it(G0.matrix, i); it; ++it) s += std::abs(it.value());
      m = std::max(m, s);
    }
    return m;
  }();

  {
    Eigen::VectorXd w(Ni);
    for (std::size_t u = 0; u < N; ++u) w[static_cast<Eigen::Index>(u)] = pi0.weights[u];
    const double r = (G0.matrix.transpose() * w).cwiseAbs().maxCoeff();
    if (r > opts.invariance_tolerance)
      throw SolverError("corrector: pi0 is not invariant for the generator (||pi0^T G|| = " + std::to_string(r) +
                        "), so the centering condition cannot hold");
  }

  std::vector<double> bk(N);
  for (int k = 0; k < d; ++k) {
    for (std::size_t u = 0; u < N; ++u) bk[u] = b[u * static_cast<std::size_t>(d) + k];
    const double mean = pi0.integrate(bk);
    corr.pi_b[static_cast<std::size_t>(k)] = mean;
    Eigen::VectorXd rhs(Ni + 1);
    double rhs_norm = 0.0;
    for (std::size_t u = 0; u < N; ++u) {
      rhs[static_cast<Eigen::Index>(u)] = bk[u] - mean;
      rhs_norm = std::max(rhs_norm, std::abs(bk[u] - mean));
    }
    rhs[Ni] = 0.0;
    std::vector<double> centered(rhs.data(), rhs.data() + N);
    const double centering = pi0.integrate(centered);
    if (std::abs(centering) > opts.centering_tolerance * std::max(1.0, rhs_norm))
      throw SolverError("corrector: right-hand side for component " + std::to_string(k) +
                        " is not centered under pi0 (pi0(rhs) = " + std::to_string(centering) + ")");
    const Eigen::VectorXd sol = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !sol.allFinite())
      throw SolverError("corrector: solve failed for component " + std::to_string(k));
    const Eigen::VectorXd beta = sol.head(Ni);
    const Eigen::VectorXd res = G0.matrix * beta - rhs.head(Ni);
    const double r = res.cwiseAbs().maxCoeff();
    const double beta_norm = beta.cwiseAbs().maxCoeff();
    corr.residual[static_cast<std::size_t>(k)] = r;
    if (r > opts.residual_tolerance * std::max(g_norm * beta_norm + rhs_norm, 1.0))
      throw SolverError("corrector: residual " + std::to_string(r) + " for component " + std::to_string(k) +
                        " exceeds tolerance");
    for (std::size_t u = 0; u < N; ++u) corr.beta[u * static_cast<std::size_t>(d) + k] = beta[static_cast<Eigen::Index>(u)];
    std::vector<double> bv(beta.data(), beta.data() + Ni);
    corr.normalization[static_cast<std::size_t>(k)] = pi0.integrate(bv);
  }

  corr.jacobian.assign(N * static_cast<std::size_t>(d * d), 0.0);
  for (std::size_t s = 0; s < grid.points(); ++s)
    for (int i = 0; i < grid.regimes(); ++i) {
      const std::size_t u = grid.index(s, i);
      for (int l = 0; l < d; ++l) {
        const std::size_t up = grid.index(grid.shifted(s, l, +1), i);
        const std::size_t dn = grid.index(grid.shifted(s, l, -1), i);
        const double h2 = 2.0 * grid.spacing(l);
        for (int k = 0; k < d; ++k)
          corr.jacobian[(u * d + k) * d + l] = (corr.value(up, k) - corr.value(dn, k)) / h2;
      }
    }
  return corr;
}

// ---------------------------------------------------------------------------
// Mixing estimate and Monte Carlo corrector

double MixingEstimate::truncation_bound(double scale, double T) const {
  return prefactor * scale * std::exp(-gamma * T) / gamma;
}

namespace {

double lattice_sup_abs(const PeriodicField& f, const ProblemSpec& spec) {
  // sup |f| over a lattice of the cell; exact for the extrema of low-order
  // trigonometric fields located at lattice points and accurate otherwise
  const int per_axis = spec.d == 1 ? 512 : (spec.d == 2 ? 64 : 8);
  std::vector<int> idx(static_cast<std::size_t>(spec.d), 0);
  std::vector<double> x(static_cast<std::size_t>(spec.d));
  std::vector<double> v(static_cast<std::size_t>(f.dim()));
  double sup = 0.0;
  for (;;) {
    for (int j = 0; j < spec.d; ++j) x[j] = spec.tau[j] * idx[j] / per_axis;
    for (int i = 0; i < spec.n; ++i) {
      f.eval(x, i, v);
      for (double e : v) sup = std::max(sup, std::abs(e));
    }
    int j = 0;
    while (j < spec.d && ++idx[j] == per_axis) idx[j++] = 0;
    if (j == spec.d) break;
  }
  return sup;
}

}  // namespace

MixingEstimate estimate_mixing(const ProblemSpec& spec, const std::vector<PeriodicField>& probes,
                               double horizon, std::size_t n_paths, std::uint64_t master_seed,
                               const MixingOptions& opts) {
  if (probes.empty()) throw PreconditionError("estimate_mixing: no probe functions");
  if (!(horizon > 0.0) || n_paths < 2) throw PreconditionError("estimate_mixing: need horizon > 0 and >= 2 paths");
  std::vector<double> norms;
  for (const auto& f : probes) {
    if (f.dim() != 1 || f.regimes() != spec.n)
      throw PreconditionError("estimate_mixing: probes must be scalar fields over the problem's regimes");
    const double s = f.is_zero() ? 0.0 : lattice_sup_abs(f, spec);
    if (!(s > 0.0)) throw PreconditionError("estimate_mixing: probe is identically zero (degenerate fit)");
    norms.push_back(s);
  }

  std::vector<std::vector<double>> starts;
  std::vector<int> idx(static_cast<std::size_t>(spec.d), 0);
  for (;;) {
    std::vector<double> x(static_cast<std::size_t>(spec.d));
    for (int j = 0; j < spec.d; ++j) x[j] = spec.tau[j] * idx[j] / opts.starts_per_axis;
    starts.push_back(std::move(x));
    int j = 0;
    while (j < spec.d && ++idx[j] == opts.starts_per_axis) idx[j++] = 0;
    if (j == spec.d) break;
  }

  const int T = opts.time_points;
  MixingEstimate est;
  est.tol = opts.tol;
  est.times.resize(static_cast<std::size_t>(T));
  for (int j = 0; j < T; ++j) est.times[j] = horizon * (j + 1) / T;
  est.sup_values.assign(static_cast<std::size_t>(T), 0.0);
  est.sup_errors.assign(static_cast<std::size_t>(T), 0.0);
  const std::size_t np = probes.size();
  const double dt = std::min(opts.dt, horizon / T);

  std::vector<double> samples(n_paths * static_cast<std::size_t>(T) * np);
  std::size_t start_id = 0;
  for (const auto& x0 : starts)
    for (int i0 = 0; i0 < spec.n; ++i0, ++start_id) {
      const std::uint64_t seed = derive_seed(master_seed, start_id, opts.seed_salt);
      parallel_for(n_paths, [&](std::size_t p) {
        PathSimulator sim(spec, 0.0, dt);
        sim.start(x0, i0, seed, p);
        std::vector<double> y(static_cast<std::size_t>(spec.d));
        for (int j = 0; j < T; ++j) {
          sim.advance_to(est.times[j]);
          std::copy(sim.x().begin(), sim.x().end(), y.begin());
          wrap_torus_inplace(y, spec.tau);
          for (std::size_t q = 0; q < np; ++q)
            samples[(p * T + j) * np + q] = probes[q].eval_scalar(y, sim.regime()) / norms[q];
        }
      });
      std::vector<double> col(n_paths);
      for (int j = 0; j < T; ++j)
        for (std::size_t q = 0; q < np; ++q) {
          for (std::size_t p = 0; p < n_paths; ++p) col[p] = samples[(p * T + j) * np + q];
          const auto st = sample_stats(col);
          if (std::abs(st.mean) > est.sup_values[j]) {
            est.sup_values[j] = std::abs(st.mean);
            est.sup_errors[j] = st.std_error;
          }
        }
    }

  std::vector<std::size_t> window;
  for (int j = 0; j < T; ++j) {
    if (!(est.sup_values[j] > opts.snr * est.sup_errors[j])) break;
    window.push_back(static_cast<std::size_t>(j));
  }
  // the head of the window still carries the faster modes
  window.erase(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(window.size() / 3));
  if (window.size() < 3)
    throw SolverError("estimate_mixing: only " + std::to_string(window.size()) +
                      " time points above the noise floor; increase paths or shorten the horizon");
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  for (auto j : window) {
    const double t = est.times[j], y = std::log(est.sup_values[j]);
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
  }
  const double m = static_cast<double>(window.size());
  const double slope = (m * sty - st * sy) / (m * stt - st * st);
  const double intercept = (sy - slope * st) / m;
  est.fit_points = window.size();
  est.gamma = -slope;
  est.prefactor = std::exp(intercept);
  if (!(est.gamma > 0.0))
    throw SolverError("estimate_mixing: fitted decay rate " + std::to_string(est.gamma) + " is not positive");
  est.t_star = std::max(0.0, std::log(est.prefactor / est.tol) / est.gamma);
  return est;
}

std::vector<OracleEstimate> corrector_mc_oracle(const ProblemSpec& spec, const std::vector<ProbePoint>& points,
                                                const MixingEstimate& mixing, std::size_t n_paths,
                                                double dt, std::uint64_t master_seed,
                                                std::span<const double> pi_b) {
  const int d = spec.d;
  if (static_cast<int>(pi_b.size()) != d) throw PreconditionError("corrector_mc_oracle: pi_b has wrong size");
  const double T = mixing.t_star;
  if (!(T > 0.0)) throw PreconditionError("corrector_mc_oracle: truncation horizon must be positive");

  PeriodicField centered = PeriodicField::custom(
      d, spec.n,
      [&](std::span<const double> x, int i, std::span<double> out) {
        spec.drift_b.eval(x, i, out);
        for (int k = 0; k < d; ++k) out[k] -= pi_b[k];
      },
      0);
  const double g_sup = lattice_sup_abs(centered, spec);

  std::vector<OracleEstimate> out;
  for (std::size_t pt = 0; pt < points.size(); ++pt) {
    const auto& probe = points[pt];
    const std::uint64_t seed = derive_seed(master_seed, pt, 0x0AC1E);
    std::vector<double> integrals(n_paths * static_cast<std::size_t>(d));
    parallel_for(n_paths, [&](std::size_t p) {
      PathSimulator sim(spec, 0.0, dt);
      sim.start(probe.x, probe.regime, seed, p);
      std::vector<double> y(static_cast<std::size_t>(d)), g0(static_cast<std::size_t>(d)),
          g1(static_cast<std::size_t>(d)), acc(static_cast<std::size_t>(d), 0.0);
      while (sim.time() < T) {
        std::copy(sim.x().begin(), sim.x().end(), y.begin());
        wrap_torus_inplace(y, spec.tau);
        spec.drift_b.eval(y, sim.regime(), g0);
        sim.step(T);
        std::copy(sim.x().begin(), sim.x().end(), y.begin());
        wrap_torus_inplace(y, spec.tau);
        spec.drift_b.eval(y, sim.step_regime(), g1);
        for (int k = 0; k < d; ++k) acc[k] += 0.5 * (g0[k] + g1[k] - 2.0 * pi_b[k]) * sim.last_dt();
      }
      for (int k = 0; k < d; ++k) integrals[p * d + k] = -acc[k];
    });
    OracleEstimate est;
    std::vector<double> col(n_paths);
    for (int k = 0; k < d; ++k) {
      for (std::size_t p = 0; p < n_paths; ++p) col[p] = integrals[p * d + k];
      const auto st = sample_stats(col);
      est.value.push_back(st.mean);
      est.std_error.push_back(st.std_error);
    }
    est.truncation_bound = mixing.truncation_bound(g_sup, T);
    out.push_back(std::move(est));
  }
  return out;
}

std::vector<ConvergenceRow> measure_convergence(const ProblemSpec& spec, std::span<const double> eps_list,
                                                const TorusGrid& grid, const GeneratorOptions& opts) {
  const auto pi0 = stationary_measure(discretize_generator(spec, grid, 0.0, opts));
  std::vector<ConvergenceRow> rows;
  for (double eps : eps_list) {
    ConvergenceRow row{eps, 0.0};
    if (eps != 0.0) {
      const auto pie = stationary_measure(discretize_generator(spec, grid, eps, opts));
      std::vector<double> diff(pie.weights.size());
      for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = std::abs(pie.weights[k] - pi0.weights[k]);
      row.tv = 0.5 * compensated_sum(diff);
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Export

namespace {

void write_prefix_header(const TorusGrid& g, std::ostream& out) {
  for (int k = 0; k < g.dim(); ++k) out << "j" << k << ",";
  out << "regime";
  for (int k = 0; k < g.dim(); ++k) out << ",x" << k;
}

void write_prefix(const TorusGrid& g, std::size_t u, std::ostream& out) {
  const auto s = g.spatial_of(u);
  for (int j : g.multi_index(s)) out << j << ",";
  out << g.regime_of(u);
  char buf[40];
  for (double x : g.point(s)) {
    std::snprintf(buf, sizeof buf, ",%.17g", x);
    out << buf;
  }
}

void write_num(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, ",%.17g", v);
  out << buf;
}

}  // namespace

void write_measure_csv(const InvariantMeasure& pi, std::ostream& out) {
  write_prefix_header(pi.grid, out);
  out << ",pi\n";
  for (std::size_t u = 0; u < pi.weights.size(); ++u) {
    write_prefix(pi.grid, u, out);
    write_num(out, pi.weights[u]);
    out << '\n';
  }
}

void write_corrector_csv(const Corrector& corr, std::ostream& out) {
  write_prefix_header(corr.grid, out);
  for (int k = 0; k < corr.d; ++k) out << ",beta" << k;
  for (int k = 0; k < corr.d; ++k)
    for (int l = 0; l < corr.d; ++l) out << ",dbeta" << k << l;
  out << '\n';
  for (std::size_t u = 0; u < corr.grid.unknowns(); ++u) {
    write_prefix(corr.grid, u, out);
    for (int k = 0; k < corr.d; ++k) write_num(out, corr.value(u, k));
    for (int k = 0; k < corr.d; ++k)
      for (int l = 0; l < corr.d; ++l) write_num(out, corr.jac(u, k, l));
    out << '\n';
  }
}

void write_matrix_coo(const GeneratorMatrix& G, std::ostream& out) {
  char buf[64];
  for (Eigen::Index r = 0; r < G.matrix.rows(); ++r)
    for (decltype(G.matrix)::InnerIterator it(G.matrix, r); it; ++it) {
      std::snprintf(buf, sizeof buf, "%lld %lld %.17g\n", static_cast<long long>(r),
                    static_cast<long long>(it.col()), it.value());
      out << buf;
    }
}

}  // namespace homog
