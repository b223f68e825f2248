#include "homog/fk.hpp"

#include "homog/cell.hpp"
#include "homog/error.hpp"
#include "homog/log.hpp"
#include "homog/parallel.hpp"
#include "homog/rng.hpp"
#include "homog/sde.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace homog {

namespace {

constexpr std::uint64_t kFkSalt = 0x464B;
constexpr std::uint64_t kHomSalt = 0x484F4D;

double eval_opt(const std::optional<ScalarFunction>& f, std::span<const double> x) { return f ? (*f)(x) : 0.0; }

std::string format_point(std::span<const double> x) {
  std::ostringstream os;
  os << "(";
  for (std::size_t k = 0; k < x.size(); ++k) os << (k ? ", " : "") << x[k];
  os << ")";
  return os.str();
}

// Running Feynman-Kac weights along one path: zeta = int e, F = int f e^zeta.
struct Accumulator {
  double zeta = 0.0;
  double F = 0.0;
  void step(double h, double e0, double e1, double f0, double f1) {
    const double z1 = zeta + 0.5 * h * (e0 + e1);
    F += 0.5 * h * (f0 * std::exp(zeta) + f1 * std::exp(z1));
    zeta = z1;
  }
};

// Exit test for the step X0 -> X1 with normal variance var_n (per unit time
// already multiplied by the step). Returns true on exit.
bool exits(const LevelSetDomain& dom, std::span<const double> x0, std::span<const double> x1, ExitDetection mode,
           double normal_var_bound, const std::function<double(std::span<const double>)>& normal_var, Rng& aux,
           std::vector<double>& scratch) {
  if (!dom.contains(x1)) return true;
  if (mode == ExitDetection::Endpoint) return false;
  const double d1 = dom.boundary_distance(x1, scratch);
  const double d0 = dom.boundary_distance(x0, scratch);
  if (!(d0 > 0.0) || !(d1 > 0.0)) return !(d1 > 0.0);
  if (std::exp(-2.0 * d0 * d1 / normal_var_bound) < 1e-14) return false;
  const double v = normal_var(scratch);
  if (!(v > 0.0)) return false;
  return aux.uniform() < std::exp(-2.0 * d0 * d1 / v);
}

struct PathResult {
  double score = 0.0;
  double time = 0.0;
  std::uint64_t steps = 0;
  bool capped = false;
};

FkEstimate summarize(const std::vector<PathResult>& res, double dt, double eps, bool elliptic, double t) {
  FkEstimate est;
  std::vector<double> scores(res.size()), times;
  std::uint64_t steps = 0;
  for (std::size_t p = 0; p < res.size(); ++p) {
    scores[p] = res[p].score;
    steps += res[p].steps;
    if (res[p].capped)
      ++est.capped;
    else
      times.push_back(res[p].time);
  }
  const auto st = sample_stats(scores);
  est.value = st.mean;
  est.std_error = st.std_error;
  est.n_paths = res.size();
  est.dt = dt;
  est.eps = eps;
  est.elliptic = elliptic;
  est.t = t;
  est.steps = steps;
  if (elliptic && !times.empty()) est.mean_exit_time = compensated_sum(times) / static_cast<double>(times.size());
  return est;
}

// Sampled sup |f| over the domain and sup |g| over its boundary.
std::pair<double, double> sup_norms(const LevelSetDomain& dom, const std::optional<ScalarFunction>& f,
                                    const std::optional<ScalarFunction>& g, std::size_t samples, std::uint64_t seed) {
  const std::size_t d = dom.bbox.lo.size();
  Rng rng(derive_seed(seed, 0, 0x53555053));
  double fs = 0.0, gs = 0.0;
  std::vector<double> x(d);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t k = 0; k < d; ++k) x[k] = dom.bbox.lo[k] + (dom.bbox.hi[k] - dom.bbox.lo[k]) * rng.uniform();
    if (f && dom.contains(x)) fs = std::max(fs, std::abs((*f)(x)));
    if (g) {
      dom.project_to_boundary(x);
      if (std::abs(dom.level(x)) < 1e-8) gs = std::max(gs, std::abs((*g)(x)));
    }
  }
  return {fs, gs};
}

void check_start(const ProblemSpec& spec, std::span<const double> x, int i) {
  if (static_cast<int>(x.size()) != spec.d) throw PreconditionError("start point has the wrong dimension");
  if (i < 0 || i >= spec.n) throw PreconditionError("start regime out of range");
}

// Upper bound on the largest eigenvalue of a over a lattice of the torus.
double diffusivity_bound(const ProblemSpec& spec) {
  const int per_axis = spec.d == 1 ? 256 : spec.d == 2 ? 32 : 6;
  std::size_t count = 1;
  for (int k = 0; k < spec.d; ++k) count *= static_cast<std::size_t>(per_axis);
  LocalCoefficients loc;
  std::vector<double> x(static_cast<std::size_t>(spec.d));
  double bound = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    std::size_t r = s;
    for (int k = 0; k < spec.d; ++k) {
      x[static_cast<std::size_t>(k)] = spec.tau[static_cast<std::size_t>(k)] *
                                       static_cast<double>(r % static_cast<std::size_t>(per_axis)) / per_axis;
      r /= static_cast<std::size_t>(per_axis);
    }
    for (int i = 0; i < spec.n; ++i) {
      eval_local(spec, x, i, loc);
      double tr = 0.0;
      for (int k = 0; k < spec.d; ++k) tr += loc.a[static_cast<std::size_t>(k * spec.d + k)];
      bound = std::max(bound, tr);
    }
  }
  return 1.5 * bound;
}

ProblemSpec centered(const ProblemSpec& spec, const FkOptions& opts) {
  const auto pib = opts.pi0_b ? *opts.pi0_b : grid_pi0_b(spec);
  if (static_cast<int>(pib.size()) != spec.d) throw PreconditionError("pi0(b) has the wrong dimension");
  double m = 0.0;
  for (double v : pib) m = std::max(m, std::abs(v));
  if (m <= opts.centering_tolerance) return spec;
  warn("pi0(b) = " + format_point(pib) + " is not centered; solving with b - pi0(b)");
  return shift_drift(spec, pib);
}

// Paths of X^eps = eps * Xbar(. / eps^2) stopped at exit (elliptic) or at t_end.
FkEstimate run_eps(const ProblemSpec& spec, std::span<const double> x, int i, double eps, bool elliptic,
                   double t_end, const FkOptions& opts, std::uint64_t master_seed) {
  if (!(eps > 0.0)) throw PreconditionError("eps must be positive");
  if (!(opts.dt > 0.0)) throw PreconditionError("dt must be positive");
  if (opts.n_paths < 2) throw PreconditionError("need at least 2 paths");
  const int d = spec.d;
  const double e2 = eps * eps;
  const double dt_bar = opts.dt / e2;
  const double stop_bar = t_end / e2;
  const LevelSetDomain* dom = elliptic ? &*spec.domain : nullptr;
  const double a_bound = elliptic && opts.exit == ExitDetection::BrownianBridge ? diffusivity_bound(spec) : 1.0;

  std::vector<double> x0(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) x0[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)] / eps;
  std::vector<PathResult> res(opts.n_paths);
  parallel_for(opts.n_paths, [&](std::size_t p) {
    PathSimulator sim(spec, eps, dt_bar);
    sim.start(x0, i, master_seed, p);
    Accumulator acc;
    std::vector<double> X(static_cast<std::size_t>(d)), Xp(static_cast<std::size_t>(d)), scratch(static_cast<std::size_t>(d));
    LocalCoefficients loc;
    for (int k = 0; k < d; ++k) X[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)];
    double f_prev = eval_opt(spec.source_f, X);
    PathResult& r = res[p];
    bool exited = false;
    while (sim.time() < stop_bar) {
      sim.step(stop_bar);
      const int reg = sim.step_regime();
      Xp = X;
      const auto xb = sim.x();
      for (int k = 0; k < d; ++k) X[static_cast<std::size_t>(k)] = eps * xb[static_cast<std::size_t>(k)];
      const double h = e2 * sim.last_dt();
      const double e0 = spec.killing_e.eval_scalar(sim.x_prev(), reg);
      const double e1 = spec.killing_e.eval_scalar(xb, reg);
      const double f1 = eval_opt(spec.source_f, X);
      acc.step(h, e0, e1, f_prev, f1);
      f_prev = f1;
      if (elliptic) {
        auto normal_var = [&](std::span<const double> n) {
          eval_local(spec, sim.x_prev(), reg, loc);
          double v = 0.0;
          for (int k = 0; k < d; ++k)
            for (int l = 0; l < d; ++l)
              v += n[static_cast<std::size_t>(k)] * loc.a[static_cast<std::size_t>(k * d + l)] * n[static_cast<std::size_t>(l)];
          return v * h;
        };
        if (exits(*dom, Xp, X, opts.exit, a_bound * h, normal_var, sim.aux_rng(), scratch)) {
          exited = true;
          break;
        }
      }
    }
    r.steps = sim.steps();
    r.time = e2 * sim.time();
    if (elliptic && !exited) {
      r.capped = true;
      r.score = acc.F;
      return;
    }
    if (elliptic && opts.exit == ExitDetection::BrownianBridge) dom->project_to_boundary(X);
    r.score = eval_opt(spec.boundary_g, X) * std::exp(acc.zeta) + acc.F;
  });
  return summarize(res, opts.dt, eps, elliptic, elliptic ? 0.0 : t_end);
}

FkEstimate run_hom(const LimitProcessParams& P, const LevelSetDomain* dom, const std::optional<ScalarFunction>& f,
                   const std::optional<ScalarFunction>& g, std::span<const double> x, double t_end,
                   const FkOptions& opts, std::uint64_t master_seed) {
  const int d = P.dim();
  if (static_cast<int>(x.size()) != d) throw PreconditionError("start point has the wrong dimension");
  if (!(opts.dt > 0.0)) throw PreconditionError("dt must be positive");
  if (opts.n_paths < 2) throw PreconditionError("need at least 2 paths");
  const bool elliptic = dom != nullptr;
  // without a source term the end point of a parabolic path has an exact law
  const double dt = !elliptic && !f ? std::max(t_end, opts.dt) : opts.dt;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P.a, Eigen::EigenvaluesOnly);
  const double a_bound = std::max(es.eigenvalues().maxCoeff(), 0.0);

  std::vector<PathResult> res(opts.n_paths);
  parallel_for(opts.n_paths, [&](std::size_t p) {
    Rng brown(derive_seed(master_seed, p, kBrownianStream));
    Rng aux(derive_seed(master_seed, p, kAuxStream));
    Eigen::VectorXd W = Eigen::Map<const Eigen::VectorXd>(x.data(), d), Wp(d), xi(d);
    std::vector<double> scratch(static_cast<std::size_t>(d));
    Accumulator acc;
    double f_prev = eval_opt(f, std::span<const double>(W.data(), static_cast<std::size_t>(d)));
    double t = 0.0;
    PathResult& r = res[p];
    bool exited = false;
    while (t < t_end) {
      double h = std::min(dt, t_end - t);
      if (t_end - (t + h) <= 1e-9 * dt) h = t_end - t;
      for (int k = 0; k < d; ++k) xi[k] = brown.normal();
      Wp = W;
      W += P.b * h + P.factor * xi * std::sqrt(h);
      t = (h == t_end - t) ? t_end : t + h;
      ++r.steps;
      const std::span<const double> ws(W.data(), static_cast<std::size_t>(d));
      const double f1 = eval_opt(f, ws);
      acc.step(h, P.e_bar, P.e_bar, f_prev, f1);
      f_prev = f1;
      if (elliptic) {
        auto normal_var = [&](std::span<const double> n) {
          const Eigen::Map<const Eigen::VectorXd> nv(n.data(), d);
          return nv.dot(P.a * nv) * h;
        };
        if (exits(*dom, std::span<const double>(Wp.data(), static_cast<std::size_t>(d)), ws, opts.exit,
                  std::max(a_bound, 1e-300) * h, normal_var, aux, scratch)) {
          exited = true;
          break;
        }
      }
    }
    r.time = t;
    if (elliptic && !exited) {
      r.capped = true;
      r.score = acc.F;
      return;
    }
    std::vector<double> end(W.data(), W.data() + d);
    if (elliptic && opts.exit == ExitDetection::BrownianBridge) dom->project_to_boundary(end);
    r.score = eval_opt(g, end) * std::exp(acc.zeta) + acc.F;
  });
  return summarize(res, dt, 0.0, elliptic, elliptic ? 0.0 : t_end);
}

}  // namespace

LimitProcessParams LimitProcessParams::from(const EffectiveCoefficients& ec) {
  LimitProcessParams p;
  p.a = 0.5 * (ec.a + ec.a.transpose());
  p.b = ec.b;
  p.e_bar = ec.e_bar;
  Eigen::LLT<Eigen::MatrixXd> llt(p.a);
  if (llt.info() == Eigen::Success) {
    p.factor = llt.matrixL();
  } else {
    // positive semidefinite: symmetric square root with clipped eigenvalues
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.a);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    p.factor = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }
  const double err = (p.factor * p.factor.transpose() - p.a).cwiseAbs().maxCoeff();
  if (err > 1e-10 * std::max(1.0, p.a.cwiseAbs().maxCoeff()))
    throw SolverError("limit process: covariance is not positive semidefinite (factor error " + std::to_string(err) +
                      ")");
  return p;
}

ProblemSpec shift_drift(const ProblemSpec& spec, std::span<const double> shift) {
  if (static_cast<int>(shift.size()) != spec.d) throw PreconditionError("drift shift has the wrong dimension");
  ProblemSpec out = spec;
  if (spec.drift_b.is_custom()) {
    const auto base = spec.drift_b;
    const std::vector<double> s(shift.begin(), shift.end());
    int kmax = 0;
    for (int k = 0; k < spec.d; ++k) kmax = std::max(kmax, base.max_frequency(static_cast<std::size_t>(k)));
    out.drift_b = PeriodicField::custom(
        spec.d, spec.n,
        [base, s](std::span<const double> x, int regime, std::span<double> v) {
          base.eval(x, regime, v);
          for (std::size_t k = 0; k < s.size(); ++k) v[k] -= s[k];
        },
        kmax, base.is_x_independent());
    return out;
  }
  auto table = spec.drift_b.table();
  if (table.empty()) {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(spec.n));
    for (auto& r : rows)
      for (double v : shift) r.push_back(-v);
    out.drift_b = PeriodicField::constant(rows);
    return out;
  }
  for (auto& row : table)
    for (std::size_t k = 0; k < row.size(); ++k)
      row[k] = TrigPolynomial(row[k].constant_term() - shift[k], row[k].terms(), spec.tau);
  out.drift_b = PeriodicField::trig(spec.d, std::move(table));
  return out;
}

std::vector<double> grid_pi0_b(const ProblemSpec& spec) {
  if (spec.drift_b.is_zero()) return std::vector<double>(static_cast<std::size_t>(spec.d), 0.0);
  const int per_axis = spec.d == 1 ? 256 : spec.d == 2 ? 48 : 16;
  std::vector<int> cells(static_cast<std::size_t>(spec.d), per_axis);
  for (int k = 0; k < spec.d; ++k) {
    const auto axis = static_cast<std::size_t>(k);
    const int kmax = std::max({spec.drift_b.max_frequency(axis), spec.sigma.max_frequency(axis),
                               spec.drift_c.max_frequency(axis), spec.killing_e.max_frequency(axis)});
    cells[axis] = std::max(cells[axis], 4 * kmax + 1);
  }
  TorusGrid grid(cells, spec.tau, spec.n);
  const auto pi = stationary_measure(discretize_generator(spec, grid, 0.0));
  const auto b = sample_field(spec.drift_b, grid);
  std::vector<double> out(static_cast<std::size_t>(spec.d)), col(grid.unknowns());
  for (int k = 0; k < spec.d; ++k) {
    for (std::size_t u = 0; u < grid.unknowns(); ++u) col[u] = b[u * static_cast<std::size_t>(spec.d) + static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(k)] = pi.integrate(col);
  }
  return out;
}

FkEstimate solve_elliptic_eps(const ProblemSpec& spec, std::span<const double> x, int i, double eps,
                              const FkOptions& opts, std::uint64_t master_seed) {
  if (!spec.domain) throw PreconditionError("elliptic solve needs a domain");
  check_start(spec, x, i);
  if (!spec.domain->contains(x)) throw PreconditionError("start point " + format_point(x) + " is not inside the domain");
  const auto ks = sample_killing_sup(spec, opts.samples, master_seed);
  if (!(ks.sup_e < 0.0))
    throw PreconditionError("killing rate must satisfy e <= -alpha < 0; sampled sup e = " + std::to_string(ks.sup_e) +
                            " at x = " + format_point(ks.witness_x) + ", regime " +
                            std::to_string(ks.witness_regime));
  const double alpha = -ks.sup_e;
  const ProblemSpec work = centered(spec, opts);
  auto est = run_eps(work, x, i, eps, true, opts.horizon_cap, opts, derive_seed(master_seed, 0, kFkSalt));
  const auto [fs, gs] = sup_norms(*spec.domain, spec.source_f, spec.boundary_g, opts.samples, master_seed);
  est.bias_bound = (gs + fs / alpha) * std::exp(-alpha * opts.horizon_cap);
  return est;
}

FkEstimate solve_elliptic_hom(const LimitProcessParams& params, const LevelSetDomain& domain,
                              const std::optional<ScalarFunction>& f, const std::optional<ScalarFunction>& g,
                              std::span<const double> x, const FkOptions& opts, std::uint64_t master_seed) {
  if (!(params.e_bar < 0.0))
    throw PreconditionError("homogenized elliptic solve needs e_bar < 0 (got " + std::to_string(params.e_bar) + ")");
  if (static_cast<int>(x.size()) != params.dim()) throw PreconditionError("start point has the wrong dimension");
  if (!domain.contains(x)) throw PreconditionError("start point " + format_point(x) + " is not inside the domain");
  auto est = run_hom(params, &domain, f, g, x, opts.horizon_cap, opts, derive_seed(master_seed, 0, kHomSalt));
  const double alpha = -params.e_bar;
  const auto [fs, gs] = sup_norms(domain, f, g, opts.samples, master_seed);
  est.bias_bound = (gs + fs / alpha) * std::exp(-alpha * opts.horizon_cap);
  return est;
}

FkEstimate solve_parabolic_eps(const ProblemSpec& spec, double t, std::span<const double> x, int i, double eps,
                               const FkOptions& opts, std::uint64_t master_seed) {
  check_start(spec, x, i);
  if (!(t >= 0.0)) throw PreconditionError("parabolic time must be nonnegative");
  if (opts.check_growth) {
    if (!spec.growth) throw PreconditionError("parabolic solve needs declared growth constants (K, kappa)");
    if (!(spec.growth->kappa >= 0.0 && spec.growth->kappa < 2.0))
      throw PreconditionError("growth exponent kappa = " + std::to_string(spec.growth->kappa) + " is not in [0, 2)");
  }
  if (t == 0.0) {
    FkEstimate est;
    est.value = eval_opt(spec.boundary_g, x);
    est.n_paths = opts.n_paths;
    est.dt = opts.dt;
    est.eps = eps;
    est.elliptic = false;
    return est;
  }
  const ProblemSpec work = centered(spec, opts);
  return run_eps(work, x, i, eps, false, t, opts, derive_seed(master_seed, 1, kFkSalt));
}

FkEstimate solve_parabolic_hom(const LimitProcessParams& params, const std::optional<ScalarFunction>& f,
                               const std::optional<ScalarFunction>& g, double t, std::span<const double> x,
                               const FkOptions& opts, std::uint64_t master_seed) {
  if (!(t >= 0.0)) throw PreconditionError("parabolic time must be nonnegative");
  if (static_cast<int>(x.size()) != params.dim()) throw PreconditionError("start point has the wrong dimension");
  if (t == 0.0) {
    FkEstimate est;
    est.value = eval_opt(g, x);
    est.n_paths = opts.n_paths;
    est.dt = opts.dt;
    est.elliptic = false;
    return est;
  }
  return run_hom(params, nullptr, f, g, x, t, opts, derive_seed(master_seed, 1, kHomSalt));
}

StudyReport convergence_study(const ProblemSpec& spec, const EffectiveCoefficients& ec,
                              const std::vector<StudyPoint>& points, std::span<const double> eps_list,
                              const StudyOptions& opts, std::uint64_t master_seed) {
  if (points.empty() || eps_list.empty()) throw PreconditionError("convergence study needs points and eps values");
  const auto params = LimitProcessParams::from(ec);
  std::vector<double> eps_sorted(eps_list.begin(), eps_list.end());
  std::sort(eps_sorted.begin(), eps_sorted.end(), std::greater<>());
  const double eps_min = eps_sorted.back();

  FkOptions base;
  base.n_paths = opts.n_paths;
  base.horizon_cap = opts.horizon_cap;
  base.exit = opts.exit;
  base.check_growth = opts.check_growth;
  base.pi0_b = ec.pi_b.empty() ? grid_pi0_b(spec) : ec.pi_b;

  StudyReport rep;
  rep.tolerance = opts.tolerance;
  auto over_budget = [&] { return opts.step_budget > 0.0 && static_cast<double>(rep.steps) > opts.step_budget; };

  // the homogenized value does not depend on the regime: one solve per (x, t)
  std::map<std::pair<std::vector<double>, double>, FkEstimate> hom;
  for (std::size_t pid = 0; pid < points.size() && !rep.budget_exhausted; ++pid) {
    const auto& pt = points[pid];
    const bool parabolic = pt.t.has_value();
    const std::uint64_t seed = derive_seed(master_seed, pid, 0x5354);
    const auto key = std::make_pair(pt.x, parabolic ? *pt.t : -1.0);
    if (!hom.count(key)) {
      FkOptions o = base;
      o.dt = opts.dt_hom;
      const std::uint64_t hseed = derive_seed(master_seed, hom.size(), 0x48);
      if (parabolic)
        hom[key] = solve_parabolic_hom(params, spec.source_f, spec.boundary_g, *pt.t, pt.x, o, hseed);
      else {
        if (!spec.domain) throw PreconditionError("elliptic study point needs a domain");
        hom[key] = solve_elliptic_hom(params, *spec.domain, spec.source_f, spec.boundary_g, pt.x, o, hseed);
      }
      rep.steps += hom[key].steps;
    }
    const FkEstimate& uh = hom[key];
    for (std::size_t e = 0; e < eps_sorted.size(); ++e) {
      if (over_budget()) {
        rep.budget_exhausted = true;
        break;
      }
      const double eps = eps_sorted[e];
      FkOptions o = base;
      o.dt = std::min(opts.dt_max, opts.dt_factor * eps * eps);
      const std::uint64_t s = derive_seed(seed, e, 0x45);
      StudyRow row;
      row.point_id = pid;
      row.regime = pt.regime;
      row.eps = eps;
      row.u_eps = parabolic ? solve_parabolic_eps(spec, *pt.t, pt.x, pt.regime, eps, o, s)
                            : solve_elliptic_eps(spec, pt.x, pt.regime, eps, o, s);
      row.u_hom = uh;
      row.gap = std::abs(row.u_eps.value - uh.value);
      row.combined_se = std::hypot(row.u_eps.std_error, uh.std_error);
      rep.steps += row.u_eps.steps;
      rep.rows.push_back(std::move(row));
    }
  }

  rep.final_close = !rep.budget_exhausted;
  rep.gaps_decrease = !rep.budget_exhausted;
  for (std::size_t pid = 0; pid < points.size(); ++pid) {
    std::vector<const StudyRow*> mine;
    for (const auto& r : rep.rows)
      if (r.point_id == pid) mine.push_back(&r);
    if (mine.empty()) continue;
    for (std::size_t k = 1; k < mine.size(); ++k)
      if (mine[k]->gap > mine[k - 1]->gap) rep.gaps_decrease = false;
    const auto* last = mine.back();
    if (last->eps != eps_min || last->gap > 3.0 * last->combined_se + opts.tolerance + last->u_eps.bias_bound +
                                                last->u_hom.bias_bound)
      rep.final_close = false;
  }
  rep.regimes_agree = !rep.budget_exhausted;
  for (std::size_t a = 0; a < rep.rows.size(); ++a)
    for (std::size_t b = a + 1; b < rep.rows.size(); ++b) {
      const auto& ra = rep.rows[a];
      const auto& rb = rep.rows[b];
      if (ra.eps != eps_min || rb.eps != eps_min || ra.regime == rb.regime) continue;
      const auto& pa = points[ra.point_id];
      const auto& pb = points[rb.point_id];
      if (pa.x != pb.x || pa.t != pb.t) continue;
      const double se = std::hypot(ra.u_eps.std_error, rb.u_eps.std_error);
      if (std::abs(ra.u_eps.value - rb.u_eps.value) > 3.0 * se + opts.tolerance) rep.regimes_agree = false;
    }
  return rep;
}

void write_study_csv(const StudyReport& report, std::ostream& out) {
  out << "point_id,i,eps,u_eps,u_hom,gap,combined_se\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.point_id, r.regime, r.eps,
                  r.u_eps.value, r.u_hom.value, r.gap, r.combined_se);
    out << buf;
  }
}

nlohmann::json to_json(const FkEstimate& e) {
  return {{"value", e.value},
          {"std_error", e.std_error},
          {"n_paths", e.n_paths},
          {"capped", e.capped},
          {"dt", e.dt},
          {"eps", e.eps},
          {"problem", e.elliptic ? "elliptic" : "parabolic"},
          {"t", e.t},
          {"bias_bound", e.bias_bound},
          {"mean_exit_time", e.mean_exit_time},
          {"steps", e.steps}};
}

nlohmann::json to_json(const StudyReport& report) {
  nlohmann::json j;
  j["budget_exhausted"] = report.budget_exhausted;
  j["final_close"] = report.final_close;
  j["gaps_decrease"] = report.gaps_decrease;
  j["regimes_agree"] = report.regimes_agree;
  j["tolerance"] = report.tolerance;
  j["steps"] = report.steps;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows)
    j["rows"].push_back({{"point_id", r.point_id},
                         {"i", r.regime},
                         {"eps", r.eps},
                         {"u_eps", to_json(r.u_eps)},
                         {"u_hom", to_json(r.u_hom)},
                         {"gap", r.gap},
                         {"combined_se", r.combined_se}});
  return j;
}

}  // namespace homog
