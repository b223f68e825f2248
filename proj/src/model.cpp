#include "homog/model.hpp"

#include "homog/error.hpp"
#include "homog/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace homog {

void wrap_torus_inplace(std::span<double> x, std::span<const double> tau) {
  for (std::size_t k = 0; k < x.size(); ++k) {
    double r = x[k] - tau[k] * std::floor(x[k] / tau[k]);
    // Rounding can land exactly on tau for tiny negative inputs.
    if (r >= tau[k]) r -= tau[k];
    if (r < 0.0) r = 0.0;
    x[k] = r;
  }
}

std::vector<double> wrap_torus(std::span<const double> x, std::span<const double> tau) {
  std::vector<double> out(x.begin(), x.end());
  wrap_torus_inplace(out, tau);
  return out;
}

// ---------------------------------------------------------------------------
// TrigPolynomial

TrigPolynomial::TrigPolynomial(double constant, std::vector<Term> terms,
                               std::span<const double> tau)
    : constant_(constant), terms_(std::move(terms)) {
  wavevectors_.reserve(terms_.size() * tau.size());
  for (const auto& t : terms_) {
    if (t.k.size() != tau.size())
      throw SpecError("trigonometric term has wavevector of length " +
                      std::to_string(t.k.size()) + ", expected " + std::to_string(tau.size()));
    for (std::size_t j = 0; j < tau.size(); ++j)
      wavevectors_.push_back(2.0 * std::numbers::pi * t.k[j] / tau[j]);
  }
}

TrigPolynomial TrigPolynomial::constant(double value) {
  TrigPolynomial p;
  p.constant_ = value;
  return p;
}

double TrigPolynomial::operator()(std::span<const double> x) const {
  double v = constant_;
  const std::size_t d = x.size();
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    double phase = 0.0;
    for (std::size_t j = 0; j < d; ++j) phase += wavevectors_[t * d + j] * x[j];
    const auto& term = terms_[t];
    if (term.cos_coef != 0.0) v += term.cos_coef * std::cos(phase);
    if (term.sin_coef != 0.0) v += term.sin_coef * std::sin(phase);
  }
  return v;
}

bool TrigPolynomial::is_zero() const {
  if (constant_ != 0.0) return false;
  return std::all_of(terms_.begin(), terms_.end(), [](const Term& t) {
    return t.cos_coef == 0.0 && t.sin_coef == 0.0;
  });
}

bool TrigPolynomial::is_constant() const {
  return std::all_of(terms_.begin(), terms_.end(), [](const Term& t) {
    const bool k_zero = std::all_of(t.k.begin(), t.k.end(), [](int k) { return k == 0; });
    return k_zero || (t.cos_coef == 0.0 && t.sin_coef == 0.0);
  });
}

int TrigPolynomial::max_frequency(std::size_t dim) const {
  int best = 0;
  for (const auto& t : terms_)
    if ((t.cos_coef != 0.0 || t.sin_coef != 0.0) && dim < t.k.size())
      best = std::max(best, std::abs(t.k[dim]));
  return best;
}

// ---------------------------------------------------------------------------
// PeriodicField

PeriodicField PeriodicField::zero(int dim, int regimes) {
  PeriodicField f;
  f.dim_ = dim;
  f.regimes_ = regimes;
  f.table_.assign(regimes, std::vector<TrigPolynomial>(dim));
  return f;
}

PeriodicField PeriodicField::constant(std::vector<std::vector<double>> per_regime) {
  std::vector<std::vector<TrigPolynomial>> table;
  int dim = per_regime.empty() ? 0 : static_cast<int>(per_regime.front().size());
  for (const auto& row : per_regime) {
    std::vector<TrigPolynomial> comps;
    for (double v : row) comps.push_back(TrigPolynomial::constant(v));
    table.push_back(std::move(comps));
  }
  return trig(dim, std::move(table));
}

PeriodicField PeriodicField::trig(int dim, std::vector<std::vector<TrigPolynomial>> per_regime) {
  PeriodicField f;
  f.dim_ = dim;
  f.regimes_ = static_cast<int>(per_regime.size());
  for (const auto& row : per_regime) {
    if (static_cast<int>(row.size()) != dim)
      throw SpecError("periodic field has " + std::to_string(row.size()) +
                      " components in some regime, expected " + std::to_string(dim));
    for (const auto& p : row) {
      if (!p.is_zero()) f.zero_ = false;
      if (!p.is_constant()) f.x_independent_ = false;
    }
  }
  f.table_ = std::move(per_regime);
  return f;
}

PeriodicField PeriodicField::custom(int dim, int regimes, Callback fn, int max_frequency,
                                    bool x_independent) {
  PeriodicField f;
  f.dim_ = dim;
  f.regimes_ = regimes;
  f.zero_ = false;
  f.x_independent_ = x_independent;
  f.custom_max_freq_ = max_frequency;
  f.callback_ = std::move(fn);
  return f;
}

void PeriodicField::eval(std::span<const double> x, int regime, std::span<double> out) const {
  if (callback_) {
    callback_(x, regime, out);
    return;
  }
  const auto& row = table_[static_cast<std::size_t>(regime)];
  for (int k = 0; k < dim_; ++k) out[k] = row[k](x);
}

double PeriodicField::eval_scalar(std::span<const double> x, int regime) const {
  double v = 0.0;
  eval(x, regime, std::span<double>(&v, 1));
  return v;
}

int PeriodicField::max_frequency(std::size_t axis) const {
  if (callback_) return custom_max_freq_;
  int best = 0;
  for (const auto& row : table_)
    for (const auto& p : row) best = std::max(best, p.max_frequency(axis));
  return best;
}

// ---------------------------------------------------------------------------
// ScalarFunction

ScalarFunction ScalarFunction::constant(int d, double value) {
  return polynomial(d, {Monomial{value, std::vector<int>(d, 0)}});
}

ScalarFunction ScalarFunction::polynomial(int d, std::vector<Monomial> terms) {
  for (const auto& t : terms)
    if (static_cast<int>(t.powers.size()) != d)
      throw SpecError("polynomial monomial has " + std::to_string(t.powers.size()) +
                      " powers, expected " + std::to_string(d));
  ScalarFunction f;
  f.d_ = d;
  f.terms_ = std::move(terms);
  return f;
}

ScalarFunction ScalarFunction::ball(std::span<const double> center, double radius) {
  const int d = static_cast<int>(center.size());
  std::vector<Monomial> terms;
  double c0 = -radius * radius;
  for (int j = 0; j < d; ++j) {
    std::vector<int> p2(d, 0), p1(d, 0);
    p2[j] = 2;
    p1[j] = 1;
    terms.push_back({1.0, p2});
    if (center[j] != 0.0) terms.push_back({-2.0 * center[j], p1});
    c0 += center[j] * center[j];
  }
  terms.push_back({c0, std::vector<int>(d, 0)});
  return polynomial(d, std::move(terms));
}

ScalarFunction ScalarFunction::custom(int d, Callback fn, GradCallback grad) {
  ScalarFunction f;
  f.d_ = d;
  f.fn_ = std::move(fn);
  f.grad_ = std::move(grad);
  return f;
}

double ScalarFunction::operator()(std::span<const double> x) const {
  if (fn_) return fn_(x);
  double v = 0.0;
  for (const auto& t : terms_) {
    double m = t.coef;
    for (int j = 0; j < d_; ++j)
      for (int p = 0; p < t.powers[j]; ++p) m *= x[j];
    v += m;
  }
  return v;
}

void ScalarFunction::gradient(std::span<const double> x, std::span<double> out) const {
  if (fn_) {
    if (grad_) {
      grad_(x, out);
      return;
    }
    // central differences for callbacks without an analytic gradient
    std::vector<double> xp(x.begin(), x.end());
    for (int j = 0; j < d_; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
      xp[j] = x[j] + h;
      const double fp = fn_(xp);
      xp[j] = x[j] - h;
      const double fm = fn_(xp);
      xp[j] = x[j];
      out[j] = (fp - fm) / (2.0 * h);
    }
    return;
  }
  for (int j = 0; j < d_; ++j) out[j] = 0.0;
  for (const auto& t : terms_) {
    for (int j = 0; j < d_; ++j) {
      if (t.powers[j] == 0) continue;
      double m = t.coef * t.powers[j];
      for (int l = 0; l < d_; ++l) {
        const int p = (l == j) ? t.powers[l] - 1 : t.powers[l];
        for (int q = 0; q < p; ++q) m *= x[l];
      }
      out[j] += m;
    }
  }
}

bool ScalarFunction::is_constant() const {
  if (fn_) return false;
  return std::all_of(terms_.begin(), terms_.end(), [](const Monomial& m) {
    return m.coef == 0.0 ||
           std::all_of(m.powers.begin(), m.powers.end(), [](int p) { return p == 0; });
  });
}

// ---------------------------------------------------------------------------
// LevelSetDomain

double LevelSetDomain::boundary_distance(std::span<const double> x,
                                         std::span<double> normal_out) const {
  level.gradient(x, normal_out);
  double norm = 0.0;
  for (double g : normal_out) norm += g * g;
  norm = std::sqrt(norm);
  if (norm <= 0.0) return std::numeric_limits<double>::infinity();
  for (double& g : normal_out) g /= norm;
  return -level(x) / norm;
}

void LevelSetDomain::project_to_boundary(std::span<double> x) const {
  std::vector<double> grad(x.size());
  for (int it = 0; it < 50; ++it) {
    const double v = level(x);
    level.gradient(x, grad);
    double g2 = 0.0;
    for (double g : grad) g2 += g * g;
    if (g2 <= 0.0) return;
    for (std::size_t j = 0; j < x.size(); ++j) x[j] -= v * grad[j] / g2;
    if (std::abs(v) <= 1e-14 * std::max(1.0, std::sqrt(g2))) return;
  }
}

// ---------------------------------------------------------------------------
// ProblemSpec

void ProblemSpec::finalize() {
  if (d < 1) throw SpecError("d must be positive");
  if (m < 1) throw SpecError("m must be positive");
  if (n < 1) throw SpecError("n must be positive");
  if (static_cast<int>(tau.size()) != d)
    throw SpecError("tau has " + std::to_string(tau.size()) + " entries, expected d = " +
                    std::to_string(d));
  for (double t : tau)
    if (!(t > 0.0)) throw SpecError("tau components must be strictly positive");
  auto check_field = [&](const PeriodicField& f, int dim, const char* name) {
    if (f.dim() != dim || f.regimes() != n)
      throw SpecError(std::string(name) + " has shape (" + std::to_string(f.regimes()) +
                      " regimes x " + std::to_string(f.dim()) + "), expected (" +
                      std::to_string(n) + " x " + std::to_string(dim) + ")");
  };
  if (drift_c.dim() == 0) drift_c = PeriodicField::zero(d, n);
  if (killing_e.dim() == 0) killing_e = PeriodicField::zero(1, n);
  check_field(drift_b, d, "drift_b");
  check_field(drift_c, d, "drift_c");
  check_field(sigma, d * m, "sigma");
  check_field(killing_e, 1, "killing_e");
  if (n == 1) {
    q_matrix = Eigen::MatrixXd::Zero(1, 1);
  } else if (q_matrix.rows() != n || q_matrix.cols() != n) {
    throw SpecError("q_matrix must be " + std::to_string(n) + "x" + std::to_string(n));
  }
  if (domain) {
    if (domain->level.dim() != d) throw SpecError("domain level-set function has wrong dimension");
    if (static_cast<int>(domain->bbox.lo.size()) != d ||
        static_cast<int>(domain->bbox.hi.size()) != d)
      throw SpecError("domain bounding box has wrong dimension");
    if (!(domain->delta > 0.0)) throw SpecError("domain delta must be positive");
  }
  if (source_f && source_f->dim() != d) throw SpecError("source_f has wrong dimension");
  if (boundary_g && boundary_g->dim() != d) throw SpecError("boundary_g has wrong dimension");
}

void eval_local(const ProblemSpec& spec, std::span<const double> x, int regime,
                LocalCoefficients& out) {
  const auto d = static_cast<std::size_t>(spec.d);
  const auto m = static_cast<std::size_t>(spec.m);
  out.b.resize(d);
  out.c.resize(d);
  out.sigma.resize(d * m);
  out.a.assign(d * d, 0.0);
  spec.drift_b.eval(x, regime, out.b);
  spec.drift_c.eval(x, regime, out.c);
  spec.sigma.eval(x, regime, out.sigma);
  out.e = spec.killing_e.eval_scalar(x, regime);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t s = 0; s < d; ++s) {
      double v = 0.0;
      for (std::size_t k = 0; k < m; ++k) v += out.sigma[r * m + k] * out.sigma[s * m + k];
      out.a[r * d + s] = v;
    }
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

const ValidationCheck* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

bool q_irreducible(const Eigen::MatrixXd& q) {
  const auto n = q.rows();
  if (n <= 1) return true;
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Index> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double rate = transpose ? q(j, i) : q(i, j);
        if (j != i && rate > 0.0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          stack.push_back(j);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char s) { return s != 0; });
  };
  // strongly connected iff node 0 reaches everyone and everyone reaches node 0
  return reach_all(false) && reach_all(true);
}

namespace {

std::string fmt_point(std::span<const double> x) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ")";
  return os.str();
}

std::vector<double> sample_cell(Rng& rng, std::span<const double> tau) {
  std::vector<double> x(tau.size());
  for (std::size_t j = 0; j < tau.size(); ++j) x[j] = rng.uniform() * tau[j];
  return x;
}

double min_eigenvalue(std::span<const double> a, int d) {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(
      a.data(), d, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(A), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

ValidationCheck check_q_generator(const ProblemSpec& spec, double tol) {
  ValidationCheck c{"q_generator", true, "", 0.0, {}, -1};
  const auto& q = spec.q_matrix;
  double worst_row = 0.0;
  double most_negative = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    worst_row = std::max(worst_row, std::abs(q.row(i).sum()));
    for (Eigen::Index j = 0; j < q.cols(); ++j)
      if (i != j && q(i, j) < most_negative) {
        most_negative = q(i, j);
        if (c.passed || q(i, j) < -tol) {
          c.passed = false;
          c.detail = "negative off-diagonal rate q[" + std::to_string(i) + "][" +
                     std::to_string(j) + "] = " + std::to_string(q(i, j));
          c.witness_regime = static_cast<int>(i);
        }
      }
  }
  c.measured = std::max(worst_row, -most_negative);
  if (c.passed && worst_row > tol) {
    c.passed = false;
    c.detail = "row sums of Q deviate from zero by " + std::to_string(worst_row);
  }
  if (c.passed) c.detail = "off-diagonal rates nonnegative, rows sum to zero";
  return c;
}

}  // namespace

KillingSup sample_killing_sup(const ProblemSpec& spec, std::size_t samples, std::uint64_t seed) {
  KillingSup best;
  best.sup_e = -std::numeric_limits<double>::infinity();
  Rng rng(derive_seed(seed, 0, 0xE));
  const std::size_t per_regime = std::max<std::size_t>(1, samples / spec.n);
  // a regular lattice catches extrema located at symmetric points
  const int lattice = spec.d == 1 ? 256 : (spec.d == 2 ? 32 : 4);
  std::vector<int> idx(spec.d, 0);
  std::vector<double> x(spec.d);
  for (int i = 0; i < spec.n; ++i) {
    auto consider = [&](const std::vector<double>& p) {
      const double v = spec.killing_e.eval_scalar(p, i);
      if (v > best.sup_e) {
        best.sup_e = v;
        best.witness_x = p;
        best.witness_regime = i;
      }
    };
    std::fill(idx.begin(), idx.end(), 0);
    for (;;) {
      for (int j = 0; j < spec.d; ++j) x[j] = spec.tau[j] * idx[j] / lattice;
      consider(x);
      int j = 0;
      while (j < spec.d && ++idx[j] == lattice) idx[j++] = 0;
      if (j == spec.d) break;
    }
    for (std::size_t s = 0; s < per_regime; ++s) consider(sample_cell(rng, spec.tau));
  }
  return best;
}

ValidationReport validate_spec(const ProblemSpec& spec, const ValidationOptions& opts) {
  ValidationReport report;
  const int d = spec.d;
  report.checks.push_back(check_q_generator(spec, opts.q_tol));

  {
    ValidationCheck c{"q_irreducible", q_irreducible(spec.q_matrix), "", 0.0, {}, -1};
    c.detail = spec.n == 1 ? "single regime, Q = 0 (vacuous)"
                           : (c.passed ? "directed rate graph is strongly connected"
                                       : "some regime cannot be reached from another");
    c.measured = c.passed ? 1.0 : 0.0;
    report.checks.push_back(c);
  }

  const std::size_t per_regime = std::max<std::size_t>(1, opts.samples / spec.n);
  LocalCoefficients loc;

  {
    Rng rng(derive_seed(opts.seed, 0, 0xA));
    ValidationCheck c{"ellipticity", true, "", std::numeric_limits<double>::infinity(), {}, -1};
    for (int i = 0; i < spec.n; ++i)
      for (std::size_t s = 0; s < per_regime; ++s) {
        const auto x = sample_cell(rng, spec.tau);
        eval_local(spec, x, i, loc);
        const double lam = min_eigenvalue(loc.a, d);
        if (lam < c.measured) {
          c.measured = lam;
          c.witness_x = x;
          c.witness_regime = i;
        }
      }
    c.passed = c.measured >= opts.ellipticity_floor;
    c.detail = "min over samples of min eigenvalue of sigma sigma^T = " +
               std::to_string(c.measured) + " at x = " + fmt_point(c.witness_x) +
               ", regime " + std::to_string(c.witness_regime);
    report.checks.push_back(c);
  }

  {
    Rng rng(derive_seed(opts.seed, 0, 0xB));
    ValidationCheck c{"periodicity", true, "", 0.0, {}, -1};
    LocalCoefficients shifted;
    for (int i = 0; i < spec.n; ++i)
      for (std::size_t s = 0; s < per_regime; ++s) {
        const auto x = sample_cell(rng, spec.tau);
        auto xs = x;
        for (int j = 0; j < d; ++j)
          xs[j] += spec.tau[j] * (static_cast<int>(rng.uniform() * 7.0) - 3);
        eval_local(spec, x, i, loc);
        eval_local(spec, xs, i, shifted);
        double diff = std::abs(loc.e - shifted.e);
        double scale = 1.0 + std::abs(loc.e);
        for (std::size_t k = 0; k < loc.b.size(); ++k) {
          diff = std::max({diff, std::abs(loc.b[k] - shifted.b[k]), std::abs(loc.c[k] - shifted.c[k])});
          scale = std::max({scale, 1.0 + std::abs(loc.b[k]), 1.0 + std::abs(loc.c[k])});
        }
        for (std::size_t k = 0; k < loc.sigma.size(); ++k) {
          diff = std::max(diff, std::abs(loc.sigma[k] - shifted.sigma[k]));
          scale = std::max(scale, 1.0 + std::abs(loc.sigma[k]));
        }
        const double rel = diff / scale;
        if (rel > c.measured) {
          c.measured = rel;
          c.witness_x = x;
          c.witness_regime = i;
        }
      }
    c.passed = c.measured <= opts.periodicity_tol;
    c.detail = "max relative change of b, c, sigma, e under lattice shifts = " +
               std::to_string(c.measured);
    if (c.passed) {
      c.witness_x.clear();
      c.witness_regime = -1;
    }
    report.checks.push_back(c);
  }

  if (spec.domain) {
    const auto sup = sample_killing_sup(spec, opts.samples, opts.seed);
    ValidationCheck c{"killing_negative", sup.sup_e < 0.0, "", -sup.sup_e, {}, -1};
    c.detail = "sup of e over samples = " + std::to_string(sup.sup_e) +
               (c.passed ? " (alpha = " + std::to_string(-sup.sup_e) + ")" : " exceeds 0") +
               " at x = " + fmt_point(sup.witness_x) + ", regime " +
               std::to_string(sup.witness_regime);
    if (!c.passed) {
      c.witness_x = sup.witness_x;
      c.witness_regime = sup.witness_regime;
    }
    report.checks.push_back(c);

    const auto& dom = *spec.domain;
    Rng rng(derive_seed(opts.seed, 0, 0xC));
    {
      // bounded: the level-set function must be nonnegative on the bbox faces
      ValidationCheck b{"domain_in_bbox", true, "", 0.0, {}, -1};
      double worst = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < std::max<std::size_t>(64, opts.samples / 10); ++s) {
        std::vector<double> x(d);
        for (int j = 0; j < d; ++j)
          x[j] = dom.bbox.lo[j] + rng.uniform() * (dom.bbox.hi[j] - dom.bbox.lo[j]);
        const int face = static_cast<int>(rng.uniform() * 2 * d);
        x[face / 2] = (face % 2 == 0) ? dom.bbox.lo[face / 2] : dom.bbox.hi[face / 2];
        const double v = dom.level(x);
        if (v < worst) {
          worst = v;
          b.witness_x = x;
        }
      }
      b.measured = worst;
      b.passed = worst >= 0.0;
      b.detail = "min of level-set function on bounding-box faces = " + std::to_string(worst);
      if (b.passed) b.witness_x.clear();
      report.checks.push_back(b);
    }
    {
      ValidationCheck g{"boundary_gradient", true, "", std::numeric_limits<double>::infinity(), {}, -1};
      std::vector<double> grad(d);
      std::size_t found = 0;
      for (std::size_t s = 0; s < std::max<std::size_t>(64, opts.samples / 10); ++s) {
        std::vector<double> x(d);
        for (int j = 0; j < d; ++j)
          x[j] = dom.bbox.lo[j] + rng.uniform() * (dom.bbox.hi[j] - dom.bbox.lo[j]);
        dom.project_to_boundary(x);
        if (!(std::abs(dom.level(x)) < 1e-8)) continue;
        ++found;
        dom.level.gradient(x, grad);
        double norm = 0.0;
        for (double v : grad) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < g.measured) {
          g.measured = norm;
          g.witness_x = x;
        }
      }
      g.passed = found > 0 && g.measured >= dom.delta;
      g.detail = found == 0 ? "no boundary points found by projection"
                            : "min |grad d| over " + std::to_string(found) +
                                  " boundary points = " + std::to_string(g.measured) +
                                  " (delta = " + std::to_string(dom.delta) + ")";
      if (g.passed) g.witness_x.clear();
      report.checks.push_back(g);
    }
  }

  if (spec.growth) {
    ValidationCheck c{"growth_exponent", spec.growth->kappa >= 0.0 && spec.growth->kappa < 2.0,
                      "", spec.growth->kappa, {}, -1};
    c.detail = "kappa = " + std::to_string(spec.growth->kappa) + " (required 0 <= kappa < 2)";
    report.checks.push_back(c);
  }
  return report;
}

}  // namespace homog
