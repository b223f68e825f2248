#include "homog/sde.hpp"

#include "homog/error.hpp"
#include "homog/log.hpp"
#include "homog/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace homog {

// ---------------------------------------------------------------------------
// Switching chain

int ChainPath::state_at(double t) const {
  const auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  if (it == jump_times.begin()) return initial_state;
  return states[static_cast<std::size_t>(it - jump_times.begin()) - 1];
}

double ChainPath::occupation(int state) const {
  double total = 0.0;
  double start = 0.0;
  int current = initial_state;
  for (std::size_t k = 0; k <= jump_times.size(); ++k) {
    const double end = k < jump_times.size() ? jump_times[k] : horizon;
    if (current == state) total += end - start;
    if (k < jump_times.size()) {
      start = end;
      current = states[k];
    }
  }
  return total;
}

double draw_holding(const Eigen::MatrixXd& q, int state, Rng& rng) {
  const double rate = -q(state, state);
  if (!(rate > 0.0)) return std::numeric_limits<double>::infinity();
  return rng.exponential(rate);
}

int draw_next_state(const Eigen::MatrixXd& q, int state, Rng& rng) {
  const double rate = -q(state, state);
  double u = rng.uniform() * rate;
  int last = state;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (j == state || q(state, j) <= 0.0) continue;
    last = static_cast<int>(j);
    u -= q(state, j);
    if (u < 0.0) return last;
  }
  return last;  // rounding at the top end of the cumulative sum
}

ChainPath simulate_chain(const Eigen::MatrixXd& q, int i0, double horizon, Rng& rng) {
  if (horizon < 0.0) throw PreconditionError("simulate_chain: horizon must be nonnegative");
  if (i0 < 0 || i0 >= q.rows()) throw PreconditionError("simulate_chain: initial state out of range");
  ChainPath path;
  path.initial_state = i0;
  path.horizon = horizon;
  int state = i0;
  double t = draw_holding(q, state, rng);
  while (t <= horizon) {
    state = draw_next_state(q, state, rng);
    path.jump_times.push_back(t);
    path.states.push_back(state);
    t += draw_holding(q, state, rng);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Euler-Maruyama stepper

PathSimulator::PathSimulator(const ProblemSpec& spec, double eps, double dt)
    : spec_(spec), eps_(eps), dt_(dt), use_c_(eps != 0.0 && !spec.drift_c.is_zero()) {
  if (!(dt > 0.0)) throw PreconditionError("time step must be positive");
  if (eps < 0.0) throw PreconditionError("eps must be nonnegative");
  const auto d = static_cast<std::size_t>(spec.d);
  x_.resize(d);
  x_prev_.resize(d);
  xw_.resize(d);
  b_.resize(d);
  c_.assign(d, 0.0);
  sigma_.resize(d * static_cast<std::size_t>(spec.m));
  dw_.resize(static_cast<std::size_t>(spec.m));
}

void PathSimulator::start(std::span<const double> x0, int i0, std::uint64_t master_seed,
                          std::uint64_t index) {
  if (static_cast<int>(x0.size()) != spec_.d)
    throw PreconditionError("start point has wrong dimension");
  if (i0 < 0 || i0 >= spec_.n) throw PreconditionError("initial regime out of range");
  chain_ = Rng(derive_seed(master_seed, index, kChainStream));
  brownian_ = Rng(derive_seed(master_seed, index, kBrownianStream));
  aux_ = Rng(derive_seed(master_seed, index, kAuxStream));
  std::copy(x0.begin(), x0.end(), x_.begin());
  std::copy(x0.begin(), x0.end(), x_prev_.begin());
  t_ = 0.0;
  k_ = 0;
  steps_ = 0;
  last_h_ = 0.0;
  regime_ = step_regime_ = i0;
  next_jump_ = draw_holding(spec_.q_matrix, regime_, chain_);
}

void PathSimulator::step(double t_stop) {
  double grid = static_cast<double>(k_ + 1) * dt_;
  bool hits_grid = true;
  double t_next = grid;
  if (t_stop < grid) {
    if (grid - t_stop <= 1e-9 * dt_) {
      t_next = t_stop;  // snap: the stop time is the grid point up to rounding
    } else {
      t_next = t_stop;
      hits_grid = false;
    }
  }
  bool jump = false;
  if (next_jump_ < t_next) {
    t_next = next_jump_;
    hits_grid = false;
    jump = true;
  }
  const double h = t_next - t_;
  if (!(h > 0.0)) throw PreconditionError("step: stop time must lie after the current time");

  std::copy(x_.begin(), x_.end(), xw_.begin());
  wrap_torus_inplace(xw_, spec_.tau);
  spec_.drift_b.eval(xw_, regime_, b_);
  if (use_c_) spec_.drift_c.eval(xw_, regime_, c_);
  spec_.sigma.eval(xw_, regime_, sigma_);
  const double sq = std::sqrt(h);
  for (auto& w : dw_) w = sq * brownian_.normal();
  const std::size_t d = x_.size();
  const std::size_t m = dw_.size();
  std::copy(x_.begin(), x_.end(), x_prev_.begin());
  for (std::size_t k = 0; k < d; ++k) {
    double incr = b_[k] + eps_ * c_[k];
    incr *= h;
    for (std::size_t j = 0; j < m; ++j) incr += sigma_[k * m + j] * dw_[j];
    x_[k] += incr;
  }

  t_ = t_next;
  last_h_ = h;
  ++steps_;
  if (hits_grid) ++k_;
  step_regime_ = regime_;
  if (jump) {
    regime_ = draw_next_state(spec_.q_matrix, regime_, chain_);
    next_jump_ = t_ + draw_holding(spec_.q_matrix, regime_, chain_);
  }
}

void PathSimulator::advance_to(double t_stop) {
  while (t_ < t_stop) step(t_stop);
}

// ---------------------------------------------------------------------------
// Bundles

std::vector<double> PathBundle::terminal_values() const {
  std::vector<double> out;
  out.reserve(paths.size() * static_cast<std::size_t>(d));
  for (const auto& p : paths) {
    const auto pt = p.point(p.size() - 1, d);
    out.insert(out.end(), pt.begin(), pt.end());
  }
  return out;
}

std::vector<double> PathBundle::values_at(double t) const {
  std::vector<double> out;
  out.reserve(paths.size() * static_cast<std::size_t>(d));
  for (const auto& p : paths) {
    const auto it = std::lower_bound(p.t.begin(), p.t.end(), t);
    if (it == p.t.end() || std::abs(*it - t) > 1e-12 * std::max(1.0, std::abs(t)))
      throw PreconditionError("values_at: time " + std::to_string(t) + " is not a recorded time");
    const auto pt = p.point(static_cast<std::size_t>(it - p.t.begin()), d);
    out.insert(out.end(), pt.begin(), pt.end());
  }
  return out;
}

namespace {

PathBundle simulate_fast_clock(const ProblemSpec& spec, double eps, std::span<const double> x0, int i0,
                               double horizon, double dt, std::size_t n_paths,
                               std::uint64_t master_seed, bool record_all,
                               std::vector<double> observe) {
  if (!(dt > 0.0)) throw PreconditionError("dt must be positive");
  if (!(horizon >= 0.0)) throw PreconditionError("horizon must be nonnegative");
  if (horizon > 0.0 && dt > horizon) throw PreconditionError("dt must not exceed the horizon");
  if (static_cast<int>(x0.size()) != spec.d) throw PreconditionError("x0 has wrong dimension");
  if (i0 < 0 || i0 >= spec.n) throw PreconditionError("initial regime out of range");

  observe.push_back(horizon);
  std::sort(observe.begin(), observe.end());
  observe.erase(std::remove_if(observe.begin(), observe.end(),
                               [&](double t) { return !(t > 0.0) || t > horizon; }),
                observe.end());
  observe.erase(std::unique(observe.begin(), observe.end()), observe.end());

  PathBundle bundle;
  bundle.d = spec.d;
  bundle.n = spec.n;
  bundle.eps = eps;
  bundle.dt = dt;
  bundle.clock = Clock::Bar;
  bundle.master_seed = master_seed;
  bundle.paths.resize(n_paths);
  const auto d = static_cast<std::size_t>(spec.d);

  parallel_for(n_paths, [&](std::size_t p) {
    PathSimulator sim(spec, eps, dt);
    sim.start(x0, i0, master_seed, p);
    auto& rec = bundle.paths[p];
    auto push = [&] {
      rec.t.push_back(sim.time());
      rec.x.insert(rec.x.end(), sim.x().begin(), sim.x().end());
      rec.regime.push_back(sim.regime());
    };
    if (record_all) {
      const auto approx = static_cast<std::size_t>(horizon / dt) + 8;
      rec.t.reserve(approx);
      rec.x.reserve(approx * d);
      rec.regime.reserve(approx);
    }
    push();
    for (double stop : observe) {
      while (sim.time() < stop) {
        sim.step(stop);
        if (record_all && sim.time() < stop) push();
      }
      push();
    }
  });
  return bundle;
}

void check_budget(double horizon, double dt, std::size_t n_paths, double budget) {
  if (!(dt > 0.0)) return;
  const double steps = static_cast<double>(n_paths) * horizon / dt;
  if (steps > budget)
    warn("path simulation needs about " + std::to_string(steps) + " Euler steps (budget " +
         std::to_string(budget) + ")");
}

}  // namespace

PathBundle simulate_bar_paths(const ProblemSpec& spec, double eps, std::span<const double> x0, int i0,
                              double horizon, double dt, std::size_t n_paths,
                              std::uint64_t master_seed, const PathOptions& opts) {
  check_budget(horizon, dt, n_paths, opts.step_budget);
  return simulate_fast_clock(spec, eps, x0, i0, horizon, dt, n_paths, master_seed, opts.record_all,
                             opts.observe);
}

PathBundle simulate_eps_paths(const ProblemSpec& spec, double eps, std::span<const double> x0, int i0,
                              double horizon, double dt, std::size_t n_paths,
                              std::uint64_t master_seed, const PathOptions& opts) {
  if (!(eps > 0.0)) throw PreconditionError("simulate_eps_paths: eps must be positive");
  check_budget(horizon, dt, n_paths, opts.step_budget);
  const double e2 = eps * eps;
  std::vector<double> xbar(x0.begin(), x0.end());
  for (auto& v : xbar) v /= eps;
  std::vector<double> observe = opts.observe;
  for (auto& t : observe) t /= e2;
  PathBundle bundle = simulate_fast_clock(spec, eps, xbar, i0, horizon / e2, dt / e2, n_paths,
                                          master_seed, opts.record_all, std::move(observe));
  for (auto& rec : bundle.paths) {
    for (auto& t : rec.t) t *= e2;
    for (auto& v : rec.x) v *= eps;
  }
  bundle.clock = Clock::Eps;
  bundle.dt = dt;
  return bundle;
}

std::vector<std::vector<double>> killing_integral(const PathBundle& bundle, const ProblemSpec& spec) {
  std::vector<std::vector<double>> out(bundle.size());
  const bool eps_clock = bundle.clock == Clock::Eps;
  const bool constant = spec.killing_e.is_x_independent();
  parallel_for(bundle.size(), [&](std::size_t p) {
    const auto& rec = bundle.paths[p];
    auto& z = out[p];
    z.assign(rec.size(), 0.0);
    std::vector<double> y(static_cast<std::size_t>(bundle.d));
    auto e_at = [&](std::size_t k, int regime) {
      const auto pt = rec.point(k, bundle.d);
      for (std::size_t j = 0; j < y.size(); ++j) y[j] = eps_clock ? pt[j] / bundle.eps : pt[j];
      wrap_torus_inplace(y, spec.tau);
      return spec.killing_e.eval_scalar(y, regime);
    };
    for (std::size_t k = 1; k < rec.size(); ++k) {
      const int r = rec.regime[k - 1];
      const double h = rec.t[k] - rec.t[k - 1];
      const double left = e_at(k - 1, r);
      // constant rates integrate exactly as e*h
      const double right = constant ? left : e_at(k, r);
      z[k] = z[k - 1] + 0.5 * (left + right) * h;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Binary and CSV export

namespace {

constexpr char kMagic[4] = {'H', 'M', 'G', 'B'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw SpecError("path bundle: unexpected end of input");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void write_bundle(const PathBundle& bundle, std::ostream& out) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.d));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.n));
  put<std::uint32_t>(out, bundle.clock == Clock::Eps ? 1u : 0u);
  put<std::uint64_t>(out, bundle.size());
  put<double>(out, bundle.eps);
  put<double>(out, bundle.dt);
  put<std::uint64_t>(out, bundle.master_seed);
  for (const auto& rec : bundle.paths) {
    put<std::uint64_t>(out, rec.size());
    for (std::size_t k = 0; k < rec.size(); ++k) {
      put<double>(out, rec.t[k]);
      for (double v : rec.point(k, bundle.d)) put<double>(out, v);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.regime[k]));
    }
  }
}

PathBundle read_bundle(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw SpecError("path bundle: bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw SpecError("path bundle: unsupported version");
  PathBundle b;
  b.d = static_cast<int>(get<std::uint32_t>(in));
  b.n = static_cast<int>(get<std::uint32_t>(in));
  b.clock = get<std::uint32_t>(in) == 1u ? Clock::Eps : Clock::Bar;
  const auto count = get<std::uint64_t>(in);
  b.eps = get<double>(in);
  b.dt = get<double>(in);
  b.master_seed = get<std::uint64_t>(in);
  b.paths.resize(count);
  for (auto& rec : b.paths) {
    const auto len = get<std::uint64_t>(in);
    rec.t.resize(len);
    rec.x.resize(len * static_cast<std::size_t>(b.d));
    rec.regime.resize(len);
    for (std::size_t k = 0; k < len; ++k) {
      rec.t[k] = get<double>(in);
      for (int j = 0; j < b.d; ++j) rec.x[k * static_cast<std::size_t>(b.d) + j] = get<double>(in);
      rec.regime[k] = static_cast<int>(get<std::uint32_t>(in));
    }
  }
  return b;
}

void write_bundle_csv(const PathBundle& bundle, std::ostream& out, std::span<const std::size_t> which) {
  out << "path,t";
  for (int j = 0; j < bundle.d; ++j) out << ",x" << j;
  out << ",regime\n";
  char buf[64];
  for (std::size_t p : which) {
    if (p >= bundle.size()) throw PreconditionError("write_bundle_csv: path index out of range");
    const auto& rec = bundle.paths[p];
    for (std::size_t k = 0; k < rec.size(); ++k) {
      out << p;
      std::snprintf(buf, sizeof buf, ",%.17g", rec.t[k]);
      out << buf;
      for (double v : rec.point(k, bundle.d)) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        out << buf;
      }
      out << ',' << rec.regime[k] << '\n';
    }
  }
}

}  // namespace homog
