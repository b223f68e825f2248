#include "helpers.hpp"
#include "oracles.hpp"

#include "homog/cell.hpp"
#include "homog/error.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace homog;

namespace {

constexpr double kPi = std::numbers::pi;

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

void check_measure(const GeneratorMatrix& G, const InvariantMeasure& pi) {
  double total = 0.0;
  for (double w : pi.weights) {
    CHECK(w >= 0.0);
    total += w;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(pi.residual <= 1e-8);
  CHECK(G.max_row_sum <= 1e-10);
}

}  // namespace

TEST_CASE("TorusGrid index arithmetic") {
  TorusGrid g({4, 3}, {1.0, 2.0}, 2);
  CHECK(g.points() == 12);
  CHECK(g.unknowns() == 24);
  for (std::size_t s = 0; s < g.points(); ++s) {
    const auto m = g.multi_index(s);
    CHECK(g.spatial_index(m) == s);
    for (int i = 0; i < 2; ++i) {
      CHECK(g.spatial_of(g.index(s, i)) == s);
      CHECK(g.regime_of(g.index(s, i)) == i);
    }
  }
  const std::vector<int> m{3, 2};
  const auto s = g.spatial_index(m);
  CHECK(g.multi_index(g.shifted(s, 0, 1)) == std::vector<int>{0, 2});
  CHECK(g.multi_index(g.shifted(s, 1, 1)) == std::vector<int>{3, 0});
  CHECK(g.multi_index(g.shifted(s, 1, -3)) == std::vector<int>{3, 2});
  CHECK(g.point(s)[1] == doctest::Approx(2.0 * 2.0 / 3.0));
}

TEST_CASE("discretize_generator structure") {
  SUBCASE("periodic Laplacian stencil") {
    auto s = testing::constant_spec(1, 1, 1, {{0}}, {{0}}, {{1}}, {0}, Eigen::MatrixXd::Zero(1, 1));
    auto G = discretize_generator(s, TorusGrid({4}, {1.0}, 1), 0.0);
    Eigen::MatrixXd dense(G.matrix);
    Eigen::MatrixXd expect(4, 4);
    expect << -16, 8, 0, 8, 8, -16, 8, 0, 0, 8, -16, 8, 8, 0, 8, -16;
    CHECK((dense - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("x-independent coefficients: diffusion blocks plus I (x) Q") {
    Eigen::MatrixXd q = testing::q2(1.0, 3.0);
    auto s = testing::constant_spec(1, 1, 2, {{0}, {0}}, {{0}, {0}}, {{1}, {2}}, {0, 0}, q);
    TorusGrid grid({5}, {1.0}, 2);
    Eigen::MatrixXd dense(discretize_generator(s, grid, 0.0).matrix);
    const double h2 = 0.04;
    for (std::size_t sp = 0; sp < 5; ++sp)
      for (int i = 0; i < 2; ++i) {
        const auto r = static_cast<Eigen::Index>(grid.index(sp, i));
        const double D = i == 0 ? 0.5 : 2.0;
        CHECK(dense(r, r) == doctest::Approx(-2.0 * D / h2 + q(i, i)));
        CHECK(dense(r, static_cast<Eigen::Index>(grid.index(sp, 1 - i))) == doctest::Approx(q(i, 1 - i)));
        CHECK(dense(r, static_cast<Eigen::Index>(grid.index(grid.shifted(sp, 0, 1), i))) ==
              doctest::Approx(D / h2));
      }
  }
  SUBCASE("row sums vanish for the sine drift") {
    auto s = testing::sine_spec(1.0);
    for (auto scheme : {DriftScheme::Upwind, DriftScheme::Central, DriftScheme::ExponentialFitted}) {
      auto G = discretize_generator(s, TorusGrid({64}, {1.0}, 1), 0.0, {.scheme = scheme});
      CHECK(G.max_row_sum <= 1e-12);
    }
  }
  SUBCASE("two-dimensional fixture: row sums and signs") {
    auto s = testing::load("anisotropic_2d.json");
    for (auto scheme : {DriftScheme::Upwind, DriftScheme::ExponentialFitted}) {
      auto G = discretize_generator(s, TorusGrid({32, 32}, {1.0, 2.0}, 2), 0.5, {.scheme = scheme});
      CHECK(G.max_row_sum <= 1e-10);
      CHECK(G.min_off_diagonal >= 0.0);
    }
  }
  SUBCASE("cross-derivative sign violation names the stencil") {
    auto s = testing::constant_spec(2, 2, 1, {{0, 0}}, {{0, 0}}, {{1, 0, 0.99, std::sqrt(1 - 0.99 * 0.99)}}, {0},
                                    Eigen::MatrixXd::Zero(1, 1));
    s.tau = {1.0, 2.0};
    try {
      discretize_generator(s, TorusGrid({16, 16}, {1.0, 2.0}, 1), 0.0);
      FAIL("expected SolverError");
    } catch (const SolverError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("sign condition") != std::string::npos);
      CHECK(msg.find("regime 0") != std::string::npos);
    }
  }
  SUBCASE("under-resolved grid is rejected") {
    auto s = testing::sine_spec(1.0);
    const std::vector<double> tau{1.0};
    s.drift_b = PeriodicField::trig(1, {{TrigPolynomial(0.0, {{{3}, 0.0, 1.0}}, tau)}});
    CHECK_THROWS_AS(discretize_generator(s, TorusGrid({6}, {1.0}, 1), 0.0), PreconditionError);
    CHECK_NOTHROW(discretize_generator(s, TorusGrid({7}, {1.0}, 1), 0.0));
  }
}

TEST_CASE("stationary_measure") {
  SUBCASE("uniform for Brownian motion") {
    auto s = testing::constant_spec(2, 2, 1, {{0, 0}}, {{0, 0}}, {{1, 0, 0, 1}}, {0}, Eigen::MatrixXd::Zero(1, 1));
    auto G = discretize_generator(s, TorusGrid({8, 8}, {1.0, 1.0}, 1), 0.0);
    auto pi = stationary_measure(G);
    check_measure(G, pi);
    for (double w : pi.weights) CHECK(w == doctest::Approx(1.0 / 64).epsilon(1e-12));
  }
  SUBCASE("regime marginal from the null space of Q^T") {
    auto s = testing::constant_spec(1, 1, 2, {{0}, {0}}, {{0}, {0}}, {{1}, {1.5}}, {0, 0}, testing::q2(1.0, 3.0));
    auto G = discretize_generator(s, TorusGrid({10}, {1.0}, 2), 0.0);
    auto pi = stationary_measure(G);
    check_measure(G, pi);
    const auto marg = pi.regime_marginal();
    CHECK(marg[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(marg[1] == doctest::Approx(0.25).epsilon(1e-12));
    for (std::size_t u = 0; u < pi.weights.size(); ++u)
      CHECK(pi.weights[u] == doctest::Approx(marg[static_cast<std::size_t>(pi.grid.regime_of(u))] / 10).epsilon(1e-10));
  }
  SUBCASE("Gibbs density with second-order convergence") {
    auto s = testing::load("gibbs.json");
    auto V = [](double x) { return std::cos(2 * kPi * x); };
    std::vector<double> errs;
    for (int cells : {64, 128, 256, 512}) {
      auto G = discretize_generator(s, TorusGrid({cells}, {1.0}, 1), 0.0);
      auto pi = stationary_measure(G);
      check_measure(G, pi);
      const auto ref = oracle::gibbs_weights(V, cells);
      // compare densities (weights times cell count)
      errs.push_back(max_abs_diff(pi.weights, ref) * cells);
    }
    for (std::size_t k = 1; k < errs.size(); ++k) {
      const double order = std::log2(errs[k - 1] / errs[k]);
      MESSAGE("Gibbs density error " << errs[k] << ", observed order " << order);
      CHECK(order >= 1.5);
    }
  }
  SUBCASE("disconnected regimes are singular beyond rank one") {
    auto s = testing::constant_spec(1, 1, 2, {{0}, {0}}, {{0}, {0}}, {{1}, {1}}, {0, 0}, Eigen::MatrixXd::Zero(2, 2));
    auto G = discretize_generator(s, TorusGrid({8}, {1.0}, 2), 0.0);
    CHECK_THROWS_AS(stationary_measure(G), SolverError);
  }
  SUBCASE("fixtures satisfy the measure invariants") {
    for (const char* name : {"benchmark.json", "harmonic_mean.json", "gibbs.json"}) {
      auto s = testing::load(name);
      auto G = discretize_generator(s, TorusGrid({256}, {1.0}, s.n), 0.0);
      check_measure(G, stationary_measure(G));
    }
    auto s = testing::load("anisotropic_2d.json");
    auto G = discretize_generator(s, TorusGrid({32, 32}, {1.0, 2.0}, 2), 0.0);
    check_measure(G, stationary_measure(G));
  }
}

TEST_CASE("solve_corrector") {
  SUBCASE("constant drift has zero corrector") {
    auto s = testing::constant_spec(2, 2, 2, {{0.3, -1}, {0.3, -1}}, {{0, 0}, {0, 0}}, {{1, 0, 0, 1}, {2, 0, 0, 1}},
                                    {0, 0}, testing::q2(1, 2));
    TorusGrid grid({8, 8}, {1.0, 1.0}, 2);
    auto G = discretize_generator(s, grid, 0.0);
    auto pi = stationary_measure(G);
    auto c = solve_corrector(G, s, pi);
    for (double v : c.beta) CHECK(std::abs(v) < 1e-12);
    CHECK(c.pi_b[0] == doctest::Approx(0.3));
  }
  SUBCASE("one-dimensional sine drift against the two-integral formula") {
    auto s = testing::sine_spec(1.0);
    auto V = [](double x) { return std::cos(2 * kPi * x) / (2 * kPi); };
    std::vector<double> errs;
    for (int cells : {64, 128, 256, 512}) {
      TorusGrid grid({cells}, {1.0}, 1);
      auto G = discretize_generator(s, grid, 0.0);
      auto pi = stationary_measure(G);
      auto c = solve_corrector(G, s, pi);
      CHECK(std::abs(c.normalization[0]) <= 1e-10);
      CHECK(std::abs(c.pi_b[0]) <= 1e-12);
      errs.push_back(max_abs_diff(c.beta, oracle::gradient_corrector(V, cells)));
    }
    for (std::size_t k = 1; k < errs.size(); ++k) {
      const double order = std::log2(errs[k - 1] / errs[k]);
      MESSAGE("corrector error " << errs[k] << ", observed order " << order);
      CHECK(order >= 1.5);
    }
    CHECK(errs.back() < 1e-5);
  }
  SUBCASE("normalization and residual on every fixture") {
    for (const char* name : {"benchmark.json", "harmonic_mean.json", "anisotropic_2d.json"}) {
      auto s = testing::load(name);
      TorusGrid grid(s.d == 1 ? std::vector<int>{128} : std::vector<int>{24, 24}, s.tau, s.n);
      auto G = discretize_generator(s, grid, 0.0);
      auto pi = stationary_measure(G);
      auto c = solve_corrector(G, s, pi);
      for (int k = 0; k < s.d; ++k) CHECK(std::abs(c.normalization[k]) <= 1e-10);
    }
  }
  SUBCASE("two regimes with opposite constant drifts") {
    auto s = testing::constant_spec(1, 1, 2, {{1.0}, {-1.0}}, {{0}, {0}}, {{1}, {1}}, {0, 0}, testing::q2(1, 1));
    TorusGrid grid({8}, {1.0}, 2);
    auto G = discretize_generator(s, grid, 0.0);
    auto c = solve_corrector(G, s, stationary_measure(G));
    for (std::size_t sp = 0; sp < 8; ++sp) {
      CHECK(c.value(grid.index(sp, 0), 0) == doctest::Approx(-0.5).epsilon(1e-10));
      CHECK(c.value(grid.index(sp, 1), 0) == doctest::Approx(0.5).epsilon(1e-10));
    }
  }
  SUBCASE("preconditions") {
    auto s = testing::sine_spec(1.0, 1.0);
    TorusGrid grid({16}, {1.0}, 1);
    auto G1 = discretize_generator(s, grid, 0.1);
    CHECK_THROWS_AS(solve_corrector(G1, s, stationary_measure(G1)), PreconditionError);
    auto G0 = discretize_generator(s, grid, 0.0);
    auto pi = stationary_measure(G0);
    pi.weights[0] += 0.5;  // inconsistent measure: rhs no longer centered
    CHECK_THROWS_AS(solve_corrector(G0, s, pi), SolverError);
  }
}

TEST_CASE("estimate_mixing") {
  SUBCASE("two-state chain decays at rate 2") {
    auto s = testing::constant_spec(1, 1, 2, {{0}, {0}}, {{0}, {0}}, {{0}, {0}}, {0, 0}, testing::q2(1, 1));
    auto probe = PeriodicField::constant({{1.0}, {-1.0}});
    auto m = estimate_mixing(s, {probe}, 2.0, 10000, 3, {.starts_per_axis = 1});
    MESSAGE("gamma = " << m.gamma << ", Gamma = " << m.prefactor << ", T* = " << m.t_star);
    CHECK(m.gamma == doctest::Approx(2.0).epsilon(0.1));
  }
  SUBCASE("Brownian motion on the torus decays at rate 2 pi^2") {
    auto s = testing::constant_spec(1, 1, 1, {{0}}, {{0}}, {{1}}, {0}, Eigen::MatrixXd::Zero(1, 1));
    const std::vector<double> tau{1.0};
    auto probe = PeriodicField::trig(1, {{TrigPolynomial(0.0, {{{1}, 1.0, 0.0}}, tau)}});
    auto m = estimate_mixing(s, {probe}, 0.25, 10000, 4, {.starts_per_axis = 4, .time_points = 50});
    MESSAGE("gamma = " << m.gamma << " (expected " << 2 * kPi * kPi << ")");
    CHECK(m.gamma == doctest::Approx(2 * kPi * kPi).epsilon(0.1));
    CHECK(m.t_star == doctest::Approx(std::log(m.prefactor / 1e-3) / m.gamma));
  }
  SUBCASE("zero probe is rejected") {
    auto s = testing::sine_spec(1.0);
    CHECK_THROWS_AS(estimate_mixing(s, {PeriodicField::zero(1, 1)}, 1.0, 100, 1), PreconditionError);
  }
}

TEST_CASE("corrector_mc_oracle") {
  SUBCASE("centered constant drift gives zero") {
    auto s = testing::constant_spec(1, 1, 1, {{0.7}}, {{0}}, {{1}}, {0}, Eigen::MatrixXd::Zero(1, 1));
    MixingEstimate mix;
    mix.gamma = 1.0;
    mix.prefactor = 1.0;
    mix.t_star = 1.0;
    const std::vector<double> pib{0.7};
    auto est = corrector_mc_oracle(s, {{{0.1}, 0}}, mix, 200, 0.01, 1, pib);
    CHECK(std::abs(est[0].value[0]) < 1e-12);
  }
  SUBCASE("opposite constant drifts are antisymmetric") {
    auto s = testing::constant_spec(1, 1, 2, {{1.0}, {-1.0}}, {{0}, {0}}, {{1}, {1}}, {0, 0}, testing::q2(1, 1));
    MixingEstimate mix;
    mix.gamma = 2.0;
    mix.prefactor = 1.0;
    mix.t_star = std::log(1e3) / 2.0;
    const std::vector<double> pib{0.0};
    auto est = corrector_mc_oracle(s, {{{0.3}, 0}, {{0.3}, 1}}, mix, 10000, 0.01, 2, pib);
    const double se = std::hypot(est[0].std_error[0], est[1].std_error[0]);
    CHECK(std::abs(est[0].value[0] + est[1].value[0]) <= 3.0 * se);
    CHECK(std::abs(est[0].value[0] + 0.5) <= 3.0 * (est[0].std_error[0] + est[0].truncation_bound));
  }
  SUBCASE("sine drift agrees with the grid corrector") {
    auto s = testing::sine_spec(1.0);
    TorusGrid grid({256}, {1.0}, 1);
    auto G = discretize_generator(s, grid, 0.0);
    auto pi = stationary_measure(G);
    auto c = solve_corrector(G, s, pi);
    auto centered = PeriodicField::custom(1, 1, [](std::span<const double> x, int, std::span<double> out) {
      out[0] = std::sin(2 * kPi * x[0]);
    }, 1);
    auto mix = estimate_mixing(s, {centered}, 0.5, 4000, 8, {.starts_per_axis = 4, .time_points = 40});
    std::vector<ProbePoint> pts;
    for (int j : {0, 40, 96, 160, 224}) pts.push_back({{j / 256.0}, 0});
    auto est = corrector_mc_oracle(s, pts, mix, 4000, 2e-3, 9, c.pi_b);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const double grid_val = c.value(grid.index(static_cast<std::size_t>(pts[k].x[0] * 256), 0), 0);
      INFO("x = " << pts[k].x[0] << ": grid " << grid_val << ", MC " << est[k].value[0] << " +- "
                  << est[k].std_error[0] << " (trunc " << est[k].truncation_bound << ")");
      CHECK(std::abs(est[k].value[0] - grid_val) <= 3.0 * (est[k].std_error[0] + est[k].truncation_bound));
    }
  }
}

TEST_CASE("measure_convergence") {
  const std::vector<double> eps{0.0, 0.4, 0.1};
  SUBCASE("no c: pi^eps = pi^0") {
    auto s = testing::load("benchmark.json");
    s.drift_c = PeriodicField::zero(1, 2);
    for (const auto& row : measure_convergence(s, eps, TorusGrid({64}, {1.0}, 2))) CHECK(row.tv == 0.0);
  }
  SUBCASE("constant c: TV shrinks with eps") {
    auto s = testing::sine_spec(1.0, 1.0);
    auto rows = measure_convergence(s, eps, TorusGrid({256}, {1.0}, 1));
    CHECK(rows[0].tv == 0.0);
    CHECK(rows[1].tv > rows[2].tv);
    CHECK(rows[2].tv > 0.0);
  }
}

TEST_CASE("exports") {
  auto s = testing::load("benchmark.json");
  TorusGrid grid({8}, {1.0}, 2);
  auto G = discretize_generator(s, grid, 0.0);
  auto pi = stationary_measure(G);
  auto c = solve_corrector(G, s, pi);
  std::ostringstream a, b, m;
  write_measure_csv(pi, a);
  write_corrector_csv(c, b);
  write_matrix_coo(G, m);
  const std::string sa = a.str(), sb = b.str();
  CHECK(sa.rfind("j0,regime,x0,pi\n", 0) == 0);
  CHECK(sb.rfind("j0,regime,x0,beta0,dbeta00\n", 0) == 0);
  CHECK(std::count(sa.begin(), sa.end(), '\n') == 17);
  const std::string coo = m.str();
  CHECK(std::count(coo.begin(), coo.end(), '\n') == G.matrix.nonZeros());
}
