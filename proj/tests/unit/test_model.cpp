#include "helpers.hpp"

#include "homog/error.hpp"

#include <doctest.h>

#include <cmath>

using namespace homog;

TEST_CASE("wrap_torus maps into the half-open cell") {
  const std::vector<double> t1{1.0};
  CHECK(wrap_torus(std::vector<double>{0.0}, t1)[0] == 0.0);
  CHECK(wrap_torus(std::vector<double>{2.3}, t1)[0] == doctest::Approx(0.3).epsilon(1e-12));
  const auto w = wrap_torus(std::vector<double>{-0.25, 3.5}, std::vector<double>{1.0, 2.0});
  CHECK(w[0] == doctest::Approx(0.75));
  CHECK(w[1] == doctest::Approx(1.5));

  for (double x : {-1e-17, -3.0, 1.0, 7.999999999, -0.5e-300}) {
    auto once = wrap_torus(std::vector<double>{x}, t1);
    CHECK(once[0] >= 0.0);
    CHECK(once[0] < 1.0);
    CHECK(wrap_torus(once, t1)[0] == once[0]);
  }
}

TEST_CASE("trigonometric fields are periodic and report their frequencies") {
  const std::vector<double> tau{1.0, 2.0};
  TrigPolynomial p(0.5, {{{1, 0}, 1.0, 0.0}, {{0, 3}, 0.0, 2.0}}, tau);
  const std::vector<double> x{0.3, 0.7};
  const std::vector<double> xs{0.3 + 4.0, 0.7 - 6.0};
  CHECK(p(x) == doctest::Approx(p(xs)).epsilon(1e-12));
  CHECK(p(x) == doctest::Approx(0.5 + std::cos(2 * M_PI * 0.3) + 2.0 * std::sin(2 * M_PI * 3 * 0.7 / 2.0)));
  CHECK(p.max_frequency(0) == 1);
  CHECK(p.max_frequency(1) == 3);
  CHECK_FALSE(p.is_constant());
  CHECK(TrigPolynomial::constant(2.0).is_constant());
}

TEST_CASE("scalar polynomial gradient and ball level set") {
  auto f = ScalarFunction::polynomial(2, {{3.0, {2, 1}}, {-1.0, {0, 0}}});
  std::vector<double> x{2.0, -1.0}, g(2);
  CHECK(f(x) == doctest::Approx(-13.0));
  f.gradient(x, g);
  CHECK(g[0] == doctest::Approx(-12.0));
  CHECK(g[1] == doctest::Approx(12.0));

  LevelSetDomain dom{ScalarFunction::ball(std::vector<double>{0.5, 0.0}, 2.0), 1.0, {{-1.5, -2}, {2.5, 2}}};
  std::vector<double> y{1.0, 1.0};
  CHECK(dom.contains(y));
  dom.project_to_boundary(y);
  CHECK(std::hypot(y[0] - 0.5, y[1]) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("validate_spec: switching generator checks") {
  SUBCASE("n = 1 is vacuously irreducible and Q is replaced by zero") {
    auto s = testing::constant_spec(1, 1, 1, {{0.0}}, {{0.0}}, {{1.0}}, {0.0}, Eigen::MatrixXd::Constant(1, 1, 5.0));
    CHECK(s.q_matrix(0, 0) == 0.0);
    auto r = validate_spec(s, {});
    CHECK(r.find("q_irreducible")->passed);
    CHECK(r.find("q_generator")->passed);
  }
  SUBCASE("two positive rates pass") {
    auto s = testing::constant_spec(1, 1, 2, {{0.0}, {0.0}}, {{0.0}, {0.0}}, {{1.0}, {1.0}}, {0.0, 0.0},
                                    testing::q2(1.0, 2.0));
    auto r = validate_spec(s, {});
    CHECK(r.passed());
  }
  SUBCASE("absorbing state fails irreducibility") {
    Eigen::MatrixXd q(2, 2);
    q << 0.0, 0.0, 2.0, -2.0;
    CHECK_FALSE(q_irreducible(q));
    auto s = testing::constant_spec(1, 1, 2, {{0.0}, {0.0}}, {{0.0}, {0.0}}, {{1.0}, {1.0}}, {0.0, 0.0}, q);
    auto r = validate_spec(s, {});
    CHECK(r.find("q_generator")->passed);
    CHECK_FALSE(r.find("q_irreducible")->passed);
    CHECK_FALSE(r.passed());
  }
  SUBCASE("negative off-diagonal rate is named") {
    auto s = testing::load("bad_q.json");
    auto r = validate_spec(s, {});
    const auto* c = r.find("q_generator");
    REQUIRE(c != nullptr);
    CHECK_FALSE(c->passed);
    CHECK(c->detail.find("q[1][0]") != std::string::npos);
  }
}

TEST_CASE("validate_spec: ellipticity, periodicity, killing, boundary") {
  SUBCASE("degenerate sigma fails ellipticity with a witness") {
    auto s = testing::constant_spec(2, 2, 1, {{0.0, 0.0}}, {{0.0, 0.0}}, {{1.0, 0.0, 0.0, 0.0}}, {0.0},
                                    Eigen::MatrixXd::Zero(1, 1));
    auto r = validate_spec(s, {});
    const auto* c = r.find("ellipticity");
    CHECK_FALSE(c->passed);
    CHECK(c->witness_x.size() == 2);
  }
  SUBCASE("non-periodic custom field is caught") {
    auto s = testing::sine_spec(1.0);
    s.drift_b = PeriodicField::custom(1, 1, [](std::span<const double> x, int, std::span<double> out) {
      out[0] = x[0];
    }, 0);
    auto r = validate_spec(s, {.samples = 200});
    CHECK_FALSE(r.find("periodicity")->passed);
  }
  SUBCASE("benchmark passes everything") {
    auto s = testing::load("benchmark.json");
    auto r = validate_spec(s, {});
    for (const auto& c : r.checks) {
      INFO(c.name << ": " << c.detail);
      CHECK(c.passed);
    }
    CHECK(r.find("killing_negative")->measured == doctest::Approx(1.0));
    CHECK(r.find("boundary_gradient")->measured == doctest::Approx(2.0));
  }
  SUBCASE("positive killing rate is witnessed") {
    auto s = testing::load("positive_killing.json");
    auto r = validate_spec(s, {});
    const auto* c = r.find("killing_negative");
    CHECK_FALSE(c->passed);
    REQUIRE(c->witness_x.size() == 1);
    CHECK(s.killing_e.eval_scalar(c->witness_x, c->witness_regime) > 0.9);
  }
  SUBCASE("flat boundary gradient fails the floor") {
    auto s = testing::load("benchmark.json");
    s.domain->delta = 3.0;
    CHECK_FALSE(validate_spec(s, {}).find("boundary_gradient")->passed);
  }
}

TEST_CASE("validate_spec is deterministic for a fixed seed") {
  auto s = testing::load("anisotropic_2d.json");
  auto a = to_json(validate_spec(s, {.samples = 500, .seed = 9}));
  auto b = to_json(validate_spec(s, {.samples = 500, .seed = 9}));
  CHECK(a.dump() == b.dump());
}

TEST_CASE("problem JSON errors name the offending key") {
  nlohmann::json doc = {{"d", 1}, {"n", 2}, {"drift_b", {0.0, 0.0}}, {"sigma", {1.0}}, {"q_matrix", {{-1, 1}, {1, -1}}}};
  try {
    problem_from_json(doc);
    FAIL("expected SpecError");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("problem.sigma") != std::string::npos);
  }
  auto s = testing::load("anisotropic_2d.json");
  CHECK(s.d == 2);
  CHECK(s.sigma.dim() == 4);
  LocalCoefficients loc;
  eval_local(s, std::vector<double>{0.0, 0.0}, 1, loc);
  CHECK(loc.a[0] == doctest::Approx(1.4 * 1.4));
  CHECK(loc.e == doctest::Approx(-1.5));
}
