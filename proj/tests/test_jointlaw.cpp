#include "enumeration.hpp"

#include "bespoke/errors.hpp"
#include "bespoke/jointlaw.hpp"

#include "doctest.h"

#include <cmath>
#include <random>

using namespace bespoke;

namespace {

std::span<const double> one(const double* c) { return {c, 1}; }

}  // namespace

TEST_CASE("independence and a doubled odds ratio") {
  const ZSCells ind = zs_cells(0.3, 0.5, 0.0);
  CHECK(ind[3] == doctest::Approx(0.15));
  const ZSCells two = zs_cells(0.3, 0.5, std::log(2.0));
  CHECK(two[3] == doctest::Approx(0.30 / 1.15).epsilon(1e-12));
  CHECK(two[0] == doctest::Approx(0.35 / 1.15).epsilon(1e-12));
  CHECK_THROWS_AS(zs_cells(0.0, 0.5, 0.0), DegenerateLawError);
  CHECK_THROWS_AS(zs_cells(0.3, 1.0, 0.0), DegenerateLawError);
}

TEST_CASE("joint law sums to one and reproduces its reference conditionals") {
  const JointLawZS law([](std::span<const double> c) { return oracle::ex(0.4 - 1.3 * c[0]); },
                       [](std::span<const double> c) { return oracle::ex(-0.2 + 0.7 * c[0]); },
                       [](std::span<const double> c) { return 1.5 * std::sin(3 * c[0]); });
  for (double x = -3; x <= 3; x += 0.25) {
    const double c[1] = {x};
    const ZSCells f = law.cells(one(c));
    CHECK(std::abs(f[0] + f[1] + f[2] + f[3] - 1) < 1e-12);
    CHECK(std::abs(law.z1_given_s(0, one(c)) - oracle::ex(0.4 - 1.3 * x)) < 1e-10);
    CHECK(std::abs(law.s1_given_z(0, one(c)) - oracle::ex(-0.2 + 0.7 * x)) < 1e-10);
    const double lor = std::log(f[3] * f[0] / (f[1] * f[2]));
    CHECK(std::abs(lor - 1.5 * std::sin(3 * x)) < 1e-10);
  }
}

TEST_CASE("unit odds ratio factorizes exactly") {
  for (double pt : {0.1, 0.37, 0.5, 0.9})
    for (double pa : {0.05, 0.44, 0.8}) {
      const ZSCells f = zs_cells(pt, pa, 0.0);
      CHECK(f[0] == (1 - pt) * (1 - pa));
      CHECK(f[1] == pt * (1 - pa));
      CHECK(f[2] == (1 - pt) * pa);
      CHECK(f[3] == pt * pa);
      CHECK(std::abs(f[1] + f[3] - pt) < 1e-15);
      CHECK(std::abs(f[2] + f[3] - pa) < 1e-15);
    }
}

TEST_CASE("phi and kappa on hand values") {
  const JointLawZS uniform([](std::span<const double>) { return 0.5; }, [](std::span<const double>) { return 0.5; },
                           [](std::span<const double>) { return 0.0; });
  const VectorFn m1 = [](std::span<const double>) { return Eigen::VectorXd::Ones(1); };
  const double c[1] = {0.0};
  CHECK(phi_binary(1, 1, one(c), m1, uniform)(0) == doctest::Approx(4.0));
  CHECK(phi_binary(1, 0, one(c), m1, uniform)(0) == doctest::Approx(-4.0));

  const JointLawAZ flat([](int, std::span<const double>) { return 0.5; }, [](std::span<const double>) { return 0.5; });
  CHECK(kappa_binary(0, 0, one(c), m1, flat)(0) == doctest::Approx(4.0));
  // Cells (a,z): (0,0)=0.1, (1,0)=0.4, (0,1)=0.4, (1,1)=0.1.
  const JointLawAZ skew([](int z, std::span<const double>) { return z ? 0.2 : 0.8; },
                        [](std::span<const double>) { return 0.5; });
  const VectorFn h2 = [](std::span<const double>) { return Eigen::VectorXd::Constant(1, 2.0); };
  CHECK(skew.cell(1, 1, one(c)) == doctest::Approx(0.1));
  CHECK(kappa_binary(1, 1, one(c), h2, skew)(0) == doctest::Approx(20.0));
}

TEST_CASE("phi and kappa lie in their orthocomplements") {
  CHECK(oracle::omega_violation() < 1e-12);
  CHECK(oracle::gamma_violation() < 1e-12);
}

TEST_CASE("ace projection") {
  const std::int64_t k1[4] = {0, 0, 1, 1}, k2[4] = {0, 1, 0, 1};
  SUBCASE("fixed point") {
    Eigen::VectorXd v(4);
    v << 1, -1, -1, 1;
    const AceResult r = ace_project(v, k1, k2);
    CHECK(r.converged);
    CHECK((r.values - v).norm() < 1e-15);
  }
  SUBCASE("constant vector vanishes") {
    const AceResult r = ace_project(Eigen::VectorXd::Constant(4, 3.0), k1, k2);
    CHECK(r.values.cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("within-group means vanish") {
    Eigen::VectorXd v(4);
    v << 1, -1, 2, -2;
    const AceResult r = ace_project(v, k1, k2, 1e-10);
    CHECK(r.converged);
    // Hand iteration: subtract key1 means (0, 0), then key2 means (1.5, -1.5).
    CHECK(std::abs(r.values(0) + 0.5) < 1e-10);
    CHECK(std::abs(r.values(2) - 0.5) < 1e-10);
    for (int g = 0; g < 2; ++g) {
      CHECK(std::abs(r.values(2 * g) + r.values(2 * g + 1)) < 1e-10);
      CHECK(std::abs(r.values(g) + r.values(g + 2)) < 1e-10);
    }
  }
  SUBCASE("non-convergence is reported") {
    std::mt19937_64 g(1);
    std::normal_distribution<double> N(0, 1);
    const int n = 60;
    std::vector<std::int64_t> a(n), b(n);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
      a[i] = i % 7;
      b[i] = (i * 3) % 11;
      v(i) = N(g);
    }
    const AceResult r = ace_project(v, a, b, 1e-300, 2);
    CHECK_FALSE(r.converged);
    CHECK(r.achieved_tol > 0);
  }
}

TEST_CASE("odds ratio estimate vanishes under conditional independence") {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> U(0, 1);
  std::normal_distribution<double> N(0, 1);
  std::vector<Observation> rows;
  for (int i = 0; i < 50000; ++i) {
    const double c = N(g);
    const int s = U(g) < oracle::ex(0.2 + 0.5 * c);
    const int z = U(g) < oracle::ex(-0.3 + 0.8 * c);
    rows.push_back({0.0, 0, z, s, {c}});
  }
  const Dataset d(rows);
  const Terms basis = parse_terms("1 + c1");
  Eigen::VectorXd w0 = (1 - d.s().array()).matrix(), wz0 = (1 - d.z().array()).matrix();
  const FittedModel tau = fit_glm(d, GLMSpec{Family::Logistic, Variable::Z, basis}, w0);
  const FittedModel alpha = fit_glm(d, GLMSpec{Family::Logistic, Variable::S, basis}, wz0);
  const RhoFit r = estimate_rho(d, tau, alpha, parse_terms("1"));
  CHECK(r.converged);
  CHECK(std::abs(r.rho(0)) < 0.05);
}

TEST_CASE("saturated odds ratio fit reproduces the empirical joint law") {
  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> U(0, 1);
  std::vector<Observation> rows;
  double cnt[2][2][2] = {};
  for (int i = 0; i < 20000; ++i) {
    const int c = U(g) < 0.4;
    const int s = U(g) < oracle::ex(-0.2 + 0.9 * c);
    const int z = U(g) < oracle::ex(0.1 - 0.6 * c + 0.8 * s + 0.5 * c * s);
    rows.push_back({0.0, 0, z, s, {double(c)}});
    cnt[c][z][s] += 1;
  }
  const Dataset d(rows);
  const Terms basis = parse_terms("1 + c1");
  Eigen::VectorXd w0 = (1 - d.s().array()).matrix(), wz0 = (1 - d.z().array()).matrix();
  const FittedModel tau = fit_glm(d, GLMSpec{Family::Logistic, Variable::Z, basis}, w0);
  const FittedModel alpha = fit_glm(d, GLMSpec{Family::Logistic, Variable::S, basis}, wz0);
  const RhoFit r = estimate_rho(d, tau, alpha, basis);
  REQUIRE(r.converged);
  const JointLawZS law = JointLawZS::from_models(tau, alpha, r.rho, basis);
  for (int c = 0; c < 2; ++c) {
    const double nc = cnt[c][0][0] + cnt[c][1][0] + cnt[c][0][1] + cnt[c][1][1];
    const double cv[1] = {double(c)};
    for (int z = 0; z < 2; ++z)
      for (int s = 0; s < 2; ++s) CHECK(std::abs(law.cell(z, s, one(cv)) - cnt[c][z][s] / nc) < 1e-6);
  }
}

TEST_CASE("odds ratio estimation needs both strata") {
  Dataset d({{0.0, 0, 1, 1, {}}, {0.0, 0, 0, 1, {}}, {0.0, 0, 1, 1, {}}});
  const FittedModel dummy{GLMSpec{Family::Logistic, Variable::Z, parse_terms("1")}, Eigen::VectorXd::Zero(1)};
  CHECK_THROWS(estimate_rho(d, dummy, dummy, parse_terms("1")));
}
