#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bbmx/bessel.hpp"
#include "bbmx/errors.hpp"
#include "bbmx/validators.hpp"

#include <cmath>
#include <numbers>

using namespace bbmx;

TEST_CASE("Bessel-3 marginal at time 1 is chi(3)") {
  const double grid[] = {0.0, 0.5, 1.0};
  std::vector<double> y1;
  for (std::uint32_t i = 0; i < 5000; ++i) {
    PhiloxStream rng({31, i, 0});
    const Path p = sample_bessel3(grid, 0.0, rng);
    CHECK(p.values[0] == 0.0);
    y1.push_back(p.values[2]);
  }
  CHECK(ks_one_sample(y1, chi3_cdf) < ks_critical_1pct(5000.0));
  CHECK(within_se("mean", mean_estimate(y1), 2.0 * std::sqrt(2.0 / std::numbers::pi))
            .passed);
}

TEST_CASE("Bessel-3 scaling invariance") {
  const double a = 9.0;
  const double g1[] = {1.0, 4.0};
  const double g2[] = {a * 1.0, a * 4.0};
  std::vector<double> y1, y4, z1, z4;
  for (std::uint32_t i = 0; i < 4000; ++i) {
    PhiloxStream r1({32, i, 0});
    const Path p = sample_bessel3(g1, 0.0, r1);
    y1.push_back(p.values[0]);
    y4.push_back(p.values[1]);
    PhiloxStream r2({33, i, 0});
    const Path q = sample_bessel3(g2, 0.0, r2);
    z1.push_back(q.values[0] / std::sqrt(a));
    z4.push_back(q.values[1] / std::sqrt(a));
  }
  const double crit = ks_critical_1pct(ks_effective_n(4000, 4000));
  CHECK(ks_two_sample(y1, z1) < crit);
  CHECK(ks_two_sample(y4, z4) < crit);
}

TEST_CASE("Bessel-3 starts where asked") {
  const double grid[] = {0.0, 1e-10};
  PhiloxStream rng({34, 0, 0});
  const Path p = sample_bessel3(grid, 5.0, rng);
  CHECK(p.values[1] == doctest::Approx(5.0).epsilon(1e-4));
  CHECK_THROWS_AS(sample_bessel3(grid, -1.0, rng), ValidationError);
  const double bad[] = {1.0, 0.5};
  CHECK_THROWS_AS(sample_bessel3(bad, 0.0, rng), ValidationError);
}

TEST_CASE("subdivision keeps existing points") {
  PhiloxStream rng({35, 0, 0});
  Bessel3Path path({0.0, 1.0, 2.0}, 0.0, rng);
  const double v1 = path.value(1), v2 = path.value(2);
  path.subdivide(1, 4);
  REQUIRE(path.size() == 6);
  CHECK(path.time(2) == doctest::Approx(1.25));
  CHECK(path.value(1) == v1);
  CHECK(path.value(5) == v2);
  CHECK(path.to_path().valid());
}

TEST_CASE("zeta on deterministic paths") {
  ZetaGrid g;
  FunctionPath linear(g.points(), [](double s) { return s; });
  const ZetaSample z = minimize_zeta(linear, g);
  CHECK(std::abs(z.value - std::pow(2.0, 0.75)) < 1e-6);
  CHECK(z.argmin_s == doctest::Approx(std::pow(2.0, -0.75)).epsilon(1e-2));

  FunctionPath zero(g.points(), [](double) { return 0.0; });
  CHECK(minimize_zeta(zero, g).value == doctest::Approx(0.5 / g.s_max));
}

TEST_CASE("zeta samples") {
  ZetaGrid g;
  for (std::uint32_t i = 0; i < 200; ++i) {
    PhiloxStream rng({36, i, 0});
    const ZetaSample z = sample_zeta(g, rng);
    CHECK(z.value > 0.0);
    CHECK(z.argmin_s >= g.s_min);
    CHECK(z.argmin_s <= g.s_max);
  }
}

TEST_CASE("nested refinement never raises the grid minimum") {
  ZetaGrid g;
  g.refinement_rounds = 0;
  for (std::uint32_t i = 0; i < 200; ++i) {
    PhiloxStream rng({37, i, 0});
    const auto [coarse, fine] = sample_zeta_nested(g, rng);
    CHECK(fine.value <= coarse.value);
    CHECK(fine.grid_used.points_per_decade == 2 * g.points_per_decade);
  }
}

TEST_CASE("zeta grid") {
  ZetaGrid g{0.01, 100.0, 8, 0};
  const auto pts = g.points();
  CHECK(pts.front() == doctest::Approx(0.01));
  CHECK(pts.back() == doctest::Approx(100.0));
  CHECK(pts.size() == 33);
  for (std::size_t i = 2; i < pts.size(); ++i) {
    CHECK(pts[i] / pts[i - 1] == doctest::Approx(pts[1] / pts[0]));
  }
  CHECK_THROWS_AS((ZetaGrid{0.01, 100.0, 4, 0}.validate()), ValidationError);
  CHECK_THROWS_AS((ZetaGrid{1.0, 0.5, 8, 0}.validate()), ValidationError);
}

TEST_CASE("backbone") {
  std::vector<double> grid{0.0};
  for (int i = 1; i <= 100; ++i) {
    grid.push_back(0.37 * i);
  }
  PhiloxStream rng({38, 0, 0});
  const Path p = backbone(grid, rng);
  CHECK(p.values[0] == 0.0);
  for (Eigen::Index i = 1; i < p.size(); ++i) {
    CHECK(p.values[i] < 0.0);
  }
  const double bad[] = {0.5, 1.0};
  CHECK_THROWS_AS(backbone(bad, rng), ValidationError);
}

TEST_CASE("envelope diagnostics") {
  Path zero;
  zero.grid = Eigen::VectorXd::LinSpaced(100, 0.0, 1e4);
  zero.values = Eigen::VectorXd::Zero(100);
  const auto r0 = check_envelope(zero, 0.1, 10.0);
  CHECK_FALSE(r0.lower_ok);
  CHECK(r0.lower_violations == (zero.grid.array() >= 10.0).count());

  Path line = zero;
  line.values = line.grid;
  const auto r1 = check_envelope(line, 0.1, 10.0);
  CHECK_FALSE(r1.upper_ok);
  CHECK(r1.lower_ok);
  CHECK_THROWS_AS(check_envelope(line, 1.5, 10.0), ValidationError);

  const double candidates[] = {1.0, 10.0, 100.0, 1000.0};
  const double K = calibrate_envelope_K(0.2, 0.0, candidates, 1e5, 200, {39, 0, 0});
  CHECK(std::isfinite(K));
}
