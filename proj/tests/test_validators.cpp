#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bbmx/bbm_engine.hpp"
#include "bbmx/errors.hpp"
#include "bbmx/validators.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace bbmx;

TEST_CASE("ballot closed form") {
  CHECK(ballot_bridge_prob(0.0, 3.0, 2.0) == 0.0);
  CHECK(ballot_bridge_prob(1.0, 1.0, 2.0) == doctest::Approx(0.632121).epsilon(1e-6));
  const double p = ballot_bridge_prob(1.0, 1.0, 1000.0);
  CHECK(p == doctest::Approx(0.0019980).epsilon(1e-4));
  CHECK(1000.0 * p / 2.0 == doctest::Approx(0.9990).epsilon(1e-4));
  CHECK_THROWS_AS(ballot_bridge_prob(1.0, 1.0, 0.0), ValidationError);
}

TEST_CASE("bridge Monte Carlo against the ballot formula") {
  const double x = 1.0, y = 1.0, t = 2.0;
  const auto est = bridge_positive_mc(x, y, t, 20000, 50, {61, 0, 0});
  CHECK(within_se("corrected", est.corrected, ballot_bridge_prob(x, y, t)).passed);
  // The grid check alone misses crossings between grid points.
  CHECK(est.naive.mean > est.corrected.mean);
}

TEST_CASE("many-to-one mean") {
  CHECK(many_to_one_mean(4.0, 0.0) == doctest::Approx(0.9922).epsilon(1e-3));
  CHECK(many_to_one_mean(3.0, 1e3) == doctest::Approx(std::exp(3.0)));
  double prev = 0.0;
  for (double v = -2.0; v < 10.0; v += 0.5) {
    const double m = many_to_one_mean(6.0, v);
    CHECK(m > prev);
    prev = m;
  }
  CHECK_THROWS_AS(many_to_one_mean(0.0, 1.0), ValidationError);
}

TEST_CASE("first moment bound") {
  CHECK(first_moment_bound_check(10.0, 2.0).passed);
  CHECK(first_moment_ratio(100.0, 10.0) < 1.0);
  CHECK_THROWS_AS(first_moment_bound_check(10.0, 0.5), ValidationError);
  CHECK_THROWS_AS(first_moment_bound_check(2.0, 5.0), ValidationError);

  std::vector<double> s_list, v_list;
  for (double s = 4.0; s <= 64.0; s *= 2.0) {
    s_list.push_back(s);
  }
  for (double v = 1.0; v <= 64.0; v += 1.0) {
    v_list.push_back(v);
  }
  const double C = fit_first_moment_constant(s_list, v_list);
  CHECK(C > 0.0);
  CHECK(C <= 1.0);
  for (double s : s_list) {
    for (double v : v_list) {
      if (v <= s) {
        CHECK(first_moment_bound_check(s, v, C).passed);
      }
    }
  }
  // At v = 0 the bound reduces to e^s Q(m_s / sqrt s) <= C s.
  CHECK(many_to_one_mean(10.0, 0.0) <= 10.0);
}

TEST_CASE("lower bound calibration") {
  const double s = 8.0, v = 4.0, r = 1.0;
  std::vector<std::uint64_t> counts;
  for (std::uint32_t i = 0; i < 300; ++i) {
    PhiloxStream rng({62, i, 0});
    SimulationOptions opt;
    opt.record_genealogy = false;
    counts.push_back(count_at_least(
        extremal_process(simulate_bbm(s, PruneConfig::none(), rng, opt)), v));
  }
  CHECK(lower_bound_check(s, v, r, counts, 0.01, 1.0).statistic > 0.8);
  double prev = 1.0;
  for (double c : {0.001, 0.01, 0.1, 1.0, 10.0}) {
    const double f = lower_bound_check(s, v, r, counts, c, 1.0).statistic;
    CHECK(f <= prev);
    prev = f;
  }
  // Tiny c only asks for one atom: the maximum is within v of m_s.
  const double nonzero =
      static_cast<double>(std::count_if(counts.begin(), counts.end(),
                                        [](auto n) { return n > 0; })) /
      static_cast<double>(counts.size());
  CHECK(lower_bound_check(s, v, r, counts, 1e-12, 1.0).statistic == nonzero);
  const double grid[] = {0.001, 0.01, 0.1, 1.0};
  const double c = calibrate_lower_bound_c(s, v, r, counts, grid, 1.0);
  CHECK(std::isfinite(c));
  CHECK(lower_bound_check(s, v, r, counts, c, 1.0).passed);
}

TEST_CASE("chi(3) cdf") {
  CHECK(chi3_cdf(0.0) == 0.0);
  CHECK(chi3_cdf(-1.0) == 0.0);
  CHECK(chi3_cdf(20.0) == doctest::Approx(1.0));
  // Trapezoid integral of the density sqrt(2/pi) r^2 e^{-r^2/2}.
  auto f = [](double x) { return std::sqrt(2.0 / M_PI) * x * x * std::exp(-0.5 * x * x); };
  double acc = 0.0;
  const int n = 15000;
  const double h = 1.5 / n;
  for (int i = 0; i < n; ++i) {
    acc += 0.5 * h * (f(i * h) + f((i + 1) * h));
  }
  CHECK(chi3_cdf(1.5) == doctest::Approx(acc).epsilon(1e-6));
}

TEST_CASE("two-sample KS") {
  const std::vector<double> a{0.3, 0.1, 0.7};
  CHECK(ks_two_sample(a, a) == 0.0);
  CHECK(ks_two_sample(std::vector<double>{0.0}, std::vector<double>{1.0}) == 1.0);
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u;
  std::vector<double> x(10000), y(10000);
  for (auto &v : x) v = u(gen);
  for (auto &v : y) v = u(gen);
  CHECK(ks_two_sample(x, y) < 0.03);
  CHECK_THROWS_AS(ks_two_sample({}, a), ValidationError);
}

TEST_CASE("Kolmogorov distribution") {
  CHECK(kolmogorov_sf(1.6276) == doctest::Approx(0.01).epsilon(1e-3));
  CHECK(kolmogorov_sf(1.3581) == doctest::Approx(0.05).epsilon(1e-3));
  CHECK(kolmogorov_sf(0.0) == 1.0);
  CHECK(ks_critical_1pct(100.0) == doctest::Approx(0.16276));
  CHECK(ks_effective_n(100, 300) == doctest::Approx(75.0));
  CHECK(ks_pvalue(0.5, 100.0) < 1e-6);
}

TEST_CASE("one-sample KS") {
  std::vector<double> grid;
  for (int i = 0; i < 1000; ++i) {
    grid.push_back((i + 0.5) / 1000.0);
  }
  CHECK(ks_one_sample(grid, [](double x) { return x; }) == doctest::Approx(0.0005));
}

TEST_CASE("chi-square goodness of fit") {
  const std::vector<double> o{10, 20, 30}, e{10, 20, 30};
  const auto perfect = chi_square_gof(o, e);
  CHECK(perfect.statistic == 0.0);
  CHECK(perfect.p_value == doctest::Approx(1.0));
  CHECK(perfect.dof == 2);

  // Small expected counts merge into their neighbours.
  const std::vector<double> o2{1, 5, 30, 6, 1}, e2{2, 4, 28, 6, 1};
  const auto merged = chi_square_gof(o2, e2);
  CHECK(merged.bins == 3);

  // Boost's regularized gamma: chi2 = 9.21 with 2 dof has p = 0.01.
  const std::vector<double> o3{50, 0}, e3{25, 25};
  CHECK(chi_square_gof(o3, e3).p_value < 1e-10);
  CHECK_THROWS_AS(chi_square_gof(o, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("discrete laws") {
  std::mt19937_64 gen(11);
  std::geometric_distribution<std::uint64_t> geo(0.2);
  std::poisson_distribution<std::uint64_t> poi(3.5);
  std::vector<std::uint64_t> g(5000), p(5000);
  for (auto &x : g) x = geo(gen) + 1;
  for (auto &x : p) x = poi(gen);
  CHECK(geometric_gof(g, 0.2).p_value > 0.01);
  CHECK(poisson_gof(p, 3.5).p_value > 0.01);
  CHECK(poisson_gof(p, 5.0).p_value < 1e-6);
  CHECK_THROWS_AS(geometric_gof(std::vector<std::uint64_t>{0}, 0.5), ValidationError);
}

TEST_CASE("reports") {
  MeanEstimate m{1.0, 0.1, 100};
  CHECK(within_se("a", m, 1.25).passed);
  CHECK_FALSE(within_se("b", m, 1.35).passed);
  const std::vector<double> xs{1, 2, 3, 4};
  const auto est = mean_estimate(xs);
  CHECK(est.mean == 2.5);
  CHECK(est.se == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));

  std::stringstream ss;
  const std::vector<TestReport> reps{within_se("x", m, 1.0)};
  write_reports_csv(ss, reps);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "# schema=1");
  std::getline(ss, line);
  CHECK(line == "name,statistic,threshold,passed,n_samples,notes");
}
