#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bbmx/errors.hpp"
#include "bbmx/limit_harness.hpp"
#include "bbmx/validators.hpp"

#include <cmath>

using namespace bbmx;

namespace {

// Cluster with count floor(e^{depth}) on a uniform grid.
ClusterSample exp_cluster(double max_depth, double step) {
  ClusterSample c;
  c.depths = uniform_depths(max_depth, step);
  for (double d : c.depths) {
    c.counts.push_back(static_cast<std::uint64_t>(std::floor(std::exp(d))));
  }
  return c;
}

} // namespace

TEST_CASE("tip counts") {
  std::vector<double> n0;
  std::vector<double> n2;
  for (std::uint32_t i = 0; i < 20000; ++i) {
    PhiloxStream rng({51, i, 0});
    const TipSet t = sample_tips(1.0, 0.0, rng);
    n0.push_back(static_cast<double>(t.tips.size()));
    PhiloxStream r2({52, i, 0});
    n2.push_back(static_cast<double>(sample_tips(2.0, 0.0, r2).tips.size()));
  }
  const auto a = mean_estimate(n0);
  CHECK(within_se("Z=1", a, 1.0 / kSqrt2).passed);
  CHECK(within_se("Z=2", mean_estimate(n2), 2.0 / kSqrt2).passed);
}

TEST_CASE("tip counts above a level are Poisson") {
  const double v_floor = 4.0, v = 2.0, Z = 1.5;
  std::vector<std::uint64_t> counts;
  for (std::uint32_t i = 0; i < 3000; ++i) {
    PhiloxStream rng({53, i, 0});
    const TipSet t = sample_tips(Z, v_floor, rng);
    CHECK(std::is_sorted(t.tips.rbegin(), t.tips.rend()));
    CHECK((t.tips.empty() || t.tips.back() >= -v_floor));
    counts.push_back(static_cast<std::uint64_t>(std::count_if(
        t.tips.begin(), t.tips.end(), [v](double u) { return u >= -v; })));
  }
  CHECK(poisson_gof(counts, Z * std::exp(kSqrt2 * v) / kSqrt2).p_value > 0.01);
  PhiloxStream rng({53, 0, 1});
  CHECK_THROWS_AS(sample_tips(0.0, 1.0, rng), ValidationError);
}

TEST_CASE("binned tips keep the intensity") {
  const double v_floor = 6.0, step = 0.25, Z = 1.0;
  std::vector<double> totals;
  for (std::uint32_t i = 0; i < 2000; ++i) {
    PhiloxStream rng({54, i, 0});
    const auto bt = sample_binned_tips(Z, v_floor, step, -2.1, rng);
    CHECK(bt.split == doctest::Approx(-2.0));
    CHECK(bt.cell_counts.size() == 16);
    for (double u : bt.upper_tips) {
      CHECK(u >= bt.split);
    }
    totals.push_back(static_cast<double>(bt.total()));
  }
  CHECK(within_se("total", mean_estimate(totals),
                  Z * std::exp(kSqrt2 * v_floor) / kSqrt2)
            .passed);
}

TEST_CASE("assembly") {
  const ClusterSample c = exp_cluster(8.0, 0.5);
  TipSet none{1.0, 8.0, {-5.0}};
  CHECK(assemble_E(none, std::vector<ClusterSample>{c}, 4.0) == 0);

  TipSet one{1.0, 8.0, {0.0}};
  CHECK(assemble_E(one, std::vector<ClusterSample>{c}, 4.0) == c.count_at(4.0));

  // Additivity over disjoint tip subsets, and E >= number of tips.
  TipSet both{1.0, 8.0, {0.5, -1.0, -3.0}};
  TipSet first{1.0, 8.0, {0.5}};
  TipSet rest{1.0, 8.0, {-1.0, -3.0}};
  const std::vector<ClusterSample> three{c, c, c};
  const auto e = assemble_E(both, three, 4.0);
  CHECK(e == assemble_E(first, three, 4.0) + assemble_E(rest, three, 4.0));
  CHECK(e >= 3);

  TipSet deep{1.0, 8.0, {3.0}};
  CHECK_THROWS_AS(assemble_E(deep, std::vector<ClusterSample>{c}, 6.0),
                  DepthCoverageError);
  CHECK_THROWS_AS(assemble_E(both, std::vector<ClusterSample>{c}, 4.0),
                  ValidationError);
}

TEST_CASE("pool assembly with identical clusters is exact") {
  const double step = 0.5;
  const ClusterSample c = exp_cluster(12.0, step);
  const std::vector<ClusterSample> pool(40, c);
  PhiloxStream rng({55, 0, 0});
  const auto bt = sample_binned_tips(1.0, 6.0, step, -2.0, rng);
  std::uint64_t expected = 0;
  for (std::size_t j = 0; j < bt.cell_counts.size(); ++j) {
    const double u = -6.0 + step * static_cast<double>(j);
    if (u >= -4.0) {
      expected += bt.cell_counts[j] * c.count_floor(4.0 + u);
    }
  }
  for (double u : bt.upper_tips) {
    expected += c.count_floor(4.0 + u);
  }
  CHECK(assemble_E_from_pool(bt, pool, 4.0, rng) == expected);
  CHECK_THROWS_AS(assemble_E_from_pool(bt, {}, 4.0, rng), ValidationError);
  CHECK_THROWS_AS(assemble_E_from_pool(bt, pool, 7.0, rng), ValidationError);
}

TEST_CASE("pool assembly matches the exact dressing in mean") {
  // Two cluster types; crowded cells go through the multinomial branch.
  const double step = 0.5;
  ClusterSample a = exp_cluster(10.0, step);
  ClusterSample b = a;
  for (auto &x : b.counts) {
    x = 1;
  }
  const std::vector<ClusterSample> pool{a, b, a, b};
  std::vector<double> got, want;
  for (std::uint32_t i = 0; i < 3000; ++i) {
    PhiloxStream rng({56, i, 0});
    const auto bt = sample_binned_tips(1.0, 4.0, step, 0.0, rng);
    got.push_back(static_cast<double>(assemble_E_from_pool(bt, pool, 4.0, rng)));
    double w = 0.0;
    for (std::size_t j = 0; j < bt.cell_counts.size(); ++j) {
      const double u = -4.0 + step * static_cast<double>(j);
      w += static_cast<double>(bt.cell_counts[j]) *
           0.5 * static_cast<double>(a.count_floor(4.0 + u) + 1);
    }
    for (double u : bt.upper_tips) {
      w += 0.5 * static_cast<double>(a.count_floor(4.0 + u) + 1);
    }
    want.push_back(w);
  }
  const auto g = mean_estimate(got), e = mean_estimate(want);
  CHECK(std::abs(g.mean - e.mean) < 3.0 * std::hypot(g.se, e.se));
}

TEST_CASE("ratio statistic") {
  const double v = 3.0, Z = 2.0, C = 0.5;
  const double scale = C * Z * v * std::exp(kSqrt2 * v);
  CHECK(ratio_statistic(static_cast<std::uint64_t>(std::llround(scale)), Z, C, v) ==
        doctest::Approx(1.0).epsilon(1e-3));
  CHECK(ratio_statistic(0, Z, C, v) == 0.0);
  CHECK_THROWS_AS(ratio_statistic(1, Z, C, 0.0), ValidationError);
}

TEST_CASE("cstar on degenerate clusters") {
  const double vs[] = {2.0, 3.0};
  std::vector<ClusterSample> cl(150);
  for (auto &c : cl) {
    c.depths = {2.0, 3.0};
    c.counts = {static_cast<std::uint64_t>(std::llround(std::exp(kSqrt2 * 2.0) * 1e6)),
                static_cast<std::uint64_t>(std::llround(std::exp(kSqrt2 * 3.0) * 1e6))};
  }
  const auto est = estimate_cstar(cl, vs, 200, 1);
  CHECK(est.value == doctest::Approx(1e6).epsilon(1e-6));
  CHECK(est.ci_high - est.ci_low == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(est.n_clusters == 150);
  CHECK_FALSE(est.heavy_tail[0]);

  // One giant cluster dominates.
  cl[0].counts = {1'000'000'000'000ull, 1'000'000'000'000ull};
  const auto heavy = estimate_cstar(cl, vs, 200, 1);
  CHECK(heavy.heavy_tail[0]);
  CHECK(heavy.value > 0.0);
  CHECK(heavy.ci_low <= heavy.value);
  CHECK(heavy.value <= heavy.ci_high);
}

TEST_CASE("martingale proxy is positive and reproducible") {
  int attempts = 0;
  const double z = sample_z_proxy(3.0, {57, 0, 0}, 1.0, &attempts);
  CHECK(z > 0.0);
  CHECK(attempts >= 1);
  CHECK(sample_z_proxy(3.0, {57, 0, 0}) == z);
}
