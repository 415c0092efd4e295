#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bbmx/cluster.hpp"
#include "bbmx/errors.hpp"
#include "bbmx/validators.hpp"

#include <cmath>

using namespace bbmx;

TEST_CASE("timestamps are a rate-2 Poisson process") {
  const double r = 5.0;
  std::vector<double> n, first, second;
  int empty_window = 0;
  const int reps = 4000;
  for (std::uint32_t i = 0; i < reps; ++i) {
    PhiloxStream rng({41, i, 0});
    const auto ts = sample_timestamps(r, rng);
    CHECK(ts.rate == 2.0);
    CHECK(std::is_sorted(ts.points.begin(), ts.points.end()));
    CHECK((ts.points.empty() || ts.points.back() <= r));
    n.push_back(static_cast<double>(ts.points.size()));
    double a = 0, b = 0;
    bool near = false;
    for (double p : ts.points) {
      (p < 1.0 ? a : p < 2.0 ? b : a) += p < 2.0 ? 1.0 : 0.0;
      near = near || std::abs(p - 3.0) <= 0.5;
    }
    first.push_back(a);
    second.push_back(b);
    empty_window += !near;
  }
  CHECK(within_se("count", mean_estimate(n), 2.0 * r).passed);

  // Disjoint windows are uncorrelated.
  const auto ma = mean_estimate(first), mb = mean_estimate(second);
  std::vector<double> prod;
  for (int i = 0; i < reps; ++i) {
    prod.push_back((first[i] - ma.mean) * (second[i] - mb.mean));
  }
  CHECK(within_se("cov", mean_estimate(prod), 0.0).passed);

  // Distance from s = 3 to the nearest point exceeds 0.5 with prob e^{-2}.
  const double p = static_cast<double>(empty_window) / reps;
  const double q = std::exp(-2.0);
  CHECK(std::abs(p - q) < 3.0 * std::sqrt(q * (1 - q) / reps));
}

TEST_CASE("shorter truncations are prefixes") {
  PhiloxStream a({42, 0, 0}), b({42, 0, 0});
  const auto s = sample_timestamps(10.0, a);
  const auto l = sample_timestamps(40.0, b);
  REQUIRE(s.points.size() <= l.points.size());
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    CHECK(s.points[i] == l.points[i]);
  }
  PhiloxStream c({42, 1, 0});
  CHECK_THROWS_AS(sample_timestamps(0.0, c), ValidationError);
}

TEST_CASE("auto truncation") {
  CHECK(auto_truncation(8.0).r_trunc == doctest::Approx(178.0));
  CHECK(auto_truncation(27.0).r_trunc == doctest::Approx(8.0 * 81.0 + 50.0));
  double prev = auto_truncation(2.0).tail_bound;
  for (double v : {4.0, 8.0, 16.0, 32.0}) {
    const double tb = auto_truncation(v).tail_bound;
    CHECK(tb < prev);
    prev = tb;
  }
  CHECK(prev < 1e-4);
  CHECK_THROWS_AS(auto_truncation(0.0), ValidationError);
}

TEST_CASE("assembly with stub components") {
  ClusterConfig cfg;
  cfg.v_list = {0.5, 1.0, 2.0};
  cfg.r_trunc = 2.0;
  cfg.include_tip = false;
  const double ts[] = {1.0};
  const double bb[] = {-1.0};
  // A single atom at 0 shifted by y = 1 lands at -1.
  DecorationCounter stub = [](double s, double y, std::span<const double> d,
                              std::size_t index) {
    CHECK(s == 1.0);
    CHECK(y == 1.0);
    CHECK(index == 0);
    DecorationCounts dc;
    for (double depth : d) {
      dc.counts.push_back(depth >= y ? 1 : 0);
    }
    return dc;
  };
  const auto out = assemble_cluster(cfg, ts, bb, stub);
  CHECK(out.counts == std::vector<std::uint64_t>{0, 1, 1});
  CHECK(out.count_at(1.0) == 1);
  CHECK(out.count_floor(1.7) == 1);
  CHECK(out.count_floor(0.2) == 0);
  CHECK_THROWS_AS(out.count_at(1.5), DepthCoverageError);
  CHECK_THROWS_AS(out.count_floor(2.5), DepthCoverageError);

  cfg.include_tip = true;
  const auto with_tip = assemble_cluster(cfg, ts, bb, stub);
  CHECK(with_tip.counts == std::vector<std::uint64_t>{1, 2, 2});

  // No timestamps: only the tip.
  const auto bare = assemble_cluster(cfg, {}, {}, stub);
  CHECK(bare.counts == std::vector<std::uint64_t>{1, 1, 1});
}

TEST_CASE("failed decorations mark the replica") {
  ClusterConfig cfg;
  cfg.v_list = {1.0};
  const double ts[] = {0.5, 1.5};
  const double bb[] = {-0.1, -2.0};
  DecorationCounter failing = [](double s, double y, std::span<const double>,
                                 std::size_t index) -> DecorationCounts {
    if (index == 1) {
      throw RejectionBudgetError(7, s, y);
    }
    return {{0}, 0, 0, 0.0, 1};
  };
  const auto out = assemble_cluster(cfg, ts, bb, failing);
  CHECK(out.failed);
  CHECK(out.failure.find("timestamp=1") != std::string::npos);
  CHECK_THROWS_AS(fluctuation_statistic(out, 1.0), ValidationError);
}

TEST_CASE("tiny truncation leaves the tip alone") {
  ClusterConfig cfg;
  cfg.v_list = {1.0, 4.0};
  cfg.r_trunc = 1e-9;
  cfg.include_tip = false;
  const auto out = sample_cluster(cfg, {43, 0, 0});
  CHECK(out.timestamps_used == 0);
  CHECK(out.counts == std::vector<std::uint64_t>{0, 0});
}

TEST_CASE("cluster counts are monotone in depth and truncation") {
  ClusterConfig small;
  small.v_list = uniform_depths(6.0, 0.5);
  small.r_trunc = 20.0;
  ClusterConfig large = small;
  large.r_trunc = 60.0;
  for (std::uint32_t i = 0; i < 20; ++i) {
    const auto a = sample_cluster(small, {44, i, 0});
    const auto b = sample_cluster(large, {44, i, 0});
    REQUIRE_FALSE(a.failed);
    REQUIRE_FALSE(b.failed);
    CHECK(std::is_sorted(a.counts.begin(), a.counts.end()));
    CHECK(a.timestamps_used <= b.timestamps_used);
    for (std::size_t k = 0; k < a.counts.size(); ++k) {
      CHECK(a.counts[k] <= b.counts[k]);
    }
  }
}

TEST_CASE("sampling is deterministic per key") {
  ClusterConfig cfg;
  cfg.v_list = {2.0, 5.0};
  const auto a = sample_cluster(cfg, {45, 3, 0});
  const auto b = sample_cluster(cfg, {45, 3, 0});
  CHECK(a.counts == b.counts);
  CHECK(a.events == b.events);
}

TEST_CASE("cluster mean scale is stable across depths") {
  ClusterConfig cfg;
  cfg.v_list = {6.0, 8.0, 10.0};
  std::vector<std::vector<double>> scaled(3);
  std::size_t zeros_at_10 = 0;
  for (std::uint32_t i = 0; i < 200; ++i) {
    const auto c = sample_cluster(cfg, {46, i, 0});
    REQUIRE_FALSE(c.failed);
    for (int k = 0; k < 3; ++k) {
      scaled[k].push_back(static_cast<double>(c.counts[k]) *
                          std::exp(-kSqrt2 * cfg.v_list[k]));
    }
    zeros_at_10 += c.counts[2] == 0;
  }
  const double m6 = mean_estimate(scaled[0]).mean;
  const double m8 = mean_estimate(scaled[1]).mean;
  const double m10 = mean_estimate(scaled[2]).mean;
  CHECK(std::isfinite(m10));
  CHECK(m10 > 0.0);
  // The mean is carried by rare long-lived decorations, many beyond the
  // default truncation, so the band is only asked of neighbouring depths.
  CHECK(m6 < 3.0 * m8);
  CHECK(m8 < 3.0 * m10);
  CHECK(zeros_at_10 < 10);
}

TEST_CASE("fluctuation statistic") {
  ClusterSample s;
  s.depths = {4.0, 8.0};
  s.counts = {0, 1000};
  const double v = std::log(1000.0) / kSqrt2;
  s.depths[1] = v;
  CHECK(fluctuation_statistic(s, v) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(fluctuation_statistic(s, 4.0), UndefinedStatisticError);

  // C = e^{sqrt2 v - v^{2/3}} gives 1.
  const double w = 8.0;
  s.depths = {w};
  s.counts = {static_cast<std::uint64_t>(std::llround(std::exp(kSqrt2 * w - 4.0)))};
  CHECK(fluctuation_statistic(s, w) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("tail event frequency") {
  std::vector<ClusterSample> samples(2);
  samples[0].depths = {2.0, 4.0, 6.0};
  samples[0].counts = {10, 100, 1000};
  samples[1].depths = {2.0, 4.0, 6.0};
  samples[1].counts = {1, 2, 3};
  CHECK(tail_event_frequency(samples, 2.0, 0.0, 1e12) == 0.0);
  CHECK(tail_event_frequency(samples, 0.0, 0.0, 1e-12) == 1.0);
  // 1000 >= e^{6 sqrt2} fails, 10 >= e^{2 sqrt2} = 16.9 fails, 100 >= e^{4 sqrt2} fails.
  CHECK(tail_event_frequency(samples, 2.0, 0.0, 1.0) == 0.0);
  CHECK(tail_event_frequency(samples, 2.0, 0.0, 0.5) == 0.5);
  CHECK(tail_event_frequency(samples, 6.0, 0.0, 0.5) <=
        tail_event_frequency(samples, 2.0, 0.0, 0.5));
}

TEST_CASE("config validation") {
  ClusterConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.v_list = {4.0, 2.0};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.v_list = {2.0, 4.0};
  cfg.roulette_rho = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.roulette_rho = 0.0;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.effective_r_trunc() == doctest::Approx(auto_truncation(4.0).r_trunc));
  CHECK(uniform_depths(1.0, 0.25) == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
}
