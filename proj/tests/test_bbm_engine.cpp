#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bbmx/bbm_engine.hpp"
#include "bbmx/errors.hpp"
#include "bbmx/validators.hpp"

#include <cmath>
#include <numbers>

using namespace bbmx;

namespace {

PopulationSnapshot single(double t, double h) {
  PopulationSnapshot s;
  s.t = t;
  s.genealogy = {{0, kNoParent, 0.0, 0.0}};
  s.alive = {{0, h}};
  return s;
}

} // namespace

TEST_CASE("population size follows the Yule law") {
  const double t = 2.0;
  const int n = 4000;
  std::vector<double> sizes;
  std::vector<std::uint64_t> counts;
  for (int i = 0; i < n; ++i) {
    PhiloxStream rng({11, static_cast<std::uint32_t>(i), 0});
    const auto snap = simulate_bbm(t, PruneConfig::none(), rng);
    sizes.push_back(static_cast<double>(snap.alive.size()));
    counts.push_back(snap.alive.size());
    CHECK_FALSE(snap.pruned_mass_flag);
  }
  const auto est = mean_estimate(sizes);
  CHECK(within_se("yule mean", est, std::exp(t)).passed);
  CHECK(geometric_gof(counts, std::exp(-t)).p_value > 0.01);
}

TEST_CASE("tiny horizon gives one Gaussian particle") {
  PhiloxStream rng({3, 0, 0});
  std::vector<double> hs;
  for (int i = 0; i < 2000; ++i) {
    const auto snap = simulate_bbm(1e-6, PruneConfig::none(), rng);
    REQUIRE(snap.alive.size() == 1);
    hs.push_back(snap.alive[0].height / std::sqrt(1e-6));
  }
  const double d = ks_one_sample(hs, [](double x) {
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
  });
  CHECK(d < ks_critical_1pct(2000.0));
}

TEST_CASE("level-set means match many-to-one") {
  for (double t : {4.0}) {
    std::vector<std::vector<double>> by_v(3);
    for (int i = 0; i < 3000; ++i) {
      PhiloxStream rng({12, static_cast<std::uint32_t>(i), 0});
      const auto ext =
          extremal_process(simulate_bbm(t, PruneConfig::none(), rng));
      for (int v = 0; v < 3; ++v) {
        by_v[v].push_back(static_cast<double>(count_at_least(ext, v)));
      }
    }
    for (int v = 0; v < 3; ++v) {
      CAPTURE(v);
      CHECK(within_se("m2o", mean_estimate(by_v[v]), many_to_one_mean(t, v)).passed);
    }
  }
}

TEST_CASE("derivative martingale") {
  CHECK(derivative_martingale(single(1.0, 0.0)) ==
        doctest::Approx(std::numbers::sqrt2 * std::exp(-2.0)));
  CHECK(derivative_martingale(single(1.0, 0.0), 2.0) ==
        doctest::Approx(2.0 * 0.19139).epsilon(1e-4));
  auto flat = single(3.0, 3.0 * std::numbers::sqrt2);
  flat.alive.push_back({1, 3.0 * std::numbers::sqrt2});
  CHECK(derivative_martingale(flat) == doctest::Approx(0.0));
  CHECK_THROWS_AS(derivative_martingale(flat, 0.0), ValidationError);

  std::vector<double> z;
  for (int i = 0; i < 3000; ++i) {
    PhiloxStream rng({13, static_cast<std::uint32_t>(i), 0});
    z.push_back(derivative_martingale(simulate_bbm(2.0, PruneConfig::none(), rng)));
  }
  CHECK(within_se("martingale", mean_estimate(z), 0.0).passed);
}

TEST_CASE("extremal process") {
  const double t = 3.0;
  CHECK(extremal_process(single(t, m_of_t(t))) == PointMeasure::from_positions({0.0}));
  auto two = single(t, m_of_t(t));
  two.alive.push_back({1, m_of_t(t) - 1.0});
  const auto mu = extremal_process(two);
  REQUIRE(mu.atoms().size() == 2);
  CHECK(mu.atoms()[0].position == doctest::Approx(-1.0));
  CHECK(mu.atoms()[1].position == doctest::Approx(0.0));
}

TEST_CASE("local maxima of two siblings") {
  PopulationSnapshot s;
  s.t = 5.0;
  s.genealogy = {{0, kNoParent, 0.0, 0.0}, {1, 0, 4.0, 2.0}, {2, 0, 4.0, 2.0}};
  s.alive = {{1, 5.0}, {2, 4.0}};
  const auto lm = local_maxima(s, 2.0);
  REQUIRE(lm.size() == 1);
  CHECK(lm[0].id == 1);
  CHECK(lm[0].cluster == PointMeasure::from_positions({0.0, -1.0}));

  // Balls smaller than the branch age isolate every particle.
  const auto each = local_maxima(s, 0.5);
  REQUIRE(each.size() == 2);
  for (const auto &m : each) {
    CHECK(m.cluster == PointMeasure::from_positions({0.0}));
  }
  CHECK_THROWS_AS(local_maxima(s, 6.0), ValidationError);
}

TEST_CASE("local maxima on simulated trees") {
  for (std::uint32_t rep = 0; rep < 30; ++rep) {
    PhiloxStream rng({14, rep, 0});
    const auto snap = simulate_bbm(4.0, PruneConfig::none(), rng);
    const auto lm = local_maxima(snap);
    const double top = *snap.max_height();
    bool has_global = false;
    std::uint64_t covered = 0;
    for (const auto &m : lm) {
      has_global = has_global || m.height == top;
      CHECK(m.cluster.max_position() == 0.0);
      CHECK(m.cluster.count_from(1e-300) == 0);
      covered += m.cluster.total_mass();
    }
    CHECK(has_global);
    // t/2 balls partition the alive set.
    CHECK(covered == snap.alive.size());
  }
}

TEST_CASE("front pruning with deeper beta agrees") {
  const double v = 2.0, t = 5.0;
  int agree = 0;
  const int n = 300;
  for (int i = 0; i < n; ++i) {
    PhiloxStream a({15, static_cast<std::uint32_t>(i), 0});
    PhiloxStream b({15, static_cast<std::uint32_t>(i), 0});
    const auto ca = count_at_least(
        extremal_process(simulate_bbm(t, PruneConfig::front(v + 10), a)), v);
    const auto cb = count_at_least(
        extremal_process(simulate_bbm(t, PruneConfig::front(v + 15), b)), v);
    agree += ca == cb;
  }
  CHECK(agree >= 0.99 * n);
}

TEST_CASE("event cap is an error") {
  PhiloxStream rng({16, 0, 0});
  SimulationOptions opt;
  opt.event_cap = 10;
  CHECK_THROWS_AS(simulate_bbm(8.0, PruneConfig::none(), rng, opt),
                  ResourceLimitError);
  CHECK_THROWS_AS(simulate_bbm(0.0, PruneConfig::none(), rng), ValidationError);
  CHECK_THROWS_AS(PruneConfig::front(-1.0).validate(), ValidationError);
}

TEST_CASE("target barrier") {
  const TargetBarrier b(10.0, 3.0, 2.0);
  for (double r : {0.0, 2.5, 7.0, 9.9}) {
    CAPTURE(r);
    CHECK(b.barrier(r) <= b.exact_barrier(r) + 1e-12);
    CHECK(b.barrier(r) > b.exact_barrier(r) - 0.1);
    // At the exact barrier the expected mass equals the threshold.
    CHECK(std::log(b.expected_mass(r, b.exact_barrier(r))) ==
          doctest::Approx(b.log_threshold()).epsilon(1e-6));
  }
  // Thresholds above one: close to the horizon nobody qualifies.
  const TargetBarrier high(10.0, 3.0, -3.0);
  CHECK(std::isinf(high.exact_barrier(9.99)));
  CHECK(high.barrier(9.99) <= high.exact_barrier(9.99));
  CHECK(std::isfinite(high.barrier(0.0)));
}

TEST_CASE("conditioned decoration") {
  const double s = 4.0, y = 0.0;
  std::uint64_t attempts = 0;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    PhiloxStream rng({17, static_cast<std::uint32_t>(i), 0});
    const auto d = sample_decoration(s, y, PruneConfig::none(), rng);
    CHECK_FALSE(d.measure.empty());
    CHECK(*d.measure.max_position() <= 0.0);
    attempts += d.rejections + 1;
  }
  // Independent estimate of P(max_s <= m_s + y).
  int below = 0;
  const int m = 4000;
  for (int i = 0; i < m; ++i) {
    PhiloxStream rng({18, static_cast<std::uint32_t>(i), 0});
    below += *simulate_bbm(s, PruneConfig::none(), rng).max_height() <= m_of_t(s) + y;
  }
  const double p = static_cast<double>(below) / m;
  const double acc = static_cast<double>(n) / static_cast<double>(attempts);
  // Geometric attempts: the acceptance estimate has relative SE ~ sqrt((1-p)/n).
  const double se = std::hypot(acc * std::sqrt((1 - p) / n), std::sqrt(p * (1 - p) / m));
  CHECK(std::abs(acc - p) < 3.0 * se);

  // Large y accepts immediately.
  PhiloxStream rng({19, 0, 0});
  CHECK(sample_decoration(s, 20.0, PruneConfig::none(), rng).rejections == 0);
  CHECK_THROWS_AS(sample_decoration(s, -1.0, PruneConfig::none(), rng),
                  ValidationError);
}

TEST_CASE("rejection budget error carries the count") {
  PhiloxStream rng({20, 0, 0});
  // Deep below the typical maximum: essentially never accepted.
  try {
    sample_decoration(6.0, 0.0, PruneConfig::none(), rng, 0);
    PhiloxStream r2({20, 1, 0});
    sample_decoration(6.0, 0.0, PruneConfig::none(), r2, 0);
  } catch (const RejectionBudgetError &e) {
    CHECK(e.rejections() == 1);
  }
}

TEST_CASE("streamed counts match the stored decoration") {
  const double s = 5.0, y = 0.5;
  const double depths[] = {1.0, 2.0, 3.0};
  std::vector<std::vector<double>> stored(3), streamed(3);
  for (int i = 0; i < 1500; ++i) {
    PhiloxStream a({21, static_cast<std::uint32_t>(i), 0});
    const auto d = sample_decoration(s, y, PruneConfig::none(), a);
    PhiloxStream b({22, static_cast<std::uint32_t>(i), 0});
    DecorationCountRequest req;
    req.s = s;
    req.y = y;
    req.depths = depths;
    req.prune_margin = 0.0;
    const auto c = count_decoration(req, b);
    for (int k = 0; k < 3; ++k) {
      stored[k].push_back(static_cast<double>(d.measure.count(-depths[k], 0.0)));
      streamed[k].push_back(static_cast<double>(c.counts[k]));
    }
  }
  for (int k = 0; k < 3; ++k) {
    const auto a = mean_estimate(stored[k]);
    const auto b = mean_estimate(streamed[k]);
    CHECK(std::abs(a.mean - b.mean) < 3.0 * std::hypot(a.se, b.se));
  }
}

TEST_CASE("roulette keeps decoration means unbiased") {
  const double s = 8.0, y = 1.0;
  const double depths[] = {2.0, 4.0, 6.0};
  std::vector<std::vector<double>> exact(3), played(3);
  std::uint64_t max_weight = 1;
  for (int i = 0; i < 600; ++i) {
    DecorationCountRequest req;
    req.s = s;
    req.y = y;
    req.depths = depths;
    req.prune_margin = 0.0;
    PhiloxStream a({23, static_cast<std::uint32_t>(i), 0});
    const auto ce = count_decoration(req, a);
    req.prune_margin = 1.0;
    req.roulette = true;
    req.roulette_rho = 0.05;
    PhiloxStream b({24, static_cast<std::uint32_t>(i), 0});
    const auto cr = count_decoration(req, b);
    max_weight = std::max(max_weight, cr.max_weight);
    for (int k = 0; k < 3; ++k) {
      CHECK(ce.counts[k] <= ce.counts[2]);
      exact[k].push_back(static_cast<double>(ce.counts[k]));
      played[k].push_back(static_cast<double>(cr.counts[k]));
    }
  }
  CHECK(max_weight > 1);
  for (int k = 0; k < 3; ++k) {
    CAPTURE(k);
    const auto a = mean_estimate(exact[k]);
    const auto b = mean_estimate(played[k]);
    CHECK(std::abs(a.mean - b.mean) < 3.0 * std::hypot(a.se, b.se));
  }
}

TEST_CASE("typical cluster count scale") {
  CHECK(typical_cluster_count(0.0) == 1.0);
  CHECK(std::log(typical_cluster_count(16.0)) == doctest::Approx(14.05).epsilon(0.01));
}
