// Acceptance suite. Prints one PASS/FAIL line per criterion and exits 4 when
// any criterion fails.

#include "bbmx/bbm_engine.hpp"
#include "bbmx/bessel.hpp"
#include "bbmx/cluster.hpp"
#include "bbmx/limit_harness.hpp"
#include "bbmx/logging.hpp"
#include "bbmx/runner.hpp"
#include "bbmx/validators.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace bbmx;

struct Options {
  std::uint64_t seed = 20240601;
  std::size_t workers = 0;
  std::size_t clusters = 1000;
  double pool_depth = 16.0;
  double pool_step = 1.0 / 16.0;
  std::size_t assemblies = 200;
  std::vector<int> only;
};

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string &what) {
    if (!ok) {
      passed = false;
      detail << "[fail: " << what << "] ";
    }
  }
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << x;
  return os.str();
}

std::string se_line(const std::string &label, const MeanEstimate &m, double target) {
  return label + " mean " + fmt(m.mean, 6) + " se " + fmt(m.se, 3) + " target " +
         fmt(target, 6) + "; ";
}

SimulationOptions lean() {
  SimulationOptions o;
  o.record_genealogy = false;
  return o;
}

// ---------------------------------------------------------------------------

void yule(const Options &opt, Outcome &out) {
  const std::size_t n = 20000;
  const double t = 2.0;
  const auto pop = parallel_map(n, opt.workers, [&](std::size_t i) {
    PhiloxStream rng({opt.seed, static_cast<std::uint32_t>(i), substream_id(Substream::main, 1)});
    return static_cast<std::uint64_t>(simulate_bbm(t, PruneConfig::none(), rng, lean()).alive.size());
  });
  std::vector<double> x(pop.begin(), pop.end());
  const auto m = mean_estimate(x);
  const auto gof = geometric_gof(pop, std::exp(-t));
  out.detail << se_line("population", m, std::exp(t)) << "geometric p " << fmt(gof.p_value);
  out.require(within_se("yule", m, std::exp(t)).passed, "mean");
  out.require(gof.p_value > 0.01, "gof");
}

void many_to_one(const Options &opt, Outcome &out) {
  const std::size_t n = 10000;
  for (double s : {4.0, 6.0}) {
    const auto counts = parallel_map(n, opt.workers, [&](std::size_t i) {
      PhiloxStream rng({opt.seed, static_cast<std::uint32_t>(i),
                        substream_id(Substream::main, 2 + static_cast<std::uint32_t>(s))});
      const auto E = extremal_process(simulate_bbm(s, PruneConfig::none(), rng, lean()));
      return std::array<double, 3>{static_cast<double>(count_at_least(E, 0)),
                                   static_cast<double>(count_at_least(E, 1)),
                                   static_cast<double>(count_at_least(E, 2))};
    });
    for (int v = 0; v < 3; ++v) {
      std::vector<double> c;
      for (const auto &a : counts) {
        c.push_back(a[static_cast<std::size_t>(v)]);
      }
      const auto m = mean_estimate(c);
      const double target = many_to_one_mean(s, v);
      const std::string label = "s=" + fmt(s) + " v=" + std::to_string(v);
      out.detail << se_line(label, m, target);
      out.require(within_se(label, m, target).passed, label);
    }
  }
}

void martingale(const Options &opt, Outcome &out) {
  const std::size_t n = 10000;
  for (double t : {1.0, 2.0, 4.0}) {
    const auto z = parallel_map(n, opt.workers, [&](std::size_t i) {
      PhiloxStream rng({opt.seed, static_cast<std::uint32_t>(i),
                        substream_id(Substream::main, 10 + static_cast<std::uint32_t>(t))});
      return derivative_martingale(simulate_bbm(t, PruneConfig::none(), rng, lean()), 1.0);
    });
    const auto m = mean_estimate(z);
    out.detail << se_line("t=" + fmt(t), m, 0.0);
    out.require(within_se("z", m, 0.0).passed, "t=" + fmt(t));
  }
}

void ballot(const Options &opt, Outcome &out) {
  const double cases[][3] = {{1, 1, 2}, {1, 1, 10}, {0.5, 2, 10}};
  std::uint32_t k = 0;
  for (const auto &c : cases) {
    const auto est = bridge_positive_mc(c[0], c[1], c[2], 100000, 1000,
                                        {opt.seed, 0, substream_id(Substream::reference, ++k)});
    const double target = ballot_bridge_prob(c[0], c[1], c[2]);
    const std::string label =
        "(" + fmt(c[0]) + "," + fmt(c[1]) + "," + fmt(c[2]) + ")";
    out.detail << se_line(label, est.corrected, target);
    out.require(within_se(label, est.corrected, target).passed, label);
  }
  const double r = 1000.0 * ballot_bridge_prob(1, 1, 1000) / 2.0;
  out.detail << "t p/(2xy) at t=1000: " << fmt(r, 6);
  out.require(r >= 0.95 && r <= 1.0, "asymptotic");
}

void bessel(const Options &opt, Outcome &out) {
  const std::size_t n = 100000;
  const double unit[] = {1.0};
  const auto y1 = parallel_map(n, opt.workers, [&](std::size_t i) {
    PhiloxStream rng({opt.seed, static_cast<std::uint32_t>(i), substream_id(Substream::backbone, 1)});
    return sample_bessel3(unit, 0.0, rng).values[0];
  });
  const double ks = ks_one_sample(y1, chi3_cdf);
  const double crit = ks_critical_1pct(static_cast<double>(n));
  const auto m = mean_estimate(y1);
  const double target = 2.0 * std::sqrt(2.0 / M_PI);
  out.detail << "chi3 KS " << fmt(ks) << " crit " << fmt(crit) << "; "
             << se_line("Y_1", m, target);
  out.require(ks < crit, "chi3 KS");
  out.require(within_se("Y_1", m, target).passed, "mean");

  // Y_{a s} / sqrt(a) against Y_s on the grid {1, 4}.
  const double a = 9.0;
  const double g1[] = {1.0, 4.0};
  const double ga[] = {a, 4.0 * a};
  const auto pairs = parallel_map(n, opt.workers, [&](std::size_t i) {
    PhiloxStream r1({opt.seed, static_cast<std::uint32_t>(i), substream_id(Substream::backbone, 2)});
    PhiloxStream r2({opt.seed, static_cast<std::uint32_t>(i), substream_id(Substream::backbone, 3)});
    const Path p = sample_bessel3(g1, 0.0, r1);
    const Path q = sample_bessel3(ga, 0.0, r2);
    return std::array<double, 4>{p.values[0], p.values[1], q.values[0] / std::sqrt(a),
                                 q.values[1] / std::sqrt(a)};
  });
  const double crit2 = ks_critical_1pct(ks_effective_n(n, n));
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> x, y;
    for (const auto &p : pairs) {
      x.push_back(p[j]);
      y.push_back(p[j + 2]);
    }
    const double d = ks_two_sample(x, y);
    out.detail << "scaling KS s=" << g1[j] << " " << fmt(d) << " crit " << fmt(crit2) << "; ";
    out.require(d < crit2, "scaling");
  }
}

void zeta(const Options &opt, Outcome &out) {
  const std::size_t n = 10000;
  const ZetaGrid grid;
  const auto zs = parallel_map(n, opt.workers, [&](std::size_t i) {
    PhiloxStream rng({opt.seed, static_cast<std::uint32_t>(i), substream_id(Substream::reference, 10)});
    const auto [base, dense] = sample_zeta_nested(grid, rng);
    return std::pair{base.value, dense.value};
  });
  std::vector<double> base, dense;
  for (const auto &[b, d] : zs) {
    base.push_back(b);
    dense.push_back(d);
  }
  const double mb = quantile(base, 0.5), md = quantile(dense, 0.5);
  const double rel = std::abs(md - mb) / std::abs(mb);
  out.detail << "median " << fmt(mb, 6) << " doubled " << fmt(md, 6) << " rel "
             << fmt(rel, 3) << "; ";
  out.require(rel < 0.01, "grid stability");

  FunctionPath path(grid.points(), [](double s) { return s; });
  const double unit = minimize_zeta(path, grid).value;
  const double err = std::abs(unit - std::pow(2.0, 0.75));
  out.detail << "deterministic error " << fmt(err, 3) << "; ";
  out.require(err < 1e-6, "deterministic path");

  for (double x : {2.0, 3.0, 4.0}) {
    const double p = static_cast<double>(std::count_if(
                         base.begin(), base.end(), [x](double z) { return z > x; })) /
                     static_cast<double>(n);
    const double se = std::sqrt(std::max(p * (1.0 - p), 1.0 / static_cast<double>(n)) /
                                static_cast<double>(n));
    const double bound = 1.0 - chi3_cdf((x - 0.5) / kSqrt2);
    out.detail << "P(zeta>" << x << ") " << fmt(p) << " <= " << fmt(bound) << "; ";
    out.require(p <= bound + 3.0 * se, "tail x=" + fmt(x));
  }
}

void tips(const Options &opt, Outcome &out) {
  const std::size_t n = 1000;
  const double levels[] = {2.0, 4.0, 6.0};
  const auto counts = parallel_map(n, opt.workers, [&](std::size_t i) {
    PhiloxStream rng({opt.seed, static_cast<std::uint32_t>(i), substream_id(Substream::tips, 1)});
    const TipSet ts = sample_tips(1.0, 8.0, rng);
    std::array<std::uint64_t, 3> c{};
    for (double u : ts.tips) {
      for (std::size_t j = 0; j < 3; ++j) {
        c[j] += u >= -levels[j] ? 1 : 0;
      }
    }
    return c;
  });
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<std::uint64_t> c;
    for (const auto &a : counts) {
      c.push_back(a[j]);
    }
    const auto gof = poisson_gof(c, std::exp(kSqrt2 * levels[j]) / kSqrt2);
    out.detail << "v=" << levels[j] << " p " << fmt(gof.p_value) << "; ";
    out.require(gof.p_value > 0.01, "v=" + fmt(levels[j]));
  }
}

// ---------------------------------------------------------------------------
// Cluster pool shared by the fluctuation, mean-scale and tail criteria.

struct Pool {
  std::vector<ClusterSample> clusters;
  std::vector<double> zeta;
  double seconds = 0.0;
};

Pool make_pool(const Options &opt) {
  const auto start = std::chrono::steady_clock::now();
  ClusterConfig cc;
  cc.v_list = uniform_depths(opt.pool_depth, opt.pool_step);
  cc.validate();
  Pool pool;
  pool.clusters = parallel_map(opt.clusters, opt.workers, [&](std::size_t i) {
    return sample_cluster(cc, {opt.seed, static_cast<std::uint32_t>(i), 0});
  });
  const ZetaGrid grid;
  pool.zeta = parallel_map(opt.clusters, opt.workers, [&](std::size_t i) {
    PhiloxStream rng({opt.seed, static_cast<std::uint32_t>(i), substream_id(Substream::reference)});
    return sample_zeta(grid, rng).value;
  });
  pool.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return pool;
}

void fluctuations(const Pool &pool, Outcome &out) {
  const double v[] = {8.0, 12.0, 16.0};
  const auto rows = theorem2_summary(v, pool.clusters, pool.zeta);
  for (const auto &r : rows) {
    out.detail << "v=" << r.v << " KS " << fmt(r.ks) << " median " << fmt(r.median)
               << " undefined " << fmt(r.undefined_frequency) << " failed " << r.failed
               << "; ";
    out.require(std::isfinite(r.ks), "KS finite at v=" + fmt(r.v));
  }
  const auto &last = rows.back();
  out.detail << "zeta band [" << fmt(last.zeta_q10) << ", " << fmt(last.zeta_q90) << "]";
  out.require(last.ks <= rows.front().ks + 0.05, "KS trend");
  out.require(last.undefined_frequency < 0.05, "undefined frequency");
  out.require(last.median >= last.zeta_q10 && last.median <= last.zeta_q90, "median band");
  out.require(rows.front().clusters - rows.front().failed >= 500, "500 clusters");
}

void log_ratio(const Pool &pool, Outcome &out) {
  const double v[] = {8.0, 12.0, 16.0};
  const auto rows = theorem2_summary(v, pool.clusters, pool.zeta);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out.detail << "v=" << rows[j].v << " " << fmt(rows[j].log_ratio_median) << "; ";
    if (j > 0) {
      out.require(rows[j].log_ratio_median > rows[j - 1].log_ratio_median, "monotone");
    }
  }
  out.require(rows.back().log_ratio_median > 0.7, "exceeds 0.7 at v=16");
}

void assemblies(const Options &opt, const Pool &pool, Outcome &out) {
  const double v_fit[] = {8.0, 10.0};
  const auto est = estimate_cstar(pool.clusters, v_fit, 1000, opt.seed);
  out.detail << "cstar " << fmt(est.value) << " [" << fmt(est.ci_low) << ", "
             << fmt(est.ci_high) << "]";
  double lo = -INFINITY, hi = INFINITY;
  for (std::size_t j = 0; j < est.v_fit.size(); ++j) {
    out.detail << " v" << est.v_fit[j] << " " << fmt(est.per_v[j]) << " ["
               << fmt(est.per_v_low[j]) << ", " << fmt(est.per_v_high[j]) << "]";
    lo = std::max(lo, est.per_v_low[j]);
    hi = std::min(hi, est.per_v_high[j]);
  }
  out.detail << "; ";
  out.require(lo <= hi, "cstar stable across v_fit");

  const double v[] = {6.0, 12.0};
  const auto res = theorem1_pipeline(pool.clusters, v, 12.0, opt.assemblies, opt.seed,
                                     ZSpec{}, est.value, -4.0, opt.workers);
  for (const auto &s : res.summary) {
    out.detail << "v=" << s.v << " median " << fmt(s.median) << " iqr " << fmt(s.iqr())
               << " failed " << s.failed << "/" << s.assemblies << "; ";
  }
  const auto &s6 = res.summary[0];
  const auto &s12 = res.summary[1];
  out.require(s12.assemblies - s12.failed >= 200, "200 assemblies");
  out.require(s12.median >= 0.5 && s12.median <= 2.0, "median in [0.5, 2]");
  out.require(s12.iqr() < s6.iqr(), "IQR shrinks");
}

void tail_events(const Pool &pool, Outcome &out) {
  double prev = INFINITY;
  for (double u : {6.0, 9.0, 12.0}) {
    const double f = tail_event_frequency(pool.clusters, u, 0.0, 1.0);
    out.detail << "u=" << u << " " << fmt(f) << "; ";
    out.require(f <= prev, "non-increasing");
    prev = f;
  }
}

} // namespace

int main(int argc, char **argv) {
  Options opt;
  CLI::App app{"Acceptance suite"};
  app.add_option("--seed", opt.seed);
  app.add_option("--workers", opt.workers, "Default BBMX_WORKERS or all cores");
  app.add_option("--clusters", opt.clusters, "Cluster pool size");
  app.add_option("--pool-depth", opt.pool_depth);
  app.add_option("--pool-step", opt.pool_step);
  app.add_option("--assemblies", opt.assemblies);
  app.add_option("--only", opt.only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  set_log_level(0);
  opt.workers = resolve_workers(opt.workers);

  const std::set<int> wanted(opt.only.begin(), opt.only.end());
  auto selected = [&](int id) { return wanted.empty() || wanted.contains(id); };

  Pool pool;
  auto need_pool = [&] {
    if (pool.clusters.empty()) {
      pool = make_pool(opt);
      std::size_t failed = 0;
      for (const auto &c : pool.clusters) {
        failed += c.failed ? 1 : 0;
      }
      std::printf("  cluster pool: %zu clusters to depth %g (step %g), %zu failed, %.0f s\n",
                  pool.clusters.size(), opt.pool_depth, opt.pool_step, failed, pool.seconds);
      std::fflush(stdout);
    }
    return std::cref(pool);
  };

  struct Entry {
    int id;
    const char *name;
    std::function<void(Outcome &)> body;
  };
  const std::vector<Entry> entries = {
      {1, "Yule law", [&](Outcome &o) { yule(opt, o); }},
      {2, "many-to-one anchor", [&](Outcome &o) { many_to_one(opt, o); }},
      {3, "martingale mean", [&](Outcome &o) { martingale(opt, o); }},
      {4, "ballot oracle", [&](Outcome &o) { ballot(opt, o); }},
      {5, "Bessel sampler", [&](Outcome &o) { bessel(opt, o); }},
      {6, "zeta sampler stability", [&](Outcome &o) { zeta(opt, o); }},
      {7, "fluctuation law trend", [&](Outcome &o) { fluctuations(need_pool(), o); }},
      {8, "log-count ratio trend", [&](Outcome &o) { log_ratio(need_pool(), o); }},
      {9, "tip counts", [&](Outcome &o) { tips(opt, o); }},
      {10, "decorated assembly trend", [&](Outcome &o) { assemblies(opt, need_pool(), o); }},
      {11, "tail event frequency", [&](Outcome &o) { tail_events(need_pool(), o); }},
  };

  int ran = 0, passed = 0;
  for (const auto &e : entries) {
    if (!selected(e.id)) {
      continue;
    }
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      e.body(o);
    } catch (const std::exception &ex) {
      o.passed = false;
      o.detail << "error: " << ex.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ++ran;
    passed += o.passed ? 1 : 0;
    std::printf("%s %2d %s (%.1f s): %s\n", o.passed ? "PASS" : "FAIL", e.id, e.name, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%d passed\n", passed, ran);
  return passed == ran ? kExitOk : kExitAcceptance;
}
