#include "bbmx/limit_harness.hpp"

#include "bbmx/bbm_engine.hpp"
#include "bbmx/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

namespace bbmx {

TipSet sample_tips(double Z, double v_floor, PhiloxStream &rng) {
  if (!(Z > 0.0)) {
    throw ValidationError("Z", "must be positive");
  }
  TipSet ts;
  ts.Z = Z;
  ts.v_floor = v_floor;
  const double mean = Z * std::exp(kSqrt2 * v_floor) / kSqrt2;
  std::poisson_distribution<std::uint64_t> count(mean);
  const std::uint64_t n = count(rng);
  ts.tips.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    // Inverse CDF of the density sqrt2 e^{-sqrt2 (u + v_floor)} on [-v_floor, inf).
    ts.tips.push_back(-v_floor - std::log(rng.uniform()) / kSqrt2);
  }
  std::sort(ts.tips.begin(), ts.tips.end(), std::greater<>());
  return ts;
}

std::uint64_t BinnedTips::total() const {
  return std::accumulate(cell_counts.begin(), cell_counts.end(),
                         std::uint64_t{0}) +
         upper_tips.size();
}

BinnedTips sample_binned_tips(double Z, double v_floor, double step,
                              double split, PhiloxStream &rng) {
  if (!(Z > 0.0)) {
    throw ValidationError("Z", "must be positive");
  }
  if (!(step > 0.0)) {
    throw ValidationError("step", "must be positive");
  }
  BinnedTips bt;
  bt.Z = Z;
  bt.v_floor = v_floor;
  bt.step = step;
  const auto cells = static_cast<long>(
      std::max(0.0, std::round((split + v_floor) / step)));
  bt.split = -v_floor + static_cast<double>(cells) * step;

  // Intensity mass of [a, b): Z (e^{-sqrt2 a} - e^{-sqrt2 b}) / sqrt2.
  auto mass = [Z](double a, double b) {
    return Z * (std::exp(-kSqrt2 * a) - std::exp(-kSqrt2 * b)) / kSqrt2;
  };
  bt.cell_counts.resize(static_cast<std::size_t>(cells));
  for (long j = 0; j < cells; ++j) {
    const double a = -v_floor + static_cast<double>(j) * step;
    std::poisson_distribution<std::uint64_t> pois(mass(a, a + step));
    bt.cell_counts[static_cast<std::size_t>(j)] = pois(rng);
  }
  const double upper_mean = Z * std::exp(-kSqrt2 * bt.split) / kSqrt2;
  std::poisson_distribution<std::uint64_t> pois(upper_mean);
  const std::uint64_t n = pois(rng);
  for (std::uint64_t i = 0; i < n; ++i) {
    bt.upper_tips.push_back(bt.split - std::log(rng.uniform()) / kSqrt2);
  }
  std::sort(bt.upper_tips.begin(), bt.upper_tips.end(), std::greater<>());
  return bt;
}

std::uint64_t assemble_E(const TipSet &tips,
                         std::span<const ClusterSample> clusters, double v) {
  std::uint64_t total = 0;
  std::size_t k = 0;
  for (; k < tips.tips.size() && tips.tips[k] >= -v; ++k) {
    if (k >= clusters.size()) {
      throw ValidationError("clusters", "need one cluster per tip above -v");
    }
    total += clusters[k].count_floor(v + tips.tips[k]);
  }
  return total;
}

std::uint64_t assemble_E_from_pool(const BinnedTips &tips,
                                   std::span<const ClusterSample> pool, double v,
                                   PhiloxStream &rng) {
  if (pool.empty()) {
    throw ValidationError("pool", "cluster pool is empty");
  }
  if (v > tips.v_floor + 1e-9) {
    throw ValidationError("v", "tips were only sampled down to -v_floor");
  }
  const std::size_t P = pool.size();
  std::uniform_int_distribution<std::size_t> pick(0, P - 1);
  std::uint64_t total = 0;

  for (double u : tips.upper_tips) {
    if (u < -v) {
      continue;
    }
    total += pool[pick(rng)].count_floor(v + u);
  }

  std::vector<std::uint64_t> alloc(P);
  for (std::size_t j = 0; j < tips.cell_counts.size(); ++j) {
    const std::uint64_t n = tips.cell_counts[j];
    const double u = -tips.v_floor + static_cast<double>(j) * tips.step;
    if (n == 0 || u < -v - 1e-9) {
      continue;
    }
    const double depth = std::max(0.0, v + u);
    if (n * 8 < P) {
      for (std::uint64_t i = 0; i < n; ++i) {
        total += pool[pick(rng)].count_floor(depth);
      }
      continue;
    }
    // Multinomial(n; 1/P, ..., 1/P) through sequential binomials.
    std::uint64_t remaining = n;
    for (std::size_t i = 0; i < P && remaining > 0; ++i) {
      std::uint64_t k = remaining;
      if (i + 1 < P) {
        std::binomial_distribution<std::uint64_t> bin(
            remaining, 1.0 / static_cast<double>(P - i));
        k = bin(rng);
      }
      alloc[i] = k;
      remaining -= k;
      if (k > 0) {
        total += k * pool[i].count_floor(depth);
      }
    }
  }
  return total;
}

double ratio_statistic(std::uint64_t E_count, double Z, double Cstar_hat,
                       double v) {
  if (!(v > 0.0) || !(Z > 0.0) || !(Cstar_hat > 0.0)) {
    throw ValidationError("ratio", "need v, Z and Cstar_hat positive");
  }
  return static_cast<double>(E_count) /
         (Cstar_hat * Z * v * std::exp(kSqrt2 * v));
}

namespace {

double percentile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

} // namespace

CstarEstimate estimate_cstar(std::span<const ClusterSample> clusters,
                             std::span<const double> v_fit,
                             int bootstrap_rounds,
                             std::uint64_t bootstrap_seed) {
  if (v_fit.empty()) {
    throw ValidationError("v_fit", "need at least one depth");
  }
  std::vector<const ClusterSample *> ok;
  for (const auto &c : clusters) {
    if (!c.failed) {
      ok.push_back(&c);
    }
  }
  if (ok.empty()) {
    throw ValidationError("clusters", "no successful clusters");
  }
  const std::size_t n = ok.size();
  const std::size_t m = v_fit.size();

  // scaled[i][j] = C_i([-v_j, 0]) e^{-sqrt2 v_j}
  std::vector<std::vector<double>> scaled(n, std::vector<double>(m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      scaled[i][j] = static_cast<double>(ok[i]->count_at(v_fit[j])) *
                     std::exp(-kSqrt2 * v_fit[j]);
    }
  }

  CstarEstimate est;
  est.v_fit.assign(v_fit.begin(), v_fit.end());
  est.n_clusters = n;
  est.per_v.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scaled[i][j];
      est.per_v[j] += col[i];
    }
    est.per_v[j] /= static_cast<double>(n);
    std::sort(col.begin(), col.end(), std::greater<>());
    const std::size_t top = std::max<std::size_t>(1, n / 100);
    const double top_sum = std::accumulate(col.begin(), col.begin() +
                                           static_cast<std::ptrdiff_t>(top), 0.0);
    const double sum = std::accumulate(col.begin(), col.end(), 0.0);
    est.heavy_tail.push_back(sum > 0.0 && top_sum > 0.5 * sum);
  }
  est.value = std::accumulate(est.per_v.begin(), est.per_v.end(), 0.0) /
              static_cast<double>(m);

  PhiloxStream rng({bootstrap_seed, 0, substream_id(Substream::reference)});
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> overall;
  std::vector<std::vector<double>> per(m);
  for (int b = 0; b < bootstrap_rounds; ++b) {
    std::vector<double> sums(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto &row = scaled[pick(rng)];
      for (std::size_t j = 0; j < m; ++j) {
        sums[j] += row[j];
      }
    }
    double avg = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      per[j].push_back(sums[j] / static_cast<double>(n));
      avg += sums[j] / static_cast<double>(n);
    }
    overall.push_back(avg / static_cast<double>(m));
  }
  if (bootstrap_rounds > 0) {
    est.ci_low = percentile(overall, 0.025);
    est.ci_high = percentile(overall, 0.975);
    for (std::size_t j = 0; j < m; ++j) {
      est.per_v_low.push_back(percentile(per[j], 0.025));
      est.per_v_high.push_back(percentile(per[j], 0.975));
    }
  } else {
    est.ci_low = est.ci_high = est.value;
    est.per_v_low = est.per_v_high = est.per_v;
  }
  return est;
}

double sample_z_proxy(double t, StreamKey key, double c_diamond, int *attempts) {
  SimulationOptions opts;
  opts.record_genealogy = false;
  for (std::uint32_t i = 0;; ++i) {
    PhiloxStream rng(child_key(key, Substream::martingale, i));
    const PopulationSnapshot snap = simulate_bbm(t, PruneConfig::none(), rng, opts);
    const double z = derivative_martingale(snap, c_diamond);
    if (z > 0.0) {
      if (attempts != nullptr) {
        *attempts = static_cast<int>(i) + 1;
      }
      return z;
    }
  }
}

} // namespace bbmx
