#pragma once

#include "bbmx/cluster.hpp"
#include "bbmx/random.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace bbmx {

/// Atoms of a PPP(Z e^{-sqrt2 u} du) restricted to [-v_floor, inf), sorted in
/// decreasing order.
struct TipSet {
  double Z = 1.0;
  double v_floor = 0.0;
  std::vector<double> tips;
};

TipSet sample_tips(double Z, double v_floor, PhiloxStream &rng);

/// The same PPP with the deep part binned. Tips in [-v_floor, split) are kept
/// only as counts per cell of width `step`, cell j covering
/// [-v_floor + j step, -v_floor + (j+1) step); tips >= split are exact.
struct BinnedTips {
  double Z = 1.0;
  double v_floor = 0.0;
  double step = 0.0;
  double split = 0.0;
  std::vector<std::uint64_t> cell_counts;
  std::vector<double> upper_tips;

  std::uint64_t total() const;
};

/// Cell counts are independent Poisson variables with the exact PPP means.
/// `split` is rounded to the cell grid.
BinnedTips sample_binned_tips(double Z, double v_floor, double step,
                              double split, PhiloxStream &rng);

/// E([-v, inf)) = sum over tips u_k >= -v of C^k([-(v + u_k), 0]), one cluster
/// per tip in order (clusters[k] dresses tips.tips[k]). Depths are read with
/// ClusterSample::count_floor.
std::uint64_t assemble_E(const TipSet &tips,
                         std::span<const ClusterSample> clusters, double v);

/// Same sum with every tip dressed by an independent uniform draw from a
/// cluster pool (multinomial allocation for crowded cells). `v` and v_floor
/// must be multiples of tips.step for the cells to align with depth reads.
std::uint64_t assemble_E_from_pool(const BinnedTips &tips,
                                   std::span<const ClusterSample> pool, double v,
                                   PhiloxStream &rng);

/// E_count / (Cstar_hat Z v e^{sqrt2 v}).
double ratio_statistic(std::uint64_t E_count, double Z, double Cstar_hat,
                       double v);

struct CstarEstimate {
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> v_fit;
  std::vector<double> per_v;
  std::vector<double> per_v_low;
  std::vector<double> per_v_high;
  /// Top 1% of samples carry more than half of the sample mean, per v.
  std::vector<bool> heavy_tail;
  std::size_t n_clusters = 0;
};

/// Mean of C([-v, 0]) e^{-sqrt2 v} averaged over v_fit, with percentile
/// bootstrap intervals (clusters resampled jointly across v).
CstarEstimate estimate_cstar(std::span<const ClusterSample> clusters,
                             std::span<const double> v_fit,
                             int bootstrap_rounds = 1000,
                             std::uint64_t bootstrap_seed = 0);

/// Derivative-martingale proxy for Z: Z_t of an unpruned BBM at time t,
/// resampled until positive. `attempts` receives the number of draws.
double sample_z_proxy(double t, StreamKey key, double c_diamond = 1.0,
                      int *attempts = nullptr);

} // namespace bbmx
