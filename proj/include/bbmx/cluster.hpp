#pragma once

#include "bbmx/bbm_engine.hpp"
#include "bbmx/core_types.hpp"
#include "bbmx/random.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bbmx {

/// Homogeneous Poisson timestamps on [0, r_trunc].
struct TimestampSet {
  std::vector<double> points;
  double rate = 2.0;
  double r_trunc = 0.0;
};

/// Generated from successive exponential gaps, so the set for a shorter
/// truncation is a prefix of the set for a longer one on the same stream.
TimestampSet sample_timestamps(double r_trunc, PhiloxStream &rng,
                               double rate = 2.0);

struct Truncation {
  double r_trunc = 0.0;
  /// sum_{k >= 8} exp(-v^(2/3) k^(1/2 - eps) / 2).
  double tail_bound = 0.0;
};

/// Exponent slack in the stretched-exponential tail bound.
inline constexpr double kTailEpsilon = 0.1;

/// r_trunc = 8 v^(4/3) + 50 together with its analytic tail bound.
Truncation auto_truncation(double v);

/// Level-set counts C([-v, 0]) of one cluster at a grid of depths v.
struct ClusterSample {
  std::vector<double> depths;
  std::vector<std::uint64_t> counts;
  double r_trunc = 0.0;
  std::size_t timestamps_used = 0;
  double tail_bound_estimate = 0.0;
  /// Expected window mass dropped by decoration pruning (bias diagnostic).
  double pruned_mass = 0.0;
  std::uint64_t events = 0;
  std::uint64_t rejections = 0;
  bool failed = false;
  std::string failure;

  /// Count at a depth on the measured grid; throws DepthCoverageError
  /// otherwise.
  std::uint64_t count_at(double v) const;
  /// Count at the largest grid depth <= depth (an inner approximation of
  /// [-depth, 0]); throws DepthCoverageError beyond the grid.
  std::uint64_t count_floor(double depth) const;
  double max_depth() const { return depths.empty() ? 0.0 : depths.back(); }
};

struct ClusterConfig {
  /// Depths to measure; increasing and positive.
  std::vector<double> v_list;
  /// Non-positive selects auto_truncation(max v).
  double r_trunc = 0.0;
  /// Target-barrier margin for decorations; non-positive disables pruning.
  double prune_margin = 1.0;
  /// Weighted survival below the barrier instead of plain dropping.
  bool roulette = true;
  /// See DecorationCountRequest::roulette_rho.
  double roulette_rho = 1e-4;
  std::uint64_t max_rejections = 1000;
  std::uint64_t event_cap = 200'000'000;
  /// Adds the atom at 0 carried by the local maximum itself.
  bool include_tip = true;

  void validate() const;
  double effective_r_trunc() const;
};

/// (s, y, depths, timestamp index) -> counts of one conditioned decoration.
using DecorationCounter = std::function<DecorationCounts(
    double s, double y, std::span<const double> depths, std::size_t index)>;

/// Sums decorations at the given timestamps with y_k = -backbone_k. Exposed
/// so that the assembly can be exercised with stub components.
ClusterSample assemble_cluster(const ClusterConfig &config,
                               std::span<const double> timestamps,
                               std::span<const double> backbone_values,
                               const DecorationCounter &decoration);

/// Full sampler: rate-2 timestamps, Bessel backbone, conditioned decorations.
/// Substreams of `key` are used for each ingredient; a decoration whose
/// rejection budget runs out is retried once with twice the budget before
/// the replica is marked failed.
ClusterSample sample_cluster(const ClusterConfig &config, StreamKey key);

/// (sqrt2 v - log C([-v, 0])) / v^(2/3).
double fluctuation_statistic(const ClusterSample &sample, double v);

/// Fraction of non-failed samples with C([-w, 0]) >= eps w^-K e^(sqrt2 w)
/// for some measured w >= u.
double tail_event_frequency(std::span<const ClusterSample> samples, double u,
                            double K, double eps);

/// Uniform depth grid {0, step, 2 step, ..., max_depth}.
std::vector<double> uniform_depths(double max_depth, double step);

} // namespace bbmx
