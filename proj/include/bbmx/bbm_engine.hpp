#pragma once

#include "bbmx/core_types.hpp"
#include "bbmx/random.hpp"

#include <cstdint>
#include <span>
#include <memory>
#include <vector>

namespace bbmx {

enum class PruneReference {
  /// Running maximum of heights seen at branch events.
  running_front,
  /// The straight line sqrt(2) s.
  linear_sqrt2,
  /// Expected-descendant barrier toward a fixed level at the horizon. A
  /// particle is dropped once its expected number of descendants reaching the
  /// level falls below exp(-sqrt(2) depth_beta).
  target,
};

struct PruneConfig {
  bool enabled = false;
  /// Space units. For the front references: maximal depth below the front.
  /// For `target`: margin below the critical line into the target level.
  double depth_beta = 12.0;
  PruneReference relative_to = PruneReference::running_front;

  static PruneConfig none() { return {}; }
  static PruneConfig front(double beta) {
    return {true, beta, PruneReference::running_front};
  }
  static PruneConfig linear(double beta) {
    return {true, beta, PruneReference::linear_sqrt2};
  }
  static PruneConfig toward_target(double margin) {
    return {true, margin, PruneReference::target};
  }

  void validate() const;
};

/// Default front depth when counting level sets down to depth `v_max`.
inline double default_depth_beta(double v_max) { return v_max + 12.0; }

struct SimulationOptions {
  bool record_genealogy = true;
  std::uint64_t event_cap = 200'000'000;
  /// Absolute height at the horizon for PruneReference::target.
  double target_level = 0.0;
};

/// Expected number of descendants at time `horizon` above `level` of a
/// particle at height h at time r, and the matching pruning barrier.
class TargetBarrier {
public:
  /// Threshold exp(-sqrt2 margin); a negative margin gives a threshold above 1.
  TargetBarrier(double horizon, double level, double margin);

  /// exp(s - r) * P(N > (level - h)/sqrt(s - r)).
  double expected_mass(double r, double h) const;
  /// A lower bound on the height below which particles at time r are dropped.
  double barrier(double r) const;
  bool prune(double r, double h) const { return h < barrier(r); }

  double horizon() const noexcept { return horizon_; }
  double level() const noexcept { return level_; }
  double log_threshold() const noexcept { return log_threshold_; }

  /// Exact barrier, without the tabulation.
  double exact_barrier(double r) const;

private:
  double horizon_;
  double level_;
  double log_threshold_;
  /// level - barrier as a function of remaining time, shared per margin.
  std::shared_ptr<const std::vector<double>> drop_;
};

/// Event-driven binary-branching BBM to horizon t. Heights are exact Gaussian
/// increments between branch events; pruning acts at branch events.
PopulationSnapshot simulate_bbm(double t, const PruneConfig &prune,
                                PhiloxStream &rng,
                                const SimulationOptions &options = {});

/// C * sum_x (sqrt2 t - h) exp(sqrt2 (h - sqrt2 t)). Warns on pruned input.
double derivative_martingale(const PopulationSnapshot &snapshot,
                             double c_diamond = 1.0);

/// sum_x delta_{h_t(x) - m_t}.
PointMeasure extremal_process(const PopulationSnapshot &snapshot);

struct LocalMaximum {
  ParticleId id;
  double height;
  /// Heights in the genealogical r-ball relative to the local maximum.
  PointMeasure cluster;
};

/// r-local maxima and their clusters. Requires recorded genealogy.
std::vector<LocalMaximum> local_maxima(const PopulationSnapshot &snapshot,
                                       double r);
/// r = t/2.
std::vector<LocalMaximum> local_maxima(const PopulationSnapshot &snapshot);

// ---------------------------------------------------------------------------
// Conditioned decorations

/// A BBM extremal process at time s, conditioned on its centered maximum not
/// exceeding y and shifted down by y so that its support lies in (-inf, 0].
struct DecorationSample {
  PointMeasure measure;
  double s = 0.0;
  double y = 0.0;
  std::uint64_t rejections = 0;
};

/// Rejection sampler: repeat simulate_bbm(s) until max <= m_s + y, then
/// return atoms (h - m_s - y). With PruneReference::target the caller must
/// pass the window depth; atoms below it are not guaranteed complete.
DecorationSample sample_decoration(double s, double y, const PruneConfig &prune,
                                   PhiloxStream &rng,
                                   std::uint64_t max_rejections = 1000,
                                   double window_depth = 0.0);

/// Streamed level-set counts of one conditioned decoration.
struct DecorationCounts {
  /// counts[i] = number of atoms in [-depths[i], 0].
  std::vector<std::uint64_t> counts;
  std::uint64_t rejections = 0;
  std::uint64_t events = 0;
  /// Sum of expected window mass carried by pruned particles (accepted run).
  double pruned_mass = 0.0;
  /// Largest multiplicity carried by a roulette survivor.
  std::uint64_t max_weight = 1;
};

struct DecorationCountRequest {
  double s = 1.0;
  double y = 0.0;
  /// Sorted ascending, all >= 0.
  std::span<const double> depths;
  /// Target-barrier margin; non-positive disables pruning.
  double prune_margin = 4.0;
  /// Below the barrier a particle of mass mu and weight w survives with
  /// probability 1/k, k = ceil(threshold/(mu w)), and then weighs w k. Counts
  /// stay integer and unbiased; only masses beyond kMaxRouletteFactor are
  /// dropped outright.
  bool roulette = false;
  /// With roulette and a positive value, a particle keeps its weight only while
  /// its expected count in [-d, 0] reaches roulette_rho * typical_cluster_count(d)
  /// for some d up to the deepest depth. Counts stay unbiased and every depth
  /// gets a relative standard error of roughly sqrt(roulette_rho).
  double roulette_rho = 0.0;
  std::uint64_t max_rejections = 1000;
  std::uint64_t event_cap = 200'000'000;
};

inline constexpr double kMaxRouletteFactor = 1e12;

/// exp(sqrt2 d - 1.35 d^(2/3)), close to the median cluster count at depth d
/// for 3 <= d <= 16. Only used to scale roulette thresholds.
double typical_cluster_count(double d);

/// Depth-first streaming version of sample_decoration that only keeps
/// per-depth counts. Throws RejectionBudgetError or ResourceLimitError.
DecorationCounts count_decoration(const DecorationCountRequest &request,
                                  PhiloxStream &rng);

} // namespace bbmx
