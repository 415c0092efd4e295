#pragma once

#include "bbmx/random.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace bbmx {

struct TestReport {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::uint64_t n_samples = 0;
  std::string notes;
};

void write_reports_csv(std::ostream &os, std::span<const TestReport> reports);

struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

MeanEstimate mean_estimate(std::span<const double> xs);

/// Passes when |estimate.mean - target| <= k * estimate.se.
TestReport within_se(std::string name, const MeanEstimate &estimate,
                     double target, double k = 3.0);

// ---------------------------------------------------------------------------
// Closed forms

/// P(Brownian bridge from x to y over [0, t] stays positive) = 1 - e^{-2xy/t}.
double ballot_bridge_prob(double x, double y, double t);

/// e^s Q((m_s - v)/sqrt s), the mean of E_s([-v, inf)).
double many_to_one_mean(double s, double v);

/// many_to_one_mean(s, v) / (s e^{sqrt2 v - v^2/(2s)}).
double first_moment_ratio(double s, double v);

/// Checks many_to_one_mean(s, v) <= C s e^{sqrt2 v - v^2/(2s)}.
TestReport first_moment_bound_check(double s, double v, double C = 1.0);

/// Smallest C for which the bound holds on every (s, v) of the sweep with
/// 1 <= v <= s.
double fit_first_moment_constant(std::span<const double> s_list,
                                 std::span<const double> v_list);

/// Frequency with which count >= c e^{-Cr} e^{sqrt2 v - v^2/(2s)}; passes when
/// it reaches 1 - C e^{-cr}.
TestReport lower_bound_check(double s, double v, double r,
                             std::span<const std::uint64_t> counts, double c,
                             double C);

/// Largest c in `c_grid` for which lower_bound_check passes; NaN if none.
double calibrate_lower_bound_c(double s, double v, double r,
                               std::span<const std::uint64_t> counts,
                               std::span<const double> c_grid, double C);

/// CDF of the chi distribution with 3 degrees of freedom (law of Y_1).
double chi3_cdf(double r);

// ---------------------------------------------------------------------------
// Monte Carlo bridge oracle

struct BridgeEstimate {
  /// Fraction of bridges positive at every grid point.
  MeanEstimate naive;
  /// Grid positivity times the exact no-crossing probability between grid
  /// points, which removes the discretization bias.
  MeanEstimate corrected;
};

/// Bridges are sampled exactly at n_steps equal grid intervals. Replica i uses
/// stream (key.seed, i, key.substream).
BridgeEstimate bridge_positive_mc(double x, double y, double t,
                                  std::size_t n_bridges, std::size_t n_steps,
                                  StreamKey key);

// ---------------------------------------------------------------------------
// Goodness of fit

/// sup |F_a - F_b|.
double ks_two_sample(std::span<const double> a, std::span<const double> b);

/// sup |F_n - F|.
double ks_one_sample(std::span<const double> a,
                     const std::function<double(double)> &cdf);

/// Asymptotic Kolmogorov survival function P(K > lambda).
double kolmogorov_sf(double lambda);

/// p-value for a KS statistic with effective sample size n_eff (Stephens'
/// small-sample correction).
double ks_pvalue(double d, double n_eff);

/// Effective size n m / (n + m) for the two-sample test.
double ks_effective_n(std::size_t n, std::size_t m);

/// Asymptotic 1% critical value for the given effective size.
double ks_critical_1pct(double n_eff);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  std::size_t bins = 0;
};

/// Pearson chi-square with adjacent bins merged until every expected count
/// is at least min_expected. `expected` must sum to the observed total.
ChiSquareResult chi_square_gof(std::span<const double> observed,
                               std::span<const double> expected,
                               double min_expected = 5.0);

/// Samples on {1, 2, ...} against P(N = k) = p (1 - p)^{k-1}.
ChiSquareResult geometric_gof(std::span<const std::uint64_t> samples, double p);

/// Samples on {0, 1, ...} against Poisson(mean).
ChiSquareResult poisson_gof(std::span<const std::uint64_t> samples, double mean);

} // namespace bbmx
