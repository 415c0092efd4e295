#pragma once

#include "bbmx/core_types.hpp"
#include "bbmx/random.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace bbmx {

/// Bessel-3 values at grid points, built as the norm of a 3D Brownian motion
/// started at (y0, 0, 0). Marginals at grid points are exact.
Path sample_bessel3(std::span<const double> grid, double y0, PhiloxStream &rng);

/// A Bessel-3 path that can be refined between existing grid points by
/// Brownian-bridge infill of each coordinate.
class Bessel3Path {
public:
  Bessel3Path(std::vector<double> grid, double y0, PhiloxStream &rng);

  std::size_t size() const noexcept { return times_.size(); }
  double time(std::size_t i) const { return times_[i]; }
  double value(std::size_t i) const { return positions_[i].norm(); }

  /// Inserts `parts - 1` equally spaced points inside (time(i), time(i+1)).
  void subdivide(std::size_t i, int parts);

  Path to_path() const;

private:
  std::vector<double> times_;
  std::vector<Eigen::Vector3d> positions_;
  PhiloxStream *rng_;
};

/// A deterministic path s -> f(s) with the same refinement interface.
class FunctionPath {
public:
  FunctionPath(std::vector<double> grid, std::function<double(double)> f);

  std::size_t size() const noexcept { return times_.size(); }
  double time(std::size_t i) const { return times_[i]; }
  double value(std::size_t i) const { return f_(times_[i]); }
  void subdivide(std::size_t i, int parts);

private:
  std::vector<double> times_;
  std::function<double(double)> f_;
};

struct ZetaGrid {
  double s_min = 1e-3;
  double s_max = 1e3;
  int points_per_decade = 64;
  int refinement_rounds = 3;

  void validate() const;
  /// Geometric progression over [s_min, s_max].
  std::vector<double> points() const;
};

struct ZetaSample {
  double value = std::numeric_limits<double>::quiet_NaN();
  double argmin_s = std::numeric_limits<double>::quiet_NaN();
  ZetaGrid grid_used;
};

/// Each refinement round splits candidate intervals into this many pieces.
inline constexpr int kZetaSubdivision = 8;
/// An interval is a refinement candidate while the smaller endpoint value
/// minus this many bridge standard deviations, sqrt(2 ds), is below the
/// running minimum. A Brownian bridge dips that far with probability e^-18.
inline constexpr double kZetaBridgeSlack = 3.0;

/// sqrt(2) y + 1/(2 s).
inline double zeta_objective(double s, double y) {
  return kSqrt2 * y + 0.5 / s;
}

/// Minimizes the zeta objective over the path's grid, then refines
/// `refinement_rounds` times every interval that could still hide a lower
/// value, including the two next to the running argmin.
template <typename RefinablePath>
ZetaSample minimize_zeta(RefinablePath &path, const ZetaGrid &grid) {
  std::vector<double> f;
  auto evaluate = [&] {
    f.assign(path.size(), std::numeric_limits<double>::infinity());
    std::size_t best = 0;
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (path.time(i) > 0.0) {
        f[i] = zeta_objective(path.time(i), path.value(i));
        if (f[i] < f[best]) {
          best = i;
        }
      }
    }
    return best;
  };
  std::size_t best = evaluate();
  for (int round = 0; round < grid.refinement_rounds; ++round) {
    const double target = f[best];
    std::vector<std::size_t> split;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!(path.time(i) > 0.0)) {
        continue;
      }
      const double ds = path.time(i + 1) - path.time(i);
      const double low = std::min(f[i], f[i + 1]) - kZetaBridgeSlack * std::sqrt(2.0 * ds);
      if (low < target || i == best || i + 1 == best) {
        split.push_back(i);
      }
    }
    // Back to front so that pending indices stay valid.
    for (auto it = split.rbegin(); it != split.rend(); ++it) {
      path.subdivide(*it, kZetaSubdivision);
    }
    best = evaluate();
  }
  return {f[best], path.time(best), grid};
}

/// zeta = inf_s (sqrt2 Y_s + 1/(2s)) for Bessel-3 Y from 0.
ZetaSample sample_zeta(const ZetaGrid &grid, PhiloxStream &rng);

/// Zeta on one path at two densities: the grid as given, and the same path
/// infilled to twice the points per decade. Used for discretization checks.
std::pair<ZetaSample, ZetaSample> sample_zeta_nested(const ZetaGrid &grid,
                                                     PhiloxStream &rng);

/// Backbone approximation -Y_s - 3/(2 sqrt 2) log+ s with Y from 0.
/// The grid must start at 0.
Path backbone(std::span<const double> grid, PhiloxStream &rng);

struct EnvelopeReport {
  bool lower_ok = true;
  bool upper_ok = true;
  std::size_t lower_violations = 0;
  std::size_t upper_violations = 0;
  /// Grid time of the first envelope violation at or beyond K, or NaN.
  double first_violation = std::numeric_limits<double>::quiet_NaN();
  /// max |Y_t - Y_s| / |t - s|^(1/2 - eps) over grid points in [0, K].
  double holder_constant = 0.0;

  bool ok() const noexcept { return lower_ok && upper_ok; }
};

/// Checks s^(1/2-eps) <= Y_s <= 3 (s log log s)^(1/2) at every grid s >= K
/// (the upper bound only where log log s > 0) and measures the Hoelder
/// constant on [0, K].
EnvelopeReport check_envelope(const Path &path, double epsilon, double K);

/// Smallest candidate K whose envelope violation frequency over `samples`
/// Bessel paths (from y0, geometric grid up to `horizon`) is at most epsilon.
/// Returns NaN when no candidate qualifies.
double calibrate_envelope_K(double epsilon, double y0,
                            std::span<const double> candidates, double horizon,
                            int samples, StreamKey key);

} // namespace bbmx
