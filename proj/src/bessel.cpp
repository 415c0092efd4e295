#include "bbmx/bessel.hpp"

#include "bbmx/errors.hpp"

#include <algorithm>
#include <cmath>

namespace bbmx {

namespace {

void require_increasing(std::span<const double> grid) {
  if (grid.empty()) {
    throw ValidationError("grid", "must be nonempty");
  }
  if (!(grid.front() >= 0.0)) {
    throw ValidationError("grid", "first point must be >= 0");
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw ValidationError("grid", "must be strictly increasing");
    }
  }
}

Eigen::Vector3d gaussian3(PhiloxStream &rng) {
  return {rng.normal(), rng.normal(), rng.normal()};
}

} // namespace

// ---------------------------------------------------------------------------
// Bessel3Path

Bessel3Path::Bessel3Path(std::vector<double> grid, double y0, PhiloxStream &rng)
    : times_(std::move(grid)), rng_(&rng) {
  if (!(y0 >= 0.0)) {
    throw ValidationError("y0", "Bessel-3 start must be non-negative");
  }
  require_increasing(times_);
  positions_.reserve(times_.size());
  Eigen::Vector3d w(y0, 0.0, 0.0);
  double prev = 0.0;
  for (double t : times_) {
    if (t > prev) {
      w += std::sqrt(t - prev) * gaussian3(rng);
    }
    positions_.push_back(w);
    prev = t;
  }
}

void Bessel3Path::subdivide(std::size_t i, int parts) {
  if (i + 1 >= times_.size() || parts < 2) {
    return;
  }
  const double a = times_[i];
  const double b = times_[i + 1];
  const Eigen::Vector3d wb = positions_[i + 1];
  std::vector<double> new_times;
  std::vector<Eigen::Vector3d> new_pos;
  double prev_t = a;
  Eigen::Vector3d prev_w = positions_[i];
  for (int k = 1; k < parts; ++k) {
    const double t = a + (b - a) * k / parts;
    // Brownian bridge from (prev_t, prev_w) to (b, wb).
    const double frac = (t - prev_t) / (b - prev_t);
    const double var = (t - prev_t) * (b - t) / (b - prev_t);
    const Eigen::Vector3d w =
        prev_w + frac * (wb - prev_w) + std::sqrt(var) * gaussian3(*rng_);
    new_times.push_back(t);
    new_pos.push_back(w);
    prev_t = t;
    prev_w = w;
  }
  const auto offset = static_cast<std::ptrdiff_t>(i + 1);
  times_.insert(times_.begin() + offset, new_times.begin(), new_times.end());
  positions_.insert(positions_.begin() + offset, new_pos.begin(), new_pos.end());
}

Path Bessel3Path::to_path() const {
  Path p;
  const auto n = static_cast<Eigen::Index>(times_.size());
  p.grid.resize(n);
  p.values.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.grid[i] = times_[static_cast<std::size_t>(i)];
    p.values[i] = positions_[static_cast<std::size_t>(i)].norm();
  }
  return p;
}

FunctionPath::FunctionPath(std::vector<double> grid,
                           std::function<double(double)> f)
    : times_(std::move(grid)), f_(std::move(f)) {
  require_increasing(times_);
}

void FunctionPath::subdivide(std::size_t i, int parts) {
  if (i + 1 >= times_.size() || parts < 2) {
    return;
  }
  const double a = times_[i];
  const double b = times_[i + 1];
  std::vector<double> inner;
  for (int k = 1; k < parts; ++k) {
    inner.push_back(a + (b - a) * k / parts);
  }
  times_.insert(times_.begin() + static_cast<std::ptrdiff_t>(i + 1),
                inner.begin(), inner.end());
}

Path sample_bessel3(std::span<const double> grid, double y0, PhiloxStream &rng) {
  return Bessel3Path({grid.begin(), grid.end()}, y0, rng).to_path();
}

// ---------------------------------------------------------------------------
// zeta

void ZetaGrid::validate() const {
  if (!(s_min > 0.0)) {
    throw ValidationError("grid-smin", "must be positive");
  }
  if (!(s_max > s_min)) {
    throw ValidationError("grid-smax", "must exceed grid-smin");
  }
  if (points_per_decade < 8) {
    throw ValidationError("ppd", "need at least 8 points per decade");
  }
  if (refinement_rounds < 0) {
    throw ValidationError("refine", "must be >= 0");
  }
}

std::vector<double> ZetaGrid::points() const {
  validate();
  const double decades = std::log10(s_max / s_min);
  const auto n = static_cast<int>(std::ceil(decades * points_per_decade - 1e-9));
  std::vector<double> pts;
  pts.reserve(static_cast<std::size_t>(n) + 1);
  const double ratio_log = std::log(s_max / s_min) / n;
  for (int i = 0; i <= n; ++i) {
    pts.push_back(s_min * std::exp(ratio_log * i));
  }
  pts.back() = s_max;
  return pts;
}

ZetaSample sample_zeta(const ZetaGrid &grid, PhiloxStream &rng) {
  Bessel3Path path(grid.points(), 0.0, rng);
  return minimize_zeta(path, grid);
}

std::pair<ZetaSample, ZetaSample> sample_zeta_nested(const ZetaGrid &grid,
                                                     PhiloxStream &rng) {
  Bessel3Path coarse(grid.points(), 0.0, rng);
  Bessel3Path fine = coarse;
  // Insert one point per interval, walking backwards to keep indices valid.
  for (std::size_t i = fine.size() - 1; i-- > 0;) {
    fine.subdivide(i, 2);
  }
  ZetaGrid fine_grid = grid;
  fine_grid.points_per_decade *= 2;
  const ZetaSample a = minimize_zeta(coarse, grid);
  const ZetaSample b = minimize_zeta(fine, fine_grid);
  return {a, b};
}

Path backbone(std::span<const double> grid, PhiloxStream &rng) {
  if (grid.empty() || grid.front() != 0.0) {
    throw ValidationError("grid", "backbone grid must start at 0");
  }
  Path p = sample_bessel3(grid, 0.0, rng);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p.values[i] = -p.values[i] - kLogCorrection * log_plus(p.grid[i]);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Envelope diagnostics

EnvelopeReport check_envelope(const Path &path, double epsilon, double K) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw ValidationError("epsilon", "must lie in (0, 1)");
  }
  EnvelopeReport report;
  const double holder_exponent = 0.5 - epsilon;
  for (Eigen::Index i = 0; i < path.size(); ++i) {
    const double s = path.grid[i];
    const double y = path.values[i];
    if (s >= K) {
      bool violated = false;
      if (y < std::pow(s, holder_exponent)) {
        ++report.lower_violations;
        violated = true;
      }
      const double ll = s > 1.0 ? std::log(std::log(s)) : -1.0;
      if (ll > 0.0 && y > 3.0 * std::sqrt(s * ll)) {
        ++report.upper_violations;
        violated = true;
      }
      if (violated && std::isnan(report.first_violation)) {
        report.first_violation = s;
      }
    }
  }
  report.lower_ok = report.lower_violations == 0;
  report.upper_ok = report.upper_violations == 0;

  for (Eigen::Index i = 0; i < path.size() && path.grid[i] <= K; ++i) {
    for (Eigen::Index j = i + 1; j < path.size() && path.grid[j] <= K; ++j) {
      const double dt = path.grid[j] - path.grid[i];
      const double ratio =
          std::abs(path.values[j] - path.values[i]) / std::pow(dt, holder_exponent);
      report.holder_constant = std::max(report.holder_constant, ratio);
    }
  }
  return report;
}

double calibrate_envelope_K(double epsilon, double y0,
                            std::span<const double> candidates, double horizon,
                            int samples, StreamKey key) {
  if (samples <= 0) {
    throw ValidationError("samples", "must be positive");
  }
  std::vector<double> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.empty() || !(horizon > sorted.back())) {
    throw ValidationError("horizon", "must exceed every candidate K");
  }
  ZetaGrid g{sorted.front() / 10.0, horizon, 16, 0};
  const auto grid = g.points();

  // First violation time beyond each candidate, per path.
  std::vector<std::size_t> violations(sorted.size(), 0);
  for (int n = 0; n < samples; ++n) {
    key.replica = static_cast<std::uint32_t>(n);
    PhiloxStream rng(key);
    const Path p = sample_bessel3(grid, y0, rng);
    for (std::size_t c = 0; c < sorted.size(); ++c) {
      if (!check_envelope(p, epsilon, sorted[c]).ok()) {
        ++violations[c];
      }
    }
  }
  for (std::size_t c = 0; c < sorted.size(); ++c) {
    if (static_cast<double>(violations[c]) <= epsilon * samples) {
      return sorted[c];
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

} // namespace bbmx
