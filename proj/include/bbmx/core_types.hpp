#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bbmx {

inline constexpr double kSqrt2 = std::numbers::sqrt2;
/// Coefficient of the logarithmic correction 3/(2 sqrt 2).
inline constexpr double kLogCorrection = 3.0 / (2.0 * std::numbers::sqrt2);

/// log(max(t, 1)).
inline double log_plus(double t) { return t > 1.0 ? std::log(t) : 0.0; }

/// Centering of the BBM maximum: sqrt(2) t - 3/(2 sqrt 2) log+ t.
double m_of_t(double t);

/// Upper tail of the standard normal, P(N > x).
inline double normal_upper_tail(double x) {
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

// ---------------------------------------------------------------------------
// PointMeasure

/// Finite atomic measure on the real line. Atoms are kept sorted with
/// strictly increasing positions and multiplicities >= 1.
class PointMeasure {
public:
  struct Atom {
    double position;
    std::uint64_t multiplicity;
  };

  PointMeasure() = default;

  /// Builds a measure from unsorted positions; equal positions merge.
  static PointMeasure from_positions(std::vector<double> positions);
  /// Builds from (position, multiplicity) pairs in any order.
  static PointMeasure from_atoms(std::vector<Atom> atoms);

  const std::vector<Atom> &atoms() const noexcept { return atoms_; }
  bool empty() const noexcept { return atoms_.empty(); }
  std::uint64_t total_mass() const noexcept { return total_; }

  /// Mass of [lo, hi]; both endpoints closed.
  std::uint64_t count(double lo, double hi) const;
  /// Mass of [lo, +inf).
  std::uint64_t count_from(double lo) const;

  std::optional<double> max_position() const {
    if (atoms_.empty()) {
      return std::nullopt;
    }
    return atoms_.back().position;
  }

  /// Every atom moved by `offset`.
  PointMeasure shifted(double offset) const;

  void write_csv(std::ostream &os) const;
  static PointMeasure read_csv(std::istream &is);

  friend bool operator==(const PointMeasure &a, const PointMeasure &b);

private:
  std::vector<Atom> atoms_;
  std::uint64_t total_ = 0;
};

/// Total multiplicity of atoms at positions >= -v.
inline std::uint64_t count_at_least(const PointMeasure &mu, double v) {
  return mu.count_from(-v);
}

// ---------------------------------------------------------------------------
// Genealogy

using ParticleId = std::uint64_t;
inline constexpr ParticleId kNoParent = ~ParticleId{0};

/// One lifetime segment of the tree: born at a branch event (or as the root)
/// and alive until its own branch event or the horizon.
struct Particle {
  ParticleId id = 0;
  ParticleId parent_id = kNoParent;
  double birth_time = 0.0;
  double height_at_birth = 0.0;

  bool is_root() const noexcept { return parent_id == kNoParent; }
};

struct AliveParticle {
  ParticleId id;
  double height;
};

/// Alive set of one BBM at time t. When genealogy is recorded, `genealogy[i]`
/// holds the particle with id i and parents precede children.
struct PopulationSnapshot {
  double t = 0.0;
  std::vector<AliveParticle> alive;
  std::vector<Particle> genealogy;
  bool pruned_mass_flag = false;
  std::uint64_t branch_events = 0;

  bool has_genealogy() const noexcept { return !genealogy.empty(); }
  std::optional<double> max_height() const;

  /// CSV dump, columns: id,parent_id,birth_time,height (height is the height
  /// at t for alive particles and empty otherwise; parent_id empty for root).
  void write_csv(std::ostream &os) const;
};

/// d(x, y) = ((|x| - |x^y|) + (|y| - |x^y|)) / 2 for alive x, y.
double genealogical_distance(ParticleId x, ParticleId y,
                             const PopulationSnapshot &snapshot);

/// Time at which the lineages of x and y split (|x^y|); t when x == y.
double split_time(ParticleId x, ParticleId y, const PopulationSnapshot &snapshot);

// ---------------------------------------------------------------------------
// Path

/// A function sampled on a strictly increasing time grid.
template <typename Scalar> struct BasicPath {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Vector grid;
  Vector values;

  Eigen::Index size() const noexcept { return grid.size(); }

  bool valid() const {
    if (grid.size() != values.size()) {
      return false;
    }
    for (Eigen::Index i = 1; i < grid.size(); ++i) {
      if (!(grid[i] > grid[i - 1])) {
        return false;
      }
    }
    return true;
  }
};

using Path = BasicPath<double>;

// ---------------------------------------------------------------------------
// Provenance

struct RunManifest {
  std::uint64_t seed = 0;
  std::uint64_t replica_count = 0;
  std::map<std::string, std::string> parameters;
  std::string tool_version;
  std::vector<std::uint64_t> per_replica_digest;
  std::vector<std::string> notes;

  std::string to_json() const;
  static RunManifest from_json(const std::string &text);
};

/// FNV-1a over raw bytes; chained through `basis` for incremental use.
std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                    std::uint64_t basis = 0xcbf29ce484222325ull);
std::uint64_t digest_doubles(std::span<const double> values,
                             std::uint64_t basis = 0xcbf29ce484222325ull);

} // namespace bbmx
