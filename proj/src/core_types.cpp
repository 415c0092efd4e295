#include "bbmx/core_types.hpp"

#include "bbmx/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace bbmx {

double m_of_t(double t) {
  if (!(t >= 0.0)) {
    throw ValidationError("t", "centering requires t >= 0");
  }
  return kSqrt2 * t - kLogCorrection * log_plus(t);
}

// ---------------------------------------------------------------------------
// PointMeasure

PointMeasure PointMeasure::from_positions(std::vector<double> positions) {
  std::sort(positions.begin(), positions.end());
  PointMeasure mu;
  for (double p : positions) {
    if (!mu.atoms_.empty() && mu.atoms_.back().position == p) {
      ++mu.atoms_.back().multiplicity;
    } else {
      mu.atoms_.push_back({p, 1});
    }
  }
  mu.total_ = positions.size();
  return mu;
}

PointMeasure PointMeasure::from_atoms(std::vector<Atom> atoms) {
  std::sort(atoms.begin(), atoms.end(),
            [](const Atom &a, const Atom &b) { return a.position < b.position; });
  PointMeasure mu;
  for (const Atom &a : atoms) {
    if (a.multiplicity == 0) {
      throw ValidationError("multiplicity", "atoms need multiplicity >= 1");
    }
    if (!mu.atoms_.empty() && mu.atoms_.back().position == a.position) {
      mu.atoms_.back().multiplicity += a.multiplicity;
    } else {
      mu.atoms_.push_back(a);
    }
    mu.total_ += a.multiplicity;
  }
  return mu;
}

std::uint64_t PointMeasure::count(double lo, double hi) const {
  if (!(lo <= hi)) {
    return 0;
  }
  auto first = std::lower_bound(
      atoms_.begin(), atoms_.end(), lo,
      [](const Atom &a, double x) { return a.position < x; });
  std::uint64_t n = 0;
  for (auto it = first; it != atoms_.end() && it->position <= hi; ++it) {
    n += it->multiplicity;
  }
  return n;
}

std::uint64_t PointMeasure::count_from(double lo) const {
  auto first = std::lower_bound(
      atoms_.begin(), atoms_.end(), lo,
      [](const Atom &a, double x) { return a.position < x; });
  std::uint64_t n = 0;
  for (auto it = first; it != atoms_.end(); ++it) {
    n += it->multiplicity;
  }
  return n;
}

PointMeasure PointMeasure::shifted(double offset) const {
  PointMeasure mu = *this;
  for (Atom &a : mu.atoms_) {
    a.position += offset;
  }
  return mu;
}

void PointMeasure::write_csv(std::ostream &os) const {
  os << "# schema=1\nposition,multiplicity\n";
  os << std::setprecision(17);
  for (const Atom &a : atoms_) {
    os << a.position << ',' << a.multiplicity << '\n';
  }
}

PointMeasure PointMeasure::read_csv(std::istream &is) {
  std::vector<Atom> atoms;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("position", 0) == 0) {
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ValidationError("csv", "expected 'position,multiplicity': " + line);
    }
    atoms.push_back({std::stod(line.substr(0, comma)),
                     std::stoull(line.substr(comma + 1))});
  }
  return from_atoms(std::move(atoms));
}

bool operator==(const PointMeasure &a, const PointMeasure &b) {
  if (a.atoms_.size() != b.atoms_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.atoms_.size(); ++i) {
    if (a.atoms_[i].position != b.atoms_[i].position ||
        a.atoms_[i].multiplicity != b.atoms_[i].multiplicity) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Genealogy

std::optional<double> PopulationSnapshot::max_height() const {
  if (alive.empty()) {
    return std::nullopt;
  }
  double m = -std::numeric_limits<double>::infinity();
  for (const auto &p : alive) {
    m = std::max(m, p.height);
  }
  return m;
}

void PopulationSnapshot::write_csv(std::ostream &os) const {
  os << "# schema=1 t=" << std::setprecision(17) << t
     << " pruned=" << (pruned_mass_flag ? 1 : 0) << '\n';
  os << "id,parent_id,birth_time,height\n";
  std::vector<double> final_height(genealogy.size(),
                                   std::numeric_limits<double>::quiet_NaN());
  for (const auto &a : alive) {
    if (a.id < final_height.size()) {
      final_height[a.id] = a.height;
    }
  }
  if (genealogy.empty()) {
    for (const auto &a : alive) {
      os << a.id << ",,," << a.height << '\n';
    }
    return;
  }
  for (const Particle &p : genealogy) {
    os << p.id << ',';
    if (!p.is_root()) {
      os << p.parent_id;
    }
    os << ',' << p.birth_time << ',';
    if (!std::isnan(final_height[p.id])) {
      os << final_height[p.id];
    }
    os << '\n';
  }
}

namespace {

const Particle &lookup(const PopulationSnapshot &snapshot, ParticleId id) {
  if (id >= snapshot.genealogy.size()) {
    throw ValidationError("particle_id",
                          "unknown particle " + std::to_string(id));
  }
  return snapshot.genealogy[id];
}

void require_alive(const PopulationSnapshot &snapshot, ParticleId id) {
  for (const auto &a : snapshot.alive) {
    if (a.id == id) {
      return;
    }
  }
  throw ValidationError("particle_id",
                        "particle " + std::to_string(id) + " is not alive");
}

} // namespace

double split_time(ParticleId x, ParticleId y,
                  const PopulationSnapshot &snapshot) {
  if (!snapshot.has_genealogy()) {
    throw ValidationError("snapshot", "genealogy was not recorded");
  }
  lookup(snapshot, x);
  lookup(snapshot, y);
  require_alive(snapshot, x);
  require_alive(snapshot, y);
  if (x == y) {
    return snapshot.t;
  }
  // Parents always carry smaller ids, so stepping the larger id upward walks
  // both lineages toward their last common segment.
  ParticleId a = x, b = y;
  double split = snapshot.t;
  while (a != b) {
    if (a > b) {
      split = lookup(snapshot, a).birth_time;
      a = lookup(snapshot, a).parent_id;
    } else {
      split = lookup(snapshot, b).birth_time;
      b = lookup(snapshot, b).parent_id;
    }
    if (a == kNoParent || b == kNoParent) {
      throw ValidationError("snapshot", "lineage does not reach the root");
    }
  }
  return split;
}

double genealogical_distance(ParticleId x, ParticleId y,
                             const PopulationSnapshot &snapshot) {
  const double s = split_time(x, y, snapshot);
  return 0.5 * ((snapshot.t - s) + (snapshot.t - s));
}

// ---------------------------------------------------------------------------
// Provenance

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["replica_count"] = replica_count;
  j["tool_version"] = tool_version;
  j["parameters"] = nlohmann::ordered_json::object();
  for (const auto &[k, v] : parameters) {
    j["parameters"][k] = v;
  }
  std::vector<std::string> digests;
  digests.reserve(per_replica_digest.size());
  for (auto d : per_replica_digest) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << d;
    digests.push_back(os.str());
  }
  j["per_replica_digest"] = digests;
  j["notes"] = notes;
  return j.dump(2);
}

RunManifest RunManifest::from_json(const std::string &text) {
  const auto j = nlohmann::json::parse(text);
  RunManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.replica_count = j.at("replica_count").get<std::uint64_t>();
  m.tool_version = j.value("tool_version", "");
  for (const auto &[k, v] : j.at("parameters").items()) {
    m.parameters[k] = v.get<std::string>();
  }
  for (const auto &d : j.value("per_replica_digest", std::vector<std::string>{})) {
    m.per_replica_digest.push_back(std::stoull(d, nullptr, 16));
  }
  m.notes = j.value("notes", std::vector<std::string>{});
  return m;
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t digest_doubles(std::span<const double> values,
                             std::uint64_t basis) {
  std::uint64_t h = basis;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char raw[8];
    std::memcpy(raw, &bits, sizeof raw);
    h = fnv1a(raw, h);
  }
  return h;
}

} // namespace bbmx
