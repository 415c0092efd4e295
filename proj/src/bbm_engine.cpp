#include "bbmx/bbm_engine.hpp"

#include "bbmx/errors.hpp"
#include "bbmx/gaussian.hpp"
#include "bbmx/logging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <queue>

namespace bbmx {

void PruneConfig::validate() const {
  if (enabled && !(std::isfinite(depth_beta) && depth_beta > 0.0)) {
    throw ValidationError("depth_beta", "must be finite and positive");
  }
}

// ---------------------------------------------------------------------------
// TargetBarrier

namespace {

constexpr double kDropStep = 1.0 / 64.0;

double drop_at(double remaining, double log_threshold) {
  if (remaining <= 0.0) {
    return 0.0;
  }
  if (log_threshold - remaining >= 0.0) {
    // Nobody carries that much mass this close to the horizon.
    return -std::numeric_limits<double>::infinity();
  }
  return std::sqrt(remaining) *
         inverse_log_normal_upper_tail(log_threshold - remaining);
}

// Tables of sqrt(tau) Qinv(threshold e^-tau) on a fixed tau grid, one per
// threshold, grown on demand.
std::shared_ptr<const std::vector<double>> drop_table(double log_threshold,
                                                      double horizon) {
  static std::mutex mu;
  static std::map<double, std::shared_ptr<const std::vector<double>>> cache;
  const auto need = static_cast<std::size_t>(std::ceil(horizon / kDropStep)) + 2;
  std::lock_guard<std::mutex> lock(mu);
  auto &slot = cache[log_threshold];
  if (slot && slot->size() >= need) {
    return slot;
  }
  auto table = std::make_shared<std::vector<double>>();
  const std::size_t n = std::max<std::size_t>(need, slot ? 2 * slot->size() : 4096);
  table->resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    (*table)[k] = drop_at(static_cast<double>(k) * kDropStep, log_threshold);
  }
  slot = table;
  return slot;
}

} // namespace

TargetBarrier::TargetBarrier(double horizon, double level, double margin)
    : horizon_(horizon), level_(level), log_threshold_(-kSqrt2 * margin) {
  if (!(horizon > 0.0)) {
    throw ValidationError("horizon", "target barrier needs a positive horizon");
  }
  drop_ = drop_table(log_threshold_, horizon);
}

double TargetBarrier::exact_barrier(double r) const {
  return level_ - drop_at(horizon_ - r, log_threshold_);
}

double TargetBarrier::barrier(double r) const {
  const double remaining = horizon_ - r;
  if (remaining <= 0.0) {
    return level_;
  }
  // The larger bracketing drop gives a barrier below the exact one.
  const auto k = static_cast<std::size_t>(remaining / kDropStep);
  const auto &d = *drop_;
  return level_ - std::max(d[k], d[k + 1]);
}

double TargetBarrier::expected_mass(double r, double h) const {
  const double remaining = horizon_ - r;
  if (remaining <= 0.0) {
    return h >= level_ ? 1.0 : 0.0;
  }
  return std::exp(remaining +
                  log_normal_upper_tail((level_ - h) / std::sqrt(remaining)));
}

// ---------------------------------------------------------------------------
// simulate_bbm

namespace {

struct PendingBranch {
  double branch_time;
  double birth_time;
  double branch_height;
  ParticleId id;
  std::uint64_t address;

  bool operator>(const PendingBranch &o) const {
    if (branch_time != o.branch_time) {
      return branch_time > o.branch_time;
    }
    return id > o.id;
  }
};

} // namespace

PopulationSnapshot simulate_bbm(double t, const PruneConfig &prune,
                                PhiloxStream &rng,
                                const SimulationOptions &options) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ValidationError("t", "horizon must be positive and finite");
  }
  prune.validate();

  PopulationSnapshot snap;
  snap.t = t;

  std::optional<TargetBarrier> target;
  if (prune.enabled && prune.relative_to == PruneReference::target) {
    target.emplace(t, options.target_level, prune.depth_beta);
  }

  std::priority_queue<PendingBranch, std::vector<PendingBranch>,
                      std::greater<>>
      pending;
  ParticleId next_id = 0;

  // Each particle draws from its own stream keyed by its position in the
  // binary tree, so runs that differ only in pruning stay coupled.
  auto spawn = [&](ParticleId parent, double birth_time, double height,
                   std::uint64_t address) {
    const ParticleId id = next_id++;
    if (options.record_genealogy) {
      snap.genealogy.push_back({id, parent, birth_time, height});
    }
    PhiloxStream own = rng.derive(address);
    const double lifetime = own.exponential();
    const double dt = std::min(lifetime, t - birth_time);
    const double h = height + std::sqrt(dt) * own.normal();
    if (birth_time + lifetime >= t) {
      snap.alive.push_back({id, h});
    } else {
      pending.push({birth_time + lifetime, birth_time, h, id, address});
    }
  };

  spawn(kNoParent, 0.0, 0.0, rng());
  double front = -std::numeric_limits<double>::infinity();

  while (!pending.empty()) {
    const PendingBranch ev = pending.top();
    pending.pop();
    const double h = ev.branch_height;
    if (++snap.branch_events > options.event_cap) {
      throw ResourceLimitError(snap.branch_events, options.event_cap);
    }
    front = std::max(front, h);

    if (prune.enabled) {
      bool drop = false;
      switch (prune.relative_to) {
      case PruneReference::running_front:
        drop = h < front - prune.depth_beta;
        break;
      case PruneReference::linear_sqrt2:
        drop = h < kSqrt2 * ev.branch_time - prune.depth_beta;
        break;
      case PruneReference::target:
        drop = target->prune(ev.branch_time, h);
        break;
      }
      if (drop) {
        snap.pruned_mass_flag = true;
        continue;
      }
    }
    const std::uint64_t left = PhiloxStream::splitmix64(2 * ev.address);
    spawn(ev.id, ev.branch_time, h, left);
    spawn(ev.id, ev.branch_time, h, left ^ 0x5851F42D4C957F2Dull);
  }

  std::sort(snap.alive.begin(), snap.alive.end(),
            [](const AliveParticle &a, const AliveParticle &b) {
              return a.id < b.id;
            });
  return snap;
}

double derivative_martingale(const PopulationSnapshot &snapshot,
                             double c_diamond) {
  if (!(c_diamond > 0.0)) {
    throw ValidationError("c_diamond", "must be positive");
  }
  if (snapshot.pruned_mass_flag) {
    log_warning("derivative martingale evaluated on a pruned population; "
                "the value is biased");
  }
  const double t = snapshot.t;
  double z = 0.0;
  for (const auto &p : snapshot.alive) {
    const double gap = kSqrt2 * t - p.height;
    z += gap * std::exp(-kSqrt2 * gap);
  }
  return c_diamond * z;
}

PointMeasure extremal_process(const PopulationSnapshot &snapshot) {
  const double m = m_of_t(snapshot.t);
  std::vector<double> positions;
  positions.reserve(snapshot.alive.size());
  for (const auto &p : snapshot.alive) {
    positions.push_back(p.height - m);
  }
  return PointMeasure::from_positions(std::move(positions));
}

std::vector<LocalMaximum> local_maxima(const PopulationSnapshot &snapshot,
                                       double r) {
  if (!(r > 0.0 && r < snapshot.t)) {
    throw ValidationError("r", "local maxima need 0 < r < t");
  }
  if (!snapshot.has_genealogy()) {
    throw ValidationError("snapshot", "genealogy was not recorded");
  }
  // d(x, y) < r exactly when x and y descend from the same segment alive at
  // time t - r, so the r-balls partition the alive set.
  const double cut = snapshot.t - r;
  std::map<ParticleId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < snapshot.alive.size(); ++i) {
    ParticleId a = snapshot.alive[i].id;
    while (snapshot.genealogy[a].birth_time > cut) {
      a = snapshot.genealogy[a].parent_id;
    }
    groups[a].push_back(i);
  }

  std::vector<LocalMaximum> out;
  out.reserve(groups.size());
  for (const auto &[ancestor, members] : groups) {
    std::size_t best = members.front();
    for (std::size_t i : members) {
      if (snapshot.alive[i].height > snapshot.alive[best].height) {
        best = i;
      }
    }
    const double top = snapshot.alive[best].height;
    std::vector<double> rel;
    rel.reserve(members.size());
    for (std::size_t i : members) {
      rel.push_back(snapshot.alive[i].height - top);
    }
    out.push_back({snapshot.alive[best].id, top,
                   PointMeasure::from_positions(std::move(rel))});
  }
  std::sort(out.begin(), out.end(),
            [](const LocalMaximum &a, const LocalMaximum &b) {
              return a.id < b.id;
            });
  return out;
}

std::vector<LocalMaximum> local_maxima(const PopulationSnapshot &snapshot) {
  return local_maxima(snapshot, 0.5 * snapshot.t);
}

// ---------------------------------------------------------------------------
// Decorations

DecorationSample sample_decoration(double s, double y, const PruneConfig &prune,
                                   PhiloxStream &rng,
                                   std::uint64_t max_rejections,
                                   double window_depth) {
  if (!(s > 0.0)) {
    throw ValidationError("s", "must be positive");
  }
  if (!(y >= 0.0)) {
    throw ValidationError("y", "must be non-negative");
  }
  const double ceiling = m_of_t(s) + y;
  SimulationOptions options;
  options.record_genealogy = false;
  options.target_level = ceiling - window_depth;

  for (std::uint64_t attempt = 0; attempt <= max_rejections; ++attempt) {
    PopulationSnapshot snap = simulate_bbm(s, prune, rng, options);
    const auto top = snap.max_height();
    if (top && *top > ceiling) {
      continue;
    }
    std::vector<double> positions;
    positions.reserve(snap.alive.size());
    for (const auto &p : snap.alive) {
      positions.push_back(p.height - ceiling);
    }
    return {PointMeasure::from_positions(std::move(positions)), s, y, attempt};
  }
  throw RejectionBudgetError(max_rejections + 1, s, y);
}

namespace {

constexpr double kTypicalCountShape = 1.35;

// log of (expected count in [-d, 0]) / (rho typical_cluster_count(d)) at the
// depth d in (0, d_max] that roughly maximizes it. `above` is the distance
// from the particle up to the ceiling. The argmax only needs to be close: any
// importance function keeps the roulette unbiased.
double log_importance(double tau, double above, double d_max, double log_rho) {
  const double sq = std::sqrt(tau);
  const double c = 2.0 * kTypicalCountShape / 3.0;
  auto slope = [&](double d) {
    const double z = (above - d) / sq;
    const double hazard = 0.5 * (z + std::sqrt(z * z + 4.0));
    return hazard / sq - kSqrt2 + c / std::cbrt(d);
  };
  double lo = 1e-3;
  double hi = d_max;
  double d = hi;
  if (slope(hi) < 0.0) {
    for (int i = 0; i < 20; ++i) {
      const double mid = 0.5 * (lo + hi);
      (slope(mid) > 0.0 ? lo : hi) = mid;
    }
    d = 0.5 * (lo + hi);
  }
  return tau + log_normal_upper_tail((above - d) / sq) - log_rho -
         std::log(typical_cluster_count(d));
}

} // namespace

double typical_cluster_count(double d) {
  return std::exp(kSqrt2 * d - kTypicalCountShape * std::cbrt(d * d));
}

DecorationCounts count_decoration(const DecorationCountRequest &request,
                                  PhiloxStream &rng) {
  const double s = request.s;
  if (!(s > 0.0)) {
    throw ValidationError("s", "must be positive");
  }
  if (!(request.y >= 0.0)) {
    throw ValidationError("y", "must be non-negative");
  }
  if (request.depths.empty()) {
    throw ValidationError("depths", "need at least one depth");
  }
  const auto depths = request.depths;
  const double max_depth = depths.back();
  const double ceiling = m_of_t(s) + request.y;
  const double floor_level = ceiling - max_depth;

  std::optional<TargetBarrier> barrier;
  if (request.prune_margin > 0.0) {
    double margin = request.prune_margin;
    if (request.roulette && request.roulette_rho > 0.0) {
      // Particles above this barrier have importance >= 1 at the deepest depth.
      const double top = request.roulette_rho * typical_cluster_count(max_depth);
      margin = std::min(margin, -std::log(top) / kSqrt2);
    }
    barrier.emplace(s, floor_level, margin);
  }

  struct Node {
    double birth_time;
    double height;
    std::uint64_t weight;
  };
  std::vector<Node> stack;
  std::vector<std::uint64_t> buckets(depths.size());
  const double threshold = barrier ? std::exp(barrier->log_threshold()) : 0.0;
  const bool importance = request.roulette && request.roulette_rho > 0.0;
  const double log_rho = importance ? std::log(request.roulette_rho) : 0.0;

  DecorationCounts result;
  for (std::uint64_t attempt = 0; attempt <= request.max_rejections; ++attempt) {
    std::fill(buckets.begin(), buckets.end(), 0);
    double pruned_mass = 0.0;
    std::uint64_t max_weight = 1;
    bool rejected = false;
    stack.clear();

    // Pushes a particle unless the barrier drops it; with roulette a particle
    // below the barrier may survive with a larger weight.
    auto admit = [&](double r, double h, std::uint64_t w) {
      if (!barrier || !barrier->prune(r, h)) {
        stack.push_back({r, h, w});
        return;
      }
      const double mu = barrier->expected_mass(r, h);
      const double wmu = mu * static_cast<double>(w);
      if (!request.roulette) {
        pruned_mass += wmu;
        return;
      }
      double k = 1.0;
      if (importance) {
        const double li = log_importance(s - r, ceiling - h, max_depth, log_rho) +
                          std::log(static_cast<double>(w));
        k = li >= 0.0 ? 1.0 : std::ceil(std::exp(-li));
      } else if (wmu < threshold) {
        k = std::ceil(threshold / wmu);
      }
      if (k == 1.0) {
        stack.push_back({r, h, w});
        return;
      }
      if (!(k < kMaxRouletteFactor) ||
          static_cast<double>(w) * k > static_cast<double>(1ull << 62)) {
        pruned_mass += wmu;
        return;
      }
      if (rng.uniform() * k < 1.0) {
        const auto nw = w * static_cast<std::uint64_t>(k);
        max_weight = std::max(max_weight, nw);
        stack.push_back({r, h, nw});
      }
    };
    admit(0.0, 0.0, 1);

    while (!stack.empty()) {
      const Node node = stack.back();
      stack.pop_back();
      const double lifetime = rng.exponential();
      if (node.birth_time + lifetime >= s) {
        const double h =
            node.height + std::sqrt(s - node.birth_time) * rng.normal();
        if (h > ceiling) {
          rejected = true;
          break;
        }
        if (h >= floor_level) {
          const double depth = ceiling - h;
          const auto it = std::lower_bound(depths.begin(), depths.end(), depth);
          if (it != depths.end()) {
            buckets[static_cast<std::size_t>(it - depths.begin())] += node.weight;
          }
        }
        continue;
      }
      const double r = node.birth_time + lifetime;
      const double h = node.height + std::sqrt(lifetime) * rng.normal();
      if (++result.events > request.event_cap) {
        throw ResourceLimitError(result.events, request.event_cap);
      }
      admit(r, h, node.weight);
      admit(r, h, node.weight);
    }

    if (rejected) {
      ++result.rejections;
      continue;
    }
    result.counts.resize(depths.size());
    std::uint64_t running = 0;
    for (std::size_t i = 0; i < depths.size(); ++i) {
      running += buckets[i];
      result.counts[i] = running;
    }
    result.pruned_mass = pruned_mass;
    result.max_weight = max_weight;
    return result;
  }
  throw RejectionBudgetError(result.rejections, s, request.y);
}

} // namespace bbmx
