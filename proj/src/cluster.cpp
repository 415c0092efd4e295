#include "bbmx/cluster.hpp"

#include "bbmx/bessel.hpp"
#include "bbmx/errors.hpp"

#include <algorithm>
#include <cmath>

namespace bbmx {

TimestampSet sample_timestamps(double r_trunc, PhiloxStream &rng, double rate) {
  if (!(r_trunc > 0.0)) {
    throw ValidationError("r_trunc", "must be positive");
  }
  if (!(rate > 0.0)) {
    throw ValidationError("rate", "must be positive");
  }
  TimestampSet ts;
  ts.rate = rate;
  ts.r_trunc = r_trunc;
  double t = 0.0;
  while (true) {
    t += rng.exponential() / rate;
    if (t > r_trunc) {
      break;
    }
    ts.points.push_back(t);
  }
  return ts;
}

Truncation auto_truncation(double v) {
  if (!(v > 0.0)) {
    throw ValidationError("v", "must be positive");
  }
  Truncation tr;
  tr.r_trunc = 8.0 * std::pow(v, 4.0 / 3.0) + 50.0;
  const double scale = 0.5 * std::pow(v, 2.0 / 3.0);
  double sum = 0.0;
  for (long k = 8;; ++k) {
    const double term =
        std::exp(-scale * std::pow(static_cast<double>(k), 0.5 - kTailEpsilon));
    sum += term;
    if (term < 1e-18 * sum || k > 100'000'000) {
      break;
    }
  }
  tr.tail_bound = sum;
  return tr;
}

std::vector<double> uniform_depths(double max_depth, double step) {
  if (!(step > 0.0) || !(max_depth >= 0.0)) {
    throw ValidationError("depths", "need step > 0 and max_depth >= 0");
  }
  std::vector<double> d;
  const auto n = static_cast<long>(std::floor(max_depth / step + 1e-9));
  for (long i = 0; i <= n; ++i) {
    d.push_back(static_cast<double>(i) * step);
  }
  return d;
}

// ---------------------------------------------------------------------------
// ClusterSample

std::uint64_t ClusterSample::count_at(double v) const {
  const auto it = std::lower_bound(depths.begin(), depths.end(), v);
  if (it == depths.end() || std::abs(*it - v) > 1e-9 * (1.0 + std::abs(v))) {
    // Accept a near miss from below as well.
    if (it != depths.begin() &&
        std::abs(*(it - 1) - v) <= 1e-9 * (1.0 + std::abs(v))) {
      return counts[static_cast<std::size_t>(it - 1 - depths.begin())];
    }
    throw DepthCoverageError(v);
  }
  return counts[static_cast<std::size_t>(it - depths.begin())];
}

std::uint64_t ClusterSample::count_floor(double depth) const {
  if (depths.empty() || depth > depths.back() + 1e-9) {
    throw DepthCoverageError(depth);
  }
  const double tol = 1e-9 * (1.0 + std::abs(depth));
  const auto it = std::upper_bound(depths.begin(), depths.end(), depth + tol);
  if (it == depths.begin()) {
    return 0;
  }
  return counts[static_cast<std::size_t>(it - 1 - depths.begin())];
}

// ---------------------------------------------------------------------------
// Sampling

void ClusterConfig::validate() const {
  if (v_list.empty()) {
    throw ValidationError("vlist", "need at least one depth");
  }
  for (std::size_t i = 0; i < v_list.size(); ++i) {
    if (!(v_list[i] >= 0.0) || !std::isfinite(v_list[i])) {
      throw ValidationError("vlist", "depths must be finite and >= 0");
    }
    if (i > 0 && !(v_list[i] > v_list[i - 1])) {
      throw ValidationError("vlist", "depths must be increasing");
    }
  }
  if (!(v_list.back() > 0.0)) {
    throw ValidationError("vlist", "largest depth must be positive");
  }
  if (max_rejections == 0) {
    throw ValidationError("max_rejections", "must be positive");
  }
  if (!(roulette_rho >= 0.0) || !std::isfinite(roulette_rho)) {
    throw ValidationError("roulette_rho", "must be finite and >= 0");
  }
}

double ClusterConfig::effective_r_trunc() const {
  return r_trunc > 0.0 ? r_trunc : auto_truncation(v_list.back()).r_trunc;
}

ClusterSample assemble_cluster(const ClusterConfig &config,
                               std::span<const double> timestamps,
                               std::span<const double> backbone_values,
                               const DecorationCounter &decoration) {
  config.validate();
  if (timestamps.size() != backbone_values.size()) {
    throw ValidationError("backbone", "one backbone value per timestamp");
  }
  ClusterSample out;
  out.depths = config.v_list;
  out.counts.assign(out.depths.size(), config.include_tip ? 1 : 0);
  out.r_trunc = config.effective_r_trunc();
  out.tail_bound_estimate = auto_truncation(config.v_list.back()).tail_bound;
  out.timestamps_used = timestamps.size();

  for (std::size_t k = 0; k < timestamps.size(); ++k) {
    const double y = std::max(0.0, -backbone_values[k]);
    DecorationCounts dc;
    try {
      dc = decoration(timestamps[k], y, out.depths, k);
    } catch (const RejectionBudgetError &e) {
      out.failed = true;
      out.failure = RejectionBudgetError(e.rejections(), e.s(), e.y(),
                                         static_cast<long>(k))
                        .what();
      return out;
    } catch (const ResourceLimitError &e) {
      out.failed = true;
      out.failure = std::string(e.what()) + " at timestamp " + std::to_string(k);
      return out;
    }
    for (std::size_t i = 0; i < out.counts.size(); ++i) {
      out.counts[i] += dc.counts[i];
    }
    out.pruned_mass += dc.pruned_mass;
    out.events += dc.events;
    out.rejections += dc.rejections;
  }
  return out;
}

ClusterSample sample_cluster(const ClusterConfig &config, StreamKey key) {
  config.validate();
  const double r_trunc = config.effective_r_trunc();

  PhiloxStream ts_rng(child_key(key, Substream::timestamps));
  const TimestampSet ts = sample_timestamps(r_trunc, ts_rng);

  std::vector<double> grid;
  grid.reserve(ts.points.size() + 1);
  grid.push_back(0.0);
  grid.insert(grid.end(), ts.points.begin(), ts.points.end());
  PhiloxStream bb_rng(child_key(key, Substream::backbone));
  const Path bb = backbone(grid, bb_rng);
  std::vector<double> backbone_values(bb.values.data() + 1,
                                      bb.values.data() + bb.values.size());

  DecorationCounter counter = [&](double s, double y,
                                  std::span<const double> depths,
                                  std::size_t index) {
    PhiloxStream rng(
        child_key(key, Substream::decoration, static_cast<std::uint32_t>(index)));
    DecorationCountRequest req;
    req.s = s;
    req.y = y;
    req.depths = depths;
    req.prune_margin = config.prune_margin;
    req.roulette = config.roulette;
    req.roulette_rho = config.roulette_rho;
    req.max_rejections = config.max_rejections;
    req.event_cap = config.event_cap;
    try {
      return count_decoration(req, rng);
    } catch (const RejectionBudgetError &first) {
      req.max_rejections = 2 * config.max_rejections;
      DecorationCounts dc = count_decoration(req, rng);
      dc.rejections += first.rejections();
      return dc;
    }
  };
  return assemble_cluster(config, ts.points, backbone_values, counter);
}

double fluctuation_statistic(const ClusterSample &sample, double v) {
  if (sample.failed) {
    throw ValidationError("sample", "cluster replica failed: " + sample.failure);
  }
  if (!(v > 0.0)) {
    throw ValidationError("v", "must be positive");
  }
  const std::uint64_t c = sample.count_at(v);
  if (c == 0) {
    throw UndefinedStatisticError(v);
  }
  return (kSqrt2 * v - std::log(static_cast<double>(c))) / std::pow(v, 2.0 / 3.0);
}

double tail_event_frequency(std::span<const ClusterSample> samples, double u,
                            double K, double eps) {
  std::size_t n = 0, hits = 0;
  for (const ClusterSample &s : samples) {
    if (s.failed) {
      continue;
    }
    ++n;
    for (std::size_t i = 0; i < s.depths.size(); ++i) {
      const double w = s.depths[i];
      if (w < u || !(w > 0.0)) {
        continue;
      }
      const double threshold = eps * std::pow(w, -K) * std::exp(kSqrt2 * w);
      if (static_cast<double>(s.counts[i]) >= threshold) {
        ++hits;
        break;
      }
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

} // namespace bbmx
