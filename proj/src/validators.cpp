#include "bbmx/validators.hpp"

#include "bbmx/core_types.hpp"
#include "bbmx/errors.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace bbmx {

void write_reports_csv(std::ostream &os, std::span<const TestReport> reports) {
  os << "# schema=1\n";
  os << "name,statistic,threshold,passed,n_samples,notes\n";
  os.precision(10);
  for (const TestReport &r : reports) {
    std::string notes = r.notes;
    std::replace(notes.begin(), notes.end(), ',', ';');
    os << r.name << ',' << r.statistic << ',' << r.threshold << ','
       << (r.passed ? 1 : 0) << ',' << r.n_samples << ',' << notes << '\n';
  }
}

MeanEstimate mean_estimate(std::span<const double> xs) {
  MeanEstimate m;
  m.n = xs.size();
  if (xs.empty()) {
    return m;
  }
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(m.n);
  if (m.n > 1) {
    double ss = 0.0;
    for (double x : xs) {
      ss += (x - m.mean) * (x - m.mean);
    }
    m.se = std::sqrt(ss / static_cast<double>(m.n - 1) / static_cast<double>(m.n));
  }
  return m;
}

TestReport within_se(std::string name, const MeanEstimate &estimate,
                     double target, double k) {
  TestReport r;
  r.name = std::move(name);
  r.statistic = std::abs(estimate.mean - target);
  r.threshold = k * estimate.se;
  r.passed = r.statistic <= r.threshold;
  r.n_samples = estimate.n;
  r.notes = "mean=" + std::to_string(estimate.mean) +
            " target=" + std::to_string(target) +
            " se=" + std::to_string(estimate.se);
  return r;
}

// ---------------------------------------------------------------------------

double ballot_bridge_prob(double x, double y, double t) {
  if (!(t > 0.0)) {
    throw ValidationError("t", "must be positive");
  }
  if (!(x >= 0.0) || !(y >= 0.0)) {
    throw ValidationError("x,y", "must be non-negative");
  }
  return -std::expm1(-2.0 * x * y / t);
}

double many_to_one_mean(double s, double v) {
  if (!(s > 0.0)) {
    throw ValidationError("s", "must be positive");
  }
  return std::exp(s) * normal_upper_tail((m_of_t(s) - v) / std::sqrt(s));
}

double first_moment_ratio(double s, double v) {
  const double bound = s * std::exp(kSqrt2 * v - v * v / (2.0 * s));
  return many_to_one_mean(s, v) / bound;
}

TestReport first_moment_bound_check(double s, double v, double C) {
  if (!(v >= 1.0 && v <= s)) {
    throw ValidationError("v", "need 1 <= v <= s");
  }
  TestReport r;
  r.name = "first_moment_bound";
  r.statistic = first_moment_ratio(s, v);
  r.threshold = C;
  r.passed = r.statistic <= C;
  r.notes = "s=" + std::to_string(s) + " v=" + std::to_string(v);
  return r;
}

double fit_first_moment_constant(std::span<const double> s_list,
                                 std::span<const double> v_list) {
  double C = 0.0;
  for (double s : s_list) {
    for (double v : v_list) {
      if (v >= 1.0 && v <= s) {
        C = std::max(C, first_moment_ratio(s, v));
      }
    }
  }
  return C;
}

TestReport lower_bound_check(double s, double v, double r,
                             std::span<const std::uint64_t> counts, double c,
                             double C) {
  if (counts.empty()) {
    throw ValidationError("counts", "need at least one replica");
  }
  const double level =
      c * std::exp(-C * r) * std::exp(kSqrt2 * v - v * v / (2.0 * s));
  const auto hits = std::count_if(counts.begin(), counts.end(), [&](auto n) {
    return static_cast<double>(n) >= level;
  });
  TestReport rep;
  rep.name = "lower_bound";
  rep.statistic = static_cast<double>(hits) / static_cast<double>(counts.size());
  rep.threshold = 1.0 - C * std::exp(-c * r);
  rep.passed = rep.statistic >= rep.threshold;
  rep.n_samples = counts.size();
  rep.notes = "c=" + std::to_string(c) + " C=" + std::to_string(C) +
              " level=" + std::to_string(level) + " (desk-scale constants)";
  return rep;
}

double calibrate_lower_bound_c(double s, double v, double r,
                               std::span<const std::uint64_t> counts,
                               std::span<const double> c_grid, double C) {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (double c : c_grid) {
    if (lower_bound_check(s, v, r, counts, c, C).passed &&
        (std::isnan(best) || c > best)) {
      best = c;
    }
  }
  return best;
}

double chi3_cdf(double r) {
  if (r <= 0.0) {
    return 0.0;
  }
  return std::erf(r / kSqrt2) -
         std::sqrt(2.0 / M_PI) * r * std::exp(-0.5 * r * r);
}

// ---------------------------------------------------------------------------

BridgeEstimate bridge_positive_mc(double x, double y, double t,
                                  std::size_t n_bridges, std::size_t n_steps,
                                  StreamKey key) {
  if (!(t > 0.0) || n_bridges == 0 || n_steps == 0) {
    throw ValidationError("bridge", "need t > 0 and positive sizes");
  }
  const double dt = t / static_cast<double>(n_steps);
  std::vector<double> naive(n_bridges), corrected(n_bridges);
  for (std::size_t i = 0; i < n_bridges; ++i) {
    key.replica = static_cast<std::uint32_t>(i);
    PhiloxStream rng(key);
    double a = x;
    bool positive = a > 0.0;
    double weight = 1.0;
    for (std::size_t k = 0; k < n_steps && positive; ++k) {
      const double remaining = t - static_cast<double>(k) * dt;
      double b = y;
      if (k + 1 < n_steps) {
        const double mean = a + (y - a) * dt / remaining;
        const double var = dt * (remaining - dt) / remaining;
        b = mean + std::sqrt(var) * rng.normal();
      }
      if (!(b > 0.0)) {
        positive = false;
        break;
      }
      // No-crossing probability of the Brownian bridge from a to b over dt.
      weight *= -std::expm1(-2.0 * a * b / dt);
      a = b;
    }
    naive[i] = positive ? 1.0 : 0.0;
    corrected[i] = positive ? weight : 0.0;
  }
  return {mean_estimate(naive), mean_estimate(corrected)};
}

// ---------------------------------------------------------------------------

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw ValidationError("ks", "samples must be nonempty");
  }
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size());
  const double m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double z = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= z) {
      ++i;
    }
    while (j < y.size() && y[j] <= z) {
      ++j;
    }
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return d;
}

double ks_one_sample(std::span<const double> a,
                     const std::function<double(double)> &cdf) {
  if (a.empty()) {
    throw ValidationError("ks", "sample must be nonempty");
  }
  std::vector<double> x(a.begin(), a.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f,
                  f - static_cast<double>(i) / n});
  }
  return d;
}

double kolmogorov_sf(double lambda) {
  if (lambda < 0.2) {
    return 1.0;
  }
  double sum = 0.0;
  for (int k = 1; k < 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 1.0 : -1.0) * term;
    if (term < 1e-16) {
      break;
    }
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

double ks_pvalue(double d, double n_eff) {
  const double sn = std::sqrt(n_eff);
  return kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
}

double ks_effective_n(std::size_t n, std::size_t m) {
  return static_cast<double>(n) * static_cast<double>(m) /
         static_cast<double>(n + m);
}

double ks_critical_1pct(double n_eff) { return 1.6276 / std::sqrt(n_eff); }

// ---------------------------------------------------------------------------

ChiSquareResult chi_square_gof(std::span<const double> observed,
                               std::span<const double> expected,
                               double min_expected) {
  if (observed.size() != expected.size() || observed.empty()) {
    throw ValidationError("chi2", "observed and expected must match");
  }
  std::vector<double> o, e;
  double acc_o = 0.0, acc_e = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    acc_o += observed[i];
    acc_e += expected[i];
    if (acc_e >= min_expected) {
      o.push_back(acc_o);
      e.push_back(acc_e);
      acc_o = acc_e = 0.0;
    }
  }
  if (acc_e > 0.0 || acc_o > 0.0) {
    if (e.empty()) {
      o.push_back(acc_o);
      e.push_back(acc_e);
    } else {
      o.back() += acc_o;
      e.back() += acc_e;
    }
  }
  ChiSquareResult res;
  res.bins = e.size();
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e[i] > 0.0) {
      res.statistic += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
    }
  }
  res.dof = static_cast<int>(e.size()) - 1;
  res.p_value = res.dof > 0
                    ? boost::math::gamma_q(0.5 * res.dof, 0.5 * res.statistic)
                    : 1.0;
  return res;
}

namespace {

ChiSquareResult discrete_gof(std::span<const std::uint64_t> samples,
                             std::uint64_t first,
                             const std::function<double(std::uint64_t)> &pmf) {
  if (samples.empty()) {
    throw ValidationError("samples", "must be nonempty");
  }
  const std::uint64_t top = *std::max_element(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  std::vector<double> obs(top - first + 2, 0.0), exp(top - first + 2, 0.0);
  for (auto k : samples) {
    if (k < first) {
      throw ValidationError("samples", "value below support");
    }
    obs[k - first] += 1.0;
  }
  double covered = 0.0;
  for (std::uint64_t k = first; k <= top; ++k) {
    exp[k - first] = n * pmf(k);
    covered += pmf(k);
  }
  exp.back() = n * std::max(0.0, 1.0 - covered);
  return chi_square_gof(obs, exp);
}

} // namespace

ChiSquareResult geometric_gof(std::span<const std::uint64_t> samples, double p) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw ValidationError("p", "must lie in (0, 1]");
  }
  return discrete_gof(samples, 1, [p](std::uint64_t k) {
    return p * std::pow(1.0 - p, static_cast<double>(k - 1));
  });
}

ChiSquareResult poisson_gof(std::span<const std::uint64_t> samples, double mean) {
  if (!(mean > 0.0)) {
    throw ValidationError("mean", "must be positive");
  }
  return discrete_gof(samples, 0, [mean](std::uint64_t k) {
    const double kk = static_cast<double>(k);
    return std::exp(kk * std::log(mean) - mean - std::lgamma(kk + 1.0));
  });
}

} // namespace bbmx
