#pragma once

#include "bbmx/cluster.hpp"
#include "bbmx/core_types.hpp"
#include "bbmx/validators.hpp"

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace bbmx {

enum class Command {
  simulate_bbm,
  sample_zeta,
  sample_cluster,
  theorem1,
  theorem2,
  validate,
  report,
};

std::string command_name(Command c);
Command parse_command(const std::string &name);

/// Exit codes shared by the CLI and the acceptance binary.
enum ExitCode : int {
  kExitOk = 0,
  kExitTotalFailure = 1,
  kExitValidation = 2,
  kExitPartialFailure = 3,
  kExitAcceptance = 4,
};

struct ExperimentConfig {
  Command command = Command::simulate_bbm;
  /// Every parameter of the command, defaults included.
  std::map<std::string, std::string> parameters;
  std::uint64_t seed = 1;
  std::size_t replicas = 100;
  /// 0 picks BBMX_WORKERS or the hardware concurrency.
  std::size_t workers = 0;
  std::filesystem::path out_dir = "bbmx-out";

  double number(const std::string &key) const;
  const std::string &text(const std::string &key) const;
  /// "a,b,c" or "start:stop:step".
  std::vector<double> numbers(const std::string &key) const;

  /// Field-level ValidationError on bad input.
  void validate() const;
};

std::map<std::string, std::string> default_parameters(Command c);

/// Defaults overlaid with `overrides`; unknown keys are rejected.
ExperimentConfig make_config(Command c,
                             const std::map<std::string, std::string> &overrides,
                             std::uint64_t seed, std::size_t replicas,
                             std::filesystem::path out_dir);

/// Flat `key = value` text with `#` comments.
std::map<std::string, std::string> read_config_file(const std::filesystem::path &p);

/// Rebuilds the configuration recorded in a manifest.
ExperimentConfig config_from_manifest(const RunManifest &m);

/// BBMX_OUTPUT_ROOT is prepended to relative output directories.
std::filesystem::path resolve_output_dir(const std::filesystem::path &p);

std::size_t resolve_workers(std::size_t requested);

struct RunResult {
  RunManifest manifest;
  int exit_code = kExitOk;
  std::size_t failed_replicas = 0;
  std::vector<std::filesystem::path> files;
};

/// Runs one experiment, writing CSVs and manifest.json into config.out_dir.
RunResult run(const ExperimentConfig &config);

/// f(0), ..., f(n-1) on a pool of workers; results are in index order
/// whatever the completion order. The first exception is rethrown.
template <class F>
auto parallel_map(std::size_t n, std::size_t workers, F f)
    -> std::vector<decltype(f(std::size_t{0}))> {
  using T = decltype(f(std::size_t{0}));
  std::vector<T> out(n);
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) {
          error = std::current_exception();
        }
        next = n;
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(body);
    }
    for (auto &t : pool) {
      t.join();
    }
  }
  if (error) {
    std::rethrow_exception(error);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cluster CSV (replica, v, count, statistic, failed)

void write_clusters_csv(const std::filesystem::path &p,
                        std::span<const ClusterSample> clusters);
std::vector<ClusterSample> read_clusters_csv(const std::filesystem::path &p);

// ---------------------------------------------------------------------------
// Fluctuation-law pipeline

struct Theorem2Row {
  double v = 0.0;
  std::size_t clusters = 0;
  std::size_t failed = 0;
  std::size_t undefined = 0;
  double undefined_frequency = 0.0;
  double ks = 0.0;
  double median = 0.0;
  /// Median of log C([-v, 0]) / (sqrt2 v).
  double log_ratio_median = 0.0;
  double zeta_q10 = 0.0;
  double zeta_q50 = 0.0;
  double zeta_q90 = 0.0;
};

/// Fluctuation statistics of `clusters` at each v compared with a zeta
/// ensemble.
std::vector<Theorem2Row> theorem2_summary(std::span<const double> v_list,
                                          std::span<const ClusterSample> clusters,
                                          std::span<const double> zeta);

struct Theorem2Result {
  std::vector<ClusterSample> clusters;
  std::vector<double> zeta;
  std::vector<Theorem2Row> rows;
};

/// `replicas` clusters, each measured at every v of v_list, and an equally
/// large zeta reference ensemble.
Theorem2Result theorem2_pipeline(std::span<const double> v_list,
                                 std::size_t replicas, std::uint64_t seed,
                                 const ClusterConfig &base = {},
                                 std::size_t workers = 1);

// ---------------------------------------------------------------------------
// Decorated-PPP pipeline

struct ZSpec {
  /// Derivative-martingale proxy at time `value`, otherwise Z = value.
  bool proxy = true;
  double value = 8.0;
};

/// "proxy:t" or a positive number.
ZSpec parse_z_spec(const std::string &text);

struct Theorem1Row {
  std::size_t assembly = 0;
  double v = 0.0;
  double Z = 0.0;
  std::uint64_t tips = 0;
  std::uint64_t E_count = 0;
  double ratio = 0.0;
  bool failed = false;
};

struct Theorem1Summary {
  double v = 0.0;
  std::size_t assemblies = 0;
  std::size_t failed = 0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double iqr() const { return q75 - q25; }
};

struct Theorem1Result {
  std::vector<Theorem1Row> rows;
  std::vector<Theorem1Summary> summary;
  double cstar = 0.0;
};

/// Assemblies of E([-v, inf)) for every v in v_list from one tip field per
/// assembly, dressed from `pool`. The pool's depth grid must be uniform from
/// 0 and v, v_floor multiples of its step.
Theorem1Result theorem1_pipeline(std::span<const ClusterSample> pool,
                                 std::span<const double> v_list, double v_floor,
                                 std::size_t assemblies, std::uint64_t seed,
                                 const ZSpec &z, double cstar,
                                 double tip_split = -4.0,
                                 std::size_t workers = 1);

/// Compact oracle suite behind the `validate` subcommand.
std::vector<TestReport> oracle_suite(std::size_t replicas, std::uint64_t seed,
                                     std::size_t workers = 1);

double quantile(std::vector<double> xs, double q);

} // namespace bbmx
