#include "bbmx/runner.hpp"

#include "bbmx/bbm_engine.hpp"
#include "bbmx/bessel.hpp"
#include "bbmx/errors.hpp"
#include "bbmx/limit_harness.hpp"
#include "bbmx/logging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace bbmx {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::map<std::string, Command> &command_table() {
  static const std::map<std::string, Command> table = {
      {"simulate-bbm", Command::simulate_bbm},
      {"sample-zeta", Command::sample_zeta},
      {"sample-cluster", Command::sample_cluster},
      {"theorem1", Command::theorem1},
      {"theorem2", Command::theorem2},
      {"validate", Command::validate},
      {"report", Command::report},
  };
  return table;
}

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string &key, const std::string &text) {
  try {
    std::size_t used = 0;
    const double x = std::stod(text, &used);
    if (used != text.size()) {
      throw std::invalid_argument("trailing characters");
    }
    return x;
  } catch (const std::exception &) {
    throw ValidationError(key, "expected a number, got '" + text + "'");
  }
}

std::vector<double> parse_list(const std::string &key, const std::string &text) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) {
      parts.push_back(trim(p));
    }
    if (parts.size() != 3) {
      throw ValidationError(key, "range form is start:stop:step");
    }
    const double a = parse_number(key, parts[0]);
    const double b = parse_number(key, parts[1]);
    const double h = parse_number(key, parts[2]);
    if (!(h > 0.0) || b < a) {
      throw ValidationError(key, "range needs step > 0 and stop >= start");
    }
    const auto n = static_cast<long>(std::floor((b - a) / h + 1e-9));
    for (long i = 0; i <= n; ++i) {
      out.push_back(a + static_cast<double>(i) * h);
    }
    return out;
  }
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) {
    p = trim(p);
    if (!p.empty()) {
      out.push_back(parse_number(key, p));
    }
  }
  if (out.empty()) {
    throw ValidationError(key, "empty list");
  }
  return out;
}

void require_increasing(const std::string &key, const std::vector<double> &xs) {
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (!(xs[i] > xs[i - 1])) {
      throw ValidationError(key, "values must be increasing");
    }
  }
}

std::ofstream open_csv(const fs::path &p, const std::string &header) {
  std::ofstream os(p);
  if (!os) {
    throw std::runtime_error("cannot write " + p.string());
  }
  os.precision(std::numeric_limits<double>::max_digits10);
  os << "# schema=1\n" << header << '\n';
  return os;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path &p,
                                                    std::string *header) {
  std::ifstream is(p);
  if (!is) {
    throw ValidationError("input", "cannot read " + p.string());
  }
  std::vector<std::vector<std::string>> rows;
  bool have_header = false;
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line[0] == '#') {
      continue;
    }
    if (!have_header) {
      have_header = true;
      if (header != nullptr) {
        *header = line;
      }
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) {
      cells.push_back(c);
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

bool parse_switch(const std::string &key, const std::string &text) {
  if (text == "on" || text == "true" || text == "1") {
    return true;
  }
  if (text == "off" || text == "false" || text == "0") {
    return false;
  }
  throw ValidationError(key, "expected on or off, got '" + text + "'");
}

ClusterConfig cluster_config_from(const ExperimentConfig &c) {
  ClusterConfig cc;
  cc.v_list = c.numbers("vlist");
  cc.r_trunc = c.text("rtrunc") == "auto" ? 0.0 : c.number("rtrunc");
  cc.prune_margin = c.number("prune_margin");
  cc.roulette = parse_switch("roulette", c.text("roulette"));
  cc.roulette_rho = c.number("roulette_rho");
  cc.max_rejections = static_cast<std::uint64_t>(c.number("max_rejections"));
  cc.event_cap = static_cast<std::uint64_t>(c.number("event_cap"));
  return cc;
}

ZetaGrid zeta_grid_from(const ExperimentConfig &c) {
  ZetaGrid g;
  g.s_min = c.number("grid_smin");
  g.s_max = c.number("grid_smax");
  g.points_per_decade = static_cast<int>(c.number("ppd"));
  g.refinement_rounds = static_cast<int>(c.number("refine"));
  return g;
}

double statistic_or_nan(const ClusterSample &s, double v) {
  if (s.failed) {
    return kNaN;
  }
  try {
    return fluctuation_statistic(s, v);
  } catch (const UndefinedStatisticError &) {
    return kNaN;
  }
}

std::uint64_t cluster_digest(const ClusterSample &s) {
  std::vector<double> xs;
  for (auto c : s.counts) {
    xs.push_back(static_cast<double>(c));
  }
  xs.push_back(s.failed ? 1.0 : 0.0);
  return digest_doubles(xs);
}

void write_zeta_csv(const fs::path &p, std::span<const ZetaSample> zs) {
  auto os = open_csv(p, "replica,value,argmin_s");
  for (std::size_t i = 0; i < zs.size(); ++i) {
    os << i << ',' << zs[i].value << ',' << zs[i].argmin_s << '\n';
  }
}

void write_theorem2_summary(const fs::path &p, std::span<const Theorem2Row> rows) {
  auto os = open_csv(p, "v,clusters,failed,undefined,undefined_frequency,ks,"
                        "median,log_ratio_median,zeta_q10,zeta_q50,zeta_q90");
  for (const auto &r : rows) {
    os << r.v << ',' << r.clusters << ',' << r.failed << ',' << r.undefined << ','
       << r.undefined_frequency << ',' << r.ks << ',' << r.median << ','
       << r.log_ratio_median << ',' << r.zeta_q10 << ',' << r.zeta_q50 << ','
       << r.zeta_q90 << '\n';
  }
}

// ---------------------------------------------------------------------------
// Commands

void run_simulate_bbm(const ExperimentConfig &c, std::size_t workers,
                      RunResult &res) {
  const double t = c.number("t");
  const double vmax = c.number("vmax");
  const double cd = c.number("c_diamond");
  const PruneConfig prune = c.text("prune_beta") == "none"
                                ? PruneConfig::none()
                                : PruneConfig::front(c.number("prune_beta"));
  struct Row {
    std::uint64_t population;
    double max_centered;
    std::uint64_t count;
    double martingale;
    bool pruned;
  };
  SimulationOptions opts;
  opts.record_genealogy = false;
  const auto rows = parallel_map(c.replicas, workers, [&](std::size_t i) {
    PhiloxStream rng({c.seed, static_cast<std::uint32_t>(i), 0});
    const auto snap = simulate_bbm(t, prune, rng, opts);
    const auto E = extremal_process(snap);
    return Row{snap.alive.size(), snap.max_height().value_or(kNaN) - m_of_t(t),
               count_at_least(E, vmax), derivative_martingale(snap, cd),
               snap.pruned_mass_flag};
  });
  const fs::path out = c.out_dir / "bbm.csv";
  auto os = open_csv(out, "replica,population,max_centered,count_vmax,martingale,pruned");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row &r = rows[i];
    os << i << ',' << r.population << ',' << r.max_centered << ',' << r.count
       << ',' << r.martingale << ',' << (r.pruned ? 1 : 0) << '\n';
    const double xs[] = {static_cast<double>(r.population), r.max_centered,
                         static_cast<double>(r.count), r.martingale};
    res.manifest.per_replica_digest.push_back(digest_doubles(xs));
  }
  res.files.push_back(out);
}

void run_sample_zeta(const ExperimentConfig &c, std::size_t workers,
                     RunResult &res) {
  const ZetaGrid grid = zeta_grid_from(c);
  const auto zs = parallel_map(c.replicas, workers, [&](std::size_t i) {
    PhiloxStream rng({c.seed, static_cast<std::uint32_t>(i), 0});
    return sample_zeta(grid, rng);
  });
  const fs::path out = c.out_dir / "zeta.csv";
  write_zeta_csv(out, zs);
  for (const auto &z : zs) {
    const double xs[] = {z.value, z.argmin_s};
    res.manifest.per_replica_digest.push_back(digest_doubles(xs));
  }
  res.files.push_back(out);
}

std::vector<ClusterSample> sample_clusters(const ClusterConfig &cc,
                                           std::size_t replicas,
                                           std::uint64_t seed,
                                           std::size_t workers) {
  return parallel_map(replicas, workers, [&](std::size_t i) {
    return sample_cluster(cc, {seed, static_cast<std::uint32_t>(i), 0});
  });
}

std::size_t record_clusters(std::span<const ClusterSample> clusters,
                            RunResult &res) {
  std::size_t failed = 0;
  for (const auto &s : clusters) {
    res.manifest.per_replica_digest.push_back(cluster_digest(s));
    if (s.failed) {
      ++failed;
      log_warning("replica failed: " + s.failure);
    }
  }
  return failed;
}

void run_sample_cluster(const ExperimentConfig &c, std::size_t workers,
                        RunResult &res) {
  const ClusterConfig cc = cluster_config_from(c);
  const auto clusters = sample_clusters(cc, c.replicas, c.seed, workers);
  const fs::path out = c.out_dir / "clusters.csv";
  write_clusters_csv(out, clusters);
  res.files.push_back(out);
  res.failed_replicas = record_clusters(clusters, res);
  double pruned = 0.0;
  for (const auto &s : clusters) {
    pruned += s.pruned_mass;
  }
  res.manifest.notes.push_back(
      "r_trunc=" + std::to_string(cc.effective_r_trunc()) +
      " tail_bound=" + std::to_string(auto_truncation(cc.v_list.back()).tail_bound) +
      " mean_pruned_mass=" +
      std::to_string(clusters.empty() ? 0.0 : pruned / static_cast<double>(clusters.size())));
}

void run_theorem2(const ExperimentConfig &c, std::size_t workers,
                  RunResult &res) {
  const ClusterConfig cc = cluster_config_from(c);
  const ZetaGrid grid = zeta_grid_from(c);
  const auto clusters = sample_clusters(cc, c.replicas, c.seed, workers);
  const auto zs = parallel_map(c.replicas, workers, [&](std::size_t i) {
    PhiloxStream rng({c.seed, static_cast<std::uint32_t>(i),
                      substream_id(Substream::reference)});
    return sample_zeta(grid, rng);
  });
  std::vector<double> zeta;
  for (const auto &z : zs) {
    zeta.push_back(z.value);
  }
  const auto rows = theorem2_summary(cc.v_list, clusters, zeta);

  const fs::path data = c.out_dir / "theorem2.csv";
  write_clusters_csv(data, clusters);
  const fs::path ref = c.out_dir / "zeta_reference.csv";
  write_zeta_csv(ref, zs);
  const fs::path summary = c.out_dir / "theorem2_summary.csv";
  write_theorem2_summary(summary, rows);
  res.files = {data, ref, summary};
  res.failed_replicas = record_clusters(clusters, res);
}

void run_theorem1(const ExperimentConfig &c, std::size_t workers,
                  RunResult &res) {
  const std::string pool_path = c.text("cluster_pool");
  const auto pool = read_clusters_csv(pool_path);
  const auto v_list = c.numbers("v");
  const double v_floor =
      c.text("vfloor") == "auto" ? v_list.back() : c.number("vfloor");
  const ZSpec z = parse_z_spec(c.text("Z"));

  double cstar = 0.0;
  if (c.text("cstar") == "auto") {
    const auto v_fit = c.numbers("vfit");
    const CstarEstimate est = estimate_cstar(pool, v_fit, 1000, c.seed);
    cstar = est.value;
    std::ostringstream note;
    note << "cstar_hat=" << est.value << " ci=[" << est.ci_low << ','
         << est.ci_high << "] clusters=" << est.n_clusters;
    for (std::size_t j = 0; j < est.v_fit.size(); ++j) {
      note << " v" << est.v_fit[j] << '=' << est.per_v[j] << '['
           << est.per_v_low[j] << ',' << est.per_v_high[j] << ']'
           << (est.heavy_tail[j] ? "(heavy-tail)" : "");
    }
    res.manifest.notes.push_back(note.str());
  } else {
    cstar = c.number("cstar");
  }
  res.manifest.notes.push_back(
      "only the product cstar*Z is meaningful; Z normalization follows c_diamond=1");

  const auto result = theorem1_pipeline(pool, v_list, v_floor, c.number("assemblies") > 0
                                            ? static_cast<std::size_t>(c.number("assemblies"))
                                            : c.replicas,
                                        c.seed, z, cstar, c.number("tip_split"),
                                        workers);
  const fs::path data = c.out_dir / "theorem1.csv";
  auto os = open_csv(data, "assembly,v,Z,tips,E_count,ratio,failed");
  for (const auto &r : result.rows) {
    os << r.assembly << ',' << r.v << ',' << r.Z << ',' << r.tips << ','
       << r.E_count << ',' << r.ratio << ',' << (r.failed ? 1 : 0) << '\n';
    const double xs[] = {r.Z, static_cast<double>(r.E_count), r.ratio};
    res.manifest.per_replica_digest.push_back(digest_doubles(xs));
    if (r.failed) {
      ++res.failed_replicas;
    }
  }
  const fs::path summary = c.out_dir / "theorem1_summary.csv";
  auto ss = open_csv(summary, "v,assemblies,failed,median_ratio,q25,q75,iqr,cstar_hat");
  for (const auto &s : result.summary) {
    ss << s.v << ',' << s.assemblies << ',' << s.failed << ',' << s.median << ','
       << s.q25 << ',' << s.q75 << ',' << s.iqr() << ',' << result.cstar << '\n';
  }
  res.files = {data, summary};
}

void run_validate(const ExperimentConfig &c, std::size_t workers, RunResult &res) {
  const auto reports = oracle_suite(c.replicas, c.seed, workers);
  const fs::path out = c.out_dir / "validate.csv";
  std::ofstream os(out);
  write_reports_csv(os, reports);
  res.files.push_back(out);
  for (const auto &r : reports) {
    if (!r.passed) {
      res.exit_code = kExitAcceptance;
      log_warning("oracle failed: " + r.name + " " + r.notes);
    }
  }
}

void run_report(const ExperimentConfig &c, RunResult &res) {
  const fs::path in = c.text("input").empty() ? c.out_dir : fs::path(c.text("input"));
  const auto clusters = read_clusters_csv(in / "theorem2.csv");
  std::vector<double> zeta;
  for (const auto &row : read_csv_rows(in / "zeta_reference.csv", nullptr)) {
    if (row.size() >= 2) {
      zeta.push_back(std::stod(row[1]));
    }
  }
  if (clusters.empty() || zeta.empty()) {
    throw ValidationError("input", "theorem2 outputs are empty");
  }
  const auto rows = theorem2_summary(clusters.front().depths, clusters, zeta);
  const fs::path out = c.out_dir / "report.csv";
  write_theorem2_summary(out, rows);
  res.files.push_back(out);
}

} // namespace

// ---------------------------------------------------------------------------

std::string command_name(Command c) {
  for (const auto &[name, cmd] : command_table()) {
    if (cmd == c) {
      return name;
    }
  }
  return "unknown";
}

Command parse_command(const std::string &name) {
  const auto it = command_table().find(name);
  if (it == command_table().end()) {
    throw ValidationError("command", "unknown command '" + name + "'");
  }
  return it->second;
}

double ExperimentConfig::number(const std::string &key) const {
  return parse_number(key, text(key));
}

const std::string &ExperimentConfig::text(const std::string &key) const {
  const auto it = parameters.find(key);
  if (it == parameters.end()) {
    throw ValidationError(key, "missing parameter");
  }
  return it->second;
}

std::vector<double> ExperimentConfig::numbers(const std::string &key) const {
  return parse_list(key, text(key));
}

std::map<std::string, std::string> default_parameters(Command c) {
  const std::map<std::string, std::string> cluster = {
      {"vlist", "8"},         {"rtrunc", "auto"},
      {"prune_margin", "1"},  {"roulette", "on"},
      {"roulette_rho", "1e-4"}, {"max_rejections", "1000"},
      {"event_cap", "200000000"}};
  const std::map<std::string, std::string> grid = {
      {"grid_smin", "0.001"}, {"grid_smax", "1000"}, {"ppd", "64"}, {"refine", "3"}};
  std::map<std::string, std::string> p;
  switch (c) {
  case Command::simulate_bbm:
    p = {{"t", "2"}, {"prune_beta", "none"}, {"vmax", "2"}, {"c_diamond", "1"}};
    break;
  case Command::sample_zeta:
    p = grid;
    break;
  case Command::sample_cluster:
    p = cluster;
    break;
  case Command::theorem1:
    p = {{"v", "12"},        {"vfloor", "auto"},   {"assemblies", "200"},
         {"cluster_pool", ""}, {"Z", "proxy:8"},   {"cstar", "auto"},
         {"vfit", "8,10"},   {"tip_split", "-4"}};
    break;
  case Command::theorem2:
    p = cluster;
    p.merge(std::map<std::string, std::string>(grid));
    p["vlist"] = "8,12,16";
    break;
  case Command::validate:
    break;
  case Command::report:
    p = {{"input", ""}};
    break;
  }
  return p;
}

void ExperimentConfig::validate() const {
  if (replicas == 0) {
    throw ValidationError("replicas", "must be positive");
  }
  switch (command) {
  case Command::simulate_bbm: {
    if (!(number("t") > 0.0)) {
      throw ValidationError("t", "must be positive");
    }
    number("vmax");
    if (text("prune_beta") != "none" && !(number("prune_beta") > 0.0)) {
      throw ValidationError("prune_beta", "must be positive or 'none'");
    }
    break;
  }
  case Command::sample_zeta:
    zeta_grid_from(*this).validate();
    break;
  case Command::sample_cluster:
  case Command::theorem2: {
    const auto v = numbers("vlist");
    require_increasing("vlist", v);
    cluster_config_from(*this).validate();
    if (text("rtrunc") != "auto" && !(number("rtrunc") > 0.0)) {
      throw ValidationError("rtrunc", "must be positive or 'auto'");
    }
    if (command == Command::theorem2) {
      zeta_grid_from(*this).validate();
    }
    break;
  }
  case Command::theorem1: {
    if (text("cluster_pool").empty()) {
      throw ValidationError("cluster_pool", "a cluster pool CSV is required");
    }
    const auto v = numbers("v");
    require_increasing("v", v);
    for (double x : v) {
      if (!(x > 0.0)) {
        throw ValidationError("v", "must be positive");
      }
    }
    parse_z_spec(text("Z"));
    if (text("cstar") != "auto" && !(number("cstar") > 0.0)) {
      throw ValidationError("cstar", "must be positive or 'auto'");
    }
    if (text("vfloor") != "auto" && number("vfloor") < v.back()) {
      throw ValidationError("vfloor", "must be at least the largest v");
    }
    if (number("assemblies") < 0.0) {
      throw ValidationError("assemblies", "must be non-negative");
    }
    break;
  }
  case Command::validate:
  case Command::report:
    break;
  }
}

ExperimentConfig make_config(Command c,
                             const std::map<std::string, std::string> &overrides,
                             std::uint64_t seed, std::size_t replicas,
                             fs::path out_dir) {
  ExperimentConfig cfg;
  cfg.command = c;
  cfg.parameters = default_parameters(c);
  for (const auto &[k, v] : overrides) {
    if (!cfg.parameters.contains(k)) {
      throw ValidationError(k, "unknown parameter for " + command_name(c));
    }
    cfg.parameters[k] = v;
  }
  cfg.seed = seed;
  cfg.replicas = replicas;
  cfg.out_dir = std::move(out_dir);
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> read_config_file(const fs::path &p) {
  std::ifstream is(p);
  if (!is) {
    throw ValidationError("config", "cannot read " + p.string());
  }
  std::map<std::string, std::string> out;
  int lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config", "line " + std::to_string(lineno) +
                                          ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

ExperimentConfig config_from_manifest(const RunManifest &m) {
  auto params = m.parameters;
  const auto cmd = params.find("command");
  if (cmd == params.end()) {
    throw ValidationError("manifest", "no command recorded");
  }
  const Command c = parse_command(cmd->second);
  fs::path out = params.contains("out") ? fs::path(params["out"]) : fs::path("bbmx-out");
  params.erase("command");
  params.erase("out");
  return make_config(c, params, m.seed, m.replica_count, out);
}

fs::path resolve_output_dir(const fs::path &p) {
  if (p.is_absolute()) {
    return p;
  }
  if (const char *root = std::getenv("BBMX_OUTPUT_ROOT"); root && *root) {
    return fs::path(root) / p;
  }
  return p;
}

std::size_t resolve_workers(std::size_t requested) {
  if (requested > 0) {
    return requested;
  }
  if (const char *env = std::getenv("BBMX_WORKERS"); env && *env) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) {
      return static_cast<std::size_t>(n);
    }
    log_warning("ignoring BBMX_WORKERS=" + std::string(env));
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

RunResult run(const ExperimentConfig &config) {
  config.validate();
  const std::size_t workers = resolve_workers(config.workers);
  fs::create_directories(config.out_dir);

  RunResult res;
  res.manifest.seed = config.seed;
  res.manifest.replica_count = config.replicas;
  res.manifest.parameters = config.parameters;
  res.manifest.parameters["command"] = command_name(config.command);
  res.manifest.parameters["out"] = config.out_dir.string();
  res.manifest.tool_version = BBMX_VERSION;

  switch (config.command) {
  case Command::simulate_bbm:
    run_simulate_bbm(config, workers, res);
    break;
  case Command::sample_zeta:
    run_sample_zeta(config, workers, res);
    break;
  case Command::sample_cluster:
    run_sample_cluster(config, workers, res);
    break;
  case Command::theorem1:
    run_theorem1(config, workers, res);
    break;
  case Command::theorem2:
    run_theorem2(config, workers, res);
    break;
  case Command::validate:
    run_validate(config, workers, res);
    break;
  case Command::report:
    run_report(config, res);
    break;
  }

  const std::size_t total = res.manifest.per_replica_digest.size();
  if (res.failed_replicas > 0) {
    res.manifest.notes.push_back("failed replicas: " +
                                 std::to_string(res.failed_replicas));
    res.exit_code = res.failed_replicas >= total ? kExitTotalFailure
                                                 : kExitPartialFailure;
  }
  const fs::path manifest = config.out_dir / "manifest.json";
  std::ofstream(manifest) << res.manifest.to_json() << '\n';
  res.files.push_back(manifest);
  return res;
}

// ---------------------------------------------------------------------------

void write_clusters_csv(const fs::path &p, std::span<const ClusterSample> clusters) {
  auto os = open_csv(p, "replica,v,count,statistic,failed");
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const ClusterSample &s = clusters[i];
    for (std::size_t j = 0; j < s.depths.size(); ++j) {
      const double v = s.depths[j];
      const double stat = v > 0.0 ? statistic_or_nan(s, v) : kNaN;
      os << i << ',' << v << ',' << s.counts[j] << ',' << stat << ','
         << (s.failed ? 1 : 0) << '\n';
    }
  }
}

std::vector<ClusterSample> read_clusters_csv(const fs::path &p) {
  std::string header;
  const auto rows = read_csv_rows(p, &header);
  if (header != "replica,v,count,statistic,failed") {
    throw ValidationError("cluster_pool", "unexpected header in " + p.string());
  }
  std::vector<ClusterSample> out;
  for (const auto &r : rows) {
    if (r.size() != 5) {
      throw ValidationError("cluster_pool", "malformed row in " + p.string());
    }
    const auto replica = static_cast<std::size_t>(std::stoull(r[0]));
    if (replica >= out.size()) {
      out.resize(replica + 1);
    }
    ClusterSample &s = out[replica];
    s.depths.push_back(std::stod(r[1]));
    s.counts.push_back(std::stoull(r[2]));
    s.failed = r[4] == "1";
    if (s.failed) {
      s.failure = "failed in source run";
    }
  }
  return out;
}

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) {
    return kNaN;
  }
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

std::vector<Theorem2Row> theorem2_summary(std::span<const double> v_list,
                                          std::span<const ClusterSample> clusters,
                                          std::span<const double> zeta) {
  std::vector<Theorem2Row> rows;
  const std::vector<double> z(zeta.begin(), zeta.end());
  for (double v : v_list) {
    if (!(v > 0.0)) {
      continue;
    }
    Theorem2Row row;
    row.v = v;
    row.clusters = clusters.size();
    std::vector<double> stats, ratios;
    for (const auto &s : clusters) {
      if (s.failed) {
        ++row.failed;
        continue;
      }
      const double x = statistic_or_nan(s, v);
      if (std::isnan(x)) {
        ++row.undefined;
        continue;
      }
      stats.push_back(x);
      ratios.push_back(std::log(static_cast<double>(s.count_at(v))) / (kSqrt2 * v));
    }
    const std::size_t ok = row.clusters - row.failed;
    row.undefined_frequency =
        ok == 0 ? 1.0 : static_cast<double>(row.undefined) / static_cast<double>(ok);
    row.ks = stats.empty() || z.empty() ? kNaN : ks_two_sample(stats, z);
    row.median = quantile(stats, 0.5);
    row.log_ratio_median = quantile(ratios, 0.5);
    row.zeta_q10 = quantile(z, 0.1);
    row.zeta_q50 = quantile(z, 0.5);
    row.zeta_q90 = quantile(z, 0.9);
    rows.push_back(row);
  }
  return rows;
}

Theorem2Result theorem2_pipeline(std::span<const double> v_list,
                                 std::size_t replicas, std::uint64_t seed,
                                 const ClusterConfig &base, std::size_t workers) {
  ClusterConfig cc = base;
  cc.v_list.assign(v_list.begin(), v_list.end());
  cc.validate();
  Theorem2Result res;
  res.clusters = sample_clusters(cc, replicas, seed, workers);
  const ZetaGrid grid;
  const auto zs = parallel_map(replicas, workers, [&](std::size_t i) {
    PhiloxStream rng({seed, static_cast<std::uint32_t>(i),
                      substream_id(Substream::reference)});
    return sample_zeta(grid, rng).value;
  });
  res.zeta = zs;
  res.rows = theorem2_summary(v_list, res.clusters, res.zeta);
  return res;
}

// ---------------------------------------------------------------------------

ZSpec parse_z_spec(const std::string &text) {
  ZSpec z;
  if (text.rfind("proxy:", 0) == 0) {
    z.proxy = true;
    z.value = parse_number("Z", text.substr(6));
  } else if (text == "proxy") {
    z.proxy = true;
    z.value = 8.0;
  } else {
    z.proxy = false;
    z.value = parse_number("Z", text);
  }
  if (!(z.value > 0.0)) {
    throw ValidationError("Z", "value must be positive");
  }
  return z;
}

Theorem1Result theorem1_pipeline(std::span<const ClusterSample> pool,
                                 std::span<const double> v_list, double v_floor,
                                 std::size_t assemblies, std::uint64_t seed,
                                 const ZSpec &z, double cstar, double tip_split,
                                 std::size_t workers) {
  std::vector<ClusterSample> ok;
  for (const auto &s : pool) {
    if (!s.failed) {
      ok.push_back(s);
    }
  }
  if (ok.empty()) {
    throw ValidationError("cluster_pool", "no usable clusters");
  }
  const auto &d = ok.front().depths;
  if (d.size() < 2 || d.front() != 0.0) {
    throw ValidationError("cluster_pool", "depth grid must start at 0");
  }
  const double step = d[1] - d[0];
  for (const auto &s : ok) {
    if (s.depths.size() != d.size()) {
      throw ValidationError("cluster_pool", "clusters disagree on the depth grid");
    }
    for (std::size_t i = 1; i < s.depths.size(); ++i) {
      if (std::abs(s.depths[i] - s.depths[i - 1] - step) > 1e-9) {
        throw ValidationError("cluster_pool", "depth grid must be uniform");
      }
    }
  }
  auto aligned = [step](double x) {
    return std::abs(x / step - std::round(x / step)) < 1e-6;
  };
  for (double v : v_list) {
    if (!aligned(v)) {
      throw ValidationError("v", "must be a multiple of the pool depth step");
    }
  }
  v_floor = std::ceil(v_floor / step - 1e-9) * step;

  Theorem1Result res;
  res.cstar = cstar;
  const auto per = parallel_map(assemblies, workers, [&](std::size_t a) {
    const StreamKey key{seed, static_cast<std::uint32_t>(a), 0};
    const double Z = z.proxy ? sample_z_proxy(z.value, key) : z.value;
    PhiloxStream tip_rng(child_key(key, Substream::tips));
    const BinnedTips tips = sample_binned_tips(Z, v_floor, step, tip_split, tip_rng);
    std::vector<Theorem1Row> rows;
    for (std::size_t j = 0; j < v_list.size(); ++j) {
      Theorem1Row row;
      row.assembly = a;
      row.v = v_list[j];
      row.Z = Z;
      std::uint64_t above = 0;
      for (std::size_t k = 0; k < tips.cell_counts.size(); ++k) {
        if (-v_floor + static_cast<double>(k) * step >= -row.v - 1e-9) {
          above += tips.cell_counts[k];
        }
      }
      for (double u : tips.upper_tips) {
        above += u >= -row.v ? 1 : 0;
      }
      row.tips = above;
      PhiloxStream pick_rng(child_key(key, Substream::pool_pick,
                                      static_cast<std::uint32_t>(j)));
      try {
        row.E_count = assemble_E_from_pool(tips, ok, row.v, pick_rng);
        row.ratio = ratio_statistic(row.E_count, Z, cstar, row.v);
      } catch (const DepthCoverageError &e) {
        row.failed = true;
        row.ratio = kNaN;
      }
      rows.push_back(row);
    }
    return rows;
  });
  for (const auto &rows : per) {
    res.rows.insert(res.rows.end(), rows.begin(), rows.end());
  }
  for (double v : v_list) {
    Theorem1Summary s;
    s.v = v;
    std::vector<double> ratios;
    for (const auto &r : res.rows) {
      if (r.v != v) {
        continue;
      }
      ++s.assemblies;
      if (r.failed) {
        ++s.failed;
      } else {
        ratios.push_back(r.ratio);
      }
    }
    s.median = quantile(ratios, 0.5);
    s.q25 = quantile(ratios, 0.25);
    s.q75 = quantile(ratios, 0.75);
    res.summary.push_back(s);
  }
  return res;
}

// ---------------------------------------------------------------------------

std::vector<TestReport> oracle_suite(std::size_t replicas, std::uint64_t seed,
                                     std::size_t workers) {
  std::vector<TestReport> out;

  {
    TestReport r;
    r.name = "ballot_closed_form";
    r.statistic = std::abs(ballot_bridge_prob(1, 1, 2) - (1.0 - std::exp(-1.0)));
    r.threshold = 1e-12;
    r.passed = r.statistic <= r.threshold;
    out.push_back(r);
    TestReport a;
    a.name = "ballot_asymptotic_t1000";
    a.statistic = 1000.0 * ballot_bridge_prob(1, 1, 1000) / 2.0;
    a.threshold = 0.95;
    a.passed = a.statistic >= 0.95 && a.statistic <= 1.0;
    a.notes = "t p/(2xy) in [0.95; 1]";
    out.push_back(a);
  }
  const double bridges[][3] = {{1, 1, 2}, {1, 1, 10}, {0.5, 2, 10}};
  for (const auto &b : bridges) {
    const auto est = bridge_positive_mc(b[0], b[1], b[2], 10 * replicas, 200,
                                        {seed, 0, substream_id(Substream::reference, 1)});
    out.push_back(within_se("bridge_mc x=" + std::to_string(b[0]) +
                                " y=" + std::to_string(b[1]) +
                                " t=" + std::to_string(b[2]),
                            est.corrected, ballot_bridge_prob(b[0], b[1], b[2])));
  }

  SimulationOptions opts;
  opts.record_genealogy = false;
  struct Obs {
    double population;
    double c0, c1, c2;
    double z;
  };
  for (double t : {2.0, 4.0}) {
    const auto obs = parallel_map(replicas, workers, [&](std::size_t i) {
      PhiloxStream rng({seed, static_cast<std::uint32_t>(i),
                        substream_id(Substream::main, static_cast<std::uint32_t>(t))});
      const auto snap = simulate_bbm(t, PruneConfig::none(), rng, opts);
      const auto E = extremal_process(snap);
      return Obs{static_cast<double>(snap.alive.size()),
                 static_cast<double>(count_at_least(E, 0)),
                 static_cast<double>(count_at_least(E, 1)),
                 static_cast<double>(count_at_least(E, 2)),
                 derivative_martingale(snap, 1.0)};
    });
    std::vector<double> pop, c[3], z;
    std::vector<std::uint64_t> pop_int;
    for (const auto &o : obs) {
      pop.push_back(o.population);
      pop_int.push_back(static_cast<std::uint64_t>(o.population));
      c[0].push_back(o.c0);
      c[1].push_back(o.c1);
      c[2].push_back(o.c2);
      z.push_back(o.z);
    }
    const std::string ts = std::to_string(static_cast<int>(t));
    out.push_back(within_se("yule_mean t=" + ts, mean_estimate(pop), std::exp(t)));
    const auto gof = geometric_gof(pop_int, std::exp(-t));
    TestReport g;
    g.name = "yule_geometric_gof t=" + ts;
    g.statistic = gof.p_value;
    g.threshold = 0.01;
    g.passed = gof.p_value > 0.01;
    g.n_samples = replicas;
    out.push_back(g);
    for (int v = 0; v < 3; ++v) {
      out.push_back(within_se("many_to_one s=" + ts + " v=" + std::to_string(v),
                              mean_estimate(c[v]), many_to_one_mean(t, v)));
    }
    out.push_back(within_se("martingale_mean t=" + ts, mean_estimate(z), 0.0));
  }

  {
    const double s_list[] = {4, 8, 16, 32, 64};
    std::vector<double> v_list;
    for (int v = 1; v <= 64; ++v) {
      v_list.push_back(v);
    }
    TestReport r;
    r.name = "first_moment_sweep";
    r.statistic = fit_first_moment_constant(s_list, v_list);
    r.threshold = std::numeric_limits<double>::infinity();
    r.passed = std::isfinite(r.statistic);
    r.notes = "fitted minimal C";
    out.push_back(r);
    out.push_back(first_moment_bound_check(10, 2, 1.0));
  }

  {
    const std::size_t n = 10 * replicas;
    const double grid[] = {0.0, 1.0};
    const auto y1 = parallel_map(n, workers, [&](std::size_t i) {
      PhiloxStream rng({seed, static_cast<std::uint32_t>(i),
                        substream_id(Substream::backbone)});
      return sample_bessel3(grid, 0.0, rng).values[1];
    });
    TestReport r;
    r.name = "bessel_chi3_ks";
    r.statistic = ks_one_sample(y1, chi3_cdf);
    r.threshold = ks_critical_1pct(static_cast<double>(n));
    r.passed = r.statistic < r.threshold;
    r.n_samples = n;
    out.push_back(r);
    out.push_back(within_se("bessel_mean", mean_estimate(y1), 2.0 * std::sqrt(2.0 / M_PI)));
  }

  {
    const ZetaGrid g;
    FunctionPath path(g.points(), [](double s) { return s; });
    const ZetaSample zs = minimize_zeta(path, g);
    TestReport r;
    r.name = "zeta_deterministic";
    r.statistic = std::abs(zs.value - std::pow(2.0, 0.75));
    r.threshold = 1e-6;
    r.passed = r.statistic < r.threshold;
    out.push_back(r);
  }

  {
    const auto counts = parallel_map(replicas, workers, [&](std::size_t i) {
      PhiloxStream rng({seed, static_cast<std::uint32_t>(i),
                        substream_id(Substream::tips)});
      const TipSet ts = sample_tips(1.0, 8.0, rng);
      return static_cast<std::uint64_t>(std::count_if(
          ts.tips.begin(), ts.tips.end(), [](double u) { return u >= -2.0; }));
    });
    const auto gof = poisson_gof(counts, std::exp(kSqrt2 * 2.0) / kSqrt2);
    TestReport r;
    r.name = "tips_poisson_gof v=2";
    r.statistic = gof.p_value;
    r.threshold = 0.01;
    r.passed = gof.p_value > 0.01;
    r.n_samples = replicas;
    out.push_back(r);
  }
  return out;
}

} // namespace bbmx
