// bbmx: command-line front end for the BBM extremes toolkit.

#include "bbmx/errors.hpp"
#include "bbmx/logging.hpp"
#include "bbmx/runner.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace bbmx;

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

struct CommonOptions {
  std::string config_file;
  std::string out;
  std::string manifest_copy;
  std::uint64_t seed = 1;
  std::size_t replicas = 100;
  std::size_t workers = 0;
};

int execute(const ExperimentConfig &config, std::size_t workers,
            const std::string &manifest_copy) {
  ExperimentConfig cfg = config;
  cfg.workers = workers;
  const RunResult res = run(cfg);
  if (!manifest_copy.empty()) {
    std::ofstream(manifest_copy) << res.manifest.to_json() << '\n';
  }
  for (const auto &f : res.files) {
    log_info("wrote " + f.string());
  }
  if (res.exit_code == kExitPartialFailure || res.exit_code == kExitTotalFailure) {
    std::cerr << "warning: " << res.failed_replicas << " of "
              << res.manifest.per_replica_digest.size() << " replicas failed\n";
  }
  return res.exit_code;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Monte Carlo toolkit for branching Brownian motion extremes"};
  app.set_version_flag("--version", std::string(BBMX_VERSION));
  app.require_subcommand(0, 1);

  std::string from_manifest;
  std::string rerun_out;
  int verbosity = 1;
  app.add_option("--from-manifest", from_manifest,
                 "Rerun exactly the experiment recorded in a manifest");
  app.add_option("--rerun-out", rerun_out,
                 "Output directory for --from-manifest (default: as recorded)");
  app.add_option("-v,--verbosity", verbosity, "0 quiet, 1 info, 2 debug")
      ->check(CLI::Range(0, 2));

  struct Sub {
    Command command;
    CLI::App *app;
    CommonOptions common;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option *> options;
    bool auto_trunc = false;
  };
  std::vector<std::unique_ptr<Sub>> subs;
  const std::pair<Command, const char *> commands[] = {
      {Command::simulate_bbm, "Unpruned or front-pruned BBM replicas"},
      {Command::sample_zeta, "Samples of the zeta law"},
      {Command::sample_cluster, "Cluster level-set counts"},
      {Command::theorem1, "Decorated-PPP assemblies from a cluster pool"},
      {Command::theorem2, "Fluctuation statistics against a zeta ensemble"},
      {Command::validate, "Closed-form oracle suite"},
      {Command::report, "Plot-ready summary of theorem2 outputs"},
  };
  for (const auto &[cmd, help] : commands) {
    auto sub = std::make_unique<Sub>();
    sub->command = cmd;
    sub->app = app.add_subcommand(command_name(cmd), help);
    CLI::App *s = sub->app;
    s->add_option("--config", sub->common.config_file, "key = value file");
    s->add_option("--out", sub->common.out, "Output directory");
    s->add_option("--manifest", sub->common.manifest_copy,
                  "Extra copy of the JSON manifest");
    s->add_option("--seed", sub->common.seed, "64-bit run seed");
    s->add_option(cmd == Command::sample_zeta ? "--replicas,--samples" : "--replicas",
                  sub->common.replicas, "Replica count");
    s->add_option("--workers", sub->common.workers,
                  "Worker threads (default BBMX_WORKERS or all cores)");
    for (const auto &[key, def] : default_parameters(cmd)) {
      sub->options[key] =
          s->add_option(flag_name(key), sub->values[key], "default: " + def);
    }
    if (cmd == Command::sample_cluster || cmd == Command::theorem2) {
      s->add_flag("--auto-trunc", sub->auto_trunc, "r_trunc from the depth (default)");
    }
    subs.push_back(std::move(sub));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  set_log_level(verbosity);

  try {
    if (!from_manifest.empty()) {
      std::ifstream is(from_manifest);
      if (!is) {
        throw ValidationError("from-manifest", "cannot read " + from_manifest);
      }
      std::stringstream ss;
      ss << is.rdbuf();
      ExperimentConfig cfg = config_from_manifest(RunManifest::from_json(ss.str()));
      if (!rerun_out.empty()) {
        cfg.out_dir = rerun_out;
      }
      cfg.out_dir = resolve_output_dir(cfg.out_dir);
      return execute(cfg, 0, "");
    }
    for (const auto &sub : subs) {
      if (!sub->app->parsed()) {
        continue;
      }
      std::map<std::string, std::string> overrides;
      CommonOptions common = sub->common;
      std::string out = common.out;
      if (!common.config_file.empty()) {
        for (auto [key, value] : read_config_file(common.config_file)) {
          if (key == "seed") {
            if (sub->app->count("--seed") == 0) {
              common.seed = std::stoull(value);
            }
          } else if (key == "replicas" || key == "samples") {
            if (sub->app->count("--replicas") == 0) {
              common.replicas = std::stoull(value);
            }
          } else if (key == "workers") {
            if (sub->app->count("--workers") == 0) {
              common.workers = std::stoull(value);
            }
          } else if (key == "out") {
            if (out.empty()) {
              out = value;
            }
          } else {
            overrides[key] = value;
          }
        }
      }
      for (const auto &[key, opt] : sub->options) {
        if (opt->count() > 0) {
          overrides[key] = sub->values.at(key);
        }
      }
      if (sub->auto_trunc) {
        overrides["rtrunc"] = "auto";
      }
      const auto cfg =
          make_config(sub->command, overrides, common.seed, common.replicas,
                      resolve_output_dir(out.empty() ? "bbmx-out" : out));
      return execute(cfg, common.workers, common.manifest_copy);
    }
    std::cout << app.help();
    return kExitOk;
  } catch (const ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitTotalFailure;
  }
}
