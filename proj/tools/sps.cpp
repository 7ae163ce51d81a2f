// sps: simulate, analyse and qualify single-photon-server runs.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sps/sps.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<unsigned> jobs;
  std::string out;
  std::string format;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config,-c", c.config, "key = value config file");
  cmd->add_option("--set", c.set, "override a config key, KEY=VALUE (repeatable)");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--runs,-n", c.runs, "number of runs");
  cmd->add_option("--jobs,-j", c.jobs, "worker threads (0: all cores)");
  cmd->add_option("--out,-o", c.out, "output directory");
  cmd->add_option("--format", c.format, "click file format")->check(CLI::IsMember({"ptag", "csv"}));
}

sps::ExperimentConfig make_config(const Common& c) {
  sps::ExperimentConfig cfg = c.config.empty() ? sps::ExperimentConfig{} : sps::load_config(c.config);
  for (const auto& kv : c.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw sps::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    sps::set_config_value(cfg, sps::detail::trim(kv.substr(0, eq)), sps::detail::trim(kv.substr(eq + 1)));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.runs) cfg.n_runs = *c.runs;
  if (c.jobs) cfg.jobs = *c.jobs;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.format.empty()) cfg.format = c.format == "csv" ? sps::ClickFormat::csv : sps::ClickFormat::binary;
  cfg.validate();
  return cfg;
}

std::vector<sps::fs::path> paths(const std::vector<std::string>& in) { return {in.begin(), in.end()}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single photon server toolkit"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::string> inputs;

  auto* simulate = app.add_subcommand("simulate", "simulate click streams with ground truth");
  auto* analyze = app.add_subcommand("analyze", "cross-correlation histograms and visibility");
  auto* qualify = app.add_subcommand("qualify", "replay streams through the photon server state machine");
  auto* qed = app.add_subcommand("qed", "integrate the atom-cavity master equation");
  auto* report = app.add_subcommand("report", "collect manifests into summary.json");
  auto* keys = app.add_subcommand("keys", "list config keys");
  for (auto* cmd : {simulate, analyze, qualify, qed, report}) add_common(cmd, common);
  for (auto* cmd : {analyze, qualify, report})
    cmd->add_option("inputs", inputs, "click files or directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (keys->parsed()) {
      for (const auto& k : sps::config_key_names()) std::cout << k << '\n';
      return sps::kExitOk;
    }
    const auto cfg = make_config(common);
    if (simulate->parsed()) return sps::cmd_simulate(cfg, std::cerr);
    if (analyze->parsed()) return sps::cmd_analyze(paths(inputs), cfg, std::cerr);
    if (qualify->parsed()) return sps::cmd_qualify(paths(inputs), cfg, std::cerr);
    if (qed->parsed()) return sps::cmd_qed(cfg, std::cerr);
    if (report->parsed()) return sps::cmd_report(paths(inputs), cfg, std::cerr);
  } catch (const sps::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return sps::kExitConfig;
  } catch (const sps::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return sps::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sps::kExitAnalysis;
  }
  return sps::kExitOk;
}
