#pragma once

// Experiment configuration: one text file of `section.key = value` lines.
// Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sps/clickstream.hpp"
#include "sps/error.hpp"
#include "sps/qed.hpp"
#include "sps/qualifier.hpp"
#include "sps/simulator.hpp"

namespace sps {

enum class TimingModel { uniform, qed };

struct ExperimentConfig {
  SimConfig sim;
  PulseSchedule schedule;
  QualifierConfig qualifier;
  qed::QedParams qed;
  qed::PulseShape pulse;
  double qed_dt_ns = 1.0;
  std::optional<double> qed_fit_target;
  TimingModel timing = TimingModel::uniform;

  std::int64_t analysis_max_lag = kDefaultMaxLag;
  std::int64_t fine_span_ns = 30'000;
  std::int64_t fine_resolution_ns = kFineResolutionNs;

  int n_runs = 1;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "out";
  ClickFormat format = ClickFormat::binary;
  unsigned jobs = 0;  // 0: hardware concurrency

  void validate() const {
    sim.validate();
    schedule.validate();
    qualifier.validate();
    qed.validate();
    if (n_runs < 1) throw ConfigError("run.n_runs must be >= 1");
    if (!(qed_dt_ns > 0)) throw ConfigError("qed.dt_ns must be positive");
    if (analysis_max_lag < 1) throw ConfigError("analysis.max_lag must be >= 1");
    if (fine_resolution_ns <= 0 || fine_span_ns <= 0 || fine_span_ns % fine_resolution_ns != 0)
      throw ConfigError("analysis.fine_resolution_ns must divide analysis.fine_span_ns");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t i = 0;
  if (!parse_int(std::string_view(v), i)) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(key, item));
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter, std::less<>>& config_keys() {
  using C = ExperimentConfig;
  using S = std::string;
  static const std::map<std::string, Setter, std::less<>> keys = {
      // schedule
      {"schedule.period_ns", [](C& c, const S& k, const S& v) { c.schedule.period = static_cast<TimeNs>(to_int(k, v)); }},
      {"schedule.trigger_begin_ns", [](C& c, const S& k, const S& v) { c.schedule.trigger.begin = static_cast<TimeNs>(to_int(k, v)); }},
      {"schedule.trigger_end_ns", [](C& c, const S& k, const S& v) { c.schedule.trigger.end = static_cast<TimeNs>(to_int(k, v)); }},
      {"schedule.recycle_begin_ns", [](C& c, const S& k, const S& v) { c.schedule.recycle.begin = static_cast<TimeNs>(to_int(k, v)); }},
      {"schedule.recycle_end_ns", [](C& c, const S& k, const S& v) { c.schedule.recycle.end = static_cast<TimeNs>(to_int(k, v)); }},
      // simulator
      {"sim.p_gen", [](C& c, const S& k, const S& v) { c.sim.p_gen = to_double(k, v); }},
      {"sim.t_cavity", [](C& c, const S& k, const S& v) { c.sim.t_cavity = to_double(k, v); }},
      {"sim.t_prop", [](C& c, const S& k, const S& v) { c.sim.t_prop = to_double(k, v); }},
      {"sim.eta_det", [](C& c, const S& k, const S& v) { c.sim.eta_det = to_double(k, v); }},
      {"sim.background_rate_hz", [](C& c, const S& k, const S& v) { c.sim.background_rate_hz = to_double(k, v); }},
      {"sim.recycle_det_rate_per_ms", [](C& c, const S& k, const S& v) { c.sim.recycle_det_rate_per_ms = to_double(k, v); }},
      {"sim.trap_mean_life_s", [](C& c, const S& k, const S& v) { c.sim.trap_mean_life_s = to_double(k, v); }},
      {"sim.lifetime_shape", [](C& c, const S& k, const S& v) {
         if (v == "exponential") c.sim.lifetime_shape = LifetimeShape::exponential;
         else if (v == "gamma") c.sim.lifetime_shape = LifetimeShape::gamma;
         else throw ConfigError(k + ": expected exponential or gamma");
       }},
      {"sim.gamma_k", [](C& c, const S& k, const S& v) { c.sim.gamma_k = to_double(k, v); }},
      {"sim.initial_atoms", [](C& c, const S& k, const S& v) {
         if (v == "one_plus_poisson") c.sim.initial_atoms.kind = InitialAtomsKind::one_plus_poisson;
         else if (v == "fixed") c.sim.initial_atoms.kind = InitialAtomsKind::fixed;
         else throw ConfigError(k + ": expected one_plus_poisson or fixed");
       }},
      {"sim.initial_atoms_mean", [](C& c, const S& k, const S& v) { c.sim.initial_atoms.poisson_mean = to_double(k, v); }},
      {"sim.initial_atoms_count", [](C& c, const S& k, const S& v) { c.sim.initial_atoms.count = static_cast<int>(to_int(k, v)); }},
      {"sim.run_duration_s", [](C& c, const S& k, const S& v) { c.sim.run_duration_s = to_double(k, v); }},
      {"sim.p_two_photon", [](C& c, const S& k, const S& v) { c.sim.p_two_photon = to_double(k, v); }},
      {"sim.dead_time_ns", [](C& c, const S& k, const S& v) { c.sim.dead_time_ns = static_cast<TimeNs>(to_int(k, v)); }},
      {"sim.atoms_pinned", [](C& c, const S& k, const S& v) { c.sim.atoms_pinned = to_bool(k, v); }},
      {"sim.departures_s", [](C& c, const S& k, const S& v) { c.sim.departures_s = to_list(k, v); }},
      {"sim.timing", [](C& c, const S& k, const S& v) {
         if (v == "uniform") c.timing = TimingModel::uniform;
         else if (v == "qed") c.timing = TimingModel::qed;
         else throw ConfigError(k + ": expected uniform or qed");
       }},
      // qualifier
      {"qualifier.level_low_per_ms", [](C& c, const S& k, const S& v) { c.qualifier.level_low_per_ms = to_double(k, v); }},
      {"qualifier.level_high_per_ms", [](C& c, const S& k, const S& v) { c.qualifier.level_high_per_ms = to_double(k, v); }},
      {"qualifier.level_window_ms", [](C& c, const S& k, const S& v) { c.qualifier.level_window_ms = to_double(k, v); }},
      {"qualifier.qual_duration_s", [](C& c, const S& k, const S& v) { c.qualifier.qual_duration_s = to_double(k, v); }},
      {"qualifier.min_mean_nonzero", [](C& c, const S& k, const S& v) { c.qualifier.min_mean_nonzero = to_double(k, v); }},
      {"qualifier.zero_lag_fraction_max", [](C& c, const S& k, const S& v) { c.qualifier.zero_lag_fraction_max = to_double(k, v); }},
      {"qualifier.max_lag", [](C& c, const S& k, const S& v) { c.qualifier.max_lag = to_int(k, v); }},
      {"qualifier.loss_window_ms", [](C& c, const S& k, const S& v) { c.qualifier.loss_window_ms = to_double(k, v); }},
      {"qualifier.loss_max_counts", [](C& c, const S& k, const S& v) { c.qualifier.loss_max_counts = static_cast<int>(to_int(k, v)); }},
      {"qualifier.loss_background_rate_hz", [](C& c, const S& k, const S& v) { c.qualifier.loss_background_rate_hz = to_double(k, v); }},
      {"qualifier.loss_confidence", [](C& c, const S& k, const S& v) { c.qualifier.loss_confidence = to_double(k, v); }},
      {"qualifier.retry_after_reject", [](C& c, const S& k, const S& v) { c.qualifier.retry_after_reject = to_bool(k, v); }},
      // qed model, frequencies in MHz (times 2 pi)
      {"qed.g_mhz", [](C& c, const S& k, const S& v) { c.qed.g = qed::two_pi_mhz(to_double(k, v)); }},
      {"qed.kappa_mhz", [](C& c, const S& k, const S& v) { c.qed.kappa = qed::two_pi_mhz(to_double(k, v)); }},
      {"qed.gamma_mhz", [](C& c, const S& k, const S& v) { c.qed.gamma = qed::two_pi_mhz(to_double(k, v)); }},
      {"qed.delta_trigger_mhz", [](C& c, const S& k, const S& v) { c.qed.delta_trigger = qed::two_pi_mhz(to_double(k, v)); }},
      {"qed.delta_cavity_mhz", [](C& c, const S& k, const S& v) { c.qed.delta_cavity = qed::two_pi_mhz(to_double(k, v)); }},
      {"qed.stark_shift_mhz", [](C& c, const S& k, const S& v) { c.qed.stark_shift = qed::two_pi_mhz(to_double(k, v)); }},
      {"qed.branch_u", [](C& c, const S& k, const S& v) { c.qed.branch_u = to_double(k, v); }},
      {"qed.coupling_scale", [](C& c, const S& k, const S& v) { c.qed.coupling_scale = to_double(k, v); }},
      {"qed.dt_ns", [](C& c, const S& k, const S& v) { c.qed_dt_ns = to_double(k, v); }},
      {"qed.fit_target", [](C& c, const S& k, const S& v) { c.qed_fit_target = to_double(k, v); }},
      {"pulse.omega_max_mhz", [](C& c, const S& k, const S& v) { c.pulse.omega_max = qed::two_pi_mhz(to_double(k, v)); }},
      {"pulse.duration_ns", [](C& c, const S& k, const S& v) { c.pulse.duration_ns = to_double(k, v); }},
      {"pulse.profile", [](C& c, const S& k, const S& v) {
         if (v == "sin2") c.pulse.profile = qed::PulseProfile::sin2;
         else if (v == "constant") c.pulse.profile = qed::PulseProfile::constant;
         else throw ConfigError(k + ": expected sin2 or constant");
       }},
      // analysis
      {"analysis.max_lag", [](C& c, const S& k, const S& v) { c.analysis_max_lag = to_int(k, v); }},
      {"analysis.fine_span_ns", [](C& c, const S& k, const S& v) { c.fine_span_ns = to_int(k, v); }},
      {"analysis.fine_resolution_ns", [](C& c, const S& k, const S& v) { c.fine_resolution_ns = to_int(k, v); }},
      // batch
      {"run.n_runs", [](C& c, const S& k, const S& v) { c.n_runs = static_cast<int>(to_int(k, v)); }},
      {"run.seed", [](C& c, const S& k, const S& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"run.out_dir", [](C& c, const S&, const S& v) { c.out_dir = v; }},
      {"run.format", [](C& c, const S& k, const S& v) {
         if (v == "ptag") c.format = ClickFormat::binary;
         else if (v == "csv") c.format = ClickFormat::csv;
         else throw ConfigError(k + ": expected ptag or csv");
       }},
      {"run.jobs", [](C& c, const S& k, const S& v) { c.jobs = static_cast<unsigned>(to_int(k, v)); }},
  };
  return keys;
}

}  // namespace detail

/// Applies one `key = value` assignment.
inline void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(config, key, value);
}

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : detail::config_keys()) out.push_back(k);
  return out;
}

/// Applies every assignment in `text` on top of `config`.
inline void apply_config_text(ExperimentConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, eol - pos);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = detail::trim(line);
    if (!body.empty()) {
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
      try {
        set_config_value(config, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    pos = eol + 1;
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig config;
  apply_config_text(config, ss.str());
  return config;
}

}  // namespace sps
