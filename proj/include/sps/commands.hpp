#pragma once

// Batch commands behind the `sps` executable. Every command writes its
// outputs plus a manifest.json into the configured output directory and
// returns a process exit code.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sps/clickstream.hpp"
#include "sps/config.hpp"
#include "sps/correlator.hpp"
#include "sps/error.hpp"
#include "sps/qed.hpp"
#include "sps/qualifier.hpp"
#include "sps/simulator.hpp"

namespace sps {

namespace fs = std::filesystem;
using Json = nlohmann::json;

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitIo = 3, kExitAnalysis = 4 };

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string run_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "run_%04d", index);
  return buf;
}

inline const char* extension(ClickFormat f) { return f == ClickFormat::binary ? ".ptag" : ".csv"; }

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  body(out);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_json(const fs::path& path, const Json& j) {
  write_file(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

inline Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(int n, unsigned jobs, const std::function<void(int)>& body) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(std::max(n, 1)));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (int i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline ClickFormat format_of(const fs::path& p) {
  return p.extension() == ".csv" ? ClickFormat::csv : ClickFormat::binary;
}

/// One click stream to analyse, with its duration when the producer recorded it.
struct StreamInput {
  fs::path path;
  std::string name;
  std::optional<TimeNs> duration;
};

/// Expands directories (via their manifest.json, or every .ptag/.csv inside)
/// into individual stream files.
inline std::vector<StreamInput> collect_inputs(const std::vector<fs::path>& inputs) {
  std::vector<StreamInput> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      const fs::path manifest = in / "manifest.json";
      if (fs::exists(manifest)) {
        const Json m = read_json(manifest);
        for (const auto& r : m.at("runs")) {
          StreamInput s{in / r.at("stream").get<std::string>(), r.at("name").get<std::string>(), std::nullopt};
          if (r.contains("duration_ns")) s.duration = r.at("duration_ns").get<TimeNs>();
          out.push_back(std::move(s));
        }
      } else {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(in))
          if (e.path().extension() == ".ptag" || e.path().extension() == ".csv") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.push_back({f, f.stem().string(), std::nullopt});
      }
    } else {
      out.push_back({in, in.stem().string(), std::nullopt});
    }
  }
  return out;
}

inline ClickStream load_stream(const StreamInput& in) {
  std::ifstream file(in.path, std::ios::binary);
  if (!file) throw IoError("cannot open " + in.path.string());
  try {
    return read_clicks(file, format_of(in.path), in.duration);
  } catch (const Error& e) {
    throw Error(in.path.string() + ": " + e.what());
  }
}

inline Json visibility_json(const VisibilityReport& r) {
  return Json{{"c_zero", r.c_zero},
              {"c_mean_nonzero", r.c_mean_nonzero},
              {"visibility", r.visibility},
              {"stderr", r.std_error}};
}

inline Json truth_json(const RunTruth& t) {
  Json dep = Json::array();
  for (double d : t.departures_s) {
    if (std::isfinite(d))
      dep.push_back(d);
    else
      dep.push_back(nullptr);  // atom never leaves
  }
  return Json{{"departures_s", dep},
              {"emission_flags_rle", t.emission_flags_rle()},
              {"n_background", t.n_background},
              {"n_signal", t.n_signal},
              {"n_recycle", t.n_recycle},
              {"n_triggers", t.n_triggers},
              {"duration_ns", t.duration},
              {"single_atom_s", std::isfinite(single_atom_availability(t)) ? Json(single_atom_availability(t))
                                                                            : Json(nullptr)}};
}

/// Effective simulator config, including the QED-derived photon timing when requested.
inline SimConfig effective_sim(const ExperimentConfig& cfg) {
  SimConfig sim = cfg.sim;
  if (cfg.timing == TimingModel::qed) {
    const auto tr = qed::propagate(qed::build_model(cfg.qed, cfg.pulse), qed::DensityState::pure(qed::kU0),
                                   cfg.qed_dt_ns, cfg.pulse.duration_ns);
    sim.emission_profile = EmissionProfile::from_flux(tr.t_ns, tr.flux_per_ns, cfg.schedule.trigger.length());
  }
  return sim;
}

struct BatchError {
  std::string name;
  std::string message;
  int code;
};

inline int report_errors(const std::vector<BatchError>& errors, std::ostream& log) {
  int code = kExitOk;
  for (const auto& e : errors) {
    log << "error: " << e.name << ": " << e.message << '\n';
    code = std::max(code, e.code);
  }
  return code;
}

}  // namespace detail

/// Simulates n_runs runs; run i uses seed + i.
inline int cmd_simulate(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  detail::ensure_dir(cfg.out_dir);
  const SimConfig sim = detail::effective_sim(cfg);
  std::vector<Json> entries(static_cast<std::size_t>(cfg.n_runs));
  detail::parallel_for(cfg.n_runs, cfg.jobs, [&](int i) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
    const auto run = simulate_run(sim, cfg.schedule, seed);
    const std::string name = detail::run_name(i);
    const std::string stream_file = name + detail::extension(cfg.format);
    const std::string truth_file = name + ".truth.json";
    detail::write_file(cfg.out_dir / stream_file,
                       [&](std::ostream& out) { write_clicks(run.stream, cfg.format, out); });
    detail::write_json(cfg.out_dir / truth_file, detail::truth_json(run.truth));
    entries[static_cast<std::size_t>(i)] = Json{{"name", name},
                                                {"stream", stream_file},
                                                {"truth", truth_file},
                                                {"seed", seed},
                                                {"duration_ns", run.stream.duration},
                                                {"clicks", run.stream.clicks.size()}};
  });
  Json manifest{{"command", "simulate"},
                {"master_seed", cfg.seed},
                {"n_runs", cfg.n_runs},
                {"format", cfg.format == ClickFormat::binary ? "ptag" : "csv"},
                {"runs", entries}};
  detail::write_json(cfg.out_dir / "manifest.json", manifest);
  log << "simulated " << cfg.n_runs << " runs into " << cfg.out_dir.string() << '\n';
  return kExitOk;
}

/// Per-run and merged correlation histograms and visibility reports.
inline int cmd_analyze(const std::vector<fs::path>& inputs, const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  detail::ensure_dir(cfg.out_dir);
  const auto streams = detail::collect_inputs(inputs);
  const auto n = static_cast<int>(streams.size());

  struct Result {
    std::optional<CorrelationHistogram> binned;
    std::optional<CorrelationHistogram> fine;
    Json entry;
    std::optional<detail::BatchError> error;
  };
  std::vector<Result> results(streams.size());
  detail::parallel_for(n, cfg.jobs, [&](int i) {
    auto& r = results[static_cast<std::size_t>(i)];
    const auto& in = streams[static_cast<std::size_t>(i)];
    r.entry = Json{{"name", in.name}, {"stream", in.path.filename().string()}};
    ClickStream stream;
    try {
      stream = detail::load_stream(in);
    } catch (const IoError& e) {
      r.error = detail::BatchError{in.name, e.what(), kExitIo};
      r.entry["error"] = e.what();
      return;
    } catch (const Error& e) {
      r.error = detail::BatchError{in.name, e.what(), kExitAnalysis};
      r.entry["error"] = e.what();
      return;
    }
    const auto w = window_clicks(stream, cfg.schedule);
    r.binned = cross_correlate_binned(w, cfg.analysis_max_lag);
    r.fine = cross_correlate_fine(w, cfg.fine_span_ns, cfg.fine_resolution_ns);
    const std::string hist_file = in.name + ".hist.csv";
    const std::string vis_file = in.name + ".visibility.txt";
    detail::write_file(cfg.out_dir / hist_file, [&](std::ostream& out) { write_histogram_csv(*r.binned, out); });
    r.entry["histogram"] = hist_file;
    r.entry["trigger_clicks"] = w.trigger_total();
    try {
      const auto vis = visibility(*r.binned);
      detail::write_file(cfg.out_dir / vis_file, [&](std::ostream& out) { write_visibility(vis, out); });
      r.entry["visibility"] = detail::visibility_json(vis);
    } catch (const UndefinedVisibility& e) {
      detail::write_file(cfg.out_dir / vis_file, [&](std::ostream& out) { out << "error = " << e.what() << '\n'; });
      r.entry["visibility_error"] = e.what();
    }
  });

  CorrelationHistogram merged;
  CorrelationHistogram merged_fine;
  std::vector<detail::BatchError> errors;
  Json entries = Json::array();
  for (auto& r : results) {
    entries.push_back(r.entry);
    if (r.error) errors.push_back(*r.error);
    if (r.binned) merged += *r.binned;
    if (r.fine) merged_fine += *r.fine;
  }
  Json manifest{{"command", "analyze"}, {"runs", entries}};
  if (!merged.counts.empty()) {
    detail::write_file(cfg.out_dir / "merged.hist.csv", [&](std::ostream& out) { write_histogram_csv(merged, out); });
    detail::write_file(cfg.out_dir / "merged_fine.hist.csv",
                       [&](std::ostream& out) { write_histogram_csv(merged_fine, out); });
    try {
      const auto vis = visibility(merged);
      detail::write_file(cfg.out_dir / "merged.visibility.txt", [&](std::ostream& out) { write_visibility(vis, out); });
      manifest["merged_visibility"] = detail::visibility_json(vis);
      log << "merged visibility " << vis.visibility << " +- " << vis.std_error << '\n';
    } catch (const UndefinedVisibility& e) {
      manifest["merged_visibility_error"] = e.what();
    }
  }
  detail::write_json(cfg.out_dir / "manifest.json", manifest);
  return detail::report_errors(errors, log);
}

/// Summary statistics of a qualification batch.
struct QualifySummary {
  int runs = 0;
  int reached_qualifying = 0;
  int passed = 0;
  double serving_s = 0;
  std::size_t served_clicks = 0;
  double qualified_span_s = 0;          // qualification start to loss/end, qualified runs
  std::size_t qualified_trigger_clicks = 0;
  CorrelationHistogram qualified_histogram;  // merged over qualified runs
  std::optional<VisibilityReport> qualified_visibility;
  ExpectedCount expected_background;

  double pass_fraction() const { return reached_qualifying ? static_cast<double>(passed) / reached_qualifying : 0.0; }
};

/// Replays every stream through the qualifier and merges the qualified data.
inline QualifySummary qualify_batch(const std::vector<ClickStream>& streams, const ExperimentConfig& cfg,
                                    std::vector<RunVerdict>* verdicts_out = nullptr) {
  std::vector<RunVerdict> verdicts(streams.size());
  std::vector<std::optional<CorrelationHistogram>> hists(streams.size());
  std::vector<std::size_t> clicks(streams.size(), 0);
  detail::parallel_for(static_cast<int>(streams.size()), cfg.jobs, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    verdicts[k] = replay(streams[k], cfg.qualifier, cfg.schedule);
    const auto& v = verdicts[k];
    if (v.qualified) {
      const BinIndex first = cfg.schedule.bin_of(*v.qualifying_since_ns);
      const BinIndex end = cfg.schedule.bin_of(v.end_ns);
      const auto w = slice_bins(window_clicks(streams[k], cfg.schedule), first, end);
      hists[k] = cross_correlate_binned(w, cfg.analysis_max_lag);
      clicks[k] = w.trigger_total();
    }
  });
  QualifySummary s;
  s.runs = static_cast<int>(streams.size());
  for (std::size_t k = 0; k < streams.size(); ++k) {
    const auto& v = verdicts[k];
    s.reached_qualifying += v.reached_qualifying;
    s.passed += v.qualified;
    s.serving_s += v.serving_s;
    s.served_clicks += v.served_clicks;
    if (hists[k]) {
      s.qualified_histogram += *hists[k];
      s.qualified_span_s += static_cast<double>(hists[k]->n_bins_analyzed) * static_cast<double>(cfg.schedule.period) * 1e-9;
      s.qualified_trigger_clicks += clicks[k];
    }
  }
  if (!s.qualified_histogram.counts.empty()) {
    try {
      s.qualified_visibility = visibility(s.qualified_histogram);
    } catch (const UndefinedVisibility&) {
    }
  }
  if (s.qualified_span_s > 0) {
    const double duty = static_cast<double>(cfg.schedule.trigger.length()) / static_cast<double>(cfg.schedule.period);
    const double total_rate = static_cast<double>(s.qualified_trigger_clicks) / s.qualified_span_s;
    const double signal_per_channel = std::max(0.0, total_rate - cfg.sim.background_rate_hz * duty) / 2.0;
    s.expected_background = expected_background_coincidences(signal_per_channel, cfg.sim.background_rate_hz,
                                                             cfg.schedule, s.qualified_span_s);
  }
  if (verdicts_out) *verdicts_out = std::move(verdicts);
  return s;
}

inline int cmd_qualify(const std::vector<fs::path>& inputs, const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  detail::ensure_dir(cfg.out_dir);
  const auto sources = detail::collect_inputs(inputs);
  std::vector<ClickStream> streams;
  std::vector<detail::BatchError> errors;
  std::vector<const detail::StreamInput*> used;
  for (const auto& in : sources) {
    try {
      streams.push_back(detail::load_stream(in));
      used.push_back(&in);
    } catch (const IoError& e) {
      errors.push_back({in.name, e.what(), kExitIo});
    } catch (const Error& e) {
      errors.push_back({in.name, e.what(), kExitAnalysis});
    }
  }
  std::vector<RunVerdict> verdicts;
  const QualifySummary s = qualify_batch(streams, cfg, &verdicts);

  Json entries = Json::array();
  for (std::size_t k = 0; k < verdicts.size(); ++k) {
    const std::string file = used[k]->name + ".verdict.txt";
    detail::write_file(cfg.out_dir / file, [&](std::ostream& out) { write_verdict(verdicts[k], out); });
    entries.push_back(Json{{"name", used[k]->name}, {"verdict", file}, {"qualified", verdicts[k].qualified}});
  }
  if (!s.qualified_histogram.counts.empty())
    detail::write_file(cfg.out_dir / "qualified.hist.csv",
                       [&](std::ostream& out) { write_histogram_csv(s.qualified_histogram, out); });
  if (s.qualified_visibility)
    detail::write_file(cfg.out_dir / "qualified.visibility.txt",
                       [&](std::ostream& out) { write_visibility(*s.qualified_visibility, out); });
  detail::write_file(cfg.out_dir / "summary.txt", [&](std::ostream& out) {
    out.precision(10);
    out << "runs = " << s.runs << '\n'
        << "reached_qualifying = " << s.reached_qualifying << '\n'
        << "passed = " << s.passed << '\n'
        << "pass_fraction = " << s.pass_fraction() << '\n'
        << "serving_s = " << s.serving_s << '\n'
        << "served_clicks = " << s.served_clicks << '\n'
        << "qualified_span_s = " << s.qualified_span_s << '\n';
    if (s.qualified_visibility)
      out << "qualified_c_zero = " << s.qualified_visibility->c_zero << '\n'
          << "qualified_visibility = " << s.qualified_visibility->visibility << '\n';
    out << "expected_background_coincidences = " << s.expected_background.value << '\n'
        << "expected_background_stderr = " << s.expected_background.std_error << '\n';
  });
  Json manifest{{"command", "qualify"},
                {"runs", entries},
                {"pass_fraction", s.pass_fraction()},
                {"passed", s.passed},
                {"reached_qualifying", s.reached_qualifying},
                {"serving_s", s.serving_s}};
  if (s.qualified_visibility) manifest["qualified_visibility"] = detail::visibility_json(*s.qualified_visibility);
  detail::write_json(cfg.out_dir / "manifest.json", manifest);
  log << "qualified " << s.passed << " of " << s.reached_qualifying << " runs reaching qualification ("
      << s.runs << " total)\n";
  return detail::report_errors(errors, log);
}

inline int cmd_qed(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  detail::ensure_dir(cfg.out_dir);
  const auto model = qed::build_model(cfg.qed, cfg.pulse);
  const auto tr = qed::propagate(model, qed::DensityState::pure(qed::kU0), cfg.qed_dt_ns, cfg.pulse.duration_ns);
  detail::write_file(cfg.out_dir / "trajectory.csv", [&](std::ostream& out) { qed::write_trajectory_csv(tr, out); });
  const double p = qed::emission_probability(tr);
  Json report{{"emission_probability", p},
              {"trapezoid_emission", qed::trapezoid_emission(tr)},
              {"trace_drift", tr.final_state.trace() - 1.0},
              {"final_populations", tr.final_state.diagonal()},
              {"dt_ns", cfg.qed_dt_ns}};
  if (cfg.qed_fit_target) {
    const double scale = qed::fit_coupling_scale(cfg.qed, cfg.pulse, *cfg.qed_fit_target, {cfg.qed_dt_ns, 0.0});
    report["fit_target"] = *cfg.qed_fit_target;
    report["fitted_coupling_scale"] = scale;
  }
  detail::write_file(cfg.out_dir / "qed_report.txt", [&](std::ostream& out) {
    out.precision(12);
    for (const auto& [k, v] : report.items()) out << k << " = " << v.dump() << '\n';
  });
  detail::write_json(cfg.out_dir / "manifest.json", Json{{"command", "qed"}, {"report", report}});
  log << "emission probability " << p << '\n';
  return kExitOk;
}

/// Collects the manifests of earlier commands into one summary.json.
inline int cmd_report(const std::vector<fs::path>& dirs, const ExperimentConfig& cfg, std::ostream& log) {
  detail::ensure_dir(cfg.out_dir);
  Json summary{{"command", "report"}, {"sources", Json::array()}};
  std::vector<detail::BatchError> errors;
  for (const auto& dir : dirs) {
    try {
      const Json m = detail::read_json(dir / "manifest.json");
      Json item{{"dir", dir.string()}, {"command", m.value("command", "unknown")}};
      const std::string cmd = item["command"];
      if (cmd == "simulate") {
        std::size_t clicks = 0;
        for (const auto& r : m.at("runs")) clicks += r.value("clicks", std::size_t{0});
        item["n_runs"] = m.at("runs").size();
        item["clicks"] = clicks;
      } else if (cmd == "analyze") {
        item["n_runs"] = m.at("runs").size();
        if (m.contains("merged_visibility")) item["merged_visibility"] = m["merged_visibility"];
      } else if (cmd == "qualify") {
        for (const char* k : {"pass_fraction", "passed", "reached_qualifying", "serving_s", "qualified_visibility"})
          if (m.contains(k)) item[k] = m[k];
      } else if (cmd == "qed") {
        item["report"] = m.at("report");
      }
      summary["sources"].push_back(item);
    } catch (const Error& e) {
      errors.push_back({dir.string(), e.what(), kExitIo});
    } catch (const Json::exception& e) {
      errors.push_back({dir.string(), e.what(), kExitIo});
    }
  }
  detail::write_json(cfg.out_dir / "summary.json", summary);
  log << "report over " << summary["sources"].size() << " manifests\n";
  return detail::report_errors(errors, log);
}

}  // namespace sps
