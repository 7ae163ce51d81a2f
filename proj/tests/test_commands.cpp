#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "sps/commands.hpp"

using namespace sps;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sps_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig small(const fs::path& out) {
  ExperimentConfig c;
  c.sim.run_duration_s = 3;
  c.n_runs = 3;
  c.seed = 5;
  c.out_dir = out;
  return c;
}

}  // namespace

TEST(Commands, SimulateWritesStreamsTruthAndManifest) {
  TempDir tmp("sim");
  std::ostringstream log;
  ASSERT_EQ(cmd_simulate(small(tmp.path), log), kExitOk);
  int ptag = 0, truth = 0;
  for (const auto& e : fs::directory_iterator(tmp.path)) {
    const auto name = e.path().filename().string();
    ptag += e.path().extension() == ".ptag";
    truth += name.ends_with(".truth.json");
  }
  EXPECT_EQ(ptag, 3);
  EXPECT_EQ(truth, 3);
  const auto m = detail::read_json(tmp.path / "manifest.json");
  ASSERT_EQ(m.at("runs").size(), 3u);
  EXPECT_EQ(m["runs"][2]["seed"].get<std::uint64_t>(), 7u);
}

TEST(Commands, SimulateIsByteIdenticalAcrossThreadCounts) {
  TempDir a("det_a"), b("det_b");
  auto ca = small(a.path);
  auto cb = small(b.path);
  ca.jobs = 1;
  cb.jobs = 4;
  std::ostringstream log;
  cmd_simulate(ca, log);
  cmd_simulate(cb, log);
  for (const auto& e : fs::directory_iterator(a.path))
    EXPECT_EQ(slurp(e.path()), slurp(b.path / e.path().filename())) << e.path();
}

TEST(Commands, AnalyzeMergedIsSumOfRuns) {
  TempDir sim("an_sim"), out("an_out");
  std::ostringstream log;
  cmd_simulate(small(sim.path), log);
  auto cfg = small(out.path);
  ASSERT_EQ(cmd_analyze({sim.path}, cfg, log), kExitOk);
  CorrelationHistogram sum;
  const auto inputs = detail::collect_inputs({sim.path});
  ASSERT_EQ(inputs.size(), 3u);
  for (const auto& in : inputs) sum += cross_correlate_binned(window_clicks(detail::load_stream(in), cfg.schedule), 30);
  std::ostringstream expect;
  write_histogram_csv(sum, expect);
  EXPECT_EQ(slurp(out.path / "merged.hist.csv"), expect.str());
}

TEST(Commands, AnalyzeEmptyStreamFlagsVisibility) {
  TempDir in("empty_in"), out("empty_out");
  { std::ofstream(in.path / "empty.ptag", std::ios::binary); }
  std::ostringstream log;
  EXPECT_EQ(cmd_analyze({in.path / "empty.ptag"}, small(out.path), log), kExitOk);
  const auto m = detail::read_json(out.path / "manifest.json");
  EXPECT_TRUE(m["runs"][0].contains("visibility_error"));
  EXPECT_NE(slurp(out.path / "empty.visibility.txt").find("error"), std::string::npos);
}

TEST(Commands, AnalyzeContinuesPastBadFiles) {
  TempDir in("bad_in"), out("bad_out");
  { std::ofstream(in.path / "bad.ptag", std::ios::binary) << std::string(10, '\0'); }
  std::ostringstream log;
  EXPECT_EQ(cmd_analyze({in.path / "bad.ptag", in.path / "missing.ptag"}, small(out.path), log), kExitAnalysis);
  EXPECT_NE(log.str().find("offset 9"), std::string::npos) << log.str();
  EXPECT_NE(log.str().find("missing.ptag"), std::string::npos);
}

TEST(Commands, MissingInputIsIoError) {
  TempDir out("io_out");
  std::ostringstream log;
  EXPECT_EQ(cmd_qualify({out.path / "nothing.ptag"}, small(out.path), log), kExitIo);
}

TEST(Commands, QualifyWritesVerdictsAndSummary) {
  TempDir sim("q_sim"), out("q_out");
  std::ostringstream log;
  auto cfg = small(sim.path);
  cfg.sim.run_duration_s = 10;
  cmd_simulate(cfg, log);
  cfg.out_dir = out.path;
  ASSERT_EQ(cmd_qualify({sim.path}, cfg, log), kExitOk);
  EXPECT_TRUE(fs::exists(out.path / "run_0000.verdict.txt"));
  EXPECT_NE(slurp(out.path / "summary.txt").find("pass_fraction"), std::string::npos);
}

TEST(Commands, QedReport) {
  TempDir out("qed");
  auto cfg = small(out.path);
  cfg.qed_fit_target = 0.09;
  std::ostringstream log;
  ASSERT_EQ(cmd_qed(cfg, log), kExitOk);
  const auto m = detail::read_json(out.path / "manifest.json");
  EXPECT_GT(m["report"]["emission_probability"].get<double>(), 0.5);
  EXPECT_GT(m["report"]["fitted_coupling_scale"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(out.path / "trajectory.csv"));
}

TEST(Commands, ReportCollectsManifests) {
  TempDir sim("r_sim"), out("r_out");
  std::ostringstream log;
  cmd_simulate(small(sim.path), log);
  ASSERT_EQ(cmd_report({sim.path}, small(out.path), log), kExitOk);
  const auto s = detail::read_json(out.path / "summary.json");
  EXPECT_EQ(s["sources"][0]["command"], "simulate");
}
