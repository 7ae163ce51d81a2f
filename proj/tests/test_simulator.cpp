#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "sps/simulator.hpp"

using namespace sps;

namespace {

SimConfig pinned(int atoms, double seconds) {
  SimConfig c;
  c.initial_atoms = {InitialAtomsKind::fixed, 0.0, atoms};
  c.atoms_pinned = true;
  c.run_duration_s = seconds;
  return c;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

}  // namespace

TEST(Simulator, NoSourcesGivesEmptyStream) {
  SimConfig c = pinned(0, 5.0);
  c.background_rate_hz = 0;
  const auto run = simulate_run(c, PulseSchedule{}, 3);
  EXPECT_TRUE(run.stream.clicks.empty());
  EXPECT_EQ(run.stream.duration, 5'000'000'000u);
}

TEST(Simulator, DetectionChainProduct) {
  EXPECT_NEAR(SimConfig{}.detection_probability(), 0.1056, 1e-12);
  // measured detection fraction: 11%
  EXPECT_NEAR(SimConfig{}.detection_probability(), 0.11, 0.005);
}

TEST(Simulator, Deterministic) {
  SimConfig c;
  c.run_duration_s = 8;
  const auto a = simulate_run(c, PulseSchedule{}, 42);
  const auto b = simulate_run(c, PulseSchedule{}, 42);
  const auto other = simulate_run(c, PulseSchedule{}, 43);
  EXPECT_EQ(a.stream, b.stream);
  EXPECT_EQ(a.truth.sources, b.truth.sources);
  EXPECT_NE(a.stream, other.stream);
}

TEST(Simulator, PinnedAtomRates) {
  const SimConfig c = pinned(1, 10.0);  // 10^6 triggers
  const PulseSchedule sched;
  const auto run = simulate_run(c, sched, 9);
  ASSERT_EQ(run.truth.n_triggers, 1'000'000);
  const double triggers = 1e6;
  const double duration_s = 10.0;

  std::size_t trig_signal = 0, trig_all = 0;
  for (std::size_t i = 0; i < run.stream.clicks.size(); ++i) {
    if (!sched.trigger.contains(sched.offset_of(run.stream.clicks[i].t))) continue;
    ++trig_all;
    trig_signal += run.truth.sources[i] == ClickSource::signal;
  }
  const double p_click = c.p_gen * c.detection_probability();
  EXPECT_NEAR(p_click, 9.504e-3, 1e-6);
  EXPECT_NEAR(trig_signal / triggers, p_click, 3 * std::sqrt(p_click / triggers));

  const double recycle_mean = c.recycle_det_rate_per_ms * 4e-3 * triggers;  // 4 us per period
  EXPECT_NEAR(static_cast<double>(run.truth.n_recycle), recycle_mean, 3 * std::sqrt(recycle_mean));

  const double bg_mean = c.background_rate_hz * duration_s;
  EXPECT_NEAR(static_cast<double>(run.truth.n_background), bg_mean, 3 * std::sqrt(bg_mean));

  // trigger-window event rate against the measured 4.2e6 events in 4379 s
  EXPECT_NEAR(trig_all / duration_s, 4.2e6 / 4379.0, 0.1 * 4.2e6 / 4379.0);
}

TEST(Simulator, RecycleClicksOnlyInRecycleWindows) {
  const PulseSchedule sched;
  const auto run = simulate_run(pinned(2, 2.0), sched, 1);
  for (std::size_t i = 0; i < run.stream.clicks.size(); ++i) {
    const TimeNs off = sched.offset_of(run.stream.clicks[i].t);
    const auto src = run.truth.sources[i];
    EXPECT_TRUE(src != ClickSource::recycle || sched.recycle.contains(off));
    EXPECT_TRUE(src != ClickSource::signal || sched.trigger.contains(off));
  }
}

TEST(Simulator, ExponentialLifetimeMean) {
  SimConfig c;
  const auto d = sample_lifetimes(c, 100'000, 17);
  // exponential: sd = mean
  EXPECT_NEAR(mean(d), 10.3, 3 * 10.3 / std::sqrt(1e5));
}

TEST(Simulator, GammaLifetimeMoments) {
  SimConfig c;
  c.lifetime_shape = LifetimeShape::gamma;
  c.gamma_k = 4;
  const auto d = sample_lifetimes(c, 100'000, 18);
  const double m = mean(d);
  double var = 0;
  for (double x : d) var += (x - m) * (x - m);
  var /= d.size() - 1;
  const double sd = 10.3 / 2.0;
  EXPECT_NEAR(m, 10.3, 3 * sd / std::sqrt(1e5));
  EXPECT_NEAR(var, 10.3 * 10.3 / 4.0, 0.03 * 10.3 * 10.3 / 4.0);
}

TEST(Simulator, SingleLifetime) {
  const auto d = sample_lifetimes(SimConfig{}, 1, 5);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_GT(d[0], 0.0);
  EXPECT_THROW(sample_lifetimes(SimConfig{}, 0, 5), Error);
}

TEST(Simulator, AvailabilityExamples) {
  RunTruth one;
  one.departures_s = {4.25};
  EXPECT_DOUBLE_EQ(single_atom_availability(one), 4.25);
  RunTruth two;
  two.departures_s = {3.0, 9.0};
  EXPECT_DOUBLE_EQ(single_atom_availability(two), 6.0);
}

TEST(Simulator, AvailabilityEnsembleMean) {
  SimConfig c;
  c.run_duration_s = 0;
  c.background_rate_hz = 0;
  std::vector<double> a;
  for (std::uint64_t s = 0; s < 10'000; ++s) a.push_back(single_atom_availability(simulate_run(c, PulseSchedule{}, s).truth));
  EXPECT_NEAR(mean(a), 10.3, 3 * 10.3 / std::sqrt(1e4));
}

TEST(Simulator, SignalOnlyWhileAtomsPresent) {
  SimConfig c;
  c.run_duration_s = 30;
  const PulseSchedule sched;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto run = simulate_run(c, sched, seed);
    for (std::size_t i = 0; i < run.stream.clicks.size(); ++i) {
      if (run.truth.sources[i] != ClickSource::signal) continue;
      const TimeNs pulse_start = sched.bin_of(run.stream.clicks[i].t) * sched.period + sched.trigger.begin;
      EXPECT_GE(run.truth.atoms_at(pulse_start), 1);
    }
  }
}

TEST(Simulator, SingleAtomHasNoSignalCoincidence) {
  const PulseSchedule sched;
  const auto run = simulate_run(pinned(1, 20.0), sched, 77);
  std::map<BinIndex, std::array<int, 2>> per_bin;
  for (std::size_t i = 0; i < run.stream.clicks.size(); ++i)
    if (run.truth.sources[i] == ClickSource::signal)
      ++per_bin[sched.bin_of(run.stream.clicks[i].t)][run.stream.clicks[i].channel];
  for (const auto& [bin, n] : per_bin) EXPECT_LE(n[0] + n[1], 1) << "bin " << bin;
}

TEST(Simulator, EmissionFlagRunLengths) {
  RunTruth t;
  t.n_triggers = 10;
  t.emission_triggers = {0, 1, 5, 9};
  EXPECT_EQ(t.emission_flags_rle(), (std::vector<std::int64_t>{0, 2, 3, 1, 3, 1}));
  t.emission_triggers.clear();
  EXPECT_EQ(t.emission_flags_rle(), (std::vector<std::int64_t>{10}));
}

TEST(Simulator, DeadTimeSuppressesCloseClicks) {
  SimConfig c = pinned(1, 5.0);
  c.dead_time_ns = 50'000;
  const auto run = simulate_run(c, PulseSchedule{}, 4);
  std::array<std::optional<TimeNs>, 2> last;
  for (const auto& k : run.stream.clicks) {
    if (last[k.channel]) {
      EXPECT_GE(k.t - *last[k.channel], c.dead_time_ns);
    }
    last[k.channel] = k.t;
  }
}

TEST(Simulator, ForcedDepartures) {
  SimConfig c;
  c.departures_s = {0.5, 1.0};
  c.run_duration_s = 2.0;
  const auto run = simulate_run(c, PulseSchedule{}, 8);
  EXPECT_EQ(run.truth.initial_atoms(), 2);
  EXPECT_EQ(run.truth.atoms_at(750'000'000), 1);
  EXPECT_EQ(run.truth.atoms_at(1'500'000'000), 0);
  EXPECT_TRUE(std::all_of(run.truth.emission_triggers.begin(), run.truth.emission_triggers.end(),
                          [](BinIndex j) { return j < 100'000; }));
}
