#include <gtest/gtest.h>

#include <cmath>

#include "sps/qualifier.hpp"
#include "sps/simulator.hpp"

using namespace sps;

namespace {

// independent Poisson CDF via log-space terms
double cdf_oracle(int k, double lambda) {
  double s = 0;
  for (int i = 0; i <= k; ++i) s += std::exp(i * std::log(lambda) - lambda - std::lgamma(i + 1.0));
  return s;
}

SimConfig pinned(int atoms, double seconds) {
  SimConfig c;
  c.initial_atoms = {InitialAtomsKind::fixed, 0, atoms};
  c.atoms_pinned = true;
  c.run_duration_s = seconds;
  return c;
}

}  // namespace

TEST(Rule, TypicalSingleAtomPasses) {
  EXPECT_TRUE(qualification_test(1.0, 4.0, QualifierConfig{}).pass);
}

TEST(Rule, TooFewCorrelations) {
  const auto r = qualification_test(0.0, 1.4, QualifierConfig{});
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.reason, FailReason::too_few_correlations);
}

TEST(Rule, ZeroLagExcess) {
  const auto r = qualification_test(1.3, 4.0, QualifierConfig{});
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.reason, FailReason::zero_lag_excess);
}

TEST(Rule, BoundariesAreStrict) {
  EXPECT_FALSE(qualification_test(0.0, 1.5, QualifierConfig{}).pass);
  EXPECT_FALSE(qualification_test(3.0, 10.0, QualifierConfig{}).pass);
}

TEST(Rule, FromHistogram) {
  auto h = CorrelationHistogram::pulse(2, 100);
  h.at(-2) = 4;
  h.at(-1) = 4;
  h.at(1) = 3;
  h.at(2) = 5;
  h.at(0) = 1;
  EXPECT_TRUE(qualification_test(h, QualifierConfig{}).pass);
  h.at(0) = 2;
  EXPECT_FALSE(qualification_test(h, QualifierConfig{}).pass);
}

TEST(Loss, ThresholdFromBackground) {
  EXPECT_NEAR(poisson_cdf(6, 2.52), cdf_oracle(6, 2.52), 1e-12);
  EXPECT_GE(cdf_oracle(6, 2.52), 0.98);
  EXPECT_LT(cdf_oracle(5, 2.52), 0.98);
  EXPECT_EQ(derive_loss_threshold(84.0, 30.0, 0.98), 6);
  EXPECT_EQ(QualifierConfig{}.loss_threshold(), 6);
}

TEST(Loss, PresentAtomTail) {
  EXPECT_LT(cdf_oracle(6, 120.0), 1e-12);
  EXPECT_EQ(loss_test(120, 6), LossStatus::present);
  EXPECT_EQ(loss_test(7, 6), LossStatus::present);
  EXPECT_EQ(loss_test(6, 6), LossStatus::lost);
}

TEST(Loss, ZeroCountsAlwaysLost) {
  for (int k = 0; k < 20; ++k) EXPECT_EQ(loss_test(0, k), LossStatus::lost);
}

TEST(Server, OutOfOrderRejected) {
  PhotonServer s(QualifierConfig{}, PulseSchedule{});
  s.step(Click{500, 0});
  EXPECT_THROW(s.step(Tick{499}), OrderingError);
}

TEST(Server, FunctionalStepMatchesObject) {
  const auto run = simulate_run(pinned(1, 0.5), PulseSchedule{}, 3);
  ServerState st;
  PhotonServer obj(QualifierConfig{}, PulseSchedule{});
  for (const auto& c : run.stream.clicks) {
    auto [next, note] = step(std::move(st), Event{c}, QualifierConfig{}, PulseSchedule{});
    st = std::move(next);
    const auto note2 = obj.step(c);
    ASSERT_EQ(note.has_value(), note2.has_value());
  }
  EXPECT_EQ(st.recycle_times, obj.state().recycle_times);
}

TEST(Server, ConstantSingleAtomLevelQualifiesAfterWindow) {
  SimConfig c = pinned(1, 0.3);
  c.p_gen = 0;
  c.background_rate_hz = 0;
  const auto run = simulate_run(c, PulseSchedule{}, 10);
  const auto v = replay(run.stream, QualifierConfig{}, PulseSchedule{});
  ASSERT_TRUE(v.qualifying_since_ns.has_value());
  EXPECT_GE(*v.qualifying_since_ns, 100'000'000u);
  EXPECT_LT(*v.qualifying_since_ns, 100'000'000u + 10'000u);
}

TEST(Server, TwoAtomLevelNeverQualifies) {
  const auto run = simulate_run(pinned(2, 5.0), PulseSchedule{}, 11);
  const auto v = replay(run.stream, QualifierConfig{}, PulseSchedule{});
  EXPECT_FALSE(v.reached_qualifying);
  EXPECT_EQ(v.final_phase, Phase::waiting);
  EXPECT_EQ(v.reject_reason, FailReason::no_single_atom_level);
}

TEST(Server, EntersQualifyingNearSecondToLastDeparture) {
  SimConfig c;
  c.run_duration_s = 40;
  const PulseSchedule sched;
  int checked = 0, near = 0;
  for (std::uint64_t seed = 1; checked < 60 && seed < 1000; ++seed) {
    const auto run = simulate_run(c, sched, seed);
    const auto& d = run.truth.departures_s;
    if (d.size() < 2 || d[d.size() - 2] > 35.0 || d.back() - d[d.size() - 2] < 0.5) continue;
    const auto v = replay(run.stream, QualifierConfig{}, sched);
    ++checked;
    if (v.qualifying_since_ns && std::abs(*v.qualifying_since_ns * 1e-9 - d[d.size() - 2]) <= 0.1) ++near;
  }
  ASSERT_EQ(checked, 60);
  EXPECT_GE(near, 57);
}

TEST(Server, NoServedPhotonOutsideServing) {
  SimConfig c;
  c.run_duration_s = 30;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto run = simulate_run(c, PulseSchedule{}, seed);
    Phase phase = Phase::waiting;
    std::size_t served = 0;
    const auto v = replay(run.stream, QualifierConfig{}, PulseSchedule{}, [&](const Notification& n) {
      switch (n.kind) {
        case NotificationKind::entered_qualifying: phase = Phase::qualifying; break;
        case NotificationKind::qualified: phase = Phase::serving; break;
        case NotificationKind::rejected: phase = Phase::rejected; break;
        case NotificationKind::atom_lost: phase = Phase::lost; break;
        case NotificationKind::served_photon:
          EXPECT_EQ(phase, Phase::serving);
          ++served;
          break;
      }
    });
    EXPECT_EQ(served, v.served_clicks);
  }
}

TEST(Server, ReplayIsDeterministic) {
  SimConfig c;
  c.run_duration_s = 20;
  const auto run = simulate_run(c, PulseSchedule{}, 6);
  const auto a = replay(run.stream, QualifierConfig{}, PulseSchedule{});
  const auto b = replay(run.stream, QualifierConfig{}, PulseSchedule{});
  EXPECT_EQ(a.qualified, b.qualified);
  EXPECT_EQ(a.served_clicks, b.served_clicks);
  EXPECT_EQ(a.loss_t_ns, b.loss_t_ns);
  EXPECT_EQ(a.qualification_histogram, b.qualification_histogram);
}

TEST(Server, ForcedLossDetectedQuickly) {
  SimConfig c;
  c.departures_s = {5.0};
  c.run_duration_s = 6.0;
  const auto run = simulate_run(c, PulseSchedule{}, 2);
  const auto v = replay(run.stream, QualifierConfig{}, PulseSchedule{});
  ASSERT_TRUE(v.qualified);
  ASSERT_TRUE(v.loss_t_ns.has_value());
  EXPECT_GE(*v.loss_t_ns, 5'000'000'000u);
  EXPECT_LE(*v.loss_t_ns, 5'030'000'000u);
}

TEST(Server, RetryAfterReject) {
  // an unreachable correlation minimum rejects every attempt
  QualifierConfig q;
  q.min_mean_nonzero = 1e9;
  q.retry_after_reject = true;
  const auto run = simulate_run(pinned(1, 5.0), PulseSchedule{}, 21);
  int entries = 0, rejections = 0;
  replay(run.stream, q, PulseSchedule{}, [&](const Notification& n) {
    entries += n.kind == NotificationKind::entered_qualifying;
    rejections += n.kind == NotificationKind::rejected;
  });
  EXPECT_GE(rejections, 2);
  EXPECT_GE(entries, rejections);
  q.retry_after_reject = false;
  const auto once = replay(run.stream, q, PulseSchedule{});
  EXPECT_EQ(once.final_phase, Phase::rejected);
  EXPECT_EQ(once.reject_reason, FailReason::too_few_correlations);
}
