#include <gtest/gtest.h>

#include <random>

#include "sps/clickstream.hpp"

using namespace sps;

namespace {

ClickStream random_stream(std::mt19937_64& rng, std::size_t n, TimeNs horizon) {
  ClickStream s;
  std::uniform_int_distribution<TimeNs> t(0, horizon - 1);
  std::bernoulli_distribution ch(0.5);
  for (std::size_t i = 0; i < n; ++i) s.clicks.push_back({t(rng), static_cast<std::uint8_t>(ch(rng))});
  std::stable_sort(s.clicks.begin(), s.clicks.end(), [](auto& a, auto& b) { return a.t < b.t; });
  s.duration = horizon;
  return s;
}

}  // namespace

TEST(Clickstream, SingleClickBinaryBytes) {
  ClickStream s{{{1000, 0}}, 1001};
  const std::vector<std::uint8_t> expect{0xE8, 0x03, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(write_clicks(s, ClickFormat::binary), expect);
}

TEST(Clickstream, EmptyInput) {
  for (auto f : {ClickFormat::binary, ClickFormat::csv}) {
    const auto s = read_clicks(std::span<const std::uint8_t>{}, f);
    EXPECT_TRUE(s.clicks.empty());
    EXPECT_EQ(s.duration, 0u);
  }
}

TEST(Clickstream, TruncatedRecordReportsOffset) {
  std::vector<std::uint8_t> bytes(10, 0);
  try {
    read_clicks(bytes, ClickFormat::binary);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 9u);
  }
}

TEST(Clickstream, BadChannelByte) {
  std::vector<std::uint8_t> bytes(9, 0);
  bytes[8] = 2;
  EXPECT_THROW(read_clicks(bytes, ClickFormat::binary), FormatError);
}

TEST(Clickstream, UnsortedIsOrderingError) {
  ClickStream s{{{50, 0}, {40, 1}}, 51};
  for (auto f : {ClickFormat::binary, ClickFormat::csv})
    EXPECT_THROW(read_clicks(write_clicks(s, f), f), OrderingError);
}

TEST(Clickstream, CsvHeaderRequired) {
  const std::string text = "t,ch\n1,0\n";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  EXPECT_THROW(read_clicks(bytes, ClickFormat::csv), FormatError);
}

TEST(Clickstream, EqualTimestampsKeepOrder) {
  ClickStream s{{{7, 1}, {7, 0}, {7, 1}}, 8};
  for (auto f : {ClickFormat::binary, ClickFormat::csv}) EXPECT_EQ(read_clicks(write_clicks(s, f), f), s);
}

TEST(Clickstream, RoundTripRandomStreams) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const auto s = random_stream(rng, rep * 7, 1'000'000'000'000ull);
    for (auto f : {ClickFormat::binary, ClickFormat::csv}) {
      const auto back = read_clicks(write_clicks(s, f), f, s.duration);
      ASSERT_EQ(back, s);
    }
  }
}

TEST(Windowing, HalfOpenTriggerBoundary) {
  ClickStream s{{{3999, 0}, {4000, 1}}, 10'000};
  const auto w = window_clicks(s, PulseSchedule{});
  ASSERT_EQ(w.trigger[0].size(), 1u);
  EXPECT_EQ(w.trigger[0][0].bin, 0);
  EXPECT_TRUE(w.trigger[1].empty());
  EXPECT_TRUE(w.recycle.empty());
  EXPECT_EQ(w.dropped, 1u);
}

TEST(Windowing, RecycleClickLandsInItsBin) {
  ClickStream s{{{15'000, 1}}, 20'000};
  const auto w = window_clicks(s, PulseSchedule{});
  const auto counts = w.recycle_counts();
  ASSERT_EQ(counts.size(), 1u);
  EXPECT_EQ(counts[0].first, 1);
  EXPECT_EQ(counts[0].second, 1u);
}

TEST(Windowing, UniformStreamFractions) {
  std::mt19937_64 rng(5);
  const std::size_t n = 200'000;
  const auto s = random_stream(rng, n, 10'000'000'000ull);
  const auto w = window_clicks(s, PulseSchedule{});
  // binomial, p = 0.4: 5 sigma
  const double sigma = std::sqrt(0.4 * 0.6 / n);
  EXPECT_NEAR(static_cast<double>(w.trigger_total()) / n, 0.4, 5 * sigma);
  EXPECT_NEAR(static_cast<double>(w.recycle.size()) / n, 0.4, 5 * sigma);
}

TEST(Windowing, PartitionsEveryClick) {
  std::mt19937_64 rng(6);
  PulseSchedule odd{7'777, {100, 2'000}, {3'000, 7'000}};
  for (int rep = 0; rep < 50; ++rep) {
    const auto s = random_stream(rng, 1000, 50'000'000);
    for (const auto& sched : {PulseSchedule{}, odd}) {
      const auto w = window_clicks(s, sched);
      EXPECT_EQ(w.trigger_total() + w.recycle.size() + w.dropped, s.clicks.size());
    }
  }
}

TEST(Windowing, ShiftEquivariance) {
  std::mt19937_64 rng(8);
  const PulseSchedule sched;
  const auto s = random_stream(rng, 2000, 100'000'000);
  const BinIndex k = 37;
  ClickStream shifted = s;
  for (auto& c : shifted.clicks) c.t += static_cast<TimeNs>(k) * sched.period;
  shifted.duration += static_cast<TimeNs>(k) * sched.period;
  const auto a = window_clicks(s, sched);
  const auto b = window_clicks(shifted, sched);
  for (int ch = 0; ch < 2; ++ch) {
    ASSERT_EQ(a.trigger[ch].size(), b.trigger[ch].size());
    for (std::size_t i = 0; i < a.trigger[ch].size(); ++i) EXPECT_EQ(a.trigger[ch][i].bin + k, b.trigger[ch][i].bin);
  }
  ASSERT_EQ(a.recycle.size(), b.recycle.size());
  for (std::size_t i = 0; i < a.recycle.size(); ++i) EXPECT_EQ(a.recycle[i].bin + k, b.recycle[i].bin);
}

TEST(Schedule, RecycleExposure) {
  PulseSchedule s;
  EXPECT_EQ(s.recycle_exposure_before(0), 0u);
  EXPECT_EQ(s.recycle_exposure_before(5'000), 0u);
  EXPECT_EQ(s.recycle_exposure_before(6'000), 1'000u);
  EXPECT_EQ(s.recycle_exposure_before(9'500), 4'000u);
  EXPECT_EQ(s.recycle_exposure_before(25'000), 8'000u);
}

TEST(Schedule, OverlapRejected) {
  PulseSchedule s{10'000, {0, 6'000}, {5'000, 9'000}};
  EXPECT_THROW(s.validate(), ConfigError);
}
