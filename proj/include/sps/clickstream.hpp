#pragma once

// Detector events, the trigger/recycle pulse schedule and the two on-disk
// time-tag formats (.ptag binary, CSV).

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sps/error.hpp"

namespace sps {

/// Nanoseconds since run start.
using TimeNs = std::uint64_t;

/// Index of a trigger pulse (period number).
using BinIndex = std::int64_t;

struct Click {
  TimeNs t = 0;
  std::uint8_t channel = 0;

  friend bool operator==(const Click&, const Click&) = default;
};

struct ClickStream {
  std::vector<Click> clicks;  // sorted by t, non-decreasing
  TimeNs duration = 0;        // every click has t < duration

  friend bool operator==(const ClickStream&, const ClickStream&) = default;
};

/// Half-open interval [begin, end) of offsets within one period.
struct Window {
  TimeNs begin = 0;
  TimeNs end = 0;

  TimeNs length() const { return end - begin; }
  bool contains(TimeNs offset) const { return offset >= begin && offset < end; }
};

/// Periodic layout of trigger and recycle pulses. Defaults: 100 kHz, a 4 us
/// trigger pulse, 1 us gap, a 4 us recycle pulse, 1 us dead time.
struct PulseSchedule {
  TimeNs period = 10'000;
  Window trigger{0, 4'000};
  Window recycle{5'000, 9'000};

  double trigger_rate_hz() const { return 1e9 / static_cast<double>(period); }

  void validate() const {
    if (period == 0) throw ConfigError("schedule period must be positive");
    for (const Window* w : {&trigger, &recycle}) {
      if (w->begin >= w->end || w->end > period)
        throw ConfigError("schedule window must be non-empty and inside [0, period)");
    }
    if (trigger.begin < recycle.end && recycle.begin < trigger.end)
      throw ConfigError("trigger and recycle windows overlap");
  }

  BinIndex bin_of(TimeNs t) const { return static_cast<BinIndex>(t / period); }
  TimeNs offset_of(TimeNs t) const { return t % period; }

  /// Number of trigger periods touched by a run of the given duration.
  BinIndex bins_in(TimeNs duration) const {
    return static_cast<BinIndex>((duration + period - 1) / period);
  }

  /// Total recycle-pulse time in [0, t).
  TimeNs recycle_exposure_before(TimeNs t) const {
    const TimeNs full = (t / period) * recycle.length();
    const TimeNs off = t % period;
    const TimeNs partial = off <= recycle.begin ? 0 : std::min(off, recycle.end) - recycle.begin;
    return full + partial;
  }
};

/// A click that passed a window filter, tagged with its trigger bin.
struct BinnedClick {
  BinIndex bin = 0;
  TimeNs t = 0;

  friend bool operator==(const BinnedClick&, const BinnedClick&) = default;
};

struct WindowedClicks {
  BinIndex n_bins = 0;                           // trigger periods covered by the run
  std::array<std::vector<BinnedClick>, 2> trigger;  // per channel, sorted by t
  std::vector<BinnedClick> recycle;                 // both channels, sorted by t
  std::size_t dropped = 0;

  std::size_t trigger_total() const { return trigger[0].size() + trigger[1].size(); }

  /// (bin, count) pairs for bins that have at least one recycle click.
  std::vector<std::pair<BinIndex, std::size_t>> recycle_counts() const {
    std::vector<std::pair<BinIndex, std::size_t>> out;
    for (const auto& c : recycle) {
      if (out.empty() || out.back().first != c.bin)
        out.emplace_back(c.bin, 1);
      else
        ++out.back().second;
    }
    return out;
  }
};

/// Splits a stream into trigger-window clicks (per channel) and recycle-window
/// clicks; everything else is dropped.
inline WindowedClicks window_clicks(const ClickStream& stream, const PulseSchedule& schedule) {
  WindowedClicks w;
  w.n_bins = schedule.bins_in(stream.duration);
  for (const Click& c : stream.clicks) {
    const TimeNs off = schedule.offset_of(c.t);
    const BinIndex bin = schedule.bin_of(c.t);
    if (schedule.trigger.contains(off))
      w.trigger[c.channel & 1u].push_back({bin, c.t});
    else if (schedule.recycle.contains(off))
      w.recycle.push_back({bin, c.t});
    else
      ++w.dropped;
  }
  return w;
}

/// Trigger-window clicks of bins [first, end), re-indexed so `first` is bin 0.
inline WindowedClicks slice_bins(const WindowedClicks& w, BinIndex first, BinIndex end) {
  WindowedClicks out;
  out.n_bins = std::max<BinIndex>(0, end - first);
  auto in_range = [&](const BinnedClick& c) { return c.bin >= first && c.bin < end; };
  for (int ch = 0; ch < 2; ++ch)
    for (const auto& c : w.trigger[ch])
      if (in_range(c)) out.trigger[ch].push_back({c.bin - first, c.t});
  for (const auto& c : w.recycle)
    if (in_range(c)) out.recycle.push_back({c.bin - first, c.t});
  return out;
}

enum class ClickFormat { binary, csv };

inline constexpr std::size_t kPtagRecordSize = 9;

namespace detail {

inline void check_order(const std::vector<Click>& clicks, std::size_t index) {
  if (index > 0 && clicks[index].t < clicks[index - 1].t)
    throw OrderingError("timestamps not sorted at record " + std::to_string(index) + ": " +
                        std::to_string(clicks[index].t) + " after " +
                        std::to_string(clicks[index - 1].t));
}

inline ClickStream finish(std::vector<Click> clicks, std::optional<TimeNs> duration) {
  ClickStream s;
  const TimeNs min_duration = clicks.empty() ? 0 : clicks.back().t + 1;
  if (duration && *duration < min_duration)
    throw Error("duration " + std::to_string(*duration) + " does not cover last click at " +
                std::to_string(min_duration - 1));
  s.duration = duration.value_or(min_duration);
  s.clicks = std::move(clicks);
  return s;
}

inline ClickStream read_binary(std::span<const std::uint8_t> bytes,
                               std::optional<TimeNs> duration) {
  std::vector<Click> clicks;
  clicks.reserve(bytes.size() / kPtagRecordSize);
  std::size_t pos = 0;
  for (; pos + kPtagRecordSize <= bytes.size(); pos += kPtagRecordSize) {
    TimeNs t = 0;
    for (int b = 7; b >= 0; --b) t = (t << 8) | bytes[pos + static_cast<std::size_t>(b)];
    const std::uint8_t ch = bytes[pos + 8];
    if (ch > 1) throw FormatError("invalid channel byte " + std::to_string(ch), pos + 8);
    clicks.push_back({t, ch});
    check_order(clicks, clicks.size() - 1);
  }
  if (pos != bytes.size()) throw FormatError("truncated .ptag record", pos);
  return finish(std::move(clicks), duration);
}

template <class T>
bool parse_int(std::string_view field, T& out) {
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last && !field.empty();
}

inline ClickStream read_csv(std::span<const std::uint8_t> bytes,
                            std::optional<TimeNs> duration) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  std::vector<Click> clicks;
  if (text.empty()) return finish(std::move(clicks), duration);

  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (header) {
      if (line != "t_ns,channel") throw FormatError("expected CSV header 't_ns,channel'", pos);
      header = false;
    } else if (!line.empty()) {
      const auto comma = line.find(',');
      TimeNs t = 0;
      unsigned ch = 0;
      if (comma == std::string_view::npos || !parse_int(line.substr(0, comma), t) ||
          !parse_int(line.substr(comma + 1), ch) || ch > 1)
        throw FormatError("malformed CSV record '" + std::string(line) + "'", pos);
      clicks.push_back({t, static_cast<std::uint8_t>(ch)});
      check_order(clicks, clicks.size() - 1);
    }
    pos = eol + 1;
  }
  return finish(std::move(clicks), duration);
}

}  // namespace detail

/// Parses a click stream. Without an explicit duration the run is taken to end
/// one nanosecond after the last click (0 for an empty stream).
inline ClickStream read_clicks(std::span<const std::uint8_t> bytes, ClickFormat format,
                               std::optional<TimeNs> duration = std::nullopt) {
  return format == ClickFormat::binary ? detail::read_binary(bytes, duration)
                                       : detail::read_csv(bytes, duration);
}

inline ClickStream read_clicks(std::istream& in, ClickFormat format,
                               std::optional<TimeNs> duration = std::nullopt) {
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  if (in.bad()) throw Error("read failure");
  return read_clicks(bytes, format, duration);
}

inline std::vector<std::uint8_t> write_clicks(const ClickStream& stream, ClickFormat format) {
  std::vector<std::uint8_t> out;
  if (format == ClickFormat::binary) {
    out.reserve(stream.clicks.size() * kPtagRecordSize);
    for (const Click& c : stream.clicks) {
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(c.t >> (8 * b)));
      out.push_back(c.channel);
    }
    return out;
  }
  std::string text = "t_ns,channel\n";
  for (const Click& c : stream.clicks) {
    text += std::to_string(c.t);
    text += ',';
    text += static_cast<char>('0' + c.channel);
    text += '\n';
  }
  out.assign(text.begin(), text.end());
  return out;
}

inline void write_clicks(const ClickStream& stream, ClickFormat format, std::ostream& out) {
  const auto bytes = write_clicks(stream, format);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failure");
}

}  // namespace sps
