#pragma once

// Two-detector (HBT) cross-correlation: pulse-binned and fine time-resolved
// histograms, antibunching visibility, and the expected number of zero-lag
// coincidences caused by background clicks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sps/clickstream.hpp"
#include "sps/error.hpp"

namespace sps {

enum class LagUnit { pulse, time };

/// Coincidence counts of (channel 0, channel 1) pairs versus lag.
///
/// Pulse mode: lag index k is the bin difference n1 - n0, k in [-L, L].
/// Time mode: lag index k covers t1 - t0 in [k*res, (k+1)*res) for k >= 0 and
/// (k*res, (k+1)*res] for k < 0, so the bin edges mirror about zero and the
/// k <-> -k-1 reflection maps a histogram onto its channel-swapped twin.
struct CorrelationHistogram {
  LagUnit unit = LagUnit::pulse;
  std::int64_t lag_min = 0;
  std::int64_t resolution_ns = 0;  // time mode only
  std::vector<std::uint64_t> counts;
  std::vector<std::int64_t> n_bins;  // bin pairs that exist at each lag (pulse mode)
  std::int64_t n_bins_analyzed = 0;

  static CorrelationHistogram pulse(std::int64_t max_lag, std::int64_t total_bins) {
    CorrelationHistogram h;
    h.unit = LagUnit::pulse;
    h.lag_min = -max_lag;
    h.counts.assign(static_cast<std::size_t>(2 * max_lag + 1), 0);
    h.n_bins.resize(h.counts.size());
    for (std::int64_t k = -max_lag; k <= max_lag; ++k)
      h.n_bins[static_cast<std::size_t>(k + max_lag)] = std::max<std::int64_t>(0, total_bins - std::abs(k));
    h.n_bins_analyzed = total_bins;
    return h;
  }

  std::size_t size() const { return counts.size(); }
  std::int64_t lag_max() const { return lag_min + static_cast<std::int64_t>(counts.size()) - 1; }
  std::int64_t lag(std::size_t i) const { return lag_min + static_cast<std::int64_t>(i); }
  bool has_lag(std::int64_t k) const { return k >= lag_min && k <= lag_max(); }
  std::uint64_t at(std::int64_t k) const { return counts.at(static_cast<std::size_t>(k - lag_min)); }
  std::uint64_t& at(std::int64_t k) { return counts.at(static_cast<std::size_t>(k - lag_min)); }

  /// Centre of lag bin i in nanoseconds (time mode).
  double lag_center_ns(std::size_t i) const {
    return (static_cast<double>(lag(i)) + 0.5) * static_cast<double>(resolution_ns);
  }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  bool same_shape(const CorrelationHistogram& o) const {
    return unit == o.unit && lag_min == o.lag_min && resolution_ns == o.resolution_ns &&
           counts.size() == o.counts.size();
  }

  /// Count-additive merge of histograms from separate runs.
  CorrelationHistogram& operator+=(const CorrelationHistogram& o) {
    if (counts.empty() && n_bins_analyzed == 0) return *this = o;
    if (!same_shape(o)) throw Error("cannot merge histograms with different lag axes");
    for (std::size_t i = 0; i < counts.size(); ++i) {
      counts[i] += o.counts[i];
      if (i < n_bins.size() && i < o.n_bins.size()) n_bins[i] += o.n_bins[i];
    }
    n_bins_analyzed += o.n_bins_analyzed;
    return *this;
  }

  friend bool operator==(const CorrelationHistogram&, const CorrelationHistogram&) = default;
};

inline constexpr std::int64_t kDefaultMaxLag = 30;

/// counts[k] = sum_i n0(i) * n1(i + k) for |k| <= max_lag over trigger bins.
inline CorrelationHistogram cross_correlate_binned(const WindowedClicks& w,
                                                   std::int64_t max_lag = kDefaultMaxLag) {
  if (max_lag < 1) throw Error("max_lag must be >= 1");
  CorrelationHistogram h = CorrelationHistogram::pulse(max_lag, w.n_bins);

  struct Occupancy {
    BinIndex bin;
    std::uint64_t n;
  };
  auto occupancy = [](const std::vector<BinnedClick>& clicks) {
    std::vector<Occupancy> out;
    for (const auto& c : clicks) {
      if (out.empty() || out.back().bin != c.bin)
        out.push_back({c.bin, 1});
      else
        ++out.back().n;
    }
    return out;
  };
  const auto ch0 = occupancy(w.trigger[0]);
  const auto ch1 = occupancy(w.trigger[1]);

  auto lo = ch1.begin();
  for (const auto& a : ch0) {
    while (lo != ch1.end() && lo->bin < a.bin - max_lag) ++lo;
    for (auto it = lo; it != ch1.end() && it->bin <= a.bin + max_lag; ++it)
      h.at(it->bin - a.bin) += a.n * it->n;
  }
  return h;
}

inline constexpr std::int64_t kFineResolutionNs = 200;

/// Histogram of t1 - t0 over all trigger-window pairs with |t1 - t0| < span.
inline CorrelationHistogram cross_correlate_fine(const WindowedClicks& w, std::int64_t span_ns,
                                                 std::int64_t resolution_ns = kFineResolutionNs) {
  if (resolution_ns <= 0 || span_ns <= 0 || span_ns % resolution_ns != 0)
    throw Error("fine correlation resolution must divide span");
  const std::int64_t half = span_ns / resolution_ns;
  CorrelationHistogram h;
  h.unit = LagUnit::time;
  h.lag_min = -half;
  h.resolution_ns = resolution_ns;
  h.counts.assign(static_cast<std::size_t>(2 * half), 0);
  h.n_bins_analyzed = w.n_bins;

  const auto& ch0 = w.trigger[0];
  const auto& ch1 = w.trigger[1];
  std::size_t lo = 0;
  for (const auto& a : ch0) {
    const auto t0 = static_cast<std::int64_t>(a.t);
    while (lo < ch1.size() && static_cast<std::int64_t>(ch1[lo].t) <= t0 - span_ns) ++lo;
    for (std::size_t j = lo; j < ch1.size(); ++j) {
      const std::int64_t dt = static_cast<std::int64_t>(ch1[j].t) - t0;
      if (dt >= span_ns) break;
      const std::int64_t k = dt >= 0 ? dt / resolution_ns : -((-dt) / resolution_ns) - 1;
      ++h.at(k);
    }
  }
  return h;
}

inline CorrelationHistogram cross_correlate_fine(const ClickStream& stream,
                                                 const PulseSchedule& schedule,
                                                 std::int64_t span_ns,
                                                 std::int64_t resolution_ns = kFineResolutionNs) {
  return cross_correlate_fine(window_clicks(stream, schedule), span_ns, resolution_ns);
}

struct VisibilityReport {
  double c_zero = 0;
  double c_mean_nonzero = 0;
  double visibility = 0;
  double c_zero_stderr = 0;
  double c_mean_stderr = 0;
  double std_error = 0;  // standard error of the visibility
  std::size_t n_nonzero_lags = 0;
};

/// 1 - C(0) / <C(k != 0)> from raw counts, with Poisson standard errors.
inline VisibilityReport visibility(const CorrelationHistogram& h) {
  if (h.unit != LagUnit::pulse || !h.has_lag(0))
    throw Error("visibility needs a pulse-binned histogram containing lag 0");
  VisibilityReport r;
  double nonzero_sum = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h.lag(i) == 0) continue;
    nonzero_sum += static_cast<double>(h.counts[i]);
    ++r.n_nonzero_lags;
  }
  if (r.n_nonzero_lags == 0 || nonzero_sum <= 0)
    throw UndefinedVisibility("no correlations at nonzero lag");
  r.c_zero = static_cast<double>(h.at(0));
  r.c_mean_nonzero = nonzero_sum / static_cast<double>(r.n_nonzero_lags);
  r.c_zero_stderr = std::sqrt(r.c_zero);
  r.c_mean_stderr = std::sqrt(nonzero_sum) / static_cast<double>(r.n_nonzero_lags);
  const double ratio = r.c_zero / r.c_mean_nonzero;
  r.visibility = 1.0 - ratio;
  r.std_error = std::hypot(r.c_zero_stderr / r.c_mean_nonzero,
                         ratio * r.c_mean_stderr / r.c_mean_nonzero);
  return r;
}

struct ExpectedCount {
  double value = 0;
  double std_error = 0;
};

/// Expected zero-lag coincidences involving at least one background click.
///
/// `signal_rate_hz` is the time-averaged detected photon rate on one channel;
/// since photons arrive only inside trigger pulses, the per-bin mean is
/// rate * period. Background (combined over both detectors) splits evenly and
/// contributes rate/2 * trigger-window length per channel per bin. Per bin the
/// expectation is s0*b1 + b0*s1 + b0*b1.
inline ExpectedCount expected_background_coincidences(double signal_rate_hz,
                                                      double background_rate_hz,
                                                      const PulseSchedule& schedule,
                                                      double total_time_s) {
  if (signal_rate_hz < 0 || background_rate_hz < 0 || total_time_s < 0)
    throw Error("rates and time must be non-negative");
  const double period_s = static_cast<double>(schedule.period) * 1e-9;
  const double window_s = static_cast<double>(schedule.trigger.length()) * 1e-9;
  const double s = signal_rate_hz * period_s;
  const double b = 0.5 * background_rate_hz * window_s;
  const double bins = total_time_s / period_s;
  ExpectedCount e;
  e.value = bins * (2.0 * s * b + b * b);
  e.std_error = std::sqrt(e.value);
  return e;
}

inline void write_histogram_csv(const CorrelationHistogram& h, std::ostream& out) {
  out << "lag,count,n_bins\n";
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h.unit == LagUnit::time)
      out << h.lag_center_ns(i);
    else
      out << h.lag(i);
    out << ',' << h.counts[i] << ',' << (i < h.n_bins.size() ? h.n_bins[i] : h.n_bins_analyzed)
        << '\n';
  }
}

inline void write_visibility(const VisibilityReport& r, std::ostream& out) {
  out.precision(10);
  out << "c_zero = " << r.c_zero << '\n'
      << "c_mean_nonzero = " << r.c_mean_nonzero << '\n'
      << "visibility = " << r.visibility << '\n'
      << "stderr = " << r.std_error << '\n';
}

}  // namespace sps
