#pragma once

// Real-time run protocol: wait for the recycle light to drop to the one-atom
// level, qualify the next stretch of trigger photons with the correlation
// selection rules, then serve photons while watching the recycle light for
// atom loss.

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>

#include "sps/clickstream.hpp"
#include "sps/correlator.hpp"
#include "sps/error.hpp"

namespace sps {

/// P(X <= k) for X ~ Poisson(lambda).
inline double poisson_cdf(int k, double lambda) {
  if (k < 0) return 0.0;
  if (lambda <= 0) return 1.0;
  double term = std::exp(-lambda);
  double sum = term;
  for (int i = 1; i <= k; ++i) {
    term *= lambda / i;
    sum += term;
  }
  return std::min(sum, 1.0);
}

/// Smallest k such that a background-only window (mean rate * window) shows at
/// most k counts with probability >= confidence.
inline int derive_loss_threshold(double background_rate_hz, double window_ms, double confidence) {
  const double lambda = background_rate_hz * window_ms * 1e-3;
  for (int k = 0; k < 100000; ++k)
    if (poisson_cdf(k, lambda) >= confidence) return k;
  throw DomainError("no loss threshold reaches the requested confidence");
}

struct QualifierConfig {
  double level_low_per_ms = 2.0;   // single-atom band, recycle photons per ms of recycle light
  double level_high_per_ms = 6.0;
  double level_window_ms = 100.0;
  double qual_duration_s = 1.5;
  double min_mean_nonzero = 1.5;
  double zero_lag_fraction_max = 0.30;
  std::int64_t max_lag = kDefaultMaxLag;
  double loss_window_ms = 30.0;
  std::optional<int> loss_max_counts;  // derived from the background model when unset
  double loss_background_rate_hz = 84.0;
  double loss_confidence = 0.98;
  bool retry_after_reject = false;

  int loss_threshold() const {
    return loss_max_counts ? *loss_max_counts
                           : derive_loss_threshold(loss_background_rate_hz, loss_window_ms, loss_confidence);
  }

  void validate() const {
    if (!(level_low_per_ms >= 0 && level_high_per_ms > level_low_per_ms))
      throw ConfigError("single-atom band must satisfy 0 <= low < high");
    if (!(level_window_ms > 0 && loss_window_ms > 0 && qual_duration_s > 0))
      throw ConfigError("windows must be positive");
    if (!(min_mean_nonzero >= 0)) throw ConfigError("min_mean_nonzero must be non-negative");
    if (!(zero_lag_fraction_max > 0 && zero_lag_fraction_max < 1))
      throw ConfigError("zero_lag_fraction_max must lie in (0, 1)");
    if (max_lag < 1) throw ConfigError("max_lag must be >= 1");
    if (loss_max_counts && *loss_max_counts < 0) throw ConfigError("loss_max_counts must be >= 0");
  }
};

enum class FailReason { none, too_few_correlations, zero_lag_excess, atom_lost, no_single_atom_level };

inline const char* to_string(FailReason r) {
  switch (r) {
    case FailReason::none: return "none";
    case FailReason::too_few_correlations: return "too-few-correlations";
    case FailReason::zero_lag_excess: return "zero-lag-excess";
    case FailReason::atom_lost: return "atom-lost";
    case FailReason::no_single_atom_level: return "no-single-atom-level";
  }
  return "unknown";
}

struct QualificationResult {
  bool pass = false;
  FailReason reason = FailReason::none;
};

/// Selection rule: enough correlations at nonzero lag (at least one atom) and
/// few enough at zero lag (at most one atom).
inline QualificationResult qualification_test(double c_zero, double c_mean_nonzero,
                                              const QualifierConfig& cfg) {
  if (!(c_mean_nonzero > cfg.min_mean_nonzero)) return {false, FailReason::too_few_correlations};
  if (!(c_zero < cfg.zero_lag_fraction_max * c_mean_nonzero)) return {false, FailReason::zero_lag_excess};
  return {true, FailReason::none};
}

inline QualificationResult qualification_test(const CorrelationHistogram& h, const QualifierConfig& cfg) {
  double nonzero = 0;
  std::size_t lags = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (h.lag(i) == 0) continue;
    nonzero += static_cast<double>(h.counts[i]);
    ++lags;
  }
  const double mean = lags ? nonzero / static_cast<double>(lags) : 0.0;
  return qualification_test(static_cast<double>(h.has_lag(0) ? h.at(0) : 0), mean, cfg);
}

enum class LossStatus { present, lost };

inline LossStatus loss_test(std::size_t recycle_counts, int loss_max_counts) {
  return static_cast<long long>(recycle_counts) <= loss_max_counts ? LossStatus::lost : LossStatus::present;
}

enum class Phase { waiting, qualifying, serving, rejected, lost };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::waiting: return "waiting";
    case Phase::qualifying: return "qualifying";
    case Phase::serving: return "serving";
    case Phase::rejected: return "rejected";
    case Phase::lost: return "lost";
  }
  return "unknown";
}

/// Evaluation point for the rolling monitors; the caller emits one at the end
/// of every recycle pulse.
struct Tick {
  TimeNs t = 0;
};

using Event = std::variant<Click, Tick>;

enum class NotificationKind { entered_qualifying, qualified, rejected, served_photon, atom_lost };

struct Notification {
  NotificationKind kind;
  TimeNs t = 0;
  Click click{};  // served_photon only
};

struct ServerState {
  Phase phase = Phase::waiting;
  std::optional<TimeNs> last_t;
  std::optional<TimeNs> qualifying_since;
  std::optional<TimeNs> serving_since;
  std::optional<TimeNs> loss_t;
  std::deque<TimeNs> recycle_times;  // trailing monitor window
  BinIndex qual_first_bin = 0;
  BinIndex qual_end_bin = 0;
  WindowedClicks qual_clicks;
  std::optional<CorrelationHistogram> qual_histogram;
  FailReason reject_reason = FailReason::none;
  std::size_t served_clicks = 0;
};

class PhotonServer {
 public:
  PhotonServer(QualifierConfig cfg, PulseSchedule schedule, ServerState state = {})
      : cfg_(std::move(cfg)), schedule_(schedule), state_(std::move(state)) {
    cfg_.validate();
    schedule_.validate();
    loss_k_ = cfg_.loss_threshold();
    monitor_ns_ = ms_to_ns(std::max(cfg_.level_window_ms, cfg_.loss_window_ms));
  }

  const ServerState& state() const { return state_; }
  ServerState take_state() && { return std::move(state_); }
  const QualifierConfig& config() const { return cfg_; }
  int loss_threshold() const { return loss_k_; }

  bool terminal() const {
    return state_.phase == Phase::lost || (state_.phase == Phase::rejected && !cfg_.retry_after_reject);
  }

  std::optional<Notification> step(const Event& event) {
    const TimeNs t = std::visit([](const auto& e) { return e.t; }, event);
    if (state_.last_t && t < *state_.last_t)
      throw OrderingError("event at " + std::to_string(t) + " ns after " + std::to_string(*state_.last_t));
    state_.last_t = t;
    if (const auto* c = std::get_if<Click>(&event)) return on_click(*c);
    return on_tick(t);
  }

 private:
  static TimeNs ms_to_ns(double ms) { return static_cast<TimeNs>(std::llround(ms * 1e6)); }

  std::size_t recycle_count_since(TimeNs from) const {
    const auto& q = state_.recycle_times;
    return static_cast<std::size_t>(q.end() - std::lower_bound(q.begin(), q.end(), from));
  }

  std::optional<Notification> on_click(const Click& c) {
    const TimeNs off = schedule_.offset_of(c.t);
    if (schedule_.recycle.contains(off)) {
      state_.recycle_times.push_back(c.t);
      return std::nullopt;
    }
    if (!schedule_.trigger.contains(off)) return std::nullopt;
    const BinIndex bin = schedule_.bin_of(c.t);
    if (state_.phase == Phase::qualifying && bin >= state_.qual_first_bin && bin < state_.qual_end_bin) {
      state_.qual_clicks.trigger[c.channel & 1u].push_back({bin - state_.qual_first_bin, c.t});
    } else if (state_.phase == Phase::serving) {
      ++state_.served_clicks;
      return Notification{NotificationKind::served_photon, c.t, c};
    }
    return std::nullopt;
  }

  std::optional<Notification> on_tick(TimeNs t) {
    auto& q = state_.recycle_times;
    while (!q.empty() && q.front() + monitor_ns_ < t) q.pop_front();

    switch (state_.phase) {
      case Phase::waiting: {
        const TimeNs w = ms_to_ns(cfg_.level_window_ms);
        if (t < w) return std::nullopt;
        const TimeNs exposure = schedule_.recycle_exposure_before(t) - schedule_.recycle_exposure_before(t - w);
        if (exposure == 0) return std::nullopt;
        const double rate = static_cast<double>(recycle_count_since(t - w)) / (static_cast<double>(exposure) * 1e-6);
        if (rate >= cfg_.level_low_per_ms && rate < cfg_.level_high_per_ms) {
          state_.phase = Phase::qualifying;
          state_.qualifying_since = t;
          state_.qual_first_bin = t > schedule_.trigger.begin
                                      ? static_cast<BinIndex>((t - schedule_.trigger.begin + schedule_.period - 1) /
                                                              schedule_.period)
                                      : 0;
          state_.qual_end_bin = state_.qual_first_bin +
                                static_cast<BinIndex>(std::llround(cfg_.qual_duration_s * 1e9 /
                                                                   static_cast<double>(schedule_.period)));
          state_.qual_clicks = WindowedClicks{};
          state_.qual_clicks.n_bins = state_.qual_end_bin - state_.qual_first_bin;
          return Notification{NotificationKind::entered_qualifying, t};
        }
        return std::nullopt;
      }
      case Phase::qualifying:
      case Phase::serving: {
        const TimeNs w = ms_to_ns(cfg_.loss_window_ms);
        if (t >= w && loss_test(recycle_count_since(t - w), loss_k_) == LossStatus::lost) {
          if (state_.phase == Phase::qualifying) state_.reject_reason = FailReason::atom_lost;
          state_.phase = Phase::lost;
          state_.loss_t = t;
          return Notification{NotificationKind::atom_lost, t};
        }
        if (state_.phase == Phase::qualifying) {
          const TimeNs done = static_cast<TimeNs>(state_.qual_end_bin - 1) * schedule_.period + schedule_.trigger.end;
          if (t >= done) return finish_qualification(t);
        }
        return std::nullopt;
      }
      case Phase::rejected:
        if (cfg_.retry_after_reject) {
          state_.phase = Phase::waiting;
          state_.qualifying_since.reset();
          state_.qual_histogram.reset();
          state_.reject_reason = FailReason::none;
        }
        return std::nullopt;
      case Phase::lost:
        return std::nullopt;
    }
    return std::nullopt;
  }

  std::optional<Notification> finish_qualification(TimeNs t) {
    state_.qual_histogram = cross_correlate_binned(state_.qual_clicks, cfg_.max_lag);
    const auto result = qualification_test(*state_.qual_histogram, cfg_);
    state_.qual_clicks = WindowedClicks{};
    if (result.pass) {
      state_.phase = Phase::serving;
      state_.serving_since = t;
      return Notification{NotificationKind::qualified, t};
    }
    state_.phase = Phase::rejected;
    state_.reject_reason = result.reason;
    return Notification{NotificationKind::rejected, t};
  }

  QualifierConfig cfg_;
  PulseSchedule schedule_;
  ServerState state_;
  int loss_k_ = 0;
  TimeNs monitor_ns_ = 0;
};

/// Functional form of PhotonServer::step.
inline std::pair<ServerState, std::optional<Notification>> step(ServerState state, const Event& event,
                                                                const QualifierConfig& cfg,
                                                                const PulseSchedule& schedule) {
  PhotonServer server(cfg, schedule, std::move(state));
  auto note = server.step(event);
  return {std::move(server).take_state(), std::move(note)};
}

struct RunVerdict {
  bool reached_qualifying = false;
  bool qualified = false;
  std::optional<CorrelationHistogram> qualification_histogram;
  std::optional<VisibilityReport> qualification_visibility;
  double serving_s = 0.0;
  std::size_t served_clicks = 0;
  std::optional<TimeNs> loss_t_ns;
  FailReason reject_reason = FailReason::none;
  std::optional<TimeNs> qualifying_since_ns;
  std::optional<TimeNs> serving_since_ns;
  TimeNs end_ns = 0;  // end of the single-atom stretch (loss or end of data)
  Phase final_phase = Phase::waiting;
};

/// Replays a recorded stream through the state machine, emitting a tick at the
/// end of every recycle pulse. `on_note` sees every notification.
template <class OnNote>
RunVerdict replay(const ClickStream& stream, const QualifierConfig& cfg, const PulseSchedule& schedule,
                  OnNote&& on_note) {
  PhotonServer server(cfg, schedule);
  TimeNs next_tick = schedule.recycle.end;
  auto feed = [&](const Event& e) {
    if (auto n = server.step(e)) on_note(*n);
  };
  auto ticks_until = [&](TimeNs limit) {
    while (next_tick <= limit && !server.terminal()) {
      feed(Tick{next_tick});
      next_tick += schedule.period;
    }
  };
  for (const Click& c : stream.clicks) {
    ticks_until(c.t);
    if (server.terminal()) break;
    feed(c);
  }
  ticks_until(stream.duration);

  const ServerState& s = server.state();
  RunVerdict v;
  v.final_phase = s.phase;
  v.reached_qualifying = s.qualifying_since.has_value();
  v.qualified = s.serving_since.has_value();
  v.qualification_histogram = s.qual_histogram;
  if (s.qual_histogram) {
    try {
      v.qualification_visibility = visibility(*s.qual_histogram);
    } catch (const UndefinedVisibility&) {
    }
  }
  v.served_clicks = s.served_clicks;
  v.loss_t_ns = s.loss_t;
  v.reject_reason = v.reached_qualifying ? s.reject_reason : FailReason::no_single_atom_level;
  v.qualifying_since_ns = s.qualifying_since;
  v.serving_since_ns = s.serving_since;
  v.end_ns = s.loss_t.value_or(stream.duration);
  if (s.serving_since) v.serving_s = static_cast<double>(v.end_ns - *s.serving_since) * 1e-9;
  return v;
}

inline RunVerdict replay(const ClickStream& stream, const QualifierConfig& cfg, const PulseSchedule& schedule) {
  return replay(stream, cfg, schedule, [](const Notification&) {});
}

inline void write_verdict(const RunVerdict& v, std::ostream& out) {
  out.precision(10);
  out << "qualified = " << (v.qualified ? "true" : "false") << '\n';
  out << "visibility = ";
  if (v.qualification_visibility)
    out << v.qualification_visibility->visibility << '\n';
  else
    out << "none\n";
  out << "serving_s = " << v.serving_s << '\n';
  out << "served_clicks = " << v.served_clicks << '\n';
  out << "loss_t_ns = ";
  if (v.loss_t_ns)
    out << *v.loss_t_ns << '\n';
  else
    out << "none\n";
  out << "reject_reason = " << (v.qualified ? "none" : to_string(v.reject_reason)) << '\n';
}

}  // namespace sps
